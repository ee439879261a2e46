//! Scheme x setting grids: references, replications, reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bench::config::{ExperimentConfig, ReferenceConfig, Scheme, SettingRow, StepRule};
use crate::bench::oracle::{reference_solution, Solution};
use crate::bench::stats::{confidence_interval, mean};
use crate::engine::{record_plan, run_replications, RunConfig};
use crate::error::{Result, SviError};
use crate::map::{audit_pairs, PairAudit};
use crate::problems::{Instance, ResolvedConstants};
use crate::projection::project_cartesian;
use crate::rng::{substream, SETUP};
use crate::smoothing::SmoothingKind;
use crate::stepsize::StepsizeSchedule;
use crate::vector::BlockVector;

pub const CSV_HEADER: &str = "scheme,setting,k,mse,ci_lo,ci_hi,runs,seed";

/// Reference point of one setting under one smoothing choice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceEntry {
    pub setting: String,
    pub smoothing: SmoothingKind,
    pub x: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub scheme: Scheme,
    pub setting: String,
    pub constants: ResolvedConstants,
    /// Lipschitz constant of the smoothed map, when the scheme smooths.
    pub smoothed_lip: Option<f64>,
    pub ks: Vec<usize>,
    pub mse: Vec<f64>,
    pub ci_lo: Vec<f64>,
    pub ci_hi: Vec<f64>,
    pub final_errors: Vec<f64>,
    pub wall_secs: Vec<f64>,
    pub reference_residual: f64,
}

impl CellReport {
    pub fn initial_mse(&self) -> f64 {
        self.mse[0]
    }

    pub fn final_mse(&self) -> f64 {
        *self.mse.last().expect("trajectory holds k = 0")
    }

    pub fn final_ci(&self) -> (f64, f64) {
        (*self.ci_lo.last().unwrap(), *self.ci_hi.last().unwrap())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    /// Grid cells in (setting, scheme) order.
    pub cells: Vec<CellReport>,
}

impl ExperimentReport {
    pub fn cell(&self, scheme: &str, setting: &str) -> Option<&CellReport> {
        self.cells
            .iter()
            .find(|c| c.setting == setting && c.scheme.to_string() == scheme)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * self.cells.len() * 402);
        out.push_str(CSV_HEADER);
        out.push('\n');
        for c in &self.cells {
            for j in 0..c.ks.len() {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    c.scheme, c.setting, c.ks[j], c.mse[j], c.ci_lo[j], c.ci_hi[j], self.config.runs, self.config.seed
                )
                .unwrap();
            }
        }
        out
    }
}

fn setup_rng(seed: u64, setting_idx: usize) -> crate::rng::SviRng {
    substream(seed, SETUP + setting_idx as u64)
}

fn lip_for_oracle(inst: &Instance, kind: SmoothingKind) -> Result<f64> {
    match kind {
        // Infinite is allowed here: extragradient backtracks.
        SmoothingKind::None => Ok(inst.constants.lip),
        _ => inst.lipschitz(kind),
    }
}

/// Reference solution of `inst` for the given smoothing choice.
pub fn instance_reference(inst: &Instance, kind: SmoothingKind, cfg: &ReferenceConfig) -> Result<Solution> {
    let scheme = inst.smoothing(kind)?;
    let lip = lip_for_oracle(inst, kind)?;
    reference_solution(
        inst.problem.map.as_ref(),
        &inst.problem.set,
        &inst.x0,
        &scheme,
        inst.constants.eta,
        lip,
        &cfg.surrogate,
        &cfg.oracle,
    )
}

fn smoothing_kinds(schemes: &[Scheme]) -> Vec<SmoothingKind> {
    let mut kinds: Vec<SmoothingKind> = Vec::new();
    for s in schemes {
        if !kinds.contains(&s.smoothing) {
            kinds.push(s.smoothing);
        }
    }
    kinds
}

fn cell_name(setting: &str, kind: SmoothingKind) -> String {
    match kind {
        SmoothingKind::None => setting.to_string(),
        k => format!("{setting}/{k:?}"),
    }
}

/// References for every (setting, smoothing) pair the config needs.
pub fn compute_references(cfg: &ExperimentConfig) -> Result<Vec<ReferenceEntry>> {
    let rows = cfg.problem.rows()?;
    let kinds = smoothing_kinds(&cfg.schemes);
    let jobs: Vec<(&SettingRow, SmoothingKind)> =
        rows.iter().flat_map(|r| kinds.iter().map(move |&k| (r, k))).collect();
    jobs.par_iter()
        .map(|&(row, kind)| {
            let sol = instance_reference(&row.instance, kind, &cfg.reference).map_err(|e| SviError::CellFailed {
                cell: format!("reference {}", cell_name(&row.label, kind)),
                source: Box::new(e),
            })?;
            Ok(ReferenceEntry {
                setting: row.label.clone(),
                smoothing: kind,
                x: sol.x.into_flat(),
                residual: sol.residual,
                iterations: sol.iterations,
            })
        })
        .collect()
}

/// Run configuration of one scheme on one instance.
pub fn scheme_run_config(
    inst: &Instance,
    scheme: &Scheme,
    constants: &ResolvedConstants,
    iterations: usize,
    record_every: usize,
) -> Result<RunConfig> {
    let smoothing = inst.smoothing(scheme.smoothing)?;
    let n = inst.problem.dim();
    let (schedules, groups) = match scheme.rule {
        StepRule::Dasa => {
            let params = constants.scheme_params();
            params.validate_dasa()?;
            let s = (0..inst.groups.len())
                .map(|i| StepsizeSchedule::dasa(&params, i))
                .collect::<Result<Vec<_>>>()?;
            (s, inst.groups.clone())
        }
        StepRule::Harmonic(theta) => (vec![StepsizeSchedule::harmonic(theta)?], vec![0..n]),
    };
    Ok(
        RunConfig::new(inst.problem.clone(), schedules, inst.x0.clone(), iterations, 0)
            .with_groups(groups)
            .with_smoothing(smoothing)
            .with_record_every(record_every),
    )
}

/// Constants a scheme sees on table row `row_idx`: the multipliers are drawn from the
/// setting's setup stream, so every scheme on a setting shares them.
pub fn resolve_constants(row_idx: usize, inst: &Instance, kind: SmoothingKind, seed: u64) -> Result<ResolvedConstants> {
    let mut rng = setup_rng(seed, row_idx);
    inst.resolve(kind, &mut rng)
}

fn run_cell(
    cfg: &ExperimentConfig,
    row: &SettingRow,
    scheme: &Scheme,
    x_ref: &BlockVector,
    reference_residual: f64,
) -> Result<CellReport> {
    let inst = &row.instance;
    let constants = match scheme.rule {
        StepRule::Dasa => resolve_constants(row.index, inst, scheme.smoothing, cfg.seed)?,
        // HSA needs no constants; record what is finite.
        StepRule::Harmonic(_) => resolve_constants(row.index, inst, scheme.smoothing, cfg.seed).or_else(|_| {
            Ok::<_, SviError>(ResolvedConstants {
                eta: inst.constants.eta,
                lip: inst.constants.lip,
                nu: inst.constants.nu,
                diameter: inst.diameter,
                c: inst.constants.eta / 4.0,
                r: vec![],
                relaxed_nu: inst.relaxed_nu,
            })
        })?,
    };
    let smoothed_lip = match scheme.smoothing {
        SmoothingKind::None => None,
        k => Some(inst.lipschitz(k)?),
    };
    let run = scheme_run_config(inst, scheme, &constants, cfg.iterations, cfg.record_every)?;
    let reps = run_replications(&run, cfg.runs, cfg.seed, x_ref)?;
    let mut ci_lo = Vec::with_capacity(reps.ks.len());
    let mut ci_hi = Vec::with_capacity(reps.ks.len());
    for j in 0..reps.ks.len() {
        let (lo, hi) = confidence_interval(&reps.errors_at(j), cfg.ci_level)?;
        ci_lo.push(lo);
        ci_hi.push(hi);
    }
    let final_errors = reps.errors_at(reps.ks.len() - 1);
    Ok(CellReport {
        scheme: *scheme,
        setting: row.label.clone(),
        constants,
        smoothed_lip,
        ks: reps.ks,
        mse: reps.mse,
        ci_lo,
        ci_hi,
        final_errors,
        wall_secs: reps.records.iter().map(|r| r.wall_secs).collect(),
        reference_residual,
    })
}

/// Runs the full grid. Nothing is written; see [`write_report`].
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let rows = cfg.problem.rows()?;
    let refs = compute_references(cfg)?;
    let by_key: BTreeMap<(String, String), &ReferenceEntry> = refs
        .iter()
        .map(|r| ((r.setting.clone(), format!("{:?}", r.smoothing)), r))
        .collect();
    let jobs: Vec<(usize, &Scheme)> = (0..rows.len())
        .flat_map(|i| cfg.schemes.iter().map(move |s| (i, s)))
        .collect();
    let cells = jobs
        .par_iter()
        .map(|&(i, scheme)| {
            let row = &rows[i];
            let entry = by_key[&(row.label.clone(), format!("{:?}", scheme.smoothing))];
            let x_ref = BlockVector::from_flat(row.instance.problem.layout(), entry.x.clone())?;
            run_cell(cfg, row, scheme, &x_ref, entry.residual).map_err(|e| SviError::CellFailed {
                cell: format!("{scheme} on {}", row.label),
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let expected = record_plan(cfg.iterations, cfg.record_every).len();
    debug_assert!(cells.iter().all(|c| c.ks.len() == expected));
    Ok(ExperimentReport {
        config: cfg.clone(),
        cells,
    })
}

/// Writes `trajectories.csv` and `report.json` into `dir`.
pub fn write_report(report: &ExperimentReport, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let csv = dir.join("trajectories.csv");
    let json = dir.join("report.json");
    std::fs::write(&csv, report.to_csv())?;
    let text = serde_json::to_string_pretty(report).map_err(|e| SviError::Config(e.to_string()))?;
    std::fs::write(&json, text)?;
    Ok((csv, json))
}

/// Outcome of the constant audits for one setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SettingAudit {
    pub setting: String,
    pub eta: f64,
    pub lip: f64,
    /// `None` when the map has no closed-form mean.
    pub pairs: Option<PairAudit>,
    /// One message per failed check; empty when everything holds.
    pub failures: Vec<String>,
}

impl SettingAudit {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Points of X near `x0`: projected uniform draws from a cube of half-width
/// `D/sqrt(n)`, with the second half replaced by convex combinations.
pub fn audit_points(inst: &Instance, count: usize, seed: u64) -> Result<Vec<BlockVector>> {
    let mut rng = substream(seed, SETUP + (1 << 20));
    let n = inst.problem.dim();
    let half = inst.diameter / (n as f64).sqrt();
    let mut pts: Vec<BlockVector> = Vec::with_capacity(count);
    for i in 0..count {
        if i >= 2 && i % 2 == 1 {
            let ia = rng.random_range(0..i);
            let ib = (ia + rng.random_range(1..i)) % i;
            let (a, b) = (&pts[ia], &pts[ib]);
            let t: f64 = rng.random();
            let mut p = a.clone();
            p.scale(1.0 - t);
            p.axpy(t, b);
            pts.push(p);
        } else {
            let mut p = inst.x0.clone();
            p.as_mut_slice()
                .iter_mut()
                .for_each(|v| *v += rng.random_range(-half..=half));
            pts.push(project_cartesian(&inst.problem.set, &p, &Default::default())?);
        }
    }
    Ok(pts)
}

/// Checks the declared constants of every setting against sampled pairs and
/// the DASA parameter conditions of every DASA scheme.
pub fn validate_config(cfg: &ExperimentConfig) -> Result<Vec<SettingAudit>> {
    cfg.validate()?;
    let rows = cfg.problem.rows()?;
    rows.iter()
        .map(|row| {
            let inst = &row.instance;
            let c = &inst.constants;
            let mut failures = Vec::new();
            let pairs = if inst.problem.map.has_exact_mean() {
                let pts = audit_points(inst, 64, cfg.seed)?;
                let pairs: Vec<_> = pts
                    .iter()
                    .enumerate()
                    .flat_map(|(a, x)| pts[a + 1..].iter().map(move |y| (x.clone(), y.clone())))
                    .collect();
                let audit = audit_pairs(inst.problem.map.as_ref(), &pairs)?;
                if !audit.respects(c, 1e-9) {
                    failures.push(format!(
                        "sampled ratios (monotone {:.6e}, lipschitz {:.6e}) violate eta {:.6e} / L {:.6e}",
                        audit.min_monotone_ratio, audit.max_lipschitz_ratio, c.eta, c.lip
                    ));
                }
                Some(audit)
            } else {
                None
            };
            for scheme in &cfg.schemes {
                let check = inst.smoothing(scheme.smoothing).and_then(|_| match scheme.rule {
                    StepRule::Dasa => {
                        let rc = resolve_constants(row.index, inst, scheme.smoothing, cfg.seed)?;
                        rc.scheme_params().validate_dasa()
                    }
                    StepRule::Harmonic(_) => Ok(()),
                });
                if let Err(e) = check {
                    failures.push(format!("{scheme}: {e}"));
                }
            }
            if !inst.problem.set.contains(&inst.x0, 1e-9) {
                failures.push("starting point is infeasible".into());
            }
            Ok(SettingAudit {
                setting: row.label.clone(),
                eta: c.eta,
                lip: c.lip,
                pairs,
                failures,
            })
        })
        .collect()
}

/// Mean of the final errors of a cell; equals its last MSE entry.
pub fn final_mean(cell: &CellReport) -> f64 {
    mean(&cell.final_errors)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smoke() -> ExperimentConfig {
        ExperimentConfig::from_toml(
            r#"
            schema_version = 1
            schemes = ["DASA", "HSA(1)"]
            runs = 2
            iterations = 10
            seed = 3
            record_every = 4
            [problem]
            kind = "bandwidth"
            select = [1]
            "#,
        )
        .unwrap()
    }

    #[test]
    fn smoke_grid_shape() {
        let rep = run_experiment(&smoke()).unwrap();
        assert_eq!(rep.cells.len(), 2);
        for c in &rep.cells {
            assert_eq!(c.ks, vec![0, 4, 8, 10]);
            assert_eq!(c.final_errors.len(), 2);
            for j in 0..c.ks.len() {
                assert!(c.ci_lo[j] <= c.mse[j] && c.mse[j] <= c.ci_hi[j]);
            }
            assert!((final_mean(c) - c.final_mse()).abs() <= 1e-15 * c.final_mse().max(1.0));
        }
        let csv = rep.to_csv();
        assert!(csv.starts_with("scheme,setting,k,mse,ci_lo,ci_hi,runs,seed\n"));
        assert_eq!(csv.lines().count(), 1 + 2 * 4);
        assert!(csv.lines().nth(1).unwrap().starts_with("DASA,S1,0,"));
    }

    #[test]
    fn csv_is_reproducible() {
        let a = run_experiment(&smoke()).unwrap().to_csv();
        let b = run_experiment(&smoke()).unwrap().to_csv();
        assert_eq!(a, b);
    }

    #[test]
    fn logged_constants_match_instance() {
        let cfg = smoke();
        let rep = run_experiment(&cfg).unwrap();
        let row = &cfg.problem.rows().unwrap()[0];
        let c = &rep.cells[0].constants;
        assert_eq!(c.eta, row.instance.constants.eta);
        assert_eq!(c.lip, row.instance.constants.lip);
    }

    #[test]
    fn validate_passes_default_bandwidth() {
        let mut cfg = smoke();
        cfg.problem = crate::bench::ProblemSpec::Bandwidth {
            settings: None,
            select: Some(vec![1, 12]),
            routing: None,
            eps: None,
        };
        for a in validate_config(&cfg).unwrap() {
            assert!(a.passed(), "{a:?}");
        }
    }

    #[test]
    fn plain_dasa_on_cournot_is_flagged() {
        let cfg = ExperimentConfig::from_toml(
            "schema_version = 1\nschemes = [\"DASA\", \"MSR-DASA\"]\n[problem]\nkind = \"cournot\"\nselect = [1]\n",
        )
        .unwrap();
        let a = &validate_config(&cfg).unwrap()[0];
        assert_eq!(a.failures.len(), 1, "{a:?}");
        assert!(a.failures[0].starts_with("DASA:"));
    }
}
