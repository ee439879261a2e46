use std::path::Path;
use std::sync::Arc;

use rand::{Rng, RngCore};
use svi_core::bench::experiment::{resolve_constants, scheme_run_config};
use svi_core::bench::{confidence_interval, run_experiment, ExperimentConfig, Scheme};
use svi_core::engine::{run_replications, RunConfig};
use svi_core::problems::quadratic::quadratic_instance;
use svi_core::smoothing::{SmoothingKind, SmoothingScheme};
use svi_core::stepsize::{bound_schedules, StepsizeSchedule};
use svi_core::{BlockVector, CartesianSet, Layout, Problem, SetBlock, StochasticMap};

#[test]
fn dasa_error_envelope_on_quadratic() {
    let qi = quadratic_instance(&[2, 2, 2], 1.0, None, 21).unwrap();
    let inst = &qi.instance;
    let rc = resolve_constants(0, inst, SmoothingKind::None, 4).unwrap();
    let scheme: Scheme = "DASA".parse().unwrap();
    let k = 400;
    let run = scheme_run_config(inst, &scheme, &rc, k, 20).unwrap();
    let reps = run_replications(&run, 1000, 9, &qi.x_star).unwrap();

    let beta = (rc.eta - 2.0 * rc.c) / rc.lip;
    let p = rc.scheme_params().with_beta(beta);
    let (delta, _) = bound_schedules(&p, k).unwrap();
    let scale = 2.0 * (1.0 + beta).powi(2) * p.nu * p.nu / (p.eta - beta * p.lip);
    for (j, &kk) in reps.ks.iter().enumerate() {
        let (lo, hi) = confidence_interval(&reps.errors_at(j), 0.95).unwrap();
        let bound = scale * delta[kk] + 3.0 * (hi - lo) / 2.0;
        assert!(reps.mse[j] <= bound, "k={kk}: mse {} > {bound}", reps.mse[j]);
    }
    assert!(reps.mse.last().unwrap() < &reps.mse[0]);
}

/// `F(x) = 2x + 2 max(x, 0) - 1 + xi` on `[-2, 2]`, `xi ~ U[-1, 1]`.
/// Root 1/4. Averaging over `x + U[-1/2, 1/2]` replaces `max(x, 0)` by
/// `(x + 1/2)^2 / 2` near the kink, so the smoothed root solves
/// `x^2 + 3x - 3/4 = 0`.
#[derive(Debug)]
struct Kinked(Layout);

impl StochasticMap for Kinked {
    fn layout(&self) -> &Layout {
        &self.0
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn draw_noise(&self, rng: &mut dyn RngCore, out: &mut [f64]) {
        out[0] = rng.random_range(-1.0..1.0);
    }
    fn evaluate(&self, x: &[f64], noise: &[f64], out: &mut [f64]) -> svi_core::Result<()> {
        out[0] = 2.0 * x[0] + 2.0 * x[0].max(0.0) - 1.0 + noise[0];
        Ok(())
    }
}

#[test]
fn smoothed_runs_approach_the_smoothed_solution() {
    let x_star = 0.25;
    let x_eps = (-3.0 + 12f64.sqrt()) / 2.0;
    let gap = (x_eps - x_star) * (x_eps - x_star);

    let set = CartesianSet::new(vec![SetBlock::Box {
        lower: vec![-2.0],
        upper: vec![2.0],
    }])
    .unwrap();
    let problem = Problem::new(Arc::new(Kinked(Layout::new(&[1]))), set).unwrap();
    let x0 = BlockVector::from_blocks(vec![vec![-1.5]]);
    let run = RunConfig::new(problem, vec![StepsizeSchedule::harmonic(1.0).unwrap()], x0, 20_000, 0)
        .with_smoothing(SmoothingScheme::mcr(vec![0.5]))
        .with_record_every(20_000);
    let at = |v: f64| BlockVector::from_blocks(vec![vec![v]]);
    let to_eps = *run_replications(&run, 20, 3, &at(x_eps)).unwrap().mse.last().unwrap();
    let to_star = *run_replications(&run, 20, 3, &at(x_star)).unwrap().mse.last().unwrap();
    assert!(
        to_eps < 0.1 * gap,
        "mse to x_eps {to_eps:.3e}, (x_eps - x*)^2 {gap:.3e}"
    );
    assert!(to_star > 0.5 * gap, "mse to x* {to_star:.3e}");
}

fn config(name: &str) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    ExperimentConfig::load(&path).unwrap()
}

#[test]
fn report_rows_and_logged_constants() {
    let cfg = config("smoke.toml");
    let rep = run_experiment(&cfg).unwrap();
    let rows = cfg.problem.rows().unwrap();
    for c in &rep.cells {
        assert_eq!(c.ks.len(), cfg.iterations / cfg.record_every + 1);
        for j in 0..c.ks.len() {
            assert!(
                c.ci_lo[j] <= c.mse[j] && c.mse[j] <= c.ci_hi[j],
                "{} {} k={}",
                c.scheme,
                c.setting,
                c.ks[j]
            );
        }
        let row = rows.iter().find(|r| r.label == c.setting).unwrap();
        let fresh = row.instance.constants.clone();
        assert!((c.constants.eta - fresh.eta).abs() <= 1e-12 * fresh.eta);
        assert!((c.constants.lip - fresh.lip).abs() <= 1e-12 * fresh.lip);
    }
}

/// MSE at K below MSE at K/10 for every adaptive scheme on every default
/// setting, with fewer replications than the full grids. Bandwidth S3 is
/// the known exception: per-user DASA steps settle on a point next to x*
/// and the MSE is flat at about 6.5e-5 from early on.
#[test]
fn adaptive_mse_eventually_decreases() {
    let mut bad = Vec::new();
    for (name, schemes) in [
        ("bandwidth.toml", vec!["DASA"]),
        ("cournot.toml", vec!["MSR-DASA", "MCR-DASA"]),
    ] {
        let mut cfg = config(name);
        cfg.runs = 4;
        cfg.record_every = cfg.iterations / 10;
        cfg.schemes = schemes.iter().map(|s| s.parse().unwrap()).collect();
        let rep = run_experiment(&cfg).unwrap();
        for c in &rep.cells {
            let tenth = c.ks.iter().position(|&k| k == cfg.iterations / 10).unwrap();
            if !(c.final_mse() < c.mse[tenth]) {
                bad.push(format!("{name} {} {}", c.scheme, c.setting));
                println!(
                    "{name} {} {}: {:.3e} at K vs {:.3e} at K/10",
                    c.scheme,
                    c.setting,
                    c.final_mse(),
                    c.mse[tenth]
                );
            }
        }
    }
    assert!(bad.iter().all(|b| b == "bandwidth.toml DASA S3"), "{bad:?}");
}
