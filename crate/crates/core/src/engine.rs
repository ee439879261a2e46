//! The projected stochastic approximation loop.
//!
//! ```text
//! x_{k+1, g} = Pi(x_k - gamma_{k, g} Phi(x_k + z_k, xi_k))_g
//! ```
//!
//! where `g` ranges over coordinate groups (one stepsize sequence each) and
//! the projection acts on the set's own blocks. Groups and blocks usually
//! coincide; they differ when agents share a coupled constraint set.

use std::ops::Range;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SviError};
use crate::map::Problem;
use crate::projection::{project_cartesian_in_place, DykstraConfig};
use crate::rng::{substream, NOISE};
use crate::set::CartesianSet;
use crate::smoothing::{Perturber, SmoothingScheme};
use crate::stepsize::StepsizeSchedule;
use crate::vector::BlockVector;

/// One SA run.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub problem: Problem,
    /// Coordinate ranges, one per schedule, covering `0..n` in order.
    pub groups: Vec<Range<usize>>,
    pub schedules: Vec<StepsizeSchedule>,
    pub smoothing: SmoothingScheme,
    pub x0: BlockVector,
    pub iterations: usize,
    pub seed: u64,
    pub record_every: usize,
    pub projection: DykstraConfig,
}

impl RunConfig {
    /// One schedule per projection block (or a single shared schedule),
    /// no smoothing, snapshots every 10 iterations.
    pub fn new(
        problem: Problem,
        schedules: Vec<StepsizeSchedule>,
        x0: BlockVector,
        iterations: usize,
        seed: u64,
    ) -> Self {
        let n = problem.dim();
        let groups = if schedules.len() == 1 {
            vec![0..n]
        } else {
            problem.layout().ranges().collect()
        };
        RunConfig {
            problem,
            groups,
            schedules,
            smoothing: SmoothingScheme::none(),
            x0,
            iterations,
            seed,
            record_every: 10,
            projection: DykstraConfig::default(),
        }
    }

    pub fn with_groups(mut self, groups: Vec<Range<usize>>) -> Self {
        self.groups = groups;
        self
    }

    pub fn with_smoothing(mut self, smoothing: SmoothingScheme) -> Self {
        self.smoothing = smoothing;
        self
    }

    pub fn with_record_every(mut self, every: usize) -> Self {
        self.record_every = every;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let layout = self.problem.layout();
        self.x0.conforms(layout)?;
        if self.record_every == 0 {
            return Err(SviError::param("record_every must be positive"));
        }
        if self.schedules.len() != self.groups.len() {
            return Err(SviError::param(format!(
                "{} schedules for {} coordinate groups",
                self.schedules.len(),
                self.groups.len()
            )));
        }
        let mut next = 0;
        for g in &self.groups {
            if g.start != next || g.end <= g.start {
                return Err(SviError::param("coordinate groups must tile 0..n in order"));
            }
            next = g.end;
        }
        if next != layout.total() {
            return Err(SviError::param("coordinate groups must cover every coordinate"));
        }
        self.smoothing.validate(layout)?;
        let viol = self.problem.set.violation(&self.x0);
        if viol > 10.0 * self.projection.tol {
            return Err(SviError::param(format!("x0 is infeasible (violation {viol:.3e})")));
        }
        Ok(())
    }
}

/// Trajectory of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    /// Iteration index of each snapshot.
    pub ks: Vec<usize>,
    pub snapshots: Vec<BlockVector>,
    /// `||x_k - x_ref||^2` per snapshot when a reference was supplied.
    pub sq_dist: Option<Vec<f64>>,
    pub wall_secs: f64,
}

impl RunRecord {
    pub fn last(&self) -> &BlockVector {
        self.snapshots.last().expect("a record always holds x0")
    }
}

/// Snapshot indices `0, r, 2r, ...` plus `K` when it is not a multiple.
pub fn record_plan(iterations: usize, every: usize) -> Vec<usize> {
    let mut ks: Vec<usize> = (0..=iterations).step_by(every.max(1)).collect();
    if ks.last() != Some(&iterations) {
        ks.push(iterations);
    }
    ks
}

/// One update `x <- Pi(x - gamma_g f_g)` with a stepsize per coordinate group.
pub fn step(
    x: &BlockVector,
    f_sample: &BlockVector,
    steps: &[f64],
    groups: &[Range<usize>],
    set: &CartesianSet,
    cfg: &DykstraConfig,
) -> Result<BlockVector> {
    x.conforms(set.layout())?;
    f_sample.conforms(set.layout())?;
    if steps.len() != groups.len() {
        return Err(SviError::param("one stepsize per group"));
    }
    if let Some(s) = steps.iter().find(|s| !(**s > 0.0)) {
        return Err(SviError::param(format!("stepsizes must be positive, got {s}")));
    }
    let mut y = x.clone();
    descend(&mut y, f_sample.as_slice(), steps, groups);
    project_cartesian_in_place(set, &mut y, cfg)?;
    Ok(y)
}

fn descend(x: &mut BlockVector, f: &[f64], steps: &[f64], groups: &[Range<usize>]) {
    let xs = x.as_mut_slice();
    for (g, gamma) in groups.iter().zip(steps) {
        for j in g.clone() {
            xs[j] -= gamma * f[j];
        }
    }
}

/// Runs `cfg.iterations` updates from `cfg.x0`.
pub fn run_sa(cfg: &RunConfig, x_ref: Option<&BlockVector>) -> Result<RunRecord> {
    cfg.validate()?;
    if let Some(r) = x_ref {
        r.conforms(cfg.problem.layout())?;
    }
    let start = Instant::now();
    let map = cfg.problem.map.as_ref();
    let layout = cfg.problem.layout();
    let n = layout.total();
    let fail = |k: usize, e: SviError| SviError::RunFailed {
        seed: cfg.seed,
        iteration: k,
        source: Box::new(e),
    };

    let mut schedules = cfg.schedules.clone();
    schedules.iter_mut().for_each(|s| s.reset());
    let mut noise_rng = substream(cfg.seed, NOISE);
    let mut perturber = if cfg.smoothing.is_none() {
        None
    } else {
        Some(Perturber::new(&cfg.smoothing, layout, cfg.seed)?)
    };

    let plan = record_plan(cfg.iterations, cfg.record_every);
    let mut snapshots = Vec::with_capacity(plan.len());
    let mut x = cfg.x0.clone();
    snapshots.push(x.clone());
    let mut next_snap = 1;

    let mut noise = vec![0.0; map.noise_dim()];
    let mut point = vec![0.0; n];
    let mut f = vec![0.0; n];
    let mut steps = vec![0.0; schedules.len()];
    for k in 0..cfg.iterations {
        point.copy_from_slice(x.as_slice());
        if let Some(p) = perturber.as_mut() {
            p.draw_into(&mut f);
            point.iter_mut().zip(&f).for_each(|(a, z)| *a += z);
        }
        map.draw_noise(&mut noise_rng, &mut noise);
        map.evaluate(&point, &noise, &mut f).map_err(|e| fail(k, e))?;
        for (s, sched) in steps.iter_mut().zip(schedules.iter_mut()) {
            *s = sched.next_step().map_err(|e| fail(k, e))?;
        }
        descend(&mut x, &f, &steps, &cfg.groups);
        project_cartesian_in_place(&cfg.problem.set, &mut x, &cfg.projection).map_err(|e| fail(k, e))?;
        if plan.get(next_snap) == Some(&(k + 1)) {
            snapshots.push(x.clone());
            next_snap += 1;
        }
    }

    let sq_dist = x_ref.map(|r| snapshots.iter().map(|s| s.dist_sq(r)).collect());
    Ok(RunRecord {
        seed: cfg.seed,
        ks: plan,
        snapshots,
        sq_dist,
        wall_secs: start.elapsed().as_secs_f64(),
    })
}

/// Independent replications and their mean squared error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Replications {
    pub records: Vec<RunRecord>,
    pub ks: Vec<usize>,
    /// `MSE_k = (1/R) sum_i ||x_k^i - x_ref||^2` per snapshot.
    pub mse: Vec<f64>,
}

impl Replications {
    /// Squared errors of every run at snapshot `j`.
    pub fn errors_at(&self, j: usize) -> Vec<f64> {
        self.records
            .iter()
            .map(|r| r.sq_dist.as_ref().expect("replications carry distances")[j])
            .collect()
    }
}

/// Runs `runs` replications with seeds `base_seed + i`; the first failure
/// aborts the batch.
pub fn run_replications(
    template: &RunConfig,
    runs: usize,
    base_seed: u64,
    x_ref: &BlockVector,
) -> Result<Replications> {
    if runs == 0 {
        return Err(SviError::param("need at least one replication"));
    }
    template.validate()?;
    let records: Vec<RunRecord> = (0..runs)
        .into_par_iter()
        .map(|i| {
            let mut cfg = template.clone();
            cfg.seed = base_seed.wrapping_add(i as u64);
            run_sa(&cfg, Some(x_ref))
        })
        .collect::<Result<_>>()?;
    let ks = records[0].ks.clone();
    let mut mse = vec![0.0; ks.len()];
    for r in &records {
        let d = r.sq_dist.as_ref().expect("reference supplied");
        mse.iter_mut().zip(d).for_each(|(m, v)| *m += v);
    }
    mse.iter_mut().for_each(|m| *m /= runs as f64);
    Ok(Replications { records, ks, mse })
}

/// Heuristic check of the Robbins-Monro type conditions
/// `0 <= alpha_k <= 1`, `sum alpha = inf`, `sum mu < inf`, `mu/alpha -> 0`
/// on finite sequences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyakAudit {
    /// First index from which every `alpha_k` lies in `[0, 1]`.
    pub unit_interval_from: Option<usize>,
    /// Sum over the second half of the terms divided by the sum over the
    /// first half.
    pub alpha_tail_ratio: f64,
    pub mu_tail_ratio: f64,
    /// `(mu/alpha)` at the end divided by its value at 10% of the horizon.
    pub ratio_decay: f64,
    pub nonnegative_mu: bool,
}

impl PolyakAudit {
    /// A divergent series keeps adding mass in its second half (`1/k`
    /// gives `ln 2 / ln(K/2)`, about 0.08 at 10^4 terms); a summable one
    /// barely moves (`1/k^2` gives about 6e-5).
    pub fn alpha_diverges(&self) -> bool {
        self.alpha_tail_ratio >= 0.03
    }

    pub fn mu_summable(&self) -> bool {
        self.mu_tail_ratio <= 0.01
    }

    pub fn ratio_vanishes(&self) -> bool {
        self.ratio_decay <= 0.5
    }

    pub fn passes(&self) -> bool {
        self.unit_interval_from.is_some()
            && self.nonnegative_mu
            && self.alpha_diverges()
            && self.mu_summable()
            && self.ratio_vanishes()
    }
}

pub fn polyak_conditions_audit(alpha: &[f64], mu: &[f64]) -> Result<PolyakAudit> {
    if alpha.len() != mu.len() || alpha.len() < 20 {
        return Err(SviError::param("need equal-length sequences with at least 20 terms"));
    }
    let k = alpha.len();
    let head = k / 2;
    let tail_ratio = |s: &[f64]| {
        let h: f64 = s[..head].iter().sum();
        let t: f64 = s[head..].iter().sum();
        t / h
    };
    let unit_interval_from = match alpha.iter().rposition(|a| !(0.0..=1.0).contains(a)) {
        None => Some(0),
        Some(i) if i + 1 < k => Some(i + 1),
        Some(_) => None,
    };
    let ratio = |i: usize| mu[i] / alpha[i];
    Ok(PolyakAudit {
        unit_interval_from,
        alpha_tail_ratio: tail_ratio(alpha),
        mu_tail_ratio: tail_ratio(mu),
        ratio_decay: ratio(k - 1) / ratio(k / 10),
        nonnegative_mu: mu.iter().all(|m| *m >= 0.0),
    })
}

/// `alpha_k = 2(eta - beta L) d_k - L^2 d_k^2 (1+beta)^2` and
/// `mu_k = (1+beta)^2 d_k^2 nu^2` for a lower stepsize sequence `d`.
pub fn polyak_sequences(eta: f64, lip: f64, beta: f64, nu: f64, delta: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let b2 = (1.0 + beta) * (1.0 + beta);
    let alpha = delta
        .iter()
        .map(|d| 2.0 * (eta - beta * lip) * d - lip * lip * d * d * b2)
        .collect();
    let mu = delta.iter().map(|d| b2 * d * d * nu * nu).collect();
    (alpha, mu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::quadratic::{from_map, quadratic_instance, QuadraticMap};
    use crate::set::SetBlock;
    use crate::stepsize::{bound_schedules, SchemeParams};
    use std::sync::Arc;

    fn unit_interval() -> CartesianSet {
        CartesianSet::new(vec![SetBlock::Box {
            lower: vec![0.0],
            upper: vec![1.0],
        }])
        .unwrap()
    }

    fn one(v: f64) -> BlockVector {
        BlockVector::from_blocks(vec![vec![v]])
    }

    #[test]
    fn step_hand_cases() {
        let set = unit_interval();
        let cfg = DykstraConfig::default();
        let g = [0..1];
        assert_eq!(step(&one(0.5), &one(0.0), &[0.3], &g, &set, &cfg).unwrap(), one(0.5));
        let y = step(&one(0.5), &one(1.0), &[0.2], &g, &set, &cfg).unwrap();
        assert!((y.as_slice()[0] - 0.3).abs() < 1e-15);
        assert_eq!(step(&one(0.1), &one(1.0), &[0.5], &g, &set, &cfg).unwrap(), one(0.0));
        assert!(step(&one(0.1), &one(1.0), &[0.0], &g, &set, &cfg).is_err());
    }

    #[test]
    fn equal_steps_match_centralized_update() {
        let qi = quadratic_instance(&[2, 3], 0.0, None, 1).unwrap();
        let set = &qi.instance.problem.set;
        let x = BlockVector::from_blocks(vec![vec![0.2, -0.4], vec![0.9, 0.1, -0.3]]);
        let f = crate::map::exact_mean(qi.map.as_ref(), &x).unwrap();
        let cfg = DykstraConfig::default();
        let a = step(&x, &f, &[0.05, 0.05], &qi.instance.groups, set, &cfg).unwrap();
        let b = step(&x, &f, &[0.05], &[0..5], set, &cfg).unwrap();
        assert_eq!(a, b);
    }

    fn quad_run(half_width: f64, k: usize, seed: u64) -> (RunConfig, BlockVector) {
        let qi = quadratic_instance(&[2, 2], half_width, None, 7).unwrap();
        let c = qi.map.constants().cloned().unwrap();
        use crate::map::StochasticMap;
        let d = qi.instance.diameter;
        let nu = c.nu.max(c.lip * d / 2f64.sqrt());
        let params = SchemeParams::new(c.eta, c.lip, nu, d * d);
        let sched = StepsizeSchedule::asa(&params).unwrap();
        let cfg = RunConfig::new(
            qi.instance.problem.clone(),
            vec![sched],
            qi.instance.x0.clone(),
            k,
            seed,
        );
        (cfg, qi.x_star)
    }

    #[test]
    fn zero_iterations_returns_start() {
        let (cfg, xs) = quad_run(0.5, 0, 1);
        let rec = run_sa(&cfg, Some(&xs)).unwrap();
        assert_eq!(rec.snapshots, vec![cfg.x0.clone()]);
        assert_eq!(rec.ks, vec![0]);
    }

    #[test]
    fn snapshot_plan() {
        assert_eq!(record_plan(4000, 10).len(), 401);
        assert_eq!(record_plan(25, 10), vec![0, 10, 20, 25]);
        let (cfg, xs) = quad_run(0.5, 95, 1);
        let rec = run_sa(&cfg.with_record_every(10), Some(&xs)).unwrap();
        assert_eq!(rec.snapshots.len(), 11);
        assert_eq!(*rec.ks.last().unwrap(), 95);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let (cfg, xs) = quad_run(0.5, 300, 11);
        let a = run_sa(&cfg, Some(&xs)).unwrap();
        let b = run_sa(&cfg, Some(&xs)).unwrap();
        assert_eq!(a.snapshots, b.snapshots);
        assert_eq!(a.sq_dist, b.sq_dist);
    }

    #[test]
    fn noiseless_adaptive_run_contracts_monotonically() {
        let (cfg, xs) = quad_run(0.0, 500, 3);
        let rec = run_sa(&cfg.with_record_every(1), Some(&xs)).unwrap();
        let d = rec.sq_dist.unwrap();
        assert!(d.windows(2).all(|w| w[1] <= w[0]), "distance increased");
        assert!(d[500] < d[0]);
    }

    #[test]
    fn replications_average_runs() {
        let (cfg, xs) = quad_run(0.5, 50, 0);
        let one = run_replications(&cfg, 1, 40, &xs).unwrap();
        assert_eq!(one.mse, one.records[0].sq_dist.clone().unwrap());
        let (cfg, xs) = quad_run(0.0, 50, 0);
        let reps = run_replications(&cfg, 4, 0, &xs).unwrap();
        for j in 0..reps.ks.len() {
            let e = reps.errors_at(j);
            assert!(e.iter().all(|v| *v == e[0]));
        }
    }

    #[test]
    fn feasibility_is_preserved() {
        let map = QuadraticMap::identity(&[3], vec![-5.0, 4.0, 0.0], 3.0);
        let qi = from_map(map, None).unwrap();
        let sched = StepsizeSchedule::harmonic(1.0).unwrap();
        let cfg = RunConfig::new(qi.instance.problem.clone(), vec![sched], qi.instance.x0.clone(), 200, 5)
            .with_record_every(1);
        let rec = run_sa(&cfg, None).unwrap();
        for s in &rec.snapshots {
            assert!(qi.instance.problem.set.contains(s, 1e-9));
        }
    }

    #[test]
    fn domain_errors_carry_iteration() {
        #[derive(Debug)]
        struct Bad(crate::vector::Layout);
        impl crate::map::StochasticMap for Bad {
            fn layout(&self) -> &crate::vector::Layout {
                &self.0
            }
            fn noise_dim(&self) -> usize {
                0
            }
            fn draw_noise(&self, _: &mut dyn rand::RngCore, _: &mut [f64]) {}
            fn evaluate(&self, x: &[f64], _: &[f64], out: &mut [f64]) -> Result<()> {
                if x[0] < 0.5 {
                    return Err(SviError::Domain("left half".into()));
                }
                out[0] = 1.0;
                Ok(())
            }
        }
        let problem = Problem::new(Arc::new(Bad(crate::vector::Layout::single(1))), unit_interval()).unwrap();
        let sched = StepsizeSchedule::harmonic(0.2).unwrap();
        let cfg = RunConfig::new(problem, vec![sched], one(1.0), 10, 77);
        match run_sa(&cfg, None).unwrap_err() {
            SviError::RunFailed { seed, iteration, .. } => {
                assert_eq!(seed, 77);
                // 1.0 -> 0.8 -> 0.7 -> 0.6333 -> 0.5833 -> 0.5433 -> 0.51 -> 0.4814
                assert_eq!(iteration, 7);
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let (cfg, _) = quad_run(0.0, 5, 0);
        let mut bad = cfg.clone();
        bad.x0 = BlockVector::from_blocks(vec![vec![2.0, 0.0], vec![0.0, 0.0]]);
        assert!(run_sa(&bad, None).is_err());
        assert!(run_sa(&cfg.clone().with_groups(vec![0..1, 2..4]), None).is_err());
        assert!(run_sa(&cfg.with_record_every(0), None).is_err());
    }

    #[test]
    fn polyak_audit_canonical_sequences() {
        let k = 10_000;
        let alpha: Vec<f64> = (1..=k).map(|i| 1.0 / i as f64).collect();
        let mu: Vec<f64> = (1..=k).map(|i| 1.0 / (i * i) as f64).collect();
        let a = polyak_conditions_audit(&alpha, &mu).unwrap();
        assert!(a.passes(), "{a:?}");
        assert_eq!(a.unit_interval_from, Some(0));
        let bad = polyak_conditions_audit(&alpha, &alpha).unwrap();
        assert!(!bad.mu_summable() && !bad.passes());
    }

    #[test]
    fn polyak_audit_bound_sequences() {
        let params = SchemeParams::new(1.0, 1.5, 1.5, 1.0).with_beta(0.2);
        let (delta, _) = bound_schedules(&params, 10_000).unwrap();
        let (alpha, mu) = polyak_sequences(params.eta, params.lip, params.beta, params.nu, &delta);
        let a = polyak_conditions_audit(&alpha, &mu).unwrap();
        assert!(a.passes(), "{a:?}");
    }
}
