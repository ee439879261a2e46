//! Deterministic reference solutions.
//!
//! The reference for a stochastic problem is the solution of a fixed
//! deterministic surrogate of its mean map: the exact mean when the map has
//! one, otherwise a sample average over a fixed noise sample. Smoothed runs
//! additionally average over a fixed sample of perturbations (common random
//! numbers), so the surrogate is an ordinary deterministic map and a
//! projection method solves it to any tolerance.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SviError};
use crate::map::StochasticMap;
use crate::projection::{project_cartesian_in_place, DykstraConfig};
use crate::rng::{substream, ORACLE_NOISE, ORACLE_SMOOTHING};
use crate::set::CartesianSet;
use crate::smoothing::{Perturber, SmoothingScheme};
use crate::vector::{dist_sq, BlockVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMethod {
    /// Extragradient with a backtracked step.
    Extragradient,
    /// `x <- Pi(x - gamma F(x))` with `gamma = eta / L^2`.
    ProjectedGradient,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    /// Stop once `||x - Pi(x - F(x))|| < tol`.
    pub tol: f64,
    pub max_iters: usize,
    pub method: OracleMethod,
    pub projection: DykstraConfig,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            tol: 1e-9,
            max_iters: 1_000_000,
            method: OracleMethod::Extragradient,
            projection: DykstraConfig {
                max_iters: 100_000,
                tol: 1e-13,
            },
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iters == 0 {
            return Err(SviError::param("oracle needs tol > 0 and max_iters >= 1"));
        }
        self.projection.validate()
    }
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub x: BlockVector,
    /// Natural residual with `gamma = 1` at `x`.
    pub residual: f64,
    pub iterations: usize,
}

/// Solves `VI(X, f)` for a strongly monotone deterministic `f`.
///
/// `eta` and `lip` seed the step (`1/L` for extragradient, `eta/L^2` for
/// projected gradient); an infinite or unknown `lip` starts extragradient
/// at step 1 and lets backtracking find the scale.
pub fn solve_deterministic(
    f: &mut dyn FnMut(&[f64], &mut [f64]) -> Result<()>,
    set: &CartesianSet,
    x0: &BlockVector,
    eta: f64,
    lip: f64,
    cfg: &OracleConfig,
) -> Result<Solution> {
    cfg.validate()?;
    x0.conforms(set.layout())?;
    let pcfg = &cfg.projection;
    let mut x = x0.clone();
    project_cartesian_in_place(set, &mut x, pcfg)?;
    let n = x.dim();
    let mut fx = vec![0.0; n];
    let mut fy = vec![0.0; n];
    let mut y = x.clone();
    let mut z = x.clone();

    let residual = |x: &BlockVector, fx: &[f64], scratch: &mut BlockVector| -> Result<f64> {
        scratch
            .as_mut_slice()
            .iter_mut()
            .zip(x.as_slice().iter().zip(fx))
            .for_each(|(s, (xi, fi))| *s = xi - fi);
        project_cartesian_in_place(set, scratch, pcfg)?;
        Ok(dist_sq(x.as_slice(), scratch.as_slice()).sqrt())
    };

    f(x.as_slice(), &mut fx)?;
    let mut res = residual(&x, &fx, &mut z)?;
    match cfg.method {
        OracleMethod::ProjectedGradient => {
            if !(eta > 0.0 && lip.is_finite() && lip >= eta) {
                return Err(SviError::param("projected gradient needs 0 < eta <= L < inf"));
            }
            let gamma = eta / (lip * lip);
            for it in 0..cfg.max_iters {
                if res < cfg.tol {
                    return Ok(Solution {
                        x,
                        residual: res,
                        iterations: it,
                    });
                }
                x.as_mut_slice().iter_mut().zip(&fx).for_each(|(v, g)| *v -= gamma * g);
                project_cartesian_in_place(set, &mut x, pcfg)?;
                f(x.as_slice(), &mut fx)?;
                res = residual(&x, &fx, &mut z)?;
            }
        }
        OracleMethod::Extragradient => {
            let mut tau = if lip.is_finite() && lip > 0.0 { 0.9 / lip } else { 1.0 };
            const SHRINK: f64 = 0.5;
            const ACCEPT: f64 = 0.9;
            for it in 0..cfg.max_iters {
                if res < cfg.tol {
                    return Ok(Solution {
                        x,
                        residual: res,
                        iterations: it,
                    });
                }
                // Predictor with backtracking until tau ||F(x) - F(y)|| <= 0.9 ||x - y||.
                loop {
                    y.as_mut_slice()
                        .iter_mut()
                        .zip(x.as_slice().iter().zip(&fx))
                        .for_each(|(v, (xi, g))| *v = xi - tau * g);
                    project_cartesian_in_place(set, &mut y, pcfg)?;
                    f(y.as_slice(), &mut fy)?;
                    let dx = dist_sq(x.as_slice(), y.as_slice()).sqrt();
                    let df = dist_sq(&fx, &fy).sqrt();
                    if tau * df <= ACCEPT * dx || dx == 0.0 {
                        if tau * df < 0.5 * ACCEPT * dx {
                            tau *= 1.2;
                        }
                        break;
                    }
                    tau *= SHRINK;
                    if tau < 1e-300 {
                        return Err(SviError::OracleFailed {
                            iterations: it,
                            residual: res,
                        });
                    }
                }
                // Corrector uses the predictor's map value.
                x.as_mut_slice().iter_mut().zip(&fy).for_each(|(v, g)| *v -= tau * g);
                project_cartesian_in_place(set, &mut x, pcfg)?;
                f(x.as_slice(), &mut fx)?;
                res = residual(&x, &fx, &mut z)?;
            }
        }
    }
    if res < cfg.tol {
        return Ok(Solution {
            x,
            residual: res,
            iterations: cfg.max_iters,
        });
    }
    Err(SviError::OracleFailed {
        iterations: cfg.max_iters,
        residual: res,
    })
}

/// How the surrogate averages over the noise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseMode {
    /// Closed-form mean when the map has one, else a sample of this size.
    Exact { fallback_samples: usize },
    /// Always a fixed sample of this size.
    Saa { samples: usize },
}

/// Settings of the deterministic surrogate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateConfig {
    pub noise: NoiseMode,
    /// Perturbation sample size for smoothed maps.
    pub smoothing_samples: usize,
    /// Pair each perturbation with its negation.
    pub antithetic: bool,
    pub seed: u64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            noise: NoiseMode::Exact {
                fallback_samples: 10_000,
            },
            smoothing_samples: 10_000,
            antithetic: true,
            seed: 0,
        }
    }
}

/// A fixed deterministic approximation of `F` or `F^eps`.
pub struct Surrogate<'a> {
    map: &'a dyn StochasticMap,
    /// Flattened noise draws, or a single averaged draw for maps affine in
    /// the noise. Empty when the exact mean is used.
    noises: Vec<f64>,
    use_exact: bool,
    /// Flattened perturbations; empty when unsmoothed.
    shifts: Vec<f64>,
}

/// Fixed chunk size for the perturbation sum; keeps the floating-point
/// reduction order independent of the thread count.
const CHUNK: usize = 256;

impl<'a> Surrogate<'a> {
    pub fn new(map: &'a dyn StochasticMap, scheme: &SmoothingScheme, cfg: &SurrogateConfig) -> Result<Self> {
        let d = map.noise_dim();
        let (use_exact, count) = match cfg.noise {
            NoiseMode::Exact { fallback_samples } => (map.has_exact_mean(), fallback_samples),
            NoiseMode::Saa { samples } => (false, samples),
        };
        let mut noises = Vec::new();
        if !use_exact && d > 0 {
            if count == 0 {
                return Err(SviError::param("noise sample size must be positive"));
            }
            let mut rng = substream(cfg.seed, ORACLE_NOISE);
            noises = vec![0.0; count * d];
            for draw in noises.chunks_exact_mut(d) {
                map.draw_noise(&mut rng, draw);
            }
            if map.affine_in_noise() {
                let mut avg = vec![0.0; d];
                for draw in noises.chunks_exact(d) {
                    avg.iter_mut().zip(draw).for_each(|(a, v)| *a += v);
                }
                avg.iter_mut().for_each(|a| *a /= count as f64);
                noises = avg;
            }
        }
        let mut shifts = Vec::new();
        if !scheme.is_none() {
            if cfg.smoothing_samples == 0 {
                return Err(SviError::param("perturbation sample size must be positive"));
            }
            let layout = map.layout();
            let n = layout.total();
            let mut p = Perturber::with_base(scheme, layout, cfg.seed, ORACLE_SMOOTHING)?;
            let mut z = vec![0.0; n];
            if cfg.antithetic {
                let pairs = cfg.smoothing_samples.div_ceil(2);
                shifts.reserve(2 * pairs * n);
                for _ in 0..pairs {
                    p.draw_into(&mut z);
                    shifts.extend_from_slice(&z);
                    shifts.extend(z.iter().map(|v| -v));
                }
            } else {
                shifts.reserve(cfg.smoothing_samples * n);
                for _ in 0..cfg.smoothing_samples {
                    p.draw_into(&mut z);
                    shifts.extend_from_slice(&z);
                }
            }
        }
        Ok(Surrogate {
            map,
            noises,
            use_exact,
            shifts,
        })
    }

    fn unsmoothed(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        if self.use_exact {
            self.map.exact_mean(x, out)
        } else if self.map.affine_in_noise() || self.map.noise_dim() == 0 {
            self.map.evaluate(x, &self.noises, out)
        } else {
            self.map.saa_mean(x, &self.noises, out)
        }
    }

    /// Number of perturbations (0 when unsmoothed).
    pub fn shift_count(&self) -> usize {
        let n = self.map.layout().total();
        self.shifts.len() / n
    }

    pub fn evaluate(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let n = x.len();
        if self.shifts.is_empty() {
            return self.unsmoothed(x, out);
        }
        let m = self.shift_count();
        let partials: Vec<Vec<f64>> = self
            .shifts
            .par_chunks(CHUNK * n)
            .map(|chunk| -> Result<Vec<f64>> {
                let mut acc = vec![0.0; n];
                let mut pt = vec![0.0; n];
                let mut val = vec![0.0; n];
                for z in chunk.chunks_exact(n) {
                    pt.iter_mut().zip(x.iter().zip(z)).for_each(|(p, (a, b))| *p = a + b);
                    self.unsmoothed(&pt, &mut val)?;
                    acc.iter_mut().zip(&val).for_each(|(a, v)| *a += v);
                }
                Ok(acc)
            })
            .collect::<Result<_>>()?;
        out.iter_mut().for_each(|v| *v = 0.0);
        for p in &partials {
            out.iter_mut().zip(p).for_each(|(o, v)| *o += v);
        }
        out.iter_mut().for_each(|v| *v /= m as f64);
        Ok(())
    }

    pub fn evaluate_block(&self, x: &BlockVector) -> Result<BlockVector> {
        let mut out = BlockVector::zeros(x.layout());
        self.evaluate(x.as_slice(), out.as_mut_slice())?;
        Ok(out)
    }
}

/// Solution of the surrogate problem for `scheme`.
pub fn reference_solution(
    map: &dyn StochasticMap,
    set: &CartesianSet,
    x0: &BlockVector,
    scheme: &SmoothingScheme,
    eta: f64,
    lip: f64,
    surrogate: &SurrogateConfig,
    cfg: &OracleConfig,
) -> Result<Solution> {
    let s = Surrogate::new(map, scheme, surrogate)?;
    let mut f = |x: &[f64], out: &mut [f64]| s.evaluate(x, out);
    solve_deterministic(&mut f, set, x0, eta, lip, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::{exact_mean, natural_residual};
    use crate::problems::bandwidth::{bandwidth_instance, BandwidthSettings, STANDARD_SETTINGS};
    use crate::problems::cournot::{cournot_instance, CournotMarket, STANDARD_SETTINGS as COURNOT};
    use crate::problems::quadratic::{quadratic_instance, QuadraticMap};
    use crate::set::SetBlock;

    fn bandwidth_reference(s: BandwidthSettings) -> (crate::problems::bandwidth::BandwidthInstance, Solution) {
        let bi = bandwidth_instance(s, None, None).unwrap();
        let c = &bi.instance.constants;
        let sol = reference_solution(
            bi.map.as_ref(),
            &bi.instance.problem.set,
            &bi.instance.x0,
            &SmoothingScheme::none(),
            c.eta,
            c.lip,
            &SurrogateConfig::default(),
            &OracleConfig::default(),
        )
        .unwrap();
        (bi, sol)
    }

    #[test]
    fn quadratic_zero_noise_matches_analytic() {
        let map = QuadraticMap::identity(&[2, 2], vec![-2.0, 0.5, 3.0, -0.25], 0.0);
        let set = CartesianSet::new(vec![
            SetBlock::Box {
                lower: vec![-1.0; 2],
                upper: vec![1.0; 2],
            },
            SetBlock::Box {
                lower: vec![-1.0; 2],
                upper: vec![1.0; 2],
            },
        ])
        .unwrap();
        let x0 = BlockVector::zeros(set.layout());
        for method in [OracleMethod::Extragradient, OracleMethod::ProjectedGradient] {
            let cfg = OracleConfig {
                tol: 1e-12,
                method,
                ..OracleConfig::default()
            };
            let sol = reference_solution(
                &map,
                &set,
                &x0,
                &SmoothingScheme::none(),
                1.0,
                1.0,
                &SurrogateConfig::default(),
                &cfg,
            )
            .unwrap();
            let want = [1.0, -0.5, -1.0, 0.25];
            for (a, b) in sol.x.as_slice().iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "{method:?}: {:?}", sol.x);
            }
        }
    }

    #[test]
    fn bandwidth_reference_is_stationary() {
        let (bi, sol) = bandwidth_reference(STANDARD_SETTINGS[0]);
        let f = exact_mean(bi.map.as_ref(), &sol.x).unwrap();
        let r = natural_residual(
            &sol.x,
            &f,
            &bi.instance.problem.set,
            1.0,
            &DykstraConfig {
                tol: 1e-13,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(r < 1e-8, "residual {r}");
        // KKT: every positive route has zero reduced cost unless a link binds.
        assert!(bi.instance.problem.set.contains(&sol.x, 1e-9));
    }

    #[test]
    fn shrinking_capacity_keeps_interior_solution() {
        let (_, a) = bandwidth_reference(STANDARD_SETTINGS[0]);
        let (bi, b) = bandwidth_reference(STANDARD_SETTINGS[1]);
        // With m_b = 0.1 the solution stays strictly inside the capacities.
        let slack: Vec<f64> = bi
            .routing
            .iter()
            .zip(&bi.capacities)
            .map(|(row, cap)| cap - crate::vector::dot(row, b.x.as_slice()))
            .collect();
        assert!(slack.iter().all(|s| *s > 1e-6), "{slack:?}");
        assert!(a.x.dist_sq(&b.x).sqrt() < 1e-8);
    }

    #[test]
    fn saa_reference_moves_at_root_m_rate() {
        // Ratio of reference displacement when M grows 4x; O(M^-1/2) gives 0.5.
        let bi = bandwidth_instance(STANDARD_SETTINGS[6], None, None).unwrap();
        let c = &bi.instance.constants;
        let exact = bandwidth_reference(STANDARD_SETTINGS[6]).1.x;
        let solve = |m: usize, seed: u64| {
            let sc = SurrogateConfig {
                noise: NoiseMode::Saa { samples: m },
                seed,
                ..Default::default()
            };
            reference_solution(
                bi.map.as_ref(),
                &bi.instance.problem.set,
                &bi.instance.x0,
                &SmoothingScheme::none(),
                c.eta,
                c.lip,
                &sc,
                &OracleConfig::default(),
            )
            .unwrap()
            .x
        };
        let mut small = 0.0;
        let mut large = 0.0;
        for seed in 0..5 {
            small += solve(10_000, seed).dist_sq(&exact);
            large += solve(40_000, 100 + seed).dist_sq(&exact);
        }
        let ratio = (large / small).sqrt();
        assert!((0.3..=0.8).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn affine_cournot_methods_agree() {
        let market = CournotMarket {
            sigma: 1.0,
            ..CournotMarket::default()
        };
        let ci = cournot_instance(COURNOT[0], Some(market)).unwrap();
        let c = &ci.instance.constants;
        let mut sols = Vec::new();
        for method in [OracleMethod::Extragradient, OracleMethod::ProjectedGradient] {
            let cfg = OracleConfig {
                tol: 1e-11,
                method,
                ..OracleConfig::default()
            };
            sols.push(
                reference_solution(
                    ci.map.as_ref(),
                    &ci.instance.problem.set,
                    &ci.instance.x0,
                    &SmoothingScheme::none(),
                    c.eta,
                    c.lip,
                    &SurrogateConfig::default(),
                    &cfg,
                )
                .unwrap(),
            );
        }
        assert!(sols[0].x.dist_sq(&sols[1].x).sqrt() < 1e-9);
    }

    #[test]
    fn smoothed_surrogate_is_deterministic() {
        let qi = quadratic_instance(&[2, 2], 0.0, Some(0.1), 9).unwrap();
        let scheme = qi.instance.smoothing(crate::smoothing::SmoothingKind::Msr).unwrap();
        let cfg = SurrogateConfig {
            smoothing_samples: 1000,
            ..Default::default()
        };
        let x = BlockVector::from_blocks(vec![vec![0.3, -0.2], vec![0.1, 0.5]]);
        let a = Surrogate::new(qi.map.as_ref(), &scheme, &cfg)
            .unwrap()
            .evaluate_block(&x)
            .unwrap();
        let b = Surrogate::new(qi.map.as_ref(), &scheme, &cfg)
            .unwrap()
            .evaluate_block(&x)
            .unwrap();
        assert_eq!(a, b);
        // Antithetic pairs cancel exactly on an affine map.
        let f = exact_mean(qi.map.as_ref(), &x).unwrap();
        assert!(a.dist_sq(&f).sqrt() < 1e-12);
    }

    #[test]
    fn non_convergence_reports_residual() {
        let bi = bandwidth_instance(STANDARD_SETTINGS[0], None, None).unwrap();
        let c = &bi.instance.constants;
        let cfg = OracleConfig {
            max_iters: 2,
            ..OracleConfig::default()
        };
        let err = reference_solution(
            bi.map.as_ref(),
            &bi.instance.problem.set,
            &bi.instance.x0,
            &SmoothingScheme::none(),
            c.eta,
            c.lip,
            &SurrogateConfig::default(),
            &cfg,
        )
        .unwrap_err();
        assert!(matches!(err, SviError::OracleFailed { iterations: 2, .. }), "{err}");
    }
}
