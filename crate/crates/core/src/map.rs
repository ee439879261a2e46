//! Stochastic map oracles `Phi(x, xi)` and merit functions.

use std::fmt::Debug;
use std::sync::Arc;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SviError};
use crate::projection::{project_cartesian_in_place, DykstraConfig};
use crate::set::CartesianSet;
use crate::vector::{BlockVector, Layout};

/// Problem constants assumed by the stepsize rules.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapConstants {
    /// Strong monotonicity modulus.
    pub eta: f64,
    /// Lipschitz constant of the mean map.
    pub lip: f64,
    /// Per-block bounds `||F_i(x)|| <= C_i` over the (possibly enlarged) set.
    pub comp_bounds: Option<Vec<f64>>,
    /// `nu` with `E||Phi(x, xi) - F(x)||^2 <= nu^2`.
    pub nu: f64,
}

/// A stochastic map `Phi(x, xi)` with `F(x) = E[Phi(x, xi)]`.
///
/// Noise is drawn separately from evaluation so that callers can hold a
/// sample fixed (sample average maps, common random numbers) or draw fresh
/// noise every iteration. All buffers are flat; block structure comes from
/// [`StochasticMap::layout`].
pub trait StochasticMap: Send + Sync + Debug {
    fn layout(&self) -> &Layout;

    /// Length of one noise draw. Zero for deterministic maps.
    fn noise_dim(&self) -> usize;

    fn draw_noise(&self, rng: &mut dyn RngCore, out: &mut [f64]);

    /// `out = Phi(x, noise)`. Points outside the map's domain give
    /// [`SviError::Domain`].
    fn evaluate(&self, x: &[f64], noise: &[f64], out: &mut [f64]) -> Result<()>;

    fn has_exact_mean(&self) -> bool {
        false
    }

    /// `out = F(x)` when known in closed form.
    fn exact_mean(&self, _x: &[f64], _out: &mut [f64]) -> Result<()> {
        Err(SviError::Unsupported("exact mean"))
    }

    fn constants(&self) -> Option<&MapConstants> {
        None
    }

    /// True when `Phi(x, .)` is affine in the noise, so that averaging the
    /// noise first gives the same sample mean.
    fn affine_in_noise(&self) -> bool {
        false
    }

    /// Sample mean `(1/M) sum_m Phi(x, xi_m)` over `noises` (M draws stored
    /// back to back).
    fn saa_mean(&self, x: &[f64], noises: &[f64], out: &mut [f64]) -> Result<()> {
        let d = self.noise_dim();
        if d == 0 {
            return self.evaluate(x, &[], out);
        }
        let m = noises.len() / d;
        if m == 0 || noises.len() % d != 0 {
            return Err(SviError::param("noise sample length is not a multiple of noise_dim"));
        }
        if self.affine_in_noise() {
            let mut avg = vec![0.0; d];
            for draw in noises.chunks_exact(d) {
                avg.iter_mut().zip(draw).for_each(|(a, v)| *a += v);
            }
            avg.iter_mut().for_each(|a| *a /= m as f64);
            return self.evaluate(x, &avg, out);
        }
        let mut tmp = vec![0.0; out.len()];
        out.iter_mut().for_each(|v| *v = 0.0);
        for draw in noises.chunks_exact(d) {
            self.evaluate(x, draw, &mut tmp)?;
            out.iter_mut().zip(&tmp).for_each(|(o, t)| *o += t);
        }
        out.iter_mut().for_each(|v| *v /= m as f64);
        Ok(())
    }
}

/// A map together with its feasible set.
#[derive(Clone, Debug)]
pub struct Problem {
    pub map: Arc<dyn StochasticMap>,
    pub set: CartesianSet,
}

impl Problem {
    pub fn new(map: Arc<dyn StochasticMap>, set: CartesianSet) -> Result<Self> {
        map.layout().check(set.layout())?;
        Ok(Problem { map, set })
    }

    pub fn layout(&self) -> &Layout {
        self.map.layout()
    }

    pub fn dim(&self) -> usize {
        self.layout().total()
    }

    pub fn constants(&self) -> Option<&MapConstants> {
        self.map.constants()
    }
}

/// One draw of `Phi(x, xi)`.
pub fn sample_map(map: &dyn StochasticMap, x: &BlockVector, rng: &mut dyn RngCore) -> Result<BlockVector> {
    x.conforms(map.layout())?;
    let mut noise = vec![0.0; map.noise_dim()];
    map.draw_noise(rng, &mut noise);
    let mut out = BlockVector::zeros(map.layout());
    map.evaluate(x.as_slice(), &noise, out.as_mut_slice())?;
    Ok(out)
}

/// `F(x)` as a block vector.
pub fn exact_mean(map: &dyn StochasticMap, x: &BlockVector) -> Result<BlockVector> {
    x.conforms(map.layout())?;
    let mut out = BlockVector::zeros(map.layout());
    map.exact_mean(x.as_slice(), out.as_mut_slice())?;
    Ok(out)
}

/// `||x - Pi_X(x - gamma f_hat)||`.
pub fn natural_residual(
    x: &BlockVector,
    f_hat: &BlockVector,
    set: &CartesianSet,
    gamma: f64,
    cfg: &DykstraConfig,
) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(SviError::param("natural residual needs gamma > 0"));
    }
    x.conforms(set.layout())?;
    f_hat.conforms(set.layout())?;
    let mut y = x.clone();
    y.axpy(-gamma, f_hat);
    project_cartesian_in_place(set, &mut y, cfg)?;
    Ok(x.dist_sq(&y).sqrt())
}

/// Worst observed ratios from a sampled-pair audit of `F`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairAudit {
    /// `min (F(x)-F(y))^T(x-y) / ||x-y||^2`; should be `>= eta`.
    pub min_monotone_ratio: f64,
    /// `max ||F(x)-F(y)|| / ||x-y||`; should be `<= L`.
    pub max_lipschitz_ratio: f64,
    pub pairs: usize,
}

impl PairAudit {
    pub fn respects(&self, c: &MapConstants, rel_slack: f64) -> bool {
        self.min_monotone_ratio >= c.eta * (1.0 - rel_slack) && self.max_lipschitz_ratio <= c.lip * (1.0 + rel_slack)
    }
}

/// Audits strong monotonicity and Lipschitz continuity of the exact mean map
/// on the given point pairs.
pub fn audit_pairs(map: &dyn StochasticMap, pairs: &[(BlockVector, BlockVector)]) -> Result<PairAudit> {
    let mut audit = PairAudit {
        min_monotone_ratio: f64::INFINITY,
        max_lipschitz_ratio: 0.0,
        pairs: 0,
    };
    for (x, y) in pairs {
        let d = x.sub(y);
        let dn = d.norm_sq();
        // Pairs that differ only by rounding carry no information.
        let scale = x.norm_sq().max(y.norm_sq()).max(1.0);
        if dn <= 1e-20 * scale {
            continue;
        }
        let df = exact_mean(map, x)?.sub(&exact_mean(map, y)?);
        audit.min_monotone_ratio = audit.min_monotone_ratio.min(df.dot(&d) / dn);
        audit.max_lipschitz_ratio = audit.max_lipschitz_ratio.max((df.norm_sq() / dn).sqrt());
        audit.pairs += 1;
    }
    Ok(audit)
}
