//! Stochastic bandwidth sharing: five users, nine routes, twenty links.
//!
//! User `i` gains `xi_i(r) log(1 + x_i(r))` on each of its routes and the
//! network pays a congestion cost `m_c ||A x||^2`, so the map is
//!
//! ```text
//! Phi(x, xi)_r = -xi(r) / (1 + x_r) + 2 m_c (A^T A x)_r
//! ```
//!
//! on `{x >= 0, A x <= m_b b}`. The feasible set couples all users, so it is a
//! single projection block; users still own separate stepsize groups.

use std::ops::Range;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SviError};
use crate::map::{MapConstants, Problem, StochasticMap};
use crate::problems::{Instance, SmoothedConstants};
use crate::set::{CartesianSet, Polyhedron, SetBlock};
use crate::smoothing::{mcr_lipschitz, msr_lipschitz};
use crate::vector::{BlockVector, Layout};

pub const ROUTES: usize = 9;
pub const LINKS: usize = 20;

/// Link capacities before the `m_b` multiplier.
pub const CAPACITIES: [f64; LINKS] = [
    10.0, 15.0, 15.0, 20.0, 10.0, 10.0, 20.0, 30.0, 25.0, 15.0, 20.0, 15.0, 10.0, 10.0, 15.0, 15.0, 20.0, 20.0, 25.0,
    40.0,
];

/// Route ranges owned by each user.
pub const USER_ROUTES: [Range<usize>; 5] = [0..3, 3..5, 5..6, 6..7, 7..9];

/// Centre and half-width of `xi(r)` before the `m_xi`, `d_xi` scaling.
const XI_CENTER: [f64; ROUTES] = [1.0, 1.0, 1.0, 1.4, 1.4, 0.8, 1.6, 1.2, 1.2];
const XI_HALF: [f64; ROUTES] = [0.1, 0.1, 0.1, 0.2, 0.2, 0.05, 0.2, 0.1, 0.1];

/// Default routing matrix (links x routes).
///
/// The physical topology is not recoverable, so this is a fixed binary
/// matrix chosen by local search to keep `lambda_min(A^T A)` large relative
/// to `||A^T A||` (4.36 and 35.2). Well-conditioned congestion keeps the
/// certified `L / eta` moderate when `m_c` is small.
pub const DEFAULT_ROUTING: [[u8; ROUTES]; LINKS] = [
    [1, 0, 0, 1, 1, 0, 1, 0, 1],
    [0, 0, 0, 1, 0, 1, 1, 0, 1],
    [0, 0, 1, 1, 1, 0, 0, 1, 0],
    [0, 0, 1, 0, 0, 0, 1, 1, 1],
    [0, 1, 0, 1, 0, 1, 0, 1, 0],
    [1, 1, 1, 0, 0, 0, 1, 1, 0],
    [1, 0, 0, 0, 1, 0, 1, 0, 1],
    [0, 1, 0, 0, 1, 1, 1, 0, 0],
    [1, 0, 1, 0, 0, 1, 0, 0, 1],
    [1, 1, 1, 1, 0, 0, 1, 0, 0],
    [1, 1, 0, 0, 1, 0, 0, 0, 0],
    [0, 0, 1, 1, 1, 1, 0, 0, 0],
    [1, 0, 0, 0, 0, 1, 0, 1, 1],
    [1, 0, 0, 1, 0, 0, 0, 1, 0],
    [0, 1, 0, 0, 1, 0, 0, 1, 1],
    [0, 0, 1, 0, 1, 0, 1, 1, 0],
    [0, 0, 0, 0, 0, 1, 1, 0, 0],
    [1, 0, 1, 0, 1, 1, 0, 0, 0],
    [0, 1, 1, 0, 0, 0, 0, 0, 1],
    [0, 1, 1, 1, 0, 0, 0, 0, 1],
];

/// Scaling knobs of one experiment setting.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandwidthSettings {
    /// Capacity multiplier.
    pub m_b: f64,
    /// Congestion multiplier.
    pub m_c: f64,
    /// Multiplier of the centres of `xi`.
    pub m_xi: f64,
    /// Multiplier of the half-widths of `xi`.
    pub d_xi: f64,
}

impl BandwidthSettings {
    pub const fn new(m_b: f64, m_c: f64, m_xi: f64, d_xi: f64) -> Self {
        BandwidthSettings { m_b, m_c, m_xi, d_xi }
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("m_b", self.m_b),
            ("m_c", self.m_c),
            ("m_xi", self.m_xi),
            ("d_xi", self.d_xi),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SviError::param(format!("bandwidth {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// The twelve benchmark settings S(1)..S(12).
pub const STANDARD_SETTINGS: [BandwidthSettings; 12] = [
    BandwidthSettings::new(1.0, 1.0, 5.0, 2.0),
    BandwidthSettings::new(0.1, 1.0, 5.0, 2.0),
    BandwidthSettings::new(0.01, 1.0, 5.0, 2.0),
    BandwidthSettings::new(0.1, 2.0, 2.0, 1.0),
    BandwidthSettings::new(0.1, 1.0, 2.0, 1.0),
    BandwidthSettings::new(0.1, 0.5, 2.0, 1.0),
    BandwidthSettings::new(1.0, 1.0, 1.0, 5.0),
    BandwidthSettings::new(1.0, 1.0, 2.0, 5.0),
    BandwidthSettings::new(1.0, 1.0, 5.0, 5.0),
    BandwidthSettings::new(1.0, 0.01, 1.0, 1.0),
    BandwidthSettings::new(1.0, 0.01, 1.0, 2.0),
    BandwidthSettings::new(1.0, 0.01, 1.0, 5.0),
];

pub fn default_routing() -> Vec<Vec<f64>> {
    DEFAULT_ROUTING
        .iter()
        .map(|row| row.iter().map(|&v| v as f64).collect())
        .collect()
}

#[derive(Clone, Debug)]
pub struct BandwidthMap {
    layout: Layout,
    /// `2 m_c A^T A`.
    congestion: DMatrix<f64>,
    xi_lo: Vec<f64>,
    xi_hi: Vec<f64>,
    xi_mean: Vec<f64>,
    constants: MapConstants,
}

impl BandwidthMap {
    pub fn xi_mean(&self) -> &[f64] {
        &self.xi_mean
    }

    pub fn xi_bounds(&self) -> (&[f64], &[f64]) {
        (&self.xi_lo, &self.xi_hi)
    }

    pub fn congestion(&self) -> &DMatrix<f64> {
        &self.congestion
    }

    fn apply(&self, x: &[f64], xi: &[f64], out: &mut [f64]) -> Result<()> {
        for (r, o) in out.iter_mut().enumerate() {
            if !(x[r] > -1.0) {
                return Err(SviError::Domain(format!(
                    "bandwidth map needs x > -1, got x[{r}] = {}",
                    x[r]
                )));
            }
            let mut acc = -xi[r] / (1.0 + x[r]);
            for (j, xj) in x.iter().enumerate() {
                acc += self.congestion[(r, j)] * xj;
            }
            *o = acc;
        }
        Ok(())
    }
}

impl StochasticMap for BandwidthMap {
    fn layout(&self) -> &Layout {
        &self.layout
    }

    fn noise_dim(&self) -> usize {
        ROUTES
    }

    fn draw_noise(&self, rng: &mut dyn RngCore, out: &mut [f64]) {
        for (r, v) in out.iter_mut().enumerate() {
            *v = rng.random_range(self.xi_lo[r]..=self.xi_hi[r]);
        }
    }

    fn evaluate(&self, x: &[f64], noise: &[f64], out: &mut [f64]) -> Result<()> {
        self.apply(x, noise, out)
    }

    fn has_exact_mean(&self) -> bool {
        true
    }

    fn exact_mean(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.apply(x, &self.xi_mean, out)
    }

    fn constants(&self) -> Option<&MapConstants> {
        Some(&self.constants)
    }

    fn affine_in_noise(&self) -> bool {
        true
    }
}

/// A bandwidth instance with its routing data.
#[derive(Clone, Debug)]
pub struct BandwidthInstance {
    pub instance: Instance,
    pub map: Arc<BandwidthMap>,
    pub settings: BandwidthSettings,
    pub routing: Vec<Vec<f64>>,
    pub capacities: Vec<f64>,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

/// Builds the instance for `settings`. `routing` overrides the default
/// matrix; `eps` (must be below 1 so that `log(1 + x)` stays defined)
/// enables the smoothed constants.
pub fn bandwidth_instance(
    settings: BandwidthSettings,
    routing: Option<Vec<Vec<f64>>>,
    eps: Option<f64>,
) -> Result<BandwidthInstance> {
    settings.validate()?;
    let routing = routing.unwrap_or_else(default_routing);
    if routing.len() != LINKS || routing.iter().any(|r| r.len() != ROUTES) {
        return Err(SviError::param(format!("routing matrix must be {LINKS} x {ROUTES}")));
    }
    if routing.iter().flatten().any(|v| *v != 0.0 && *v != 1.0) {
        return Err(SviError::param("routing matrix must be binary"));
    }
    if let Some(e) = eps {
        if !(e > 0.0 && e < 1.0) {
            return Err(SviError::param(format!(
                "bandwidth smoothing radius must lie in (0, 1), got {e}"
            )));
        }
    }
    let a = DMatrix::from_fn(LINKS, ROUTES, |l, r| routing[l][r]);
    let ata = a.transpose() * &a;
    let eig = ata.clone().symmetric_eigen();
    let lambda_min = eig.eigenvalues.min();
    let lambda_max = eig.eigenvalues.max();
    if !(lambda_min > 1e-10 * lambda_max.max(1.0)) {
        return Err(SviError::param(format!(
            "A^T A must be positive definite (smallest eigenvalue {lambda_min:.3e})"
        )));
    }

    let s = settings;
    let xi_mean: Vec<f64> = XI_CENTER.iter().map(|c| s.m_xi * c).collect();
    let half: Vec<f64> = XI_HALF.iter().map(|w| s.d_xi * w).collect();
    let xi_lo: Vec<f64> = xi_mean.iter().zip(&half).map(|(m, h)| m - h).collect();
    let xi_hi: Vec<f64> = xi_mean.iter().zip(&half).map(|(m, h)| m + h).collect();
    let capacities: Vec<f64> = CAPACITIES.iter().map(|b| s.m_b * b).collect();
    let cap_max = capacities.iter().cloned().fold(0.0, f64::max);
    let xi_min = xi_mean.iter().cloned().fold(f64::INFINITY, f64::min);
    let xi_max = xi_mean.iter().cloned().fold(0.0, f64::max);

    // Curvature of the log term is smallest at the far corner and largest
    // at the lowest reachable point; smoothing widens both ends by eps.
    let reach = eps.unwrap_or(0.0);
    let eta = xi_min / (1.0 + cap_max + reach).powi(2) + 2.0 * s.m_c * lambda_min;
    let lip = xi_max / (1.0 - reach).powi(2) + 2.0 * s.m_c * lambda_max;
    let diameter = (ROUTES as f64).sqrt() * cap_max;
    let var_sum: f64 = half.iter().map(|h| h * h / 3.0).sum::<f64>() / (1.0 - reach).powi(2);
    let nu = var_sum.sqrt().max(lip * diameter / 2f64.sqrt());

    let layout = Layout::single(ROUTES);
    let smoothed = match eps {
        Some(e) => {
            // ||F(x)|| over the set grown by a ball (radius e) or a cube
            // (half-edge e, so Euclidean reach 3e).
            let xi_norm = xi_mean.iter().map(|v| v * v).sum::<f64>().sqrt();
            let bound = |grow: f64| xi_norm / (1.0 - e) + 2.0 * s.m_c * lambda_max * (diameter + grow);
            let c_ball = vec![bound(e)];
            let c_cube = vec![bound(e * (ROUTES as f64).sqrt())];
            Some(SmoothedConstants {
                msr: msr_lipschitz(&c_ball, &[ROUTES], &[e])?,
                mcr: mcr_lipschitz(&c_cube, ROUTES, &[e])?,
                eps: vec![e],
            })
        }
        None => None,
    };

    let map = Arc::new(BandwidthMap {
        layout: layout.clone(),
        congestion: ata * (2.0 * s.m_c),
        xi_lo,
        xi_hi,
        xi_mean,
        constants: MapConstants {
            eta,
            lip,
            comp_bounds: None,
            nu,
        },
    });
    let poly = Polyhedron::new(routing.clone(), capacities.clone(), ROUTES, true)?;
    let set = CartesianSet::new(vec![SetBlock::Polyhedron(poly)])?;
    let problem = Problem::new(map.clone(), set)?;
    Ok(BandwidthInstance {
        instance: Instance {
            name: format!(
                "bandwidth(m_b={}, m_c={}, m_xi={}, d_xi={})",
                s.m_b, s.m_c, s.m_xi, s.d_xi
            ),
            problem,
            x0: BlockVector::zeros(&layout),
            groups: USER_ROUTES.to_vec(),
            constants: map.constants.clone(),
            diameter,
            relaxed_nu: false,
            smoothed,
        },
        map,
        settings,
        routing,
        capacities,
        lambda_min,
        lambda_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::{audit_pairs, exact_mean};
    use crate::rng::{substream, SETUP};

    #[test]
    fn default_routing_is_well_posed() {
        let bi = bandwidth_instance(STANDARD_SETTINGS[0], None, None).unwrap();
        assert!((bi.lambda_min - 4.3585).abs() < 1e-3, "{}", bi.lambda_min);
        assert!((bi.lambda_max - 35.236).abs() < 1e-2, "{}", bi.lambda_max);
        let c = &bi.instance.constants;
        assert!(c.eta > 0.0 && c.eta <= c.lip);
        assert!((bi.instance.diameter - 3.0 * 40.0).abs() < 1e-12);
        assert!((c.nu - c.lip * bi.instance.diameter / 2f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn origin_mean_is_minus_xi_bar() {
        let bi = bandwidth_instance(BandwidthSettings::new(1.0, 1.0, 1.0, 1.0), None, None).unwrap();
        let f = exact_mean(bi.map.as_ref(), &bi.instance.x0).unwrap();
        assert_eq!(f.as_slice()[0], -1.0);
        assert!((f.as_slice()[6] + 1.6).abs() < 1e-15);
    }

    #[test]
    fn singular_routing_rejected() {
        let mut a = default_routing();
        for row in a.iter_mut() {
            row[8] = row[7];
        }
        assert!(bandwidth_instance(STANDARD_SETTINGS[0], Some(a), None).is_err());
        let mut a = default_routing();
        a[0][0] = 0.5;
        assert!(bandwidth_instance(STANDARD_SETTINGS[0], Some(a), None).is_err());
    }

    #[test]
    fn eps_must_keep_log_defined() {
        assert!(bandwidth_instance(STANDARD_SETTINGS[0], None, Some(1.0)).is_err());
        assert!(bandwidth_instance(STANDARD_SETTINGS[0], None, Some(0.1)).is_ok());
    }

    #[test]
    fn constants_survive_pair_audit() {
        for s in STANDARD_SETTINGS.iter() {
            let bi = bandwidth_instance(*s, None, None).unwrap();
            let mut rng = substream(5, SETUP);
            // Points in the capacity box; the audit only needs x >= 0.
            let cap = bi.capacities.iter().cloned().fold(f64::INFINITY, f64::min);
            let mut pt = || BlockVector::from_blocks(vec![(0..ROUTES).map(|_| rng.random_range(0.0..cap)).collect()]);
            let pairs: Vec<_> = (0..1000).map(|_| (pt(), pt())).collect();
            let audit = audit_pairs(bi.map.as_ref(), &pairs).unwrap();
            assert!(audit.respects(&bi.instance.constants, 1e-12), "{s:?}: {audit:?}");
        }
    }
}
