//! Networked stochastic Nash-Cournot game with regularization.
//!
//! Firm `i` chooses sales `s_ij` and generation `g_ij` at each node `j`,
//! pays `c_ij g_ij` and earns `s_ij (a_j - b_j sbar_j^sigma)` with
//! `sbar_j = sum_i s_ij`. The map is the gradient of each firm's expected
//! cost plus `eta_reg x`:
//!
//! ```text
//! sales:      -(a_j - b_j sbar_j^sigma) + b_j sigma sbar_j^(sigma-1) s_ij + eta_reg s_ij
//! generation:  c_ij + eta_reg g_ij
//! ```
//!
//! Block `i` is `(s_i1..s_iM, g_i1..g_iM)`. For `sigma > 1` the map is not
//! Lipschitz near `sbar = 0`, so the adaptive rules run on the MSR or MCR
//! smoothed map. Perturbed points may have `sbar_j < 0`; the price there is
//! evaluated at `max(sbar_j, 0)`.

use std::sync::Arc;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SviError};
use crate::map::{MapConstants, Problem, StochasticMap};
use crate::problems::{block_groups, Instance, SmoothedConstants};
use crate::projection::{project_cartesian, DykstraConfig};
use crate::set::{CartesianSet, Polyhedron, SetBlock};
use crate::smoothing::{mcr_lipschitz, msr_lipschitz};
use crate::vector::{BlockVector, Layout};

/// Starting points: zero, half the capacities, the capacities. The latter
/// two are projected onto the set since the balance constraint generally
/// cuts them off.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StartPoint {
    P1,
    P2,
    P3,
}

/// Fixed market data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CournotMarket {
    pub firms: usize,
    pub nodes: usize,
    pub sigma: f64,
    pub a_lb: Vec<f64>,
    pub a_ub: Vec<f64>,
    pub b_lb: Vec<f64>,
    pub b_ub: Vec<f64>,
    /// Generation cost `c_ij`, firm-major.
    pub cost: Vec<f64>,
}

impl Default for CournotMarket {
    fn default() -> Self {
        CournotMarket {
            firms: 5,
            nodes: 3,
            sigma: 1.1,
            a_lb: vec![1.0; 3],
            a_ub: vec![1.5, 2.0, 2.5],
            b_lb: vec![0.04; 3],
            b_ub: vec![0.05; 3],
            cost: vec![1.0; 15],
        }
    }
}

impl CournotMarket {
    fn validate(&self) -> Result<()> {
        let m = self.nodes;
        if self.firms == 0 || m == 0 {
            return Err(SviError::param("Cournot market needs at least one firm and node"));
        }
        if !(self.sigma >= 1.0) {
            return Err(SviError::param(format!(
                "price exponent must be >= 1, got {}",
                self.sigma
            )));
        }
        for (name, v) in [
            ("a_lb", &self.a_lb),
            ("a_ub", &self.a_ub),
            ("b_lb", &self.b_lb),
            ("b_ub", &self.b_ub),
        ] {
            if v.len() != m {
                return Err(SviError::param(format!("{name} needs {m} entries")));
            }
        }
        if self.cost.len() != self.firms * m {
            return Err(SviError::param("cost needs firms * nodes entries"));
        }
        for j in 0..m {
            if !(self.a_lb[j] <= self.a_ub[j] && self.b_lb[j] <= self.b_ub[j] && self.b_lb[j] >= 0.0) {
                return Err(SviError::param(format!("bad price intervals at node {j}")));
            }
        }
        Ok(())
    }
}

/// One row of the benchmark grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CournotSettings {
    pub eps: f64,
    pub eta_reg: f64,
    pub start: StartPoint,
    /// Multiplier of the intercept interval `[a_lb, a_ub]`.
    pub m_a: f64,
    /// Generation capacity.
    pub cap: f64,
    /// Sales capacity.
    pub cap_sales: f64,
}

impl CournotSettings {
    pub const fn new(eps: f64, eta_reg: f64, start: StartPoint, m_a: f64, cap: f64, cap_sales: f64) -> Self {
        CournotSettings {
            eps,
            eta_reg,
            start,
            m_a,
            cap,
            cap_sales,
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("eps", self.eps),
            ("eta_reg", self.eta_reg),
            ("m_a", self.m_a),
            ("cap", self.cap),
            ("cap_sales", self.cap_sales),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SviError::param(format!("Cournot {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// The twelve benchmark settings S(1)..S(12).
pub const STANDARD_SETTINGS: [CournotSettings; 12] = [
    CournotSettings::new(0.1, 0.1, StartPoint::P1, 1.0, 1.0, 3.0),
    CournotSettings::new(0.001, 0.1, StartPoint::P1, 1.0, 1.0, 3.0),
    CournotSettings::new(0.0001, 0.1, StartPoint::P1, 1.0, 1.0, 3.0),
    CournotSettings::new(0.1, 0.1, StartPoint::P2, 1.0, 10.0, 1.0),
    CournotSettings::new(0.1, 0.05, StartPoint::P2, 1.0, 10.0, 1.0),
    CournotSettings::new(0.1, 0.01, StartPoint::P2, 1.0, 10.0, 1.0),
    CournotSettings::new(0.1, 1.0, StartPoint::P1, 6.0, 10.0, 1.0),
    CournotSettings::new(0.1, 1.0, StartPoint::P2, 6.0, 10.0, 1.0),
    CournotSettings::new(0.1, 1.0, StartPoint::P3, 6.0, 10.0, 1.0),
    CournotSettings::new(0.01, 0.5, StartPoint::P2, 2.0, 1.0, 3.0),
    CournotSettings::new(0.01, 0.5, StartPoint::P2, 4.0, 1.0, 3.0),
    CournotSettings::new(0.01, 0.5, StartPoint::P2, 6.0, 1.0, 3.0),
];

#[derive(Clone, Debug)]
pub struct CournotMap {
    layout: Layout,
    market: CournotMarket,
    eta_reg: f64,
    a_lo: Vec<f64>,
    a_hi: Vec<f64>,
    mean_noise: Vec<f64>,
    constants: MapConstants,
}

impl CournotMap {
    pub fn market(&self) -> &CournotMarket {
        &self.market
    }

    pub fn eta_reg(&self) -> f64 {
        self.eta_reg
    }

    /// `noise = (a_1..a_M, b_1..b_M)`.
    fn apply(&self, x: &[f64], noise: &[f64], out: &mut [f64]) -> Result<()> {
        let m = self.market.nodes;
        let n = self.market.firms;
        let sigma = self.market.sigma;
        let (a, b) = noise.split_at(m);
        for j in 0..m {
            let sbar: f64 = (0..n).map(|i| x[2 * m * i + j]).sum();
            if !sbar.is_finite() {
                return Err(SviError::Domain(format!("total sales at node {j} is not finite")));
            }
            let sp = sbar.max(0.0);
            let price = a[j] - b[j] * sp.powf(sigma);
            let slope = if sigma == 1.0 {
                b[j]
            } else {
                b[j] * sigma * sp.powf(sigma - 1.0)
            };
            for i in 0..n {
                let k = 2 * m * i + j;
                out[k] = -price + slope * x[k] + self.eta_reg * x[k];
                let g = k + m;
                out[g] = self.market.cost[m * i + j] + self.eta_reg * x[g];
            }
        }
        Ok(())
    }
}

impl StochasticMap for CournotMap {
    fn layout(&self) -> &Layout {
        &self.layout
    }

    fn noise_dim(&self) -> usize {
        2 * self.market.nodes
    }

    fn draw_noise(&self, rng: &mut dyn RngCore, out: &mut [f64]) {
        let m = self.market.nodes;
        for j in 0..m {
            out[j] = rng.random_range(self.a_lo[j]..=self.a_hi[j]);
        }
        for j in 0..m {
            out[m + j] = rng.random_range(self.market.b_lb[j]..=self.market.b_ub[j]);
        }
    }

    fn evaluate(&self, x: &[f64], noise: &[f64], out: &mut [f64]) -> Result<()> {
        self.apply(x, noise, out)
    }

    fn has_exact_mean(&self) -> bool {
        true
    }

    fn exact_mean(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.apply(x, &self.mean_noise, out)
    }

    fn constants(&self) -> Option<&MapConstants> {
        Some(&self.constants)
    }

    fn affine_in_noise(&self) -> bool {
        true
    }
}

#[derive(Clone, Debug)]
pub struct CournotInstance {
    pub instance: Instance,
    pub map: Arc<CournotMap>,
    pub settings: CournotSettings,
}

pub fn cournot_instance(settings: CournotSettings, market: Option<CournotMarket>) -> Result<CournotInstance> {
    settings.validate()?;
    let market = market.unwrap_or_default();
    market.validate()?;
    let (n, m) = (market.firms, market.nodes);
    let s = settings;
    let a_lo: Vec<f64> = market.a_lb.iter().map(|v| s.m_a * v).collect();
    let a_hi: Vec<f64> = market.a_ub.iter().map(|v| s.m_a * v).collect();
    let mut mean_noise: Vec<f64> = a_lo.iter().zip(&a_hi).map(|(l, h)| 0.5 * (l + h)).collect();
    mean_noise.extend(market.b_lb.iter().zip(&market.b_ub).map(|(l, h)| 0.5 * (l + h)));

    // Sales are capped by the sales capacity and by total generation.
    let s_max = s.cap_sales.min(m as f64 * s.cap);
    let e = s.eps;
    // Bounds on |F| over the set grown by e in every coordinate (both the
    // ball and the cube of size e stay inside that box).
    let sbar_max = n as f64 * (s_max + e);
    let s_hi = s_max + e;
    let sigma = market.sigma;
    let mut block_sq = 0.0;
    for j in 0..m {
        let (a_bar, b_bar) = (mean_noise[j], mean_noise[m + j]);
        let sales =
            a_bar + b_bar * sbar_max.powf(sigma) + b_bar * sigma * sbar_max.powf(sigma - 1.0) * s_hi + s.eta_reg * s_hi;
        block_sq += sales * sales;
    }
    let mut bounds = Vec::with_capacity(n);
    for i in 0..n {
        let gen_sq: f64 = (0..m)
            .map(|j| {
                let g = market.cost[m * i + j].abs() + s.eta_reg * (s.cap + e);
                g * g
            })
            .sum();
        bounds.push((block_sq + gen_sq).sqrt());
    }
    let layout = Layout::new(&vec![2 * m; n]);
    let eps_v = vec![e; n];
    let smoothed = SmoothedConstants {
        msr: msr_lipschitz(&bounds, &layout.dims(), &eps_v)?,
        mcr: mcr_lipschitz(&bounds, layout.total(), &eps_v)?,
        eps: eps_v,
    };

    // Noise: each sales coordinate sees -(a - abar) + (b - bbar)(S^sigma +
    // sigma S^(sigma-1) s); generation is deterministic.
    let mut var = 0.0;
    for j in 0..m {
        let va = (a_hi[j] - a_lo[j]).powi(2) / 12.0;
        let vb = (market.b_ub[j] - market.b_lb[j]).powi(2) / 12.0;
        let lever = sbar_max.powf(sigma) + sigma * sbar_max.powf(sigma - 1.0) * s_hi;
        var += n as f64 * 2.0 * (va + vb * lever * lever);
    }
    let diameter = ((n * m) as f64 * (s.cap * s.cap + s.cap_sales * s.cap_sales)).sqrt();

    let map = Arc::new(CournotMap {
        layout: layout.clone(),
        market: market.clone(),
        eta_reg: s.eta_reg,
        a_lo,
        a_hi,
        mean_noise,
        constants: MapConstants {
            eta: s.eta_reg,
            // Not Lipschitz near zero total sales once sigma > 1.
            lip: if sigma == 1.0 {
                affine_lipschitz(&market, s.eta_reg)
            } else {
                f64::INFINITY
            },
            comp_bounds: Some(bounds),
            nu: var.sqrt(),
        },
    });

    let mut blocks = Vec::with_capacity(n);
    for _ in 0..n {
        let mut balance = vec![1.0; m];
        balance.extend(std::iter::repeat(-1.0).take(m));
        let mut upper = vec![s.cap_sales; m];
        upper.extend(std::iter::repeat(s.cap).take(m));
        let poly = Polyhedron::new(vec![], vec![], 2 * m, true)?
            .with_upper(upper)?
            .with_equality(balance, 0.0)?;
        blocks.push(SetBlock::Polyhedron(poly));
    }
    let set = CartesianSet::new(blocks)?;
    let x0 = start_point(&layout, &set, s, m)?;
    let problem = Problem::new(map.clone(), set)?;
    Ok(CournotInstance {
        instance: Instance {
            name: format!(
                "cournot(eps={}, eta={}, x0={:?}, m_a={}, cap={}, cap'={})",
                s.eps, s.eta_reg, s.start, s.m_a, s.cap, s.cap_sales
            ),
            groups: block_groups(&x0),
            problem,
            x0,
            constants: map.constants.clone(),
            diameter,
            relaxed_nu: true,
            smoothed: Some(smoothed),
        },
        map,
        settings,
    })
}

/// `max b (1 + N)` bounds the sales Jacobian `b (I + 1 1^T)` when `sigma = 1`.
fn affine_lipschitz(market: &CournotMarket, eta_reg: f64) -> f64 {
    let b = market.b_ub.iter().cloned().fold(0.0, f64::max);
    b * (1.0 + market.firms as f64) + eta_reg
}

fn start_point(layout: &Layout, set: &CartesianSet, s: CournotSettings, m: usize) -> Result<BlockVector> {
    let frac = match s.start {
        StartPoint::P1 => return Ok(BlockVector::zeros(layout)),
        StartPoint::P2 => 0.5,
        StartPoint::P3 => 1.0,
    };
    let mut x = BlockVector::zeros(layout);
    for i in 0..layout.num_blocks() {
        let b = x.block_mut(i);
        b[..m].iter_mut().for_each(|v| *v = frac * s.cap_sales);
        b[m..].iter_mut().for_each(|v| *v = frac * s.cap);
    }
    let cfg = DykstraConfig {
        tol: 1e-13,
        ..DykstraConfig::default()
    };
    project_cartesian(set, &x, &cfg)
}
