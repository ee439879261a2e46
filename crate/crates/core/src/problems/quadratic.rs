//! Strongly monotone affine map `Phi(x, xi) = Q x + b + xi` on a box.
//!
//! `Q` is symmetric positive definite, so `eta = lambda_min(Q)` and
//! `L = lambda_max(Q)` exactly, and the noise is uniform on `[-h, h]^n`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::bench::oracle::{solve_deterministic, OracleConfig};
use crate::error::{Result, SviError};
use crate::map::{MapConstants, Problem, StochasticMap};
use crate::problems::{block_groups, Instance, SmoothedConstants};
use crate::rng::{substream, SETUP};
use crate::set::{CartesianSet, SetBlock};
use crate::smoothing::{mcr_lipschitz, msr_lipschitz};
use crate::vector::{BlockVector, Layout};

#[derive(Clone, Debug)]
pub struct QuadraticMap {
    layout: Layout,
    q: DMatrix<f64>,
    b: Vec<f64>,
    half_width: f64,
    constants: MapConstants,
}

impl QuadraticMap {
    /// `q` must be symmetric positive definite.
    pub fn new(layout: Layout, q: DMatrix<f64>, b: Vec<f64>, half_width: f64) -> Result<Self> {
        let n = layout.total();
        if q.nrows() != n || q.ncols() != n || b.len() != n {
            return Err(SviError::param("Q and b must match the layout dimension"));
        }
        if (&q - q.transpose()).amax() > 1e-12 * q.amax().max(1.0) {
            return Err(SviError::param("Q must be symmetric"));
        }
        if !(half_width >= 0.0) {
            return Err(SviError::param("noise half-width must be >= 0"));
        }
        let eig = q.clone().symmetric_eigen();
        let eta = eig.eigenvalues.min();
        let lip = eig.eigenvalues.max();
        if !(eta > 0.0) {
            return Err(SviError::param("Q must be positive definite"));
        }
        let nu = (n as f64 * half_width * half_width / 3.0).sqrt();
        Ok(QuadraticMap {
            layout,
            q,
            b,
            half_width,
            constants: MapConstants {
                eta,
                lip,
                comp_bounds: None,
                nu,
            },
        })
    }

    /// `Q = I`.
    pub fn identity(dims: &[usize], b: Vec<f64>, half_width: f64) -> Self {
        let layout = Layout::new(dims);
        let n = layout.total();
        Self::new(layout, DMatrix::identity(n, n), b, half_width).expect("identity is SPD")
    }

    /// `Q = U diag(lambda) U^T` with `lambda` uniform in `[1, 10]` (both ends
    /// attained when `n >= 2`) and a random orthogonal `U`.
    pub fn random(dims: &[usize], half_width: f64, seed: u64) -> Self {
        let layout = Layout::new(dims);
        let n = layout.total();
        let mut rng = substream(seed, SETUP);
        let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let u = g.qr().q();
        let mut lam: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..10.0)).collect();
        if n >= 2 {
            lam[0] = 1.0;
            lam[1] = 10.0;
        }
        let q = &u * DMatrix::from_diagonal(&DVector::from_vec(lam)) * u.transpose();
        let q = (&q + q.transpose()) * 0.5;
        let b: Vec<f64> = (0..n).map(|_| 4.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        Self::new(layout, q, b, half_width).expect("random Q is SPD by construction")
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn offset(&self) -> &[f64] {
        &self.b
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    /// Per-block bounds on `||(Q x + b)_i||` over `||x|| <= radius`.
    pub fn comp_bounds(&self, radius: f64) -> Vec<f64> {
        self.layout
            .ranges()
            .map(|r| {
                let rows = self.q.rows(r.start, r.len());
                let bn: f64 = self.b[r].iter().map(|v| v * v).sum::<f64>().sqrt();
                bn + rows.norm() * radius
            })
            .collect()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let n = x.len();
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = self.b[i];
            for j in 0..n {
                acc += self.q[(i, j)] * x[j];
            }
            *o = acc;
        }
    }
}

impl StochasticMap for QuadraticMap {
    fn layout(&self) -> &Layout {
        &self.layout
    }

    fn noise_dim(&self) -> usize {
        if self.half_width > 0.0 {
            self.layout.total()
        } else {
            0
        }
    }

    fn draw_noise(&self, rng: &mut dyn RngCore, out: &mut [f64]) {
        let h = self.half_width;
        for v in out.iter_mut() {
            *v = rng.random_range(-h..=h);
        }
    }

    fn evaluate(&self, x: &[f64], noise: &[f64], out: &mut [f64]) -> Result<()> {
        self.apply(x, out);
        if !noise.is_empty() {
            out.iter_mut().zip(noise).for_each(|(o, z)| *o += z);
        }
        Ok(())
    }

    fn has_exact_mean(&self) -> bool {
        true
    }

    fn exact_mean(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.apply(x, out);
        Ok(())
    }

    fn constants(&self) -> Option<&MapConstants> {
        Some(&self.constants)
    }

    fn affine_in_noise(&self) -> bool {
        true
    }
}

/// A quadratic instance with its exact solution.
#[derive(Clone, Debug)]
pub struct QuadraticInstance {
    pub instance: Instance,
    pub map: Arc<QuadraticMap>,
    pub x_star: BlockVector,
}

/// Box `[-1, 1]^n` split into blocks of the given sizes; `x0 = 0`.
pub fn quadratic_instance(dims: &[usize], half_width: f64, eps: Option<f64>, seed: u64) -> Result<QuadraticInstance> {
    from_map(QuadraticMap::random(dims, half_width, seed), eps)
}

/// Wraps an explicit map on the box `[-1, 1]^n`.
pub fn from_map(map: QuadraticMap, eps: Option<f64>) -> Result<QuadraticInstance> {
    let layout = map.layout().clone();
    let n = layout.total();
    let set = CartesianSet::new(
        layout
            .dims()
            .iter()
            .map(|&d| SetBlock::Box {
                lower: vec![-1.0; d],
                upper: vec![1.0; d],
            })
            .collect(),
    )?;
    let reach = eps.unwrap_or(0.0);
    let radius = (n as f64).sqrt() * (1.0 + reach);
    let mut constants = map.constants.clone();
    let bounds = map.comp_bounds(radius);
    constants.comp_bounds = Some(bounds.clone());
    let smoothed = match eps {
        Some(e) => {
            let eps_v = vec![e; layout.num_blocks()];
            Some(SmoothedConstants {
                msr: msr_lipschitz(&bounds, &layout.dims(), &eps_v)?,
                mcr: mcr_lipschitz(&bounds, n, &eps_v)?,
                eps: eps_v,
            })
        }
        None => None,
    };
    let map = Arc::new(map);
    let problem = Problem::new(map.clone(), set)?;
    let x0 = BlockVector::zeros(&layout);
    let x_star = exact_solution(&problem, &x0)?;
    Ok(QuadraticInstance {
        instance: Instance {
            name: format!("quadratic(n={n})"),
            groups: block_groups(&x0),
            problem,
            x0,
            diameter: 2.0 * (n as f64).sqrt(),
            relaxed_nu: false,
            constants,
            smoothed,
        },
        map,
        x_star,
    })
}

fn exact_solution(problem: &Problem, x0: &BlockVector) -> Result<BlockVector> {
    let map = problem.map.clone();
    let c = map.constants().cloned().expect("quadratic maps carry constants");
    let cfg = OracleConfig {
        tol: 1e-12,
        ..OracleConfig::default()
    };
    let mut f = |x: &[f64], out: &mut [f64]| map.exact_mean(x, out);
    Ok(solve_deterministic(&mut f, &problem.set, x0, c.eta, c.lip, &cfg)?.x)
}
