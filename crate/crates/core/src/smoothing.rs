//! Local randomized smoothing on balls (MSR) and cubes (MCR).
//!
//! The smoothed map is `F^eps(x) = E[F(x + z)]` where block `z_i` is uniform on
//! the `n_i`-ball of radius `eps_i` (MSR) or on the cube `[-eps_i, eps_i]^{n_i}`
//! (MCR), independently across blocks. `F^eps` is Lipschitz even when `F` is
//! not, with a constant computable from bounds on `||F_i||`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SviError};
use crate::map::StochasticMap;
use crate::rng::{substream, SviRng, NOISE, SMOOTHING};
use crate::vector::{BlockVector, Layout};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothingKind {
    None,
    /// Uniform on a ball per block.
    Msr,
    /// Uniform on a cube per block.
    Mcr,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothingScheme {
    pub kind: SmoothingKind,
    /// Ball radius or cube half-edge per block. Empty for `None`.
    #[serde(default)]
    pub eps: Vec<f64>,
}

impl SmoothingScheme {
    pub fn none() -> Self {
        SmoothingScheme {
            kind: SmoothingKind::None,
            eps: Vec::new(),
        }
    }

    pub fn msr(eps: Vec<f64>) -> Self {
        SmoothingScheme {
            kind: SmoothingKind::Msr,
            eps,
        }
    }

    pub fn mcr(eps: Vec<f64>) -> Self {
        SmoothingScheme {
            kind: SmoothingKind::Mcr,
            eps,
        }
    }

    pub fn is_none(&self) -> bool {
        self.kind == SmoothingKind::None
    }

    pub fn validate(&self, layout: &Layout) -> Result<()> {
        if self.is_none() {
            return Ok(());
        }
        if self.eps.len() != layout.num_blocks() {
            return Err(SviError::BlockCountMismatch {
                expected: layout.num_blocks(),
                actual: self.eps.len(),
            });
        }
        if let Some(i) = self.eps.iter().position(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(SviError::param(format!(
                "smoothing radius for block {i} must be positive, got {}",
                self.eps[i]
            )));
        }
        Ok(())
    }

    /// Largest coordinate-wise reach of a perturbation in block `i`.
    pub fn reach(&self, i: usize) -> f64 {
        if self.is_none() {
            0.0
        } else {
            self.eps[i]
        }
    }
}

/// Fills `out` with one uniform draw from the ball (MSR) or cube (MCR) of
/// size `eps`.
pub fn sample_block<R: Rng + ?Sized>(kind: SmoothingKind, eps: f64, rng: &mut R, out: &mut [f64]) {
    match kind {
        SmoothingKind::None => out.iter_mut().for_each(|v| *v = 0.0),
        SmoothingKind::Mcr => out.iter_mut().for_each(|v| *v = rng.random_range(-eps..=eps)),
        SmoothingKind::Msr => {
            let n = out.len();
            let mut sq;
            loop {
                sq = 0.0;
                for v in out.iter_mut() {
                    *v = rng.sample(StandardNormal);
                    sq += *v * *v;
                }
                if sq > 0.0 {
                    break;
                }
            }
            let u: f64 = rng.random();
            let radius = eps * u.powf(1.0 / n as f64);
            let s = radius / sq.sqrt();
            out.iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// Perturbation sampler with one rng stream per block.
#[derive(Clone, Debug)]
pub struct Perturber {
    scheme: SmoothingScheme,
    layout: Layout,
    streams: Vec<SviRng>,
}

impl Perturber {
    pub fn new(scheme: &SmoothingScheme, layout: &Layout, seed: u64) -> Result<Self> {
        Self::with_base(scheme, layout, seed, SMOOTHING)
    }

    /// Streams `base + i` for block `i`.
    pub fn with_base(scheme: &SmoothingScheme, layout: &Layout, seed: u64, base: u64) -> Result<Self> {
        scheme.validate(layout)?;
        Ok(Perturber {
            scheme: scheme.clone(),
            layout: layout.clone(),
            streams: (0..layout.num_blocks())
                .map(|i| substream(seed, base + i as u64))
                .collect(),
        })
    }

    pub fn draw_into(&mut self, out: &mut [f64]) {
        for (i, r) in self.layout.ranges().enumerate() {
            let eps = self.scheme.reach(i);
            sample_block(self.scheme.kind, eps, &mut self.streams[i], &mut out[r]);
        }
    }

    pub fn draw(&mut self) -> BlockVector {
        let mut z = BlockVector::zeros(&self.layout);
        self.draw_into(z.as_mut_slice());
        z
    }
}

/// One perturbation `z` for `scheme`, drawn from the per-block streams of
/// `seed`.
pub fn sample_perturbation(scheme: &SmoothingScheme, layout: &Layout, seed: u64) -> Result<BlockVector> {
    if scheme.is_none() {
        return Err(SviError::param("no perturbation for the unsmoothed scheme"));
    }
    Ok(Perturber::new(scheme, layout, seed)?.draw())
}

/// Monte-Carlo mean with per-coordinate standard errors.
#[derive(Clone, Debug, PartialEq)]
pub struct McEstimate {
    pub mean: BlockVector,
    pub std_err: BlockVector,
    pub samples: usize,
}

impl McEstimate {
    /// Norm of the per-coordinate standard errors, a first-order bound on
    /// the standard error of `||mean - F^eps(x)||`.
    pub fn norm_std_err(&self) -> f64 {
        self.std_err.norm()
    }
}

/// `(1/M) sum_m Phi(x + z_m, xi_m)` with `z` and `xi` from independent
/// streams of `seed`.
pub fn smoothed_map_mc(
    map: &dyn StochasticMap,
    x: &BlockVector,
    scheme: &SmoothingScheme,
    m: usize,
    seed: u64,
) -> Result<McEstimate> {
    x.conforms(map.layout())?;
    if m == 0 {
        return Err(SviError::param("Monte-Carlo sample count must be positive"));
    }
    let layout = map.layout();
    let n = layout.total();
    let mut perturber = Perturber::new(scheme, layout, seed)?;
    let mut noise_rng = substream(seed, NOISE);
    let mut noise = vec![0.0; map.noise_dim()];
    let mut point = vec![0.0; n];
    let mut val = vec![0.0; n];
    // Welford accumulators.
    let mut mean = vec![0.0; n];
    let mut m2 = vec![0.0; n];
    for t in 0..m {
        perturber.draw_into(&mut point);
        point.iter_mut().zip(x.as_slice()).for_each(|(p, xi)| *p += xi);
        map.draw_noise(&mut noise_rng, &mut noise);
        map.evaluate(&point, &noise, &mut val)?;
        let w = 1.0 / (t + 1) as f64;
        for j in 0..n {
            let d = val[j] - mean[j];
            mean[j] += d * w;
            m2[j] += d * (val[j] - mean[j]);
        }
    }
    let se: Vec<f64> = if m > 1 {
        m2.iter().map(|v| (v / (m - 1) as f64 / m as f64).sqrt()).collect()
    } else {
        vec![f64::INFINITY; n]
    };
    Ok(McEstimate {
        mean: BlockVector::from_flat(layout, mean)?,
        std_err: BlockVector::from_flat(layout, se)?,
        samples: m,
    })
}

/// `n!!` with `0!! = 1`.
pub fn double_factorial(n: u32) -> Result<u64> {
    if n > 30 {
        return Err(SviError::Overflow(format!(
            "{n}!! does not fit the supported range (n <= 30)"
        )));
    }
    Ok((1..=n).rev().step_by(2).map(u64::from).product())
}

/// `n!! / (n-1)!!` in floating point, for any `n >= 1`.
pub fn double_factorial_ratio(n: usize) -> f64 {
    let mut r = 1.0;
    let (mut a, mut b) = (n, n.saturating_sub(1));
    while a > 1 || b > 1 {
        r *= a.max(1) as f64 / b.max(1) as f64;
        a = a.saturating_sub(2);
        b = b.saturating_sub(2);
    }
    r
}

/// `kappa = 1` for odd `n`, `2/pi` for even `n`.
pub fn kappa(n: usize) -> f64 {
    if n % 2 == 1 {
        1.0
    } else {
        2.0 / PI
    }
}

/// Volume of the unit ball in `R^n`, `pi^{n/2} / Gamma(n/2 + 1)`.
pub fn ball_volume_coeff(n: usize) -> Result<f64> {
    if n == 0 {
        return Err(SviError::param("ball dimension must be >= 1"));
    }
    let num = PI.powf(n as f64 / 2.0);
    let gamma = if n % 2 == 0 {
        (1..=n / 2).map(|k| k as f64).product::<f64>()
    } else {
        let df: f64 = (1..=n).rev().step_by(2).map(|k| k as f64).product();
        PI.sqrt() * df / 2f64.powf((n + 1) as f64 / 2.0)
    };
    Ok(num / gamma)
}

/// A certified Lipschitz constant of `F^eps` with the inputs it came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothedLipschitz {
    pub value: f64,
    pub kind: SmoothingKind,
    pub comp_bounds: Vec<f64>,
    pub dims: Vec<usize>,
    pub eps: Vec<f64>,
}

fn check_bounds(c: &[f64], eps: &[f64]) -> Result<()> {
    if c.is_empty() || c.len() != eps.len() {
        return Err(SviError::param("need one bound and one radius per block"));
    }
    if c.iter().chain(eps).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(SviError::param("bounds and radii must be positive"));
    }
    Ok(())
}

/// Ball smoothing: `sqrt(N) ||C|| max_j kappa_j (n_j!!/(n_j-1)!!) / eps_j`.
pub fn msr_lipschitz(c: &[f64], dims: &[usize], eps: &[f64]) -> Result<SmoothedLipschitz> {
    check_bounds(c, eps)?;
    if dims.len() != c.len() || dims.contains(&0) {
        return Err(SviError::param("need one positive dimension per block"));
    }
    let worst = dims
        .iter()
        .zip(eps)
        .map(|(&n, e)| kappa(n) * double_factorial_ratio(n) / e)
        .fold(0.0, f64::max);
    let cn = c.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(SmoothedLipschitz {
        value: (c.len() as f64).sqrt() * cn * worst,
        kind: SmoothingKind::Msr,
        comp_bounds: c.to_vec(),
        dims: dims.to_vec(),
        eps: eps.to_vec(),
    })
}

/// Cube smoothing: `sqrt(n) ||C'|| / min_j eps_j`.
pub fn mcr_lipschitz(cp: &[f64], n_total: usize, eps: &[f64]) -> Result<SmoothedLipschitz> {
    check_bounds(cp, eps)?;
    if n_total == 0 {
        return Err(SviError::param("total dimension must be positive"));
    }
    let cn = cp.iter().map(|v| v * v).sum::<f64>().sqrt();
    let emin = eps.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(SmoothedLipschitz {
        value: (n_total as f64).sqrt() * cn / emin,
        kind: SmoothingKind::Mcr,
        comp_bounds: cp.to_vec(),
        dims: vec![n_total],
        eps: eps.to_vec(),
    })
}

/// Exact L1 distance between the uniform densities of the cubes centred at
/// `x` and `y` (block `i` has half-edge `eps_i`).
pub fn cube_density_l1(x: &BlockVector, y: &BlockVector, eps: &[f64]) -> Result<f64> {
    x.conforms(y.layout())?;
    if eps.len() != x.num_blocks() || eps.iter().any(|e| !(*e > 0.0)) {
        return Err(SviError::param("need one positive half-edge per block"));
    }
    let mut overlap = 1.0;
    for (i, e) in eps.iter().enumerate() {
        for (a, b) in x.block(i).iter().zip(y.block(i)) {
            let d = (a - b).abs();
            if d > 2.0 * e {
                return Ok(2.0);
            }
            overlap *= 1.0 - d / (2.0 * e);
        }
    }
    Ok(2.0 * (1.0 - overlap))
}

/// Checks `1 - prod(1 - p_i) <= ||p||_1` for `p` in `[0,1]^m`.
pub fn product_sum_bound_check(p: &[f64]) -> Result<bool> {
    if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(SviError::param("components must lie in [0, 1]"));
    }
    let prod: f64 = p.iter().map(|v| 1.0 - v).product();
    let l1: f64 = p.iter().sum();
    Ok(1.0 - prod <= l1 * (1.0 + 4.0 * f64::EPSILON) + f64::EPSILON)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::piecewise::PiecewiseLinear;
    use crate::rng::SETUP;
    use proptest::prelude::*;
    use rand::Rng;
    use statrs::function::gamma::gamma;

    #[test]
    fn double_factorials() {
        assert_eq!(double_factorial(5).unwrap(), 15);
        assert_eq!(double_factorial(6).unwrap(), 48);
        assert_eq!(double_factorial(0).unwrap(), 1);
        assert_eq!(double_factorial(30).unwrap(), 42_849_873_690_624_000);
        assert!(matches!(double_factorial(31), Err(SviError::Overflow(_))));
        for n in 1..=30usize {
            let want = double_factorial(n as u32).unwrap() as f64 / double_factorial(n as u32 - 1).unwrap() as f64;
            assert!((double_factorial_ratio(n) - want).abs() <= 1e-14 * want);
        }
    }

    #[test]
    fn ball_volumes() {
        assert!((ball_volume_coeff(1).unwrap() - 2.0).abs() < 1e-15);
        assert!((ball_volume_coeff(2).unwrap() - PI).abs() < 1e-15);
        assert!((ball_volume_coeff(3).unwrap() - 4.0 * PI / 3.0).abs() < 1e-14);
        for n in 1..20 {
            let want = PI.powf(n as f64 / 2.0) / gamma(n as f64 / 2.0 + 1.0);
            assert!((ball_volume_coeff(n).unwrap() - want).abs() < 1e-12 * want);
        }
    }

    #[test]
    fn msr_constants() {
        let l = msr_lipschitz(&[2.5], &[1], &[0.5]).unwrap();
        assert!((l.value - 5.0).abs() < 1e-15);
        let l = msr_lipschitz(&[1.0], &[2], &[1.0]).unwrap();
        assert!((l.value - 4.0 / PI).abs() < 1e-15);
        let l = msr_lipschitz(&[3.0, 4.0], &[1, 3], &[1.0, 0.5]).unwrap();
        assert!((l.value - 2f64.sqrt() * 15.0).abs() < 1e-13);
        assert!(msr_lipschitz(&[1.0], &[1], &[0.0]).is_err());
    }

    #[test]
    fn mcr_constants() {
        assert_eq!(mcr_lipschitz(&[1.0], 1, &[1.0]).unwrap().value, 1.0);
        let l = mcr_lipschitz(&[3.0, 4.0], 4, &[0.5, 2.0]).unwrap();
        assert!((l.value - 20.0).abs() < 1e-13);
        let t = 3.0;
        let s = mcr_lipschitz(&[3.0, 4.0], 4, &[0.5 * t, 2.0 * t]).unwrap();
        assert!((s.value - 20.0 / t).abs() < 1e-13);
    }

    fn one(v: f64) -> BlockVector {
        BlockVector::from_blocks(vec![vec![v]])
    }

    #[test]
    fn cube_l1_cases() {
        assert_eq!(cube_density_l1(&one(0.3), &one(0.3), &[1.0]).unwrap(), 0.0);
        assert!((cube_density_l1(&one(0.0), &one(1.0), &[1.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cube_density_l1(&one(0.0), &one(3.0), &[1.0]).unwrap(), 2.0);
    }

    #[test]
    fn cube_l1_matches_grid_integral_in_2d() {
        let x = BlockVector::from_blocks(vec![vec![0.1], vec![-0.2]]);
        let y = BlockVector::from_blocks(vec![vec![0.5], vec![0.3]]);
        let eps = [0.4, 0.6];
        let exact = cube_density_l1(&x, &y, &eps).unwrap();
        let dens = |c: &BlockVector, u: f64, v: f64| {
            let inside = (u - c.block(0)[0]).abs() <= eps[0] && (v - c.block(1)[0]).abs() <= eps[1];
            if inside {
                1.0 / (4.0 * eps[0] * eps[1])
            } else {
                0.0
            }
        };
        let g = 800;
        let (lo, hi) = (-1.5, 1.5);
        let h = (hi - lo) / g as f64;
        let mut acc = 0.0;
        for a in 0..g {
            for b in 0..g {
                let u = lo + (a as f64 + 0.5) * h;
                let v = lo + (b as f64 + 0.5) * h;
                acc += (dens(&x, u, v) - dens(&y, u, v)).abs() * h * h;
            }
        }
        assert!((acc - exact).abs() < 0.02, "{acc} vs {exact}");
    }

    #[test]
    fn product_sum_edges() {
        assert!(product_sum_bound_check(&[0.0, 0.0, 0.0]).unwrap());
        assert!(product_sum_bound_check(&[1.0]).unwrap());
        assert!(product_sum_bound_check(&[1.2]).is_err());
    }

    #[test]
    fn product_sum_random_audit() {
        let mut rng = substream(3, SETUP);
        for _ in 0..10_000 {
            let m = rng.random_range(1..12);
            let p: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
            assert!(product_sum_bound_check(&p).unwrap());
        }
    }

    #[test]
    fn cube_draws_stay_in_support() {
        let mut rng = substream(1, SMOOTHING);
        let mut z = [0.0];
        for _ in 0..10_000 {
            sample_block(SmoothingKind::Mcr, 0.5, &mut rng, &mut z);
            assert!(z[0].abs() <= 0.5);
        }
    }

    #[test]
    fn ball_radial_distribution() {
        for n in 1..=4usize {
            let mut rng = substream(n as u64, SMOOTHING);
            let mut z = vec![0.0; n];
            let draws = 100_000;
            let mut inner = 0usize;
            for _ in 0..draws {
                sample_block(SmoothingKind::Msr, 2.0, &mut rng, &mut z);
                let r = z.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!(r <= 2.0 * (1.0 + 1e-15));
                if r <= 1.0 {
                    inner += 1;
                }
            }
            let p = 0.5f64.powi(n as i32);
            let sd = (p * (1.0 - p) * draws as f64).sqrt();
            assert!(((inner as f64) - p * draws as f64).abs() <= 5.0 * sd, "n={n}");
        }
    }

    #[test]
    fn ball_draws_are_centred() {
        let mut rng = substream(9, SMOOTHING);
        let mut z = [0.0; 2];
        let draws = 100_000;
        let mut acc = [0.0; 2];
        for _ in 0..draws {
            sample_block(SmoothingKind::Msr, 0.8, &mut rng, &mut z);
            acc[0] += z[0];
            acc[1] += z[1];
        }
        let tol = 5.0 * (0.8 / 2.0) / (draws as f64).sqrt();
        assert!(acc.iter().all(|a| (a / draws as f64).abs() <= tol));
    }

    #[test]
    fn blocks_use_separate_streams() {
        // Changing the radius of block 1 must not move the draws of block 0.
        let layout = Layout::new(&[2, 3]);
        let a = sample_perturbation(&SmoothingScheme::msr(vec![0.5, 1.0]), &layout, 4).unwrap();
        let b = sample_perturbation(&SmoothingScheme::mcr(vec![0.5, 1.0]), &layout, 4).unwrap();
        let c = sample_perturbation(&SmoothingScheme::msr(vec![0.5, 9.0]), &layout, 4).unwrap();
        assert_eq!(a.block(0), c.block(0));
        assert_ne!(a.block(0), b.block(0));
    }

    #[test]
    fn unsmoothed_estimate_is_plain_mean() {
        let f = PiecewiseLinear::example();
        let x = one(0.0);
        let est = smoothed_map_mc(&f, &x, &SmoothingScheme::none(), 10, 1).unwrap();
        assert_eq!(est.mean.as_slice(), &[-0.3]);
        assert_eq!(est.std_err.as_slice(), &[0.0]);
    }

    #[test]
    fn kink_smoothing_matches_closed_form() {
        let f = PiecewiseLinear::example();
        let est = smoothed_map_mc(&f, &one(-2.0), &SmoothingScheme::msr(vec![0.5]), 100_000, 2).unwrap();
        let want = f.smoothed_derivative(-2.0, 0.5).unwrap();
        assert!((est.mean.as_slice()[0] - want).abs() <= 3.0 * est.std_err.as_slice()[0]);
        assert!((want + 1.15).abs() < 1e-12);
    }

    // Lemma-style density bound for the ball: integrate |p(z-x) - p(z-y)|
    // on a grid in 1 and 2 dimensions.
    #[test]
    fn ball_density_l1_bound() {
        let eps = 1.0;
        // n = 1: two intervals, exact overlap arithmetic on a fine grid
        for &d in &[0.1, 0.5, 1.5, 3.0] {
            let g = 20_000;
            let (lo, hi) = (-1.5, 4.5);
            let h = (hi - lo) / g as f64;
            let p = |z: f64| if z.abs() <= eps { 0.5 / eps } else { 0.0 };
            let acc: f64 = (0..g)
                .map(|a| {
                    let z = lo + (a as f64 + 0.5) * h;
                    (p(z) - p(z - d)).abs() * h
                })
                .sum();
            let bound = kappa(1) * double_factorial_ratio(1) * d / eps;
            assert!(acc <= bound + 2.0 * h, "n=1 d={d}");
        }
        // n = 2
        let vol = ball_volume_coeff(2).unwrap();
        for &d in &[0.1, 0.4, 1.0] {
            let g = 1000;
            let (lo, hi) = (-1.2, 2.2);
            let h = (hi - lo) / g as f64;
            let p = |u: f64, v: f64| if u * u + v * v <= 1.0 { 1.0 / vol } else { 0.0 };
            let mut acc = 0.0;
            for a in 0..g {
                for b in 0..g {
                    let u = lo + (a as f64 + 0.5) * h;
                    let v = lo + (b as f64 + 0.5) * h;
                    acc += (p(u, v) - p(u - d, v)).abs() * h * h;
                }
            }
            let bound = kappa(2) * double_factorial_ratio(2) * d / eps;
            assert!(acc <= bound + 0.01, "n=2 d={d}: {acc} > {bound}");
        }
    }

    proptest! {
        #[test]
        fn cube_l1_below_lemma_bound(
            x in prop::collection::vec(-2.0f64..2.0, 4),
            y in prop::collection::vec(-2.0f64..2.0, 4),
            e0 in 0.1f64..2.0, e1 in 0.1f64..2.0,
        ) {
            let bx = BlockVector::from_blocks(vec![x[..1].to_vec(), x[1..].to_vec()]);
            let by = BlockVector::from_blocks(vec![y[..1].to_vec(), y[1..].to_vec()]);
            let eps = [e0, e1];
            let v = cube_density_l1(&bx, &by, &eps).unwrap();
            let bound = 4f64.sqrt() * bx.dist_sq(&by).sqrt() / e0.min(e1);
            prop_assert!((0.0..=2.0).contains(&v));
            prop_assert!(v <= bound * (1.0 + 1e-12) + 1e-15);
        }
    }
}
