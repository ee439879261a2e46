//! Euclidean projections onto set blocks and Cartesian products.
//!
//! Box, ball and halfspace projections are closed form. A polyhedron is split
//! into one box (its bounds) plus one halfspace per row and projected with
//! Dykstra's algorithm, which converges to the nearest point of the
//! intersection rather than just some feasible point.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SviError};
use crate::set::{CartesianSet, Polyhedron, SetBlock};
use crate::vector::{dist_sq, dot, BlockVector};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DykstraConfig {
    pub max_iters: usize,
    /// Stopping threshold on the change of the iterate and of the correction
    /// terms over one sweep.
    pub tol: f64,
}

impl Default for DykstraConfig {
    fn default() -> Self {
        DykstraConfig {
            max_iters: 100_000,
            tol: 1e-10,
        }
    }
}

impl DykstraConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iters == 0 {
            return Err(SviError::param("Dykstra needs tol > 0 and max_iters >= 1"));
        }
        Ok(())
    }
}

/// Projects `x` onto a single block.
pub fn project_block(block: &SetBlock, x: &[f64], cfg: &DykstraConfig) -> Result<Vec<f64>> {
    if x.len() != block.dim() {
        return Err(SviError::DimensionMismatch {
            block: 0,
            expected: block.dim(),
            actual: x.len(),
        });
    }
    let mut y = x.to_vec();
    project_block_in_place(block, &mut y, cfg)?;
    Ok(y)
}

pub(crate) fn project_block_in_place(block: &SetBlock, y: &mut [f64], cfg: &DykstraConfig) -> Result<()> {
    match block {
        SetBlock::Box { lower, upper } => {
            for ((v, l), u) in y.iter_mut().zip(lower).zip(upper) {
                *v = v.clamp(*l, *u);
            }
        }
        SetBlock::Ball { center, radius } => {
            let d = dist_sq(y, center).sqrt();
            if d > *radius {
                let s = radius / d;
                for (v, c) in y.iter_mut().zip(center) {
                    *v = c + s * (*v - c);
                }
            }
        }
        SetBlock::Halfspace { normal, offset } => {
            let ns = dot(normal, normal);
            if ns > 0.0 {
                let excess = dot(normal, y) - offset;
                if excess > 0.0 {
                    let s = excess / ns;
                    y.iter_mut().zip(normal).for_each(|(v, a)| *v -= s * a);
                }
            }
        }
        SetBlock::Polyhedron(p) => dykstra(p, y, cfg)?,
        SetBlock::WholeSpace { .. } => {}
    }
    Ok(())
}

/// Dykstra's alternating projection onto `{A y <= b} ∩ box`, in place.
fn dykstra(p: &Polyhedron, y: &mut [f64], cfg: &DykstraConfig) -> Result<()> {
    cfg.validate()?;
    if p.violation(y) <= 0.0 {
        return Ok(());
    }
    let n = y.len();
    let x = y.to_vec();
    let rows = p.rows();
    let rhs = p.rhs();
    let norms_sq: Vec<f64> = rows.iter().map(|r| dot(r, r)).collect();
    // A halfspace correction is always a nonnegative multiple of its normal,
    // so one scalar per row suffices.
    let mut mult = vec![0.0; rows.len()];
    let mut box_corr = vec![0.0; n];
    let mut prev = y.to_vec();
    let tol_sq = cfg.tol * cfg.tol;
    let mut last_change = f64::INFINITY;

    for _ in 0..cfg.max_iters {
        prev.copy_from_slice(y);
        let mut corr_change = 0.0;

        for (j, row) in rows.iter().enumerate() {
            let ns = norms_sq[j];
            if ns == 0.0 {
                continue;
            }
            let az = dot(row, y) + mult[j] * ns;
            let s = ((az - rhs[j]) / ns).max(0.0);
            let delta = mult[j] - s;
            if delta != 0.0 {
                y.iter_mut().zip(row).for_each(|(v, a)| *v += delta * a);
                corr_change += delta * delta * ns;
            }
            mult[j] = s;
        }

        if p.has_box() {
            for (v, q) in y.iter_mut().zip(box_corr.iter_mut()) {
                *v += *q;
            }
            let before = y.to_vec();
            p.clamp_box(y);
            for ((q, b), v) in box_corr.iter_mut().zip(&before).zip(y.iter()) {
                let nq = b - v;
                corr_change += (nq - *q) * (nq - *q);
                *q = nq;
            }
        }

        let step = dist_sq(y, &prev);
        last_change = step.max(corr_change).sqrt();
        if step < tol_sq && corr_change < tol_sq {
            let viol = p.violation(y);
            if viol > 10.0 * cfg.tol {
                return Err(SviError::ProjectionFailed {
                    block: None,
                    iterations: cfg.max_iters,
                    residual: viol,
                    last_iterate: y.to_vec(),
                });
            }
            polish(p, &x, y, &mult, &box_corr, cfg.tol);
            return Ok(());
        }
    }
    Err(SviError::ProjectionFailed {
        block: None,
        iterations: cfg.max_iters,
        residual: last_change.max(p.violation(y)),
        last_iterate: y.to_vec(),
    })
}

/// Dykstra converges linearly, so a small change per sweep can still leave
/// the iterate some way from the projection. The multipliers identify the
/// active constraints; solving the equality-constrained problem on them
/// lands on the projection exactly. Kept only if it is feasible, has
/// nonnegative multipliers and sits next to the Dykstra iterate.
fn polish(p: &Polyhedron, x: &[f64], y: &mut [f64], mult: &[f64], box_corr: &[f64], tol: f64) {
    let n = x.len();
    let mut act: Vec<(Vec<f64>, f64)> = p
        .rows()
        .iter()
        .zip(p.rhs())
        .zip(mult)
        .filter(|(_, m)| **m > 0.0)
        .map(|((r, b), _)| (r.clone(), *b))
        .collect();
    for (i, q) in box_corr.iter().enumerate() {
        let mut e = vec![0.0; n];
        if *q > 0.0 {
            if let Some(u) = p.upper() {
                e[i] = 1.0;
                act.push((e, u[i]));
            }
        } else if *q < 0.0 {
            if let Some(l) = p.lower() {
                e[i] = -1.0;
                act.push((e, -l[i]));
            }
        }
    }
    if act.is_empty() || act.len() > n {
        return;
    }
    let a = DMatrix::from_fn(act.len(), n, |i, j| act[i].0[j]);
    let xv = DVector::from_column_slice(x);
    let rhs = &a * &xv - DVector::from_iterator(act.len(), act.iter().map(|r| r.1));
    let Ok(lam) = (&a * a.transpose()).svd(true, true).solve(&rhs, 1e-12) else {
        return;
    };
    let scale = lam.amax().max(1.0);
    if lam.iter().any(|l| *l < -1e-9 * scale) {
        return;
    }
    let u: Vec<f64> = (xv - a.transpose() * lam).iter().copied().collect();
    let close = dist_sq(&u, y).sqrt() <= 1e-6 * (1.0 + dot(y, y).sqrt());
    if close && p.violation(&u) <= 0.1 * tol {
        y.copy_from_slice(&u);
    }
}

/// Projects block-wise onto `X = prod X_i`.
pub fn project_cartesian(set: &CartesianSet, x: &BlockVector, cfg: &DykstraConfig) -> Result<BlockVector> {
    x.conforms(set.layout())?;
    let mut y = x.clone();
    project_cartesian_in_place(set, &mut y, cfg)?;
    Ok(y)
}

pub(crate) fn project_cartesian_in_place(set: &CartesianSet, y: &mut BlockVector, cfg: &DykstraConfig) -> Result<()> {
    for (i, block) in set.blocks().iter().enumerate() {
        project_block_in_place(block, y.block_mut(i), cfg).map_err(|e| e.in_block(i))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn box_clamps() {
        let b = SetBlock::Box {
            lower: vec![0.0, 0.0],
            upper: vec![1.0, 1.0],
        };
        let y = project_block(&b, &[2.0, -1.0], &DykstraConfig::default()).unwrap();
        assert_eq!(y, vec![1.0, 0.0]);
    }

    #[test]
    fn halfspace_closed_form() {
        let h = SetBlock::Halfspace {
            normal: vec![1.0, 1.0],
            offset: 1.0,
        };
        let y = project_block(&h, &[2.0, 0.0], &DykstraConfig::default()).unwrap();
        assert!(close(&y, &[1.5, -0.5], 1e-15));
    }

    #[test]
    fn ball_scales_toward_center() {
        let b = SetBlock::Ball {
            center: vec![1.0, 0.0],
            radius: 1.0,
        };
        let y = project_block(&b, &[4.0, 4.0], &DykstraConfig::default()).unwrap();
        assert!(close(&y, &[1.6, 0.8], 1e-15));
        let inside = project_block(&b, &[1.5, 0.2], &DykstraConfig::default()).unwrap();
        assert_eq!(inside, vec![1.5, 0.2]);
    }

    #[test]
    fn simplex_corner_case() {
        // {x >= 0, x1 + x2 <= 1}, x = (2, 2): KKT gives (0.5, 0.5).
        let p = Polyhedron::new(vec![vec![1.0, 1.0]], vec![1.0], 2, true).unwrap();
        let cfg = DykstraConfig::default();
        let y = project_block(&SetBlock::Polyhedron(p.clone()), &[2.0, 2.0], &cfg).unwrap();
        assert!(close(&y, &[0.5, 0.5], 10.0 * cfg.tol), "{y:?}");
        // (3, -1) lands on the vertex (1, 0).
        let y = project_block(&SetBlock::Polyhedron(p), &[3.0, -1.0], &cfg).unwrap();
        assert!(close(&y, &[1.0, 0.0], 10.0 * cfg.tol), "{y:?}");
    }

    #[test]
    fn feasible_points_are_fixed() {
        let p = Polyhedron::new(vec![vec![1.0, 2.0]], vec![4.0], 2, true).unwrap();
        let y = project_block(&SetBlock::Polyhedron(p), &[0.5, 0.5], &DykstraConfig::default()).unwrap();
        assert_eq!(y, vec![0.5, 0.5]);
    }

    #[test]
    fn non_convergence_is_reported_with_iterate() {
        let p = Polyhedron::new(
            vec![vec![1.0, 0.3], vec![0.3, 1.0], vec![1.0, 1.0]],
            vec![1.0, 1.0, 1.2],
            2,
            true,
        )
        .unwrap();
        let cfg = DykstraConfig {
            max_iters: 1,
            tol: 1e-14,
        };
        match project_block(&SetBlock::Polyhedron(p), &[5.0, 4.0], &cfg) {
            Err(SviError::ProjectionFailed { last_iterate, .. }) => {
                assert_eq!(last_iterate.len(), 2)
            }
            other => panic!("expected failure, got {other:?}"),
        }
    }

    #[test]
    fn cartesian_errors_carry_block_index() {
        let p = Polyhedron::new(
            vec![vec![1.0, 0.3], vec![0.3, 1.0], vec![1.0, 1.0]],
            vec![1.0, 1.0, 1.2],
            2,
            true,
        )
        .unwrap();
        let set = CartesianSet::new(vec![SetBlock::WholeSpace { dim: 1 }, SetBlock::Polyhedron(p)]).unwrap();
        let x = BlockVector::from_blocks(vec![vec![0.0], vec![5.0, 4.0]]);
        let cfg = DykstraConfig {
            max_iters: 1,
            tol: 1e-14,
        };
        match project_cartesian(&set, &x, &cfg) {
            Err(SviError::ProjectionFailed { block, .. }) => assert_eq!(block, Some(1)),
            other => panic!("expected failure, got {other:?}"),
        }
    }

    #[test]
    fn whole_space_is_identity_and_boxes_separate() {
        let set = CartesianSet::new(vec![SetBlock::WholeSpace { dim: 2 }, SetBlock::WholeSpace { dim: 1 }]).unwrap();
        let x = BlockVector::from_blocks(vec![vec![3.0, -7.0], vec![1e9]]);
        assert_eq!(project_cartesian(&set, &x, &DykstraConfig::default()).unwrap(), x);

        let two = CartesianSet::new(vec![
            SetBlock::Box {
                lower: vec![0.0],
                upper: vec![1.0],
            },
            SetBlock::Box {
                lower: vec![-1.0, -1.0],
                upper: vec![0.0, 2.0],
            },
        ])
        .unwrap();
        let flat = SetBlock::Box {
            lower: vec![0.0, -1.0, -1.0],
            upper: vec![1.0, 0.0, 2.0],
        };
        let x = BlockVector::from_blocks(vec![vec![1.5], vec![0.5, -3.0]]);
        let y = project_cartesian(&two, &x, &DykstraConfig::default()).unwrap();
        let yf = project_block(&flat, x.as_slice(), &DykstraConfig::default()).unwrap();
        assert_eq!(y.as_slice(), &yf[..]);
    }
}
