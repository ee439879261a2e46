//! Block-structured closed convex sets `X = X_1 x ... x X_N`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SviError};
use crate::projection::{project_block, DykstraConfig};
use crate::vector::{dot, norm, BlockVector, Layout};

/// `{y : A y <= b, lower <= y <= upper}`.
///
/// Bounds are optional per side; a missing side is treated as infinite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polyhedron {
    dim: usize,
    rows: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    lower: Option<Vec<f64>>,
    upper: Option<Vec<f64>>,
}

impl Polyhedron {
    /// `{y : A y <= b}`, plus `y >= 0` when `nonneg` is set.
    pub fn new(rows: Vec<Vec<f64>>, rhs: Vec<f64>, dim: usize, nonneg: bool) -> Result<Self> {
        if rows.len() != rhs.len() {
            return Err(SviError::InvalidSet(format!(
                "{} constraint rows but {} right-hand sides",
                rows.len(),
                rhs.len()
            )));
        }
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(SviError::InvalidSet(format!(
                    "row {i} has length {}, expected {dim}",
                    r.len()
                )));
            }
            if r.iter().any(|v| !v.is_finite()) || !rhs[i].is_finite() {
                return Err(SviError::InvalidSet(format!("row {i} is not finite")));
            }
            if norm(r) == 0.0 && rhs[i] < 0.0 {
                return Err(SviError::InvalidSet(format!("row {i} reads 0 <= {}", rhs[i])));
            }
        }
        Ok(Polyhedron {
            dim,
            rows,
            rhs,
            lower: nonneg.then(|| vec![0.0; dim]),
            upper: None,
        })
    }

    /// Adds coordinate upper bounds (capacities) to the box part.
    pub fn with_upper(mut self, upper: Vec<f64>) -> Result<Self> {
        if upper.len() != self.dim {
            return Err(SviError::InvalidSet("upper bound length".into()));
        }
        if let Some(lo) = &self.lower {
            if lo.iter().zip(&upper).any(|(l, u)| l > u) {
                return Err(SviError::InvalidSet("lower bound exceeds upper bound".into()));
            }
        }
        self.upper = Some(upper);
        Ok(self)
    }

    /// Adds the equality `a^T y = b` as two opposing halfspaces.
    pub fn with_equality(mut self, a: Vec<f64>, b: f64) -> Result<Self> {
        if a.len() != self.dim {
            return Err(SviError::InvalidSet("equality row length".into()));
        }
        self.rows.push(a.iter().map(|v| -v).collect());
        self.rhs.push(-b);
        self.rows.push(a);
        self.rhs.push(b);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    pub fn lower(&self) -> Option<&[f64]> {
        self.lower.as_deref()
    }

    pub fn upper(&self) -> Option<&[f64]> {
        self.upper.as_deref()
    }

    pub fn has_box(&self) -> bool {
        self.lower.is_some() || self.upper.is_some()
    }

    /// Clamps `y` into the box part in place.
    pub(crate) fn clamp_box(&self, y: &mut [f64]) {
        if let Some(lo) = &self.lower {
            y.iter_mut().zip(lo).for_each(|(v, l)| *v = v.max(*l));
        }
        if let Some(up) = &self.upper {
            y.iter_mut().zip(up).for_each(|(v, u)| *v = v.min(*u));
        }
    }

    /// Largest constraint violation (0 when feasible).
    pub fn violation(&self, y: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for (row, b) in self.rows.iter().zip(&self.rhs) {
            worst = worst.max(dot(row, y) - b);
        }
        if let Some(lo) = &self.lower {
            for (v, l) in y.iter().zip(lo) {
                worst = worst.max(l - v);
            }
        }
        if let Some(up) = &self.upper {
            for (v, u) in y.iter().zip(up) {
                worst = worst.max(v - u);
            }
        }
        worst
    }
}

/// One factor `X_i` of a Cartesian set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SetBlock {
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
    Halfspace { normal: Vec<f64>, offset: f64 },
    Polyhedron(Polyhedron),
    WholeSpace { dim: usize },
}

impl SetBlock {
    pub fn dim(&self) -> usize {
        match self {
            SetBlock::Box { lower, .. } => lower.len(),
            SetBlock::Ball { center, .. } => center.len(),
            SetBlock::Halfspace { normal, .. } => normal.len(),
            SetBlock::Polyhedron(p) => p.dim(),
            SetBlock::WholeSpace { dim } => *dim,
        }
    }

    /// Largest constraint violation of `y` (0 when `y` is in the block).
    pub fn violation(&self, y: &[f64]) -> f64 {
        match self {
            SetBlock::Box { lower, upper } => y
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(v, (l, u))| (l - v).max(v - u))
                .fold(0.0, f64::max),
            SetBlock::Ball { center, radius } => {
                let d: f64 = y.iter().zip(center).map(|(a, b)| (a - b).powi(2)).sum();
                (d.sqrt() - radius).max(0.0)
            }
            SetBlock::Halfspace { normal, offset } => {
                let n = norm(normal);
                if n == 0.0 {
                    0.0
                } else {
                    ((dot(normal, y) - offset) / n).max(0.0)
                }
            }
            SetBlock::Polyhedron(p) => p.violation(y),
            SetBlock::WholeSpace { .. } => 0.0,
        }
    }

    fn validate(&self, cfg: &DykstraConfig) -> Result<()> {
        match self {
            SetBlock::Box { lower, upper } => {
                if lower.len() != upper.len() {
                    return Err(SviError::InvalidSet("box bound lengths differ".into()));
                }
                if lower.iter().zip(upper).any(|(l, u)| !(l <= u)) {
                    return Err(SviError::InvalidSet("box lower bound exceeds upper".into()));
                }
            }
            SetBlock::Ball { radius, center } => {
                if !(*radius >= 0.0) || center.iter().any(|c| !c.is_finite()) {
                    return Err(SviError::InvalidSet("ball radius must be >= 0".into()));
                }
            }
            SetBlock::Halfspace { normal, offset } => {
                if norm(normal) == 0.0 && *offset < 0.0 {
                    return Err(SviError::InvalidSet("empty halfspace".into()));
                }
            }
            SetBlock::Polyhedron(p) => {
                let origin = vec![0.0; p.dim()];
                let y = project_block(self, &origin, cfg).map_err(|e| match e {
                    SviError::ProjectionFailed { residual, .. } => {
                        SviError::InvalidSet(format!("polyhedron appears empty: Dykstra residual {residual:.3e}"))
                    }
                    other => other,
                })?;
                let v = p.violation(&y);
                if v > 10.0 * cfg.tol {
                    return Err(SviError::InvalidSet(format!(
                        "polyhedron appears empty: best point violates constraints by {v:.3e}"
                    )));
                }
            }
            SetBlock::WholeSpace { .. } => {}
        }
        Ok(())
    }
}

/// `X = prod_i X_i`.
#[derive(Clone, Debug)]
pub struct CartesianSet {
    blocks: Vec<SetBlock>,
    layout: Layout,
}

impl CartesianSet {
    /// Builds the product set, checking every block is nonempty.
    pub fn new(blocks: Vec<SetBlock>) -> Result<Self> {
        Self::with_config(blocks, &DykstraConfig::default())
    }

    pub fn with_config(blocks: Vec<SetBlock>, cfg: &DykstraConfig) -> Result<Self> {
        for (i, b) in blocks.iter().enumerate() {
            b.validate(cfg).map_err(|e| match e {
                SviError::InvalidSet(msg) => SviError::InvalidSet(format!("block {i}: {msg}")),
                other => other,
            })?;
        }
        let dims: Vec<usize> = blocks.iter().map(SetBlock::dim).collect();
        Ok(CartesianSet {
            layout: Layout::new(&dims),
            blocks,
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn blocks(&self) -> &[SetBlock] {
        &self.blocks
    }

    pub fn block(&self, i: usize) -> &SetBlock {
        &self.blocks[i]
    }

    /// Largest violation over all blocks.
    pub fn violation(&self, x: &BlockVector) -> f64 {
        self.blocks
            .iter()
            .enumerate()
            .map(|(i, b)| b.violation(x.block(i)))
            .fold(0.0, f64::max)
    }

    pub fn contains(&self, x: &BlockVector, tol: f64) -> bool {
        self.violation(x) <= tol
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inverted_box() {
        let err = CartesianSet::new(vec![SetBlock::Box {
            lower: vec![0.0, 2.0],
            upper: vec![1.0, 1.0],
        }])
        .unwrap_err();
        assert!(err.to_string().contains("block 0"));
    }

    #[test]
    fn rejects_empty_polyhedron() {
        // y1 + y2 <= -1 with y >= 0 is empty.
        let p = Polyhedron::new(vec![vec![1.0, 1.0]], vec![-1.0], 2, true).unwrap();
        let cfg = DykstraConfig {
            max_iters: 2_000,
            tol: 1e-10,
        };
        assert!(matches!(
            CartesianSet::with_config(vec![SetBlock::Polyhedron(p)], &cfg),
            Err(SviError::InvalidSet(_))
        ));
    }

    #[test]
    fn accepts_simplex_like_polyhedron() {
        let p = Polyhedron::new(vec![vec![1.0, 1.0]], vec![1.0], 2, true).unwrap();
        let set = CartesianSet::new(vec![SetBlock::Polyhedron(p)]).unwrap();
        let x = BlockVector::from_blocks(vec![vec![0.3, 0.3]]);
        assert!(set.contains(&x, 0.0));
        let y = BlockVector::from_blocks(vec![vec![0.8, 0.3]]);
        assert!((set.violation(&y) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn equality_encoded_as_two_halfspaces() {
        let p = Polyhedron::new(vec![], vec![], 2, true)
            .unwrap()
            .with_equality(vec![1.0, -1.0], 0.0)
            .unwrap();
        assert_eq!(p.rows().len(), 2);
        assert_eq!(p.violation(&[1.0, 1.0]), 0.0);
        assert!((p.violation(&[1.0, 0.0]) - 1.0).abs() < 1e-15);
    }
}
