//! Block vectors `x = (x_1; ...; x_N)` with contiguous storage.

use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SviError};

/// Block structure of a vector: the dimension `n_i` of every block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    offsets: Arc<[usize]>,
}

impl Layout {
    pub fn new(dims: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(dims.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for &d in dims {
            acc += d;
            offsets.push(acc);
        }
        Layout {
            offsets: offsets.into(),
        }
    }

    /// A layout with a single block.
    pub fn single(dim: usize) -> Self {
        Layout::new(&[dim])
    }

    pub fn num_blocks(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn block_dim(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn range(&self, i: usize) -> Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    /// Total dimension `n = sum n_i`.
    pub fn total(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn ranges(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        self.offsets.windows(2).map(|w| w[0]..w[1])
    }

    pub(crate) fn check(&self, other: &Layout) -> Result<()> {
        if Arc::ptr_eq(&self.offsets, &other.offsets) {
            return Ok(());
        }
        if self.num_blocks() != other.num_blocks() {
            return Err(SviError::BlockCountMismatch {
                expected: self.num_blocks(),
                actual: other.num_blocks(),
            });
        }
        for i in 0..self.num_blocks() {
            if self.block_dim(i) != other.block_dim(i) {
                return Err(SviError::DimensionMismatch {
                    block: i,
                    expected: self.block_dim(i),
                    actual: other.block_dim(i),
                });
            }
        }
        Ok(())
    }
}

impl Serialize for Layout {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.dims().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Layout {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let dims = Vec::<usize>::deserialize(d)?;
        Ok(Layout::new(&dims))
    }
}

/// A real vector partitioned into blocks. Arithmetic never changes the layout.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(into = "Vec<Vec<f64>>")]
pub struct BlockVector {
    layout: Layout,
    data: Vec<f64>,
}

impl From<BlockVector> for Vec<Vec<f64>> {
    fn from(x: BlockVector) -> Self {
        x.to_blocks()
    }
}

impl<'de> Deserialize<'de> for BlockVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Ok(BlockVector::from_blocks(Vec::<Vec<f64>>::deserialize(d)?))
    }
}

impl BlockVector {
    pub fn zeros(layout: &Layout) -> Self {
        BlockVector {
            data: vec![0.0; layout.total()],
            layout: layout.clone(),
        }
    }

    pub fn from_flat(layout: &Layout, data: Vec<f64>) -> Result<Self> {
        if data.len() != layout.total() {
            return Err(SviError::DimensionMismatch {
                block: 0,
                expected: layout.total(),
                actual: data.len(),
            });
        }
        Ok(BlockVector {
            layout: layout.clone(),
            data,
        })
    }

    pub fn from_blocks(blocks: Vec<Vec<f64>>) -> Self {
        let dims: Vec<usize> = blocks.iter().map(Vec::len).collect();
        BlockVector {
            layout: Layout::new(&dims),
            data: blocks.concat(),
        }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn num_blocks(&self) -> usize {
        self.layout.num_blocks()
    }

    pub fn block(&self, i: usize) -> &[f64] {
        &self.data[self.layout.range(i)]
    }

    pub fn block_mut(&mut self, i: usize) -> &mut [f64] {
        let r = self.layout.range(i);
        &mut self.data[r]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.data
    }

    pub fn to_blocks(&self) -> Vec<Vec<f64>> {
        self.layout.ranges().map(|r| self.data[r].to_vec()).collect()
    }

    pub fn conforms(&self, layout: &Layout) -> Result<()> {
        layout.check(&self.layout)
    }

    pub fn dot(&self, other: &BlockVector) -> f64 {
        dot(&self.data, &other.data)
    }

    pub fn norm_sq(&self) -> f64 {
        dot(&self.data, &self.data)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dist_sq(&self, other: &BlockVector) -> f64 {
        dist_sq(&self.data, &other.data)
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &BlockVector) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn sub(&self, other: &BlockVector) -> BlockVector {
        BlockVector {
            layout: self.layout.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn add(&self, other: &BlockVector) -> BlockVector {
        BlockVector {
            layout: self.layout.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
