//! Block decomposition of a flat parameter vector.
//!
//! The parameter space is the Cartesian product of `K >= 2` component spaces.
//! Each block occupies a contiguous index range of the flat vector; matrix-valued
//! blocks are stored row-major.

use serde::{Deserialize, Serialize};
use std::ops::Range;

use crate::error::{Error, Result};

/// Partition of a `total_dim`-dimensional vector into `K` ordered blocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct BlockDecomposition {
    block_dims: Vec<usize>,
    offsets: Vec<usize>,
    total_dim: usize,
}

impl BlockDecomposition {
    pub fn new(block_dims: &[usize]) -> Result<Self> {
        if block_dims.len() < 2 {
            return Err(Error::InvalidDecomposition(format!(
                "K must exceed 1 (got {} block{})",
                block_dims.len(),
                if block_dims.len() == 1 { "" } else { "s" }
            )));
        }
        if let Some(pos) = block_dims.iter().position(|&d| d == 0) {
            return Err(Error::InvalidDecomposition(format!(
                "block {} has dimension 0",
                pos + 1
            )));
        }
        let mut offsets = Vec::with_capacity(block_dims.len());
        let mut acc = 0;
        for &d in block_dims {
            offsets.push(acc);
            acc += d;
        }
        Ok(Self {
            block_dims: block_dims.to_vec(),
            offsets,
            total_dim: acc,
        })
    }

    /// One scalar block per coordinate.
    pub fn scalar_blocks(k: usize) -> Result<Self> {
        Self::new(&vec![1; k])
    }

    pub fn num_blocks(&self) -> usize {
        self.block_dims.len()
    }

    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    pub fn block_dims(&self) -> &[usize] {
        &self.block_dims
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn block_dim(&self, block: usize) -> usize {
        self.block_dims[block]
    }

    pub fn range(&self, block: usize) -> Range<usize> {
        self.offsets[block]..self.offsets[block] + self.block_dims[block]
    }

    /// Flat indices of every block except `block`, in block order.
    pub fn complement_indices(&self, block: usize) -> Vec<usize> {
        let r = self.range(block);
        (0..self.total_dim).filter(|j| !r.contains(j)).collect()
    }

    pub fn check_block(&self, block: usize) -> Result<()> {
        if block < self.num_blocks() {
            Ok(())
        } else {
            Err(Error::BlockIndex {
                index: block + 1,
                blocks: self.num_blocks(),
            })
        }
    }

    pub fn check_len(&self, len: usize) -> Result<()> {
        if len == self.total_dim {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.total_dim,
                found: len,
            })
        }
    }

    pub fn split<'a>(&self, theta: &'a ParamVector, block: usize) -> Result<BlockView<'a>> {
        self.check_block(block)?;
        self.check_len(theta.len())?;
        let r = self.range(block);
        let values = &theta.as_slice()[r.clone()];
        let complement_values = theta
            .as_slice()
            .iter()
            .enumerate()
            .filter(|(j, _)| !r.contains(j))
            .map(|(_, &v)| v)
            .collect();
        Ok(BlockView {
            block,
            values,
            complement_values,
        })
    }

    /// Inverse of [`split`](Self::split).
    pub fn reassemble(&self, view: &BlockView<'_>) -> Result<ParamVector> {
        self.check_block(view.block)?;
        let d = self.block_dim(view.block);
        if view.values.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: view.values.len(),
            });
        }
        if view.complement_values.len() != self.total_dim - d {
            return Err(Error::DimensionMismatch {
                expected: self.total_dim - d,
                found: view.complement_values.len(),
            });
        }
        let off = self.offsets[view.block];
        let mut out = Vec::with_capacity(self.total_dim);
        out.extend_from_slice(&view.complement_values[..off]);
        out.extend_from_slice(view.values);
        out.extend_from_slice(&view.complement_values[off..]);
        Ok(ParamVector(out))
    }

    /// Copy of `theta` with block `block` replaced by `new_block`.
    pub fn substitute(
        &self,
        theta: &ParamVector,
        block: usize,
        new_block: &[f64],
    ) -> Result<ParamVector> {
        let mut out = theta.clone();
        self.substitute_in_place(out.as_mut_slice(), block, new_block)?;
        Ok(out)
    }

    pub fn substitute_in_place(
        &self,
        theta: &mut [f64],
        block: usize,
        new_block: &[f64],
    ) -> Result<()> {
        self.check_block(block)?;
        self.check_len(theta.len())?;
        let d = self.block_dim(block);
        if new_block.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: new_block.len(),
            });
        }
        if let Some(pos) = new_block.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(self.offsets[block] + pos));
        }
        theta[self.range(block)].copy_from_slice(new_block);
        Ok(())
    }
}

impl TryFrom<Vec<usize>> for BlockDecomposition {
    type Error = Error;

    fn try_from(dims: Vec<usize>) -> Result<Self> {
        Self::new(&dims)
    }
}

impl From<BlockDecomposition> for Vec<usize> {
    fn from(d: BlockDecomposition) -> Self {
        d.block_dims
    }
}

/// A point of the full parameter space. All entries are finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(pos));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for ParamVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ParamVector> for Vec<f64> {
    fn from(p: ParamVector) -> Self {
        p.0
    }
}

impl AsRef<[f64]> for ParamVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Block `block` of a parameter vector together with its complement.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockView<'a> {
    pub block: usize,
    pub values: &'a [f64],
    pub complement_values: Vec<f64>,
}
