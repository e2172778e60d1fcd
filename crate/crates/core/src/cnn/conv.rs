//! Single-channel valid convolution and 2×2 pooling on small feature maps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub rows: usize,
    pub cols: usize,
    /// Row-major.
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!("{rows}x{cols}"), format!("{} values", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn transpose(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                data.push(self.at(r, c));
            }
        }
        Self { rows: self.cols, cols: self.rows, data }
    }
}

/// Bias layout of a convolution.
#[derive(Debug, Clone, Copy)]
pub enum ConvBias<'a> {
    /// One bias per output position, row-major.
    Untied(&'a [f64]),
    /// One bias for the whole filter.
    Shared(f64),
}

/// Valid cross-correlation with a 2×2 filter given row-major
/// (top-left, top-right, bottom-left, bottom-right).
pub fn conv2d_valid(input: &FeatureMap, filter: &[f64; 4], bias: ConvBias<'_>) -> Result<FeatureMap> {
    if input.rows < 2 || input.cols < 2 {
        return Err(Error::invalid(format!("{}x{} input is too small for a 2x2 filter", input.rows, input.cols)));
    }
    let (rows, cols) = (input.rows - 1, input.cols - 1);
    if let ConvBias::Untied(b) = bias {
        if b.len() != rows * cols {
            return Err(Error::shape(format!("{} untied biases", rows * cols), b.len()));
        }
    }
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let b = match bias {
                ConvBias::Untied(b) => b[r * cols + c],
                ConvBias::Shared(b) => b,
            };
            data.push(
                filter[0] * input.at(r, c)
                    + filter[1] * input.at(r, c + 1)
                    + filter[2] * input.at(r + 1, c)
                    + filter[3] * input.at(r + 1, c + 1)
                    + b,
            );
        }
    }
    Ok(FeatureMap { rows, cols, data })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    Max,
    Mean,
}

/// Output size of a 2×2, stride-2 pool along one axis. Odd sizes are padded
/// by repeating the last row or column.
pub fn pooled_len(n: usize) -> usize {
    n.div_ceil(2)
}

/// 2×2 pooling with stride 2. Odd dimensions are padded by edge replication,
/// so a trailing row or column pools with a copy of itself.
pub fn pool(input: &FeatureMap, mode: PoolMode) -> FeatureMap {
    let (rows, cols) = (pooled_len(input.rows), pooled_len(input.cols));
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let block = pool_block(input.rows, input.cols, r, c).map(|(i, j)| input.at(i, j));
            data.push(match mode {
                PoolMode::Max => block.into_iter().fold(f64::NEG_INFINITY, f64::max),
                PoolMode::Mean => block.iter().sum::<f64>() / 4.0,
            });
        }
    }
    FeatureMap { rows, cols, data }
}

/// Source cells of pooled cell `(r, c)`, with edge replication.
#[inline]
pub(crate) fn pool_block(rows: usize, cols: usize, r: usize, c: usize) -> [(usize, usize); 4] {
    let r0 = 2 * r;
    let c0 = 2 * c;
    let r1 = (r0 + 1).min(rows - 1);
    let c1 = (c0 + 1).min(cols - 1);
    [(r0, c0), (r0, c1), (r1, c0), (r1, c1)]
}
