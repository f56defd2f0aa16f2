//! Vector quantization of model updates.
//!
//! An update of length W is cut into W̄ = ceil(W/Q) chunks of Q consecutive
//! scalars (column-major reshape into a Q×W̄ matrix); the last chunk is
//! zero-padded when Q does not divide W. Each chunk is replaced by the index
//! of its nearest codeword.

use rayon::prelude::*;

use crate::codebooks::{nearest, QuantizationCodebook};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedUpdate {
    /// One codeword index per chunk, each in `0..N`.
    pub indices: Vec<usize>,
    /// Number of zero scalars appended to fill the final chunk (`< Q`).
    pub pad_len: usize,
}

impl QuantizedUpdate {
    pub fn num_chunks(&self) -> usize {
        self.indices.len()
    }

    /// Length W of the original update given codeword length `q`.
    pub fn update_len(&self, q: usize) -> usize {
        self.indices.len() * q - self.pad_len
    }

    /// Comma-separated indices, for debugging dumps.
    pub fn to_csv(&self) -> String {
        let mut s = self
            .indices
            .iter()
            .map(|i| i.to_string())
            .collect::<Vec<_>>()
            .join(",");
        s.push('\n');
        s
    }
}

/// Number of chunks and pad length for an update of length `w`.
pub fn chunk_layout(w: usize, q: usize) -> Result<(usize, usize)> {
    if w == 0 || q == 0 {
        return Err(Error::InvalidDimensions(format!(
            "update length and codeword length must be >= 1 (W={w}, Q={q})"
        )));
    }
    let chunks = w.div_ceil(q);
    Ok((chunks, chunks * q - w))
}

/// Column-major reshape of `g` into Q×W̄, zero-padding the final column.
pub fn reshape_update(g: &[f64], q: usize) -> Result<(Matrix, usize)> {
    let (chunks, pad_len) = chunk_layout(g.len(), q)?;
    let mut data = Vec::with_capacity(chunks * q);
    data.extend_from_slice(g);
    data.resize(chunks * q, 0.0);
    Ok((Matrix::from_col_major(q, chunks, data)?, pad_len))
}

pub fn quantize_update(g: &[f64], codebook: &QuantizationCodebook) -> Result<QuantizedUpdate> {
    let (m, pad_len) = reshape_update(g, codebook.dim())?;
    let cols: Vec<&[f64]> = m.columns().collect();
    let indices = cols
        .par_iter()
        .map(|c| nearest(c, codebook.entries()).0)
        .collect();
    Ok(QuantizedUpdate { indices, pad_len })
}

pub fn dequantize(q: &QuantizedUpdate, codebook: &QuantizationCodebook) -> Result<Vec<f64>> {
    let dim = codebook.dim();
    if q.pad_len >= dim || q.indices.is_empty() {
        return Err(Error::InvalidDimensions(format!(
            "pad_len {} must be < Q = {dim} with at least one chunk",
            q.pad_len
        )));
    }
    let mut out = Vec::with_capacity(q.indices.len() * dim);
    for &idx in &q.indices {
        if idx >= codebook.len() {
            return Err(Error::IndexOutOfRange {
                index: idx,
                size: codebook.len(),
            });
        }
        out.extend_from_slice(codebook.codeword(idx));
    }
    out.truncate(out.len() - q.pad_len);
    Ok(out)
}
