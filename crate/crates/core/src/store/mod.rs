//! Embedding matrices, galleries, virtual sets and exact maximum-cosine
//! queries.
//!
//! Rows are stored in single precision; every norm and dot product is
//! accumulated in double precision.

mod gallery;
mod io;
pub mod kernel;

pub use gallery::{Gallery, GalleryManifest, VirtualRecord, VirtualSet};
pub use io::{
    file_sha256, load_embeddings, load_embeddings_with, payload_sha256, read_manifest, save_embeddings, sidecar_path,
    write_manifest, EmbeddingManifest, LoadOptions, FORMAT_VERSION, HEADER_LEN, MAGIC,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum `| ||row|| - 1 |` accepted for stored single-precision rows.
pub const UNIT_NORM_TOL: f64 = 1e-5;
/// Norm below which a summed or perturbed vector is treated as zero.
pub const ZERO_NORM_TOL: f64 = 1e-12;

/// Dense row-major matrix of `count x dim` single-precision values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMatrix {
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    /// Builds a matrix and checks that every row is unit-norm within
    /// [`UNIT_NORM_TOL`].
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        let m = Self::from_raw(dim, data)?;
        m.validate_unit_rows()?;
        Ok(m)
    }

    /// Builds a matrix without the unit-norm check (means, eigenvector
    /// bases, fixtures).
    pub fn from_raw(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::domain("dim must be positive"));
        }
        if data.len() % dim != 0 {
            return Err(Error::ShapeMismatch { len: data.len(), dim });
        }
        Ok(Self { dim, data })
    }

    pub fn empty(dim: usize) -> Self {
        assert!(dim > 0, "dim must be positive");
        Self { dim, data: Vec::new() }
    }

    /// Rounds double-precision rows to storage precision. Rows are stored as
    /// given; no normalization is applied.
    pub fn from_f64_rows<R: AsRef<[f64]>>(dim: usize, rows: &[R]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: r.len() });
            }
            data.extend(r.iter().map(|&x| x as f32));
        }
        Self::from_raw(dim, data)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn count(&self) -> usize {
        self.data.len() / self.dim
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.dim)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_raw(self) -> (usize, Vec<f32>) {
        (self.dim, self.data)
    }

    pub fn push_row(&mut self, row: &[f32]) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: row.len() });
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    /// First `n` rows (all rows if `n >= count`).
    pub fn prefix(&self, n: usize) -> EmbeddingMatrix {
        let n = n.min(self.count());
        Self { dim: self.dim, data: self.data[..n * self.dim].to_vec() }
    }

    /// Rows at the given indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<EmbeddingMatrix> {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            if i >= self.count() {
                return Err(Error::IndexOutOfRange { index: i, len: self.count() });
            }
            data.extend_from_slice(self.row(i));
        }
        Ok(Self { dim: self.dim, data })
    }

    pub fn row_norm(&self, i: usize) -> f64 {
        kernel::dot(self.row(i), self.row(i)).sqrt()
    }

    /// Rows whose norm deviates from 1 by more than `tol`.
    pub fn norm_violations(&self, tol: f64) -> Vec<(usize, f64)> {
        (0..self.count())
            .map(|i| (i, self.row_norm(i)))
            .filter(|(_, n)| (n - 1.0).abs() > tol)
            .collect()
    }

    pub fn max_norm_deviation(&self) -> f64 {
        (0..self.count()).map(|i| (self.row_norm(i) - 1.0).abs()).fold(0.0, f64::max)
    }

    pub fn validate_unit_rows(&self) -> Result<()> {
        match self.norm_violations(UNIT_NORM_TOL).first() {
            Some(&(row, norm)) => Err(Error::NonUnitRow { row, norm }),
            None => Ok(()),
        }
    }
}

/// Normalizes a double-precision vector in place and returns its former norm.
pub fn normalize_in_place(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

pub fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

pub fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x)).collect()
}

/// Normalized sum of the rows: the dominant direction of an identity's
/// embeddings.
pub fn compute_centroid(rows: &EmbeddingMatrix) -> Result<Vec<f64>> {
    if rows.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    let mut sum = vec![0.0f64; rows.dim()];
    for r in rows.rows() {
        for (s, x) in sum.iter_mut().zip(r) {
            *s += f64::from(*x);
        }
    }
    let norm = normalize_in_place(&mut sum);
    if norm < ZERO_NORM_TOL {
        return Err(Error::ZeroNormCentroid { norm });
    }
    Ok(sum)
}

/// Exact maximum cosine of `query` against all rows, with the first
/// attaining index.
pub fn max_cosine_against(query: &[f32], matrix: &EmbeddingMatrix) -> Result<(f64, usize)> {
    if query.len() != matrix.dim() {
        return Err(Error::DimensionMismatch { expected: matrix.dim(), found: query.len() });
    }
    kernel::par_max_dot(query, matrix.as_slice(), matrix.dim()).ok_or(Error::EmptyMatrix)
}
