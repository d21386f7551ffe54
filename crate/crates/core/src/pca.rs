//! PCA of the gallery centroid cloud: spectrum, principal energy and
//! effective dimensionality.
//!
//! Covariance is accumulated in one streaming pass over fixed-size row
//! chunks (Welford updates inside a chunk, pairwise merges between chunks in
//! chunk order), then handed to a dense symmetric eigensolver.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{self, EmbeddingMatrix, Gallery, LoadOptions};

const CHUNK_ROWS: usize = 1024;
/// Eigenvalues above this negative floor are numerical noise and clamp to 0.
pub const NEGATIVE_EIGVAL_FLOOR: f64 = -1e-10;
/// Energy thresholds reported as spectrum knees.
pub const ENERGY_KNEES: [f64; 4] = [0.5, 0.9, 0.95, 0.99];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EffectiveRankKind {
    /// (Σλ)² / Σλ²
    #[default]
    ParticipationRatio,
    /// exp of the Shannon entropy of the normalized spectrum
    Entropy,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PcaOptions {
    /// Center on the mean (sample covariance). Otherwise the second-moment
    /// matrix about the origin is decomposed.
    pub centered: bool,
}

impl Default for PcaOptions {
    fn default() -> Self {
        Self { centered: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub dim: usize,
    pub centered: bool,
    pub mean: Vec<f64>,
    /// Column k is u_k; columns ordered by descending eigenvalue.
    pub eigvecs: DMatrix<f64>,
    pub eigvals: Vec<f64>,
    pub sigmas: Vec<f64>,
}

#[derive(Clone)]
struct Moments {
    n: usize,
    mean: Vec<f64>,
    /// upper triangle (row-major, full storage) of Σ (x - mean)(x - mean)ᵀ
    m2: Vec<f64>,
}

impl Moments {
    fn new(dim: usize) -> Self {
        Self { n: 0, mean: vec![0.0; dim], m2: vec![0.0; dim * dim] }
    }

    fn push(&mut self, x: &[f32], centered: bool) {
        let d = self.mean.len();
        self.n += 1;
        if centered {
            let n = self.n as f64;
            let delta: Vec<f64> = x.iter().zip(&self.mean).map(|(&v, m)| f64::from(v) - m).collect();
            for (m, dl) in self.mean.iter_mut().zip(&delta) {
                *m += dl / n;
            }
            let post: Vec<f64> = x.iter().zip(&self.mean).map(|(&v, m)| f64::from(v) - m).collect();
            for i in 0..d {
                let di = delta[i];
                if di == 0.0 {
                    continue;
                }
                let row = &mut self.m2[i * d..(i + 1) * d];
                for j in i..d {
                    row[j] += di * post[j];
                }
            }
        } else {
            for i in 0..d {
                let xi = f64::from(x[i]);
                let row = &mut self.m2[i * d..(i + 1) * d];
                for j in i..d {
                    row[j] += xi * f64::from(x[j]);
                }
            }
        }
    }

    fn merge(mut self, other: Moments, centered: bool) -> Moments {
        if other.n == 0 {
            return self;
        }
        if self.n == 0 {
            return other;
        }
        let d = self.mean.len();
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        if centered {
            let delta: Vec<f64> = other.mean.iter().zip(&self.mean).map(|(b, a)| b - a).collect();
            let w = na * nb / n;
            for i in 0..d {
                for j in i..d {
                    self.m2[i * d + j] += other.m2[i * d + j] + delta[i] * delta[j] * w;
                }
            }
            for (m, dl) in self.mean.iter_mut().zip(&delta) {
                *m += dl * nb / n;
            }
        } else {
            for (a, b) in self.m2.iter_mut().zip(&other.m2) {
                *a += b;
            }
        }
        self.n += other.n;
        self
    }
}

pub fn fit_pca(gallery: &Gallery) -> Result<PcaModel> {
    fit_pca_with(&gallery.centroids, PcaOptions::default())
}

pub fn fit_pca_with(rows: &EmbeddingMatrix, opts: PcaOptions) -> Result<PcaModel> {
    let count = rows.count();
    if count < 2 {
        return Err(Error::InsufficientData { count });
    }
    let dim = rows.dim();
    let partial: Vec<Moments> = rows
        .as_slice()
        .par_chunks(CHUNK_ROWS * dim)
        .map(|chunk| {
            let mut m = Moments::new(dim);
            for r in chunk.chunks_exact(dim) {
                m.push(r, opts.centered);
            }
            m
        })
        .collect();
    let total = partial
        .into_iter()
        .fold(Moments::new(dim), |acc, m| acc.merge(m, opts.centered));

    let denom = if opts.centered { (count - 1) as f64 } else { count as f64 };
    let cov = DMatrix::from_fn(dim, dim, |i, j| {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        total.m2[a * dim + b] / denom
    });
    let mean = if opts.centered { total.mean } else { vec![0.0; dim] };
    Ok(PcaModel::from_covariance(cov, mean, opts.centered))
}

impl PcaModel {
    fn from_covariance(cov: DMatrix<f64>, mean: Vec<f64>, centered: bool) -> Self {
        let dim = cov.nrows();
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let mut eigvecs = DMatrix::zeros(dim, dim);
        let mut eigvals = Vec::with_capacity(dim);
        for (k, &src) in order.iter().enumerate() {
            let mut col = eig.eigenvectors.column(src).clone_owned();
            // sign convention: largest-magnitude component positive
            let imax = col.iamax();
            if col[imax] < 0.0 {
                col.neg_mut();
            }
            eigvecs.set_column(k, &col);
            eigvals.push(eig.eigenvalues[src].max(0.0));
        }
        debug_assert!(eig.eigenvalues.iter().all(|&l| l >= NEGATIVE_EIGVAL_FLOOR * 1e3 || l.is_nan()));
        let sigmas = eigvals.iter().map(|l| l.sqrt()).collect();
        Self { dim, centered, mean, eigvecs, eigvals, sigmas }
    }

    /// Model from an explicit orthonormal basis (columns) and spectrum.
    pub fn from_spectrum(eigvecs: DMatrix<f64>, eigvals: Vec<f64>) -> Result<Self> {
        let dim = eigvecs.nrows();
        if eigvecs.ncols() != dim || eigvals.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: eigvals.len() });
        }
        if eigvals.iter().any(|&l| !(l >= NEGATIVE_EIGVAL_FLOOR)) {
            return Err(Error::domain("eigenvalues must be non-negative"));
        }
        let eigvals: Vec<f64> = eigvals.into_iter().map(|l| l.max(0.0)).collect();
        let sigmas = eigvals.iter().map(|l| l.sqrt()).collect();
        Ok(Self { dim, centered: true, mean: vec![0.0; dim], eigvecs, eigvals, sigmas })
    }

    pub fn total_variance(&self) -> f64 {
        self.eigvals.iter().sum()
    }

    fn cumulative(&self) -> Vec<f64> {
        self.eigvals
            .iter()
            .scan(0.0, |s, &l| {
                *s += l;
                Some(*s)
            })
            .collect()
    }

    /// E(k) = Σ_{k'≤k} λ_k' / Σ λ.
    pub fn principal_energy(&self, k: usize) -> Result<f64> {
        if k == 0 || k > self.dim {
            return Err(Error::domain(format!("k = {k} outside [1, {}]", self.dim)));
        }
        let cum = self.cumulative();
        let total = cum[self.dim - 1];
        if total <= 0.0 {
            return Err(Error::ZeroVariance);
        }
        Ok(cum[k - 1] / total)
    }

    /// Smallest k with E(k) >= threshold.
    pub fn effective_dim(&self, threshold: f64) -> Result<usize> {
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(Error::domain(format!("threshold = {threshold} outside (0, 1]")));
        }
        let cum = self.cumulative();
        let total = cum[self.dim - 1];
        if total <= 0.0 {
            return Err(Error::ZeroVariance);
        }
        // tolerate round-off in the cumulative sums
        let k = cum.iter().position(|&c| c / total >= threshold - 1e-12).unwrap_or(self.dim - 1);
        Ok(k + 1)
    }

    pub fn effective_rank(&self) -> Result<f64> {
        self.effective_rank_as(EffectiveRankKind::ParticipationRatio)
    }

    pub fn effective_rank_as(&self, kind: EffectiveRankKind) -> Result<f64> {
        let total = self.total_variance();
        if total <= 0.0 {
            return Err(Error::ZeroVariance);
        }
        Ok(match kind {
            EffectiveRankKind::ParticipationRatio => {
                let sq: f64 = self.eigvals.iter().map(|l| l * l).sum();
                total * total / sq
            }
            EffectiveRankKind::Entropy => {
                let h: f64 = self
                    .eigvals
                    .iter()
                    .filter(|&&l| l > 0.0)
                    .map(|&l| {
                        let p = l / total;
                        -p * p.ln()
                    })
                    .sum();
                h.exp()
            }
        })
    }

    /// Column `k` of the basis.
    pub fn component(&self, k: usize) -> Vec<f64> {
        self.eigvecs.column(k).iter().copied().collect()
    }

    pub fn spectrum(&self) -> Result<Spectrum> {
        let mut energy_knees = BTreeMap::new();
        for t in ENERGY_KNEES {
            energy_knees.insert(format!("{t}"), self.effective_dim(t)?);
        }
        Ok(Spectrum {
            dim: self.dim,
            centered: self.centered,
            eigvals: self.eigvals.clone(),
            energy_knees,
            effective_rank: self.effective_rank()?,
            effective_rank_entropy: self.effective_rank_as(EffectiveRankKind::Entropy)?,
        })
    }

    /// Writes `<prefix>.mean.bipe`, `<prefix>.eigvecs.bipe` (row k = u_k)
    /// and `<prefix>.spectrum.json`.
    pub fn save(&self, prefix: impl AsRef<Path>) -> Result<()> {
        let prefix = prefix.as_ref();
        let mean = EmbeddingMatrix::from_f64_rows(self.dim, &[self.mean.clone()])?;
        store::save_embeddings(&mean, suffixed(prefix, ".mean.bipe"))?;
        let rows: Vec<Vec<f64>> = (0..self.dim).map(|k| self.component(k)).collect();
        store::save_embeddings(&EmbeddingMatrix::from_f64_rows(self.dim, &rows)?, suffixed(prefix, ".eigvecs.bipe"))?;
        fs::write(suffixed(prefix, ".spectrum.json"), serde_json::to_vec_pretty(&self.spectrum()?)?)?;
        Ok(())
    }

    /// Inverse of [`PcaModel::save`]; the basis comes back at storage
    /// (single) precision.
    pub fn load(prefix: impl AsRef<Path>) -> Result<Self> {
        let prefix = prefix.as_ref();
        let raw = LoadOptions { validate_unit: false };
        let mean = store::load_embeddings_with(suffixed(prefix, ".mean.bipe"), raw)?;
        let vecs = store::load_embeddings_with(suffixed(prefix, ".eigvecs.bipe"), raw)?;
        let spec: Spectrum = serde_json::from_slice(&fs::read(suffixed(prefix, ".spectrum.json"))?)?;
        let dim = vecs.dim();
        if vecs.count() != dim || spec.eigvals.len() != dim || mean.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: spec.eigvals.len() });
        }
        let eigvecs = DMatrix::from_fn(dim, dim, |i, k| f64::from(vecs.row(k)[i]));
        let mut model = Self::from_spectrum(eigvecs, spec.eigvals)?;
        model.centered = spec.centered;
        model.mean = store::to_f64(mean.row(0));
        Ok(model)
    }
}

fn suffixed(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub dim: usize,
    pub centered: bool,
    pub eigvals: Vec<f64>,
    pub energy_knees: BTreeMap<String, usize>,
    pub effective_rank: f64,
    pub effective_rank_entropy: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model_with(eigvals: Vec<f64>) -> PcaModel {
        let d = eigvals.len();
        PcaModel::from_spectrum(DMatrix::identity(d, d), eigvals).unwrap()
    }

    #[test]
    fn energy_on_uniform_spectrum() {
        let m = model_with(vec![1.0; 100]);
        assert_eq!(m.principal_energy(100).unwrap(), 1.0);
        assert!((m.principal_energy(50).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(m.effective_dim(0.95).unwrap(), 95);
        assert!((m.effective_rank().unwrap() - 100.0).abs() < 1e-9);
        assert!((m.effective_rank_as(EffectiveRankKind::Entropy).unwrap() - 100.0).abs() < 1e-9);
        assert!(m.principal_energy(0).is_err());
        assert!(m.principal_energy(101).is_err());
    }

    #[test]
    fn effective_rank_small_cases() {
        let m = model_with(vec![2.0, 1.0, 1.0]);
        assert!((m.effective_rank().unwrap() - 16.0 / 6.0).abs() < 1e-12);
        let m = model_with(vec![3.0, 0.0, 0.0]);
        assert_eq!(m.effective_rank().unwrap(), 1.0);
    }

    #[test]
    fn zero_variance_reported() {
        let m = model_with(vec![0.0; 4]);
        assert!(matches!(m.principal_energy(2), Err(Error::ZeroVariance)));
        assert!(matches!(m.effective_dim(0.9), Err(Error::ZeroVariance)));
        assert!(matches!(m.effective_rank(), Err(Error::ZeroVariance)));
    }

    #[test]
    fn insufficient_rows() {
        let one = EmbeddingMatrix::new(2, vec![1.0, 0.0]).unwrap();
        assert!(matches!(fit_pca_with(&one, PcaOptions::default()), Err(Error::InsufficientData { count: 1 })));
    }

    #[test]
    fn duplicated_cloud_has_zero_spectrum() {
        let row = [0.6f32, 0.0, 0.8, 0.0];
        let m = EmbeddingMatrix::new(4, row.repeat(3000)).unwrap();
        let pca = fit_pca_with(&m, PcaOptions::default()).unwrap();
        assert!(pca.eigvals.iter().all(|&l| l == 0.0), "{:?}", pca.eigvals);
    }
}
