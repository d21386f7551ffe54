//! Synthetic galleries and independent numerical oracles.

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::displaced_cosine;
use crate::rng::{substream, Domain, StreamRng, SAMPLE_CHUNK};
use crate::store::{self, kernel, EmbeddingMatrix, Gallery, GalleryManifest, VirtualSet};

/// Default bisection tolerance for [`bisection_alpha_star`].
pub const BISECTION_TOL: f64 = 1e-10;
/// Tries per far row in [`plant_collisions`].
pub const MAX_FAR_TRIES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthGalleryConfig {
    pub dim: usize,
    pub n_clusters: usize,
    pub per_cluster: usize,
    pub concentration: f64,
    pub seed: u64,
}

impl Default for SynthGalleryConfig {
    fn default() -> Self {
        Self { dim: 64, n_clusters: 1000, per_cluster: 10, concentration: 32.0, seed: 0 }
    }
}

impl SynthGalleryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 || self.n_clusters == 0 || self.per_cluster == 0 {
            return Err(Error::Config("dim >= 2 and positive cluster counts required".into()));
        }
        if !(self.concentration > 0.0 && self.concentration.is_finite()) {
            return Err(Error::Config(format!("concentration = {} must be finite and > 0", self.concentration)));
        }
        Ok(())
    }
}

fn gaussian_unit(dim: usize, rng: &mut StreamRng) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if store::normalize_in_place(&mut v) > store::ZERO_NORM_TOL {
            return v;
        }
    }
}

/// `n` iid uniform points on the unit sphere, `SAMPLE_CHUNK` rows per
/// random substream.
pub fn sample_uniform_sphere(dim: usize, n: usize, seed: u64) -> Result<EmbeddingMatrix> {
    if n == 0 || dim == 0 {
        return Err(Error::domain("need n >= 1 and dim >= 1"));
    }
    let chunks: Vec<Vec<f32>> = (0..n.div_ceil(SAMPLE_CHUNK))
        .into_par_iter()
        .map(|c| {
            let rows = SAMPLE_CHUNK.min(n - c * SAMPLE_CHUNK);
            let mut rng = substream(seed, Domain::UniformSphere, c as u64);
            let mut out = Vec::with_capacity(rows * dim);
            for _ in 0..rows {
                out.extend(gaussian_unit(dim, &mut rng).iter().map(|&x| x as f32));
            }
            out
        })
        .collect();
    EmbeddingMatrix::from_raw(dim, chunks.concat())
}

/// One vMF(μ, κ) draw (Wood's rejection scheme for the cosine to μ plus a
/// uniform tangent direction).
pub fn sample_vmf(mean: &[f64], kappa: f64, rng: &mut StreamRng) -> Vec<f64> {
    let d = mean.len();
    let m1 = (d - 1) as f64;
    let b = m1 / (2.0 * kappa + (4.0 * kappa * kappa + m1 * m1).sqrt());
    let x0 = (1.0 - b) / (1.0 + b);
    let c = kappa * x0 + m1 * (1.0 - x0 * x0).ln();
    let beta = Beta::new(m1 / 2.0, m1 / 2.0).expect("positive shape");
    let w = loop {
        let z: f64 = beta.sample(rng);
        let w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
        let u: f64 = rng.gen();
        if kappa * w + m1 * (1.0 - x0 * w).ln() - c >= u.ln() {
            break w;
        }
    };
    // tangent direction: gaussian with the mean component removed
    let t = loop {
        let mut g: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let p: f64 = g.iter().zip(mean).map(|(a, b)| a * b).sum();
        g.iter_mut().zip(mean).for_each(|(x, m)| *x -= p * m);
        if store::normalize_in_place(&mut g) > store::ZERO_NORM_TOL {
            break g;
        }
    };
    let s = ((1.0 - w) * (1.0 + w)).max(0.0).sqrt();
    let mut x: Vec<f64> = mean.iter().zip(&t).map(|(m, t)| w * m + s * t).collect();
    store::normalize_in_place(&mut x);
    x
}

/// Mixture of `n_clusters` vMF components with uniformly drawn means; rows
/// are grouped by cluster.
pub fn sample_vmf_mixture(config: &SynthGalleryConfig) -> Result<Gallery> {
    config.validate()?;
    let d = config.dim;
    let means: Vec<Vec<f64>> = (0..config.n_clusters)
        .map(|c| gaussian_unit(d, &mut substream(config.seed, Domain::VmfMeans, c as u64)))
        .collect();
    let n = config.n_clusters * config.per_cluster;
    let rows: Vec<Vec<f32>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(config.seed, Domain::VmfRows, i as u64);
            store::to_f32(&sample_vmf(&means[i / config.per_cluster], config.concentration, &mut rng))
        })
        .collect();
    let centroids = EmbeddingMatrix::from_raw(d, rows.concat())?;
    let source = format!(
        "synthetic vMF mixture: {} clusters x {}, kappa {}, seed {}",
        config.n_clusters, config.per_cluster, config.concentration, config.seed
    );
    Ok(Gallery { centroids, labels: None, manifest: GalleryManifest::new(&source, "none") })
}

/// Monte-Carlo estimate of the cap fraction {x : x₁ ≥ τ} with its binomial
/// standard error. Uses the same substreams as [`sample_uniform_sphere`].
pub fn mc_cap_volume(tau: f64, dim: usize, n_samples: usize, seed: u64) -> Result<(f64, f64)> {
    if n_samples < 1000 {
        return Err(Error::domain("need at least 1000 samples"));
    }
    if dim < 2 {
        return Err(Error::domain("dim must be >= 2"));
    }
    let hits: u64 = (0..n_samples.div_ceil(SAMPLE_CHUNK))
        .into_par_iter()
        .map(|c| {
            let rows = SAMPLE_CHUNK.min(n_samples - c * SAMPLE_CHUNK);
            let mut rng = substream(seed, Domain::UniformSphere, c as u64);
            (0..rows).filter(|_| gaussian_unit(dim, &mut rng)[0] >= tau).count() as u64
        })
        .sum();
    let n = n_samples as f64;
    let p = hits as f64 / n;
    Ok((p, (p * (1.0 - p) / n).sqrt()))
}

/// Root of `displaced_cosine(p, α) = τ` by bisection on `[0, 1e6]`.
pub fn bisection_alpha_star(p: f64, tau: f64, tol: f64) -> Result<f64> {
    if !(p.abs() < tau && tau < 1.0) {
        return Err(Error::domain(format!("need |p| < tau < 1, got p = {p}, tau = {tau}")));
    }
    if !(tol > 0.0) {
        return Err(Error::domain("tolerance must be positive"));
    }
    let f = |a: f64| displaced_cosine(p, a).map(|c| c - tau);
    let (mut lo, mut hi) = (0.0f64, 1e6f64);
    if !(f(lo)? > 0.0 && f(hi)? < 0.0) {
        return Err(Error::BracketFailure);
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Test gallery with known collisions, see [`plant_collisions`].
#[derive(Debug, Clone)]
pub struct Planted {
    pub gallery: Gallery,
    /// Per row, the virtual index it was planted next to.
    pub targets: Vec<Option<usize>>,
}

impl Planted {
    pub fn planted_count(&self) -> usize {
        self.targets.iter().filter(|t| t.is_some()).count()
    }
}

/// Cosine of a planted row to its target.
const PLANT_COS: f64 = 0.95;

/// `rows` rows; each independently (probability `rate`) is placed at cosine
/// 0.95 to one uniformly chosen virtual row and below `tau` to every other
/// one, otherwise it is uniform and conditioned to stay below `tau - 0.1`
/// against all of 𝒱.
pub fn plant_collisions(virtual_set: &VirtualSet, rows: usize, rate: f64, tau: f64, seed: u64) -> Result<Planted> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::domain(format!("rate = {rate} outside [0, 1]")));
    }
    if !(tau > PLANT_COS - 1.0 && tau < PLANT_COS) {
        return Err(Error::domain(format!("tau = {tau} must lie below the planting cosine {PLANT_COS}")));
    }
    let v = &virtual_set.embeddings;
    if v.is_empty() || rows == 0 {
        return Err(Error::domain("need a non-empty virtual set and rows >= 1"));
    }
    let dim = v.dim();
    let produced: Vec<Result<(Vec<f32>, Option<usize>)>> = (0..rows)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, Domain::Plant, i as u64);
            let planted = rng.gen::<f64>() < rate;
            for _ in 0..MAX_FAR_TRIES {
                if planted {
                    let j = rng.gen_range(0..v.count());
                    let target = store::to_f64(v.row(j));
                    let mut t = gaussian_unit(dim, &mut rng);
                    let p: f64 = t.iter().zip(&target).map(|(a, b)| a * b).sum();
                    t.iter_mut().zip(&target).for_each(|(x, m)| *x -= p * m);
                    if store::normalize_in_place(&mut t) <= store::ZERO_NORM_TOL {
                        continue;
                    }
                    let s = (1.0 - PLANT_COS * PLANT_COS).sqrt();
                    let mut x: Vec<f64> = target.iter().zip(&t).map(|(m, t)| PLANT_COS * m + s * t).collect();
                    store::normalize_in_place(&mut x);
                    let x = store::to_f32(&x);
                    let mut clean = kernel::dot(&x, v.row(j)) >= tau;
                    kernel::for_each_dot(&x, v.as_slice(), dim, |k, d| {
                        if k != j && d >= tau {
                            clean = false;
                        }
                    });
                    if clean {
                        return Ok((x, Some(j)));
                    }
                } else {
                    let x = store::to_f32(&gaussian_unit(dim, &mut rng));
                    if let kernel::Scan::Below(_) = kernel::scan_below(&x, v.as_slice(), dim, tau - 0.1) {
                        return Ok((x, None));
                    }
                }
            }
            Err(Error::GeometricInfeasible { tries: MAX_FAR_TRIES })
        })
        .collect();
    let mut data = Vec::with_capacity(rows * dim);
    let mut targets = Vec::with_capacity(rows);
    for r in produced {
        let (x, t) = r?;
        data.extend_from_slice(&x);
        targets.push(t);
    }
    let gallery = Gallery::unlabeled(EmbeddingMatrix::from_raw(dim, data)?, "planted collisions");
    Ok(Planted { gallery, targets })
}
