//! Virtual-identity allocation: repulsion direction, PCA-shaped noise,
//! candidate construction, exact hard checks, the provisioning loop and
//! revocation against a grown gallery.
//!
//! # Provisioning semantics
//!
//! Provisioning runs in *epochs*. Epoch `e` draws a reference index from
//! stream `(Reference, e)` and then makes up to `max_attempts_per_candidate`
//! attempts, attempt `k` using stream `(Attempt, e * A + k)`. The epoch ends
//! at the first accepted candidate. Attempts are counted against
//! `max_total_attempts` in epoch order.
//!
//! For throughput, a batch of epochs is evaluated in parallel against the
//! virtual set as it stood at the start of the batch. Epochs are then
//! committed one at a time in order; a candidate that passed is re-checked
//! against members committed earlier in the same batch, and if it collides
//! the epoch continues serially from the next attempt. A rejection against
//! the batch-start set is also a rejection against any superset, so the
//! committed result equals the strictly sequential loop bit for bit, for any
//! batch size and any number of worker threads.

use std::sync::OnceLock;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pca::PcaModel;
use crate::rng::{substream, Domain, StreamRng};
use crate::store::kernel::{self, Scan};
use crate::store::{self, EmbeddingMatrix, Gallery, VirtualRecord, VirtualSet, ZERO_NORM_TOL};

/// Epochs evaluated per parallel batch.
pub const DEFAULT_BATCH_EPOCHS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaSpec {
    Fixed(f64),
    Range { alpha_min: f64, alpha_max: f64 },
}

impl AlphaSpec {
    fn validate(&self) -> Result<()> {
        match *self {
            AlphaSpec::Fixed(a) if a > 0.0 && a.is_finite() => Ok(()),
            AlphaSpec::Fixed(a) => Err(Error::Config(format!("alpha = {a} must be finite and > 0"))),
            AlphaSpec::Range { alpha_min, alpha_max } => {
                if !(alpha_min > 0.0 && alpha_min <= alpha_max && alpha_max.is_finite()) {
                    return Err(Error::Config(format!(
                        "alpha range [{alpha_min}, {alpha_max}] needs 0 < alpha_min <= alpha_max"
                    )));
                }
                Ok(())
            }
        }
    }

    fn sample(&self, rng: &mut StreamRng) -> f64 {
        match *self {
            AlphaSpec::Fixed(a) => a,
            AlphaSpec::Range { alpha_min, alpha_max } => rng.gen_range(alpha_min..=alpha_max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AllocConfig {
    pub tau: f64,
    pub alpha: AlphaSpec,
    pub k_neighbors: usize,
    pub temperature: f64,
    pub kappa: f64,
    pub seed: u64,
    pub max_attempts_per_candidate: u32,
    pub max_total_attempts: u64,
}

impl Default for AllocConfig {
    fn default() -> Self {
        Self {
            tau: 0.391,
            alpha: AlphaSpec::Fixed(4.0),
            k_neighbors: 10,
            temperature: 0.1,
            kappa: 1.0,
            seed: 0,
            max_attempts_per_candidate: 100,
            max_total_attempts: 100_000_000,
        }
    }
}

impl AllocConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config(format!("tau = {} outside (0, 1)", self.tau)));
        }
        self.alpha.validate()?;
        if self.k_neighbors == 0 {
            return Err(Error::Config("k_neighbors must be positive".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature = {} must be > 0", self.temperature)));
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(Error::Config(format!("kappa = {} must be >= 0", self.kappa)));
        }
        if self.max_attempts_per_candidate == 0 || self.max_total_attempts == 0 {
            return Err(Error::Config("attempt limits must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RejectionCounts {
    pub gallery_collision: u64,
    pub virtual_collision: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ProvisionStats {
    pub accepted: u64,
    pub attempted: u64,
    pub acceptance_rate: f64,
    pub rejections_by_cause: RejectionCounts,
    pub wall_time_secs: f64,
}

impl ProvisionStats {
    fn finish(&mut self, started: Instant) {
        self.acceptance_rate =
            if self.attempted == 0 { 0.0 } else { self.accepted as f64 / self.attempted as f64 };
        self.wall_time_secs = started.elapsed().as_secs_f64();
    }
}

/// What was accepted before the attempt budget ran out.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialProvision {
    pub set: VirtualSet,
    pub stats: ProvisionStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectCause {
    GalleryCollision,
    VirtualCollision,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CheckOutcome {
    Accept { max_gallery_cos: Option<f64>, max_virtual_cos: Option<f64> },
    Reject { cause: RejectCause, offending_index: usize, offending_cos: f64 },
}

impl CheckOutcome {
    pub fn is_accept(&self) -> bool {
        matches!(self, CheckOutcome::Accept { .. })
    }
}

/// Indices of the `k` rows most cosine-similar to row `r_index`, excluding
/// `r_index` itself. Ties go to the lower index.
fn nearest_neighbors(r_index: usize, rows: &EmbeddingMatrix, k: usize) -> Vec<(usize, f64)> {
    let mut all = Vec::with_capacity(rows.count());
    kernel::for_each_dot(rows.row(r_index), rows.as_slice(), rows.dim(), |i, d| {
        if i != r_index {
            all.push((i, d));
        }
    });
    let order = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    if all.len() > k {
        all.select_nth_unstable_by(k - 1, order);
        all.truncate(k);
    }
    all.sort_by(order);
    all
}

/// Softmax weights `exp(-(1 - cos) / t)` over the `k` nearest neighbours of
/// gallery row `r_index`.
pub fn neighbor_weights(r_index: usize, gallery: &Gallery, k: usize, t: f64) -> Result<Vec<(usize, f64)>> {
    neighbor_weights_rows(r_index, &gallery.centroids, k, t)
}

pub(crate) fn neighbor_weights_rows(
    r_index: usize,
    rows: &EmbeddingMatrix,
    k: usize,
    t: f64,
) -> Result<Vec<(usize, f64)>> {
    if rows.count() <= k {
        return Err(Error::GalleryTooSmall { count: rows.count(), k });
    }
    if r_index >= rows.count() {
        return Err(Error::IndexOutOfRange { index: r_index, len: rows.count() });
    }
    if !(t > 0.0) {
        return Err(Error::Config(format!("temperature = {t} must be > 0")));
    }
    let nn = nearest_neighbors(r_index, rows, k);
    // nn is sorted by descending cosine, so the first entry has the smallest distance
    let d0 = 1.0 - nn[0].1;
    let raw: Vec<f64> = nn.iter().map(|&(_, c)| (-((1.0 - c) - d0) / t).exp()).collect();
    let total: f64 = raw.iter().sum();
    Ok(nn.iter().zip(raw).map(|(&(i, _), w)| (i, w / total)).collect())
}

/// z* = −m / ‖m‖ with m the softmax-weighted centroid of the neighbours.
pub fn repulsion_direction(r_index: usize, gallery: &Gallery, k: usize, t: f64) -> Result<Vec<f64>> {
    repulsion_direction_rows(r_index, &gallery.centroids, k, t)
}

pub(crate) fn repulsion_direction_rows(
    r_index: usize,
    rows: &EmbeddingMatrix,
    k: usize,
    t: f64,
) -> Result<Vec<f64>> {
    let weights = neighbor_weights_rows(r_index, rows, k, t)?;
    let mut m = vec![0.0f64; rows.dim()];
    for &(i, w) in &weights {
        for (acc, &x) in m.iter_mut().zip(rows.row(i)) {
            *acc += w * f64::from(x);
        }
    }
    let norm = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > ZERO_NORM_TOL) {
        return Err(Error::DegenerateNeighborhood { index: r_index });
    }
    Ok(m.into_iter().map(|x| -x / norm).collect())
}

struct Neighborhood {
    z_star: Vec<f64>,
    neighbors: Vec<usize>,
}

fn neighborhood(r_index: usize, rows: &EmbeddingMatrix, k: usize, t: f64) -> Option<Neighborhood> {
    let z_star = repulsion_direction_rows(r_index, rows, k, t).ok()?;
    let neighbors = nearest_neighbors(r_index, rows, k).into_iter().map(|(i, _)| i).collect();
    Some(Neighborhood { z_star, neighbors })
}

/// z = normalize(z* + κ Σ η_k σ_k u_k), η_k iid standard normal from `rng`
/// (drawn for k = 1..d in order). κ = 0 and an all-zero spectrum both return
/// `z_star` unchanged.
pub fn perturb_direction(z_star: &[f64], pca: &PcaModel, kappa: f64, rng: &mut StreamRng) -> Result<Vec<f64>> {
    let d = z_star.len();
    if pca.dim != d {
        return Err(Error::DimensionMismatch { expected: pca.dim, found: d });
    }
    if kappa == 0.0 {
        return Ok(z_star.to_vec());
    }
    let basis = pca.eigvecs.as_slice();
    let mut noise = vec![0.0f64; d];
    let mut any = false;
    for k in 0..d {
        let eta: f64 = rng.sample(StandardNormal);
        let scale = kappa * eta * pca.sigmas[k];
        if scale == 0.0 {
            continue;
        }
        any = true;
        // column-major storage: column k is contiguous
        let u = &basis[k * d..(k + 1) * d];
        for (n, u) in noise.iter_mut().zip(u) {
            *n += scale * u;
        }
    }
    if !any {
        return Ok(z_star.to_vec());
    }
    let mut z: Vec<f64> = z_star.iter().zip(&noise).map(|(a, b)| a + b).collect();
    let norm = store::normalize_in_place(&mut z);
    if !(norm >= ZERO_NORM_TOL) {
        return Err(Error::ZeroNormDirection);
    }
    Ok(z)
}

/// s = normalize(r + αz).
pub fn make_candidate(r: &[f64], z: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if r.len() != z.len() {
        return Err(Error::DimensionMismatch { expected: r.len(), found: z.len() });
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::domain(format!("alpha = {alpha} must be finite and > 0")));
    }
    let mut s: Vec<f64> = r.iter().zip(z).map(|(a, b)| a + alpha * b).collect();
    let norm = store::normalize_in_place(&mut s);
    if !(norm >= ZERO_NORM_TOL) {
        return Err(Error::ZeroNormCandidate);
    }
    Ok(s)
}

/// Both hard constraints, strict `<`. The gallery is checked first and a
/// rejection reports the maximal offender of the violated constraint.
pub fn hard_check(s: &[f32], gallery: &Gallery, virtual_set: &VirtualSet, tau: f64) -> Result<CheckOutcome> {
    hard_check_rows(s, &gallery.centroids, &virtual_set.embeddings, tau)
}

pub fn hard_check_rows(
    s: &[f32],
    gallery: &EmbeddingMatrix,
    virtuals: &EmbeddingMatrix,
    tau: f64,
) -> Result<CheckOutcome> {
    for m in [gallery, virtuals] {
        if m.dim() != s.len() {
            return Err(Error::DimensionMismatch { expected: m.dim(), found: s.len() });
        }
    }
    let g = kernel::par_max_dot(s, gallery.as_slice(), gallery.dim());
    if let Some((c, i)) = g {
        if c >= tau {
            return Ok(CheckOutcome::Reject {
                cause: RejectCause::GalleryCollision,
                offending_index: i,
                offending_cos: c,
            });
        }
    }
    let v = kernel::par_max_dot(s, virtuals.as_slice(), virtuals.dim());
    if let Some((c, i)) = v {
        if c >= tau {
            return Ok(CheckOutcome::Reject {
                cause: RejectCause::VirtualCollision,
                offending_index: i,
                offending_cos: c,
            });
        }
    }
    Ok(CheckOutcome::Accept { max_gallery_cos: g.map(|x| x.0), max_virtual_cos: v.map(|x| x.0) })
}

#[derive(Debug, Clone, Copy)]
pub struct ProvisionOptions {
    /// Epochs evaluated per parallel batch. Does not affect the output.
    pub batch_epochs: usize,
}

impl Default for ProvisionOptions {
    fn default() -> Self {
        Self { batch_epochs: DEFAULT_BATCH_EPOCHS }
    }
}

pub fn provision(
    gallery: &Gallery,
    pca: &PcaModel,
    config: &AllocConfig,
    n_target: usize,
) -> Result<(VirtualSet, ProvisionStats)> {
    provision_with(gallery, pca, config, n_target, ProvisionOptions::default())
}

pub fn provision_with(
    gallery: &Gallery,
    pca: &PcaModel,
    config: &AllocConfig,
    n_target: usize,
    opts: ProvisionOptions,
) -> Result<(VirtualSet, ProvisionStats)> {
    config.validate()?;
    if n_target == 0 {
        return Err(Error::Config("n_target must be >= 1".into()));
    }
    if opts.batch_epochs == 0 {
        return Err(Error::Config("batch_epochs must be >= 1".into()));
    }
    let rows = &gallery.centroids;
    if pca.dim != rows.dim() {
        return Err(Error::DimensionMismatch { expected: rows.dim(), found: pca.dim });
    }
    if rows.count() <= config.k_neighbors {
        return Err(Error::GalleryTooSmall { count: rows.count(), k: config.k_neighbors });
    }
    let started = Instant::now();
    let ctx = Ctx::new(rows, pca, config);
    let mut set = VirtualSet::new(rows.dim(), config.clone());
    let mut stats = ProvisionStats::default();
    let mut since_last: u64 = 0;
    let mut epoch: u64 = 0;
    // accepted virtual indices per reference, scanned first by the checks
    let mut by_ref: Vec<Vec<u32>> = vec![Vec::new(); rows.count()];

    loop {
        let batch: Vec<u64> = (epoch..epoch + opts.batch_epochs as u64).collect();
        epoch += opts.batch_epochs as u64;
        let trials: Vec<Result<Trial>> = {
            let start = set.embeddings.as_slice();
            let by_ref = &by_ref;
            batch.par_iter().map(|&e| ctx.trial(e, start, by_ref)).collect()
        };
        let batch_start = set.len();
        for trial in trials {
            let trial = trial?;
            let mut pending_accept = None;
            for cause in &trial.rejections {
                ctx.spend(&mut stats, &mut since_last, &set, started)?;
                count(&mut stats, *cause);
            }
            if let Some(pass) = trial.pass {
                ctx.spend(&mut stats, &mut since_last, &set, started)?;
                let batch_rows = &set.embeddings.as_slice()[batch_start * rows.dim()..];
                match kernel::scan_below_fast(&pass.s, batch_rows, rows.dim(), config.tau, ctx.margin) {
                    Scan::Below(_) => pending_accept = Some(pass),
                    Scan::Hit { .. } => {
                        count(&mut stats, RejectCause::VirtualCollision);
                        for k in pass.k + 1..config.max_attempts_per_candidate {
                            ctx.spend(&mut stats, &mut since_last, &set, started)?;
                            let cand = ctx.candidate(trial.epoch, trial.r_index, k)?;
                            match ctx.check(&cand.0, trial.r_index, &by_ref[trial.r_index], set.embeddings.as_slice()) {
                                Err(cause) => count(&mut stats, cause),
                                Ok(gmax) => {
                                    pending_accept = Some(Pass { k, s: cand.0, alpha: cand.1, gallery_max: gmax });
                                    break;
                                }
                            }
                        }
                    }
                }
            }
            if let Some(p) = pending_accept {
                stats.accepted += 1;
                let record = VirtualRecord {
                    index: 0,
                    reference_index: trial.r_index,
                    alpha_used: p.alpha,
                    attempts: since_last.min(u64::from(u32::MAX)) as u32,
                    max_cos_to_gallery: p.gallery_max,
                };
                since_last = 0;
                by_ref[trial.r_index].push(set.len() as u32);
                set.push(&p.s, record)?;
                if set.len() == n_target {
                    stats.finish(started);
                    return Ok((set, stats));
                }
            }
        }
    }
}

fn count(stats: &mut ProvisionStats, cause: RejectCause) {
    match cause {
        RejectCause::GalleryCollision => stats.rejections_by_cause.gallery_collision += 1,
        RejectCause::VirtualCollision => stats.rejections_by_cause.virtual_collision += 1,
    }
}

struct Pass {
    k: u32,
    s: Vec<f32>,
    alpha: f64,
    gallery_max: f64,
}

struct Trial {
    epoch: u64,
    r_index: usize,
    /// Causes of the attempts before `pass.k` (all attempts if no pass).
    rejections: Vec<RejectCause>,
    pass: Option<Pass>,
}

struct Ctx<'a> {
    rows: &'a EmbeddingMatrix,
    pca: &'a PcaModel,
    config: &'a AllocConfig,
    memo: Vec<OnceLock<Option<Neighborhood>>>,
    margin: f64,
}

impl<'a> Ctx<'a> {
    fn new(rows: &'a EmbeddingMatrix, pca: &'a PcaModel, config: &'a AllocConfig) -> Self {
        let memo = (0..rows.count()).map(|_| OnceLock::new()).collect();
        // candidates and virtual rows are rounded unit vectors
        let max_norm = (0..rows.count()).map(|i| rows.row_norm(i)).fold(1.0 + 1e-5, f64::max);
        let margin = kernel::fast_dot_margin(rows.dim(), max_norm * (1.0 + 1e-5));
        Self { rows, pca, config, memo, margin }
    }

    fn spend(&self, stats: &mut ProvisionStats, since_last: &mut u64, set: &VirtualSet, started: Instant) -> Result<()> {
        if stats.attempted >= self.config.max_total_attempts {
            let mut stats = stats.clone();
            stats.finish(started);
            return Err(Error::MaxAttemptsExceeded(Box::new(PartialProvision { set: set.clone(), stats })));
        }
        stats.attempted += 1;
        *since_last += 1;
        Ok(())
    }

    fn neighborhood(&self, r_index: usize) -> Result<&Neighborhood> {
        self.memo[r_index]
            .get_or_init(|| neighborhood(r_index, self.rows, self.config.k_neighbors, self.config.temperature))
            .as_ref()
            .ok_or(Error::DegenerateNeighborhood { index: r_index })
    }

    fn reference(&self, epoch: u64) -> usize {
        substream(self.config.seed, Domain::Reference, epoch).gen_range(0..self.rows.count())
    }

    fn candidate(&self, epoch: u64, r_index: usize, k: u32) -> Result<(Vec<f32>, f64)> {
        let stream = epoch * u64::from(self.config.max_attempts_per_candidate) + u64::from(k);
        let mut rng = substream(self.config.seed, Domain::Attempt, stream);
        let alpha = self.config.alpha.sample(&mut rng);
        let z = perturb_direction(&self.neighborhood(r_index)?.z_star, self.pca, self.config.kappa, &mut rng)?;
        let r = store::to_f64(self.rows.row(r_index));
        let s = make_candidate(&r, &z, alpha)?;
        Ok((store::to_f32(&s), alpha))
    }

    /// Max gallery cosine on acceptance. The neighbours of the reference and
    /// the virtual rows built from it are tried before the full scans; this
    /// changes only how soon a collision is found, not the verdict.
    fn check(&self, s: &[f32], r_index: usize, hot: &[u32], virtuals: &[f32]) -> std::result::Result<f64, RejectCause> {
        let dim = self.rows.dim();
        let tau = self.config.tau;
        if let Some(Some(n)) = self.memo[r_index].get() {
            if n.neighbors.iter().any(|&i| kernel::dot(s, self.rows.row(i)) >= tau) {
                return Err(RejectCause::GalleryCollision);
            }
        }
        let gmax = match kernel::scan_below_fast(s, self.rows.as_slice(), dim, tau, self.margin) {
            Scan::Hit { .. } => return Err(RejectCause::GalleryCollision),
            Scan::Below(m) => m.map_or(f64::NEG_INFINITY, |x| x.0),
        };
        let n_virtual = virtuals.len() / dim;
        for &j in hot {
            let j = j as usize;
            if j < n_virtual && kernel::dot(s, &virtuals[j * dim..(j + 1) * dim]) >= tau {
                return Err(RejectCause::VirtualCollision);
            }
        }
        match kernel::scan_below_fast(s, virtuals, dim, tau, self.margin) {
            Scan::Hit { .. } => Err(RejectCause::VirtualCollision),
            Scan::Below(_) => Ok(gmax),
        }
    }

    fn trial(&self, epoch: u64, virtuals: &[f32], by_ref: &[Vec<u32>]) -> Result<Trial> {
        let r_index = self.reference(epoch);
        let mut rejections = Vec::new();
        for k in 0..self.config.max_attempts_per_candidate {
            let (s, alpha) = self.candidate(epoch, r_index, k)?;
            match self.check(&s, r_index, &by_ref[r_index], virtuals) {
                Err(cause) => rejections.push(cause),
                Ok(gallery_max) => {
                    return Ok(Trial { epoch, r_index, rejections, pass: Some(Pass { k, s, alpha, gallery_max }) })
                }
            }
        }
        Ok(Trial { epoch, r_index, rejections, pass: None })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Flag {
    pub virtual_index: usize,
    pub gallery_index: usize,
    pub cos: f64,
}

/// Virtual identities whose maximum cosine against `delta_gallery` is
/// `>= tau`, each with its maximal offender, in virtual-index order.
pub fn revocation_check(virtual_set: &VirtualSet, delta_gallery: &Gallery, tau: f64) -> Result<Vec<Flag>> {
    let (v, g) = (&virtual_set.embeddings, &delta_gallery.centroids);
    if v.dim() != g.dim() {
        return Err(Error::DimensionMismatch { expected: v.dim(), found: g.dim() });
    }
    let flags: Vec<Option<Flag>> = (0..v.count())
        .into_par_iter()
        .map(|i| {
            kernel::max_dot(v.row(i), g.as_slice(), g.dim())
                .filter(|&(c, _)| c >= tau)
                .map(|(cos, j)| Flag { virtual_index: i, gallery_index: j, cos })
        })
        .collect();
    Ok(flags.into_iter().flatten().collect())
}

/// Every (virtual, gallery) pair with cosine in `[tau_safe, tau)`.
pub fn monitoring_zone_check(
    virtual_set: &VirtualSet,
    delta_gallery: &Gallery,
    tau: f64,
    tau_safe: f64,
) -> Result<Vec<Flag>> {
    if !(tau_safe < tau) {
        return Err(Error::Config(format!("tau_safe = {tau_safe} must be < tau = {tau}")));
    }
    let (v, g) = (&virtual_set.embeddings, &delta_gallery.centroids);
    if v.dim() != g.dim() {
        return Err(Error::DimensionMismatch { expected: v.dim(), found: g.dim() });
    }
    let flags: Vec<Vec<Flag>> = (0..v.count())
        .into_par_iter()
        .map(|i| {
            let mut out = Vec::new();
            kernel::for_each_dot(v.row(i), g.as_slice(), g.dim(), |j, cos| {
                if cos >= tau_safe && cos < tau {
                    out.push(Flag { virtual_index: i, gallery_index: j, cos });
                }
            });
            out
        })
        .collect();
    Ok(flags.into_iter().flatten().collect())
}
