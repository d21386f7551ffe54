//! Spherical-cap volumes, Gilbert–Varshamov capacity references, the
//! displaced-candidate cosine and the minimum separating perturbation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{self, inc_beta_xy, ln_inc_beta_xy, ln_to_log2};

/// Verification thresholds of the six IJB-B operating points.
pub const IJBB_OPERATING_TAUS: [f64; 6] = [0.319, 0.330, 0.341, 0.360, 0.391, 0.448];
/// Primary operating threshold (FAR ≈ 2e-5).
pub const PRIMARY_TAU: f64 = 0.391;

/// Closest `tau^2 - p^2` may get before `alpha_star` refuses to answer.
pub const ALPHA_STAR_MIN_GAP: f64 = 1e-12;

/// Normalized volume of a spherical cap, kept in linear and log form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapVolume {
    pub linear: f64,
    pub log_natural: f64,
    pub log2: f64,
}

/// Capacity figures at one `(tau, dim)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityReport {
    pub tau: f64,
    pub dim: usize,
    pub mu: CapVolume,
    /// `1 / mu`; infinite when `mu` underflows (use `ln_gv`/`log2_gv`).
    pub gv_bound: f64,
    pub ln_gv: f64,
    pub log2_gv: f64,
    pub alpha_star_orthogonal: f64,
    pub gaussian_approx: f64,
    /// The GV figure is an ambient-sphere packing reference, not a bound on
    /// the face manifold itself.
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferReport {
    pub tau: f64,
    pub delta: f64,
    pub tau_safe: f64,
    pub capacity_at_tau: CapacityReport,
    pub capacity_at_tau_safe: CapacityReport,
    pub alpha_star_derivative_at_tau: f64,
}

impl BufferReport {
    /// How many times `n` identities fit under the GV reference at `tau_safe`.
    pub fn headroom_over(&self, n: f64) -> f64 {
        self.capacity_at_tau_safe.gv_bound / n
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::domain(format!("tau = {tau} outside (0, 1)")));
    }
    Ok(())
}

fn check_dim(dim: usize) -> Result<()> {
    if dim < 2 {
        return Err(Error::domain(format!("dim = {dim} < 2")));
    }
    Ok(())
}

/// μ(τ, d) = ½ I_{1−τ²}((d−1)/2, ½): the fraction of 𝕊^{d−1} within
/// cosine `tau` of a fixed point.
pub fn cap_volume(tau: f64, dim: usize) -> Result<CapVolume> {
    check_tau(tau)?;
    check_dim(dim)?;
    let a = (dim as f64 - 1.0) / 2.0;
    let x = (1.0 - tau) * (1.0 + tau);
    let y = tau * tau;
    let linear = 0.5 * inc_beta_xy(x, y, a, 0.5);
    let log_natural = ln_inc_beta_xy(x, y, a, 0.5) - std::f64::consts::LN_2;
    Ok(CapVolume { linear, log_natural, log2: ln_to_log2(log_natural) })
}

/// Q(τ√d), the CLT approximation of μ(τ, d). Overestimates in the far tail.
pub fn gaussian_cap_approx(tau: f64, dim: usize) -> Result<f64> {
    if !(0.0..1.0).contains(&tau) {
        return Err(Error::domain(format!("tau = {tau} outside [0, 1)")));
    }
    check_dim(dim)?;
    Ok(special::normal_sf(tau * (dim as f64).sqrt()))
}

pub fn gv_bound(tau: f64, dim: usize) -> Result<CapacityReport> {
    let mu = cap_volume(tau, dim)?;
    let ln_gv = -mu.log_natural;
    Ok(CapacityReport {
        tau,
        dim,
        mu,
        gv_bound: ln_gv.exp(),
        ln_gv,
        log2_gv: ln_to_log2(ln_gv),
        alpha_star_orthogonal: (1.0 - tau * tau).sqrt() / tau,
        gaussian_approx: gaussian_cap_approx(tau, dim)?,
        note: "ambient-sphere capacity reference (GV lower bound on S^{d-1}), not a manifold bound".into(),
    })
}

pub fn capacity_table(taus: &[f64], dim: usize) -> Result<Vec<CapacityReport>> {
    taus.iter().map(|&t| gv_bound(t, dim)).collect()
}

/// cos(normalize(r + αz), r) for unit r, z with r·z = p.
pub fn displaced_cosine(p: f64, alpha: f64) -> Result<f64> {
    if !(p.abs() < 1.0) {
        return Err(Error::domain(format!("|p| = {} must be < 1", p.abs())));
    }
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::domain(format!("alpha = {alpha} must be finite and >= 0")));
    }
    let den = 1.0 + 2.0 * alpha * p + alpha * alpha;
    assert!(den > 0.0, "1 + 2αp + α² > 0 whenever |p| < 1");
    Ok((1.0 + alpha * p) / den.sqrt())
}

/// The unique α > 0 with `displaced_cosine(p, α) == tau`, from the positive
/// root of α²(τ²−p²) + 2αp(τ²−1) + (τ²−1) = 0.
pub fn alpha_star(p: f64, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    if !(p.abs() < tau) {
        return Err(Error::domain(format!("|p| = {} must be < tau = {tau}", p.abs())));
    }
    let gap = tau * tau - p * p;
    if gap < ALPHA_STAR_MIN_GAP {
        return Err(Error::domain(format!("tau^2 - p^2 = {gap:e} too close to zero")));
    }
    let st = (1.0 - tau * tau).sqrt();
    let sp = (1.0 - p * p).sqrt();
    Ok(st * (p * st + tau * sp) / gap)
}

/// d α*(0, τ) / dτ = −1 / (τ² √(1−τ²)).
pub fn alpha_star_derivative_wrt_tau(tau: f64) -> Result<f64> {
    check_tau(tau)?;
    Ok(-1.0 / (tau * tau * (1.0 - tau * tau).sqrt()))
}

/// Capacity and perturbation cost of provisioning at `tau - delta` instead
/// of `tau`.
pub fn safety_buffer_analysis(tau: f64, delta: f64, dim: usize) -> Result<BufferReport> {
    check_tau(tau)?;
    if !(delta > 0.0 && delta < tau) {
        return Err(Error::domain(format!("delta = {delta} outside (0, tau)")));
    }
    let tau_safe = tau - delta;
    Ok(BufferReport {
        tau,
        delta,
        tau_safe,
        capacity_at_tau: gv_bound(tau, dim)?,
        capacity_at_tau_safe: gv_bound(tau_safe, dim)?,
        alpha_star_derivative_at_tau: alpha_star_derivative_wrt_tau(tau)?,
    })
}

/// z·c − (r·z)(r·c): the α → 0 slope of cos(normalize(r + αz), c). Negative
/// means moving along `z` genuinely increases distance to `c` after
/// renormalization.
pub fn repulsion_derivative_diagnostic(r: &[f64], z: &[f64], c: &[f64]) -> f64 {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    dot(z, c) - dot(r, z) * dot(r, c)
}
