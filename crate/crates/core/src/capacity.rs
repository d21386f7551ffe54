//! Collision counting and Poisson estimates of effective capacity.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocator::AlphaSpec;
use crate::error::{Error, Result};
use crate::special::{self, ln_gamma};
use crate::store::{kernel, Gallery, VirtualSet};

/// Exact number of (virtual, test) pairs with cosine `>= tau`.
pub fn count_collisions(virtual_set: &VirtualSet, test_gallery: &Gallery, tau: f64) -> Result<u64> {
    let (v, g) = (&virtual_set.embeddings, &test_gallery.centroids);
    if v.dim() != g.dim() {
        return Err(Error::DimensionMismatch { expected: v.dim(), found: g.dim() });
    }
    Ok((0..v.count())
        .into_par_iter()
        .map(|i| kernel::count_at_least(v.row(i), g.as_slice(), g.dim(), tau))
        .sum())
}

/// N·L / C.
pub fn poisson_mle(n: f64, l: f64, c: u64) -> Result<f64> {
    if c == 0 {
        return Err(Error::ZeroCollisions);
    }
    Ok(n * l / c as f64)
}

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::domain(format!("level = {level} outside (0, 1)")));
    }
    Ok(())
}

/// Half a chi-squared quantile with `2k` degrees of freedom, i.e. the
/// gamma(k) quantile.
pub fn half_chi2_quantile(k: f64, p: f64) -> Result<f64> {
    special::inverse_regularized_lower_gamma(k, p)
}

/// Chi-squared quantile with `nu` degrees of freedom.
pub fn chi2_quantile(nu: f64, p: f64) -> Result<f64> {
    Ok(2.0 * special::inverse_regularized_lower_gamma(nu / 2.0, p)?)
}

/// Exact (Garwood) interval on A_eff = NL/λ. The upper limit is infinite
/// when `c == 0`.
pub fn exact_poisson_ci(n: f64, l: f64, c: u64, level: f64) -> Result<(f64, f64)> {
    check_level(level)?;
    let a = 1.0 - level;
    let nl = n * l;
    let lam_hi = half_chi2_quantile(c as f64 + 1.0, 1.0 - a / 2.0)?;
    let low = nl / lam_hi;
    let high = if c == 0 { f64::INFINITY } else { nl / half_chi2_quantile(c as f64, a / 2.0)? };
    Ok((low, high))
}

/// One-sided bound NL / ln(1/(1 − confidence)) for zero observed collisions.
pub fn zero_collision_bound(n: f64, l: f64, confidence: f64) -> Result<f64> {
    check_level(confidence)?;
    Ok(n * l / -(-confidence).ln_1p())
}

/// λ = N·L·μ.
pub fn expected_collisions(n: f64, l: f64, mu: f64) -> f64 {
    n * l * mu
}

/// e^{−λ} λ^c / c!, evaluated in the log domain.
pub fn poisson_pmf(lambda: f64, c: u64) -> Result<f64> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::domain(format!("lambda = {lambda} must be finite and >= 0")));
    }
    if lambda == 0.0 {
        return Ok(if c == 0 { 1.0 } else { 0.0 });
    }
    let c = c as f64;
    Ok((c * lambda.ln() - lambda - ln_gamma(c + 1.0)).exp())
}

/// 1 − (M + v)/A_GV under the disjoint-cap, uniform-density approximation.
pub fn acceptance_probability_model(m: f64, v_current: f64, gv_bound: f64) -> Result<f64> {
    let occupied = m + v_current;
    if occupied >= gv_bound {
        return Err(Error::CapacityExceeded { occupied, capacity: gv_bound });
    }
    Ok(1.0 - occupied / gv_bound)
}

pub(crate) mod inf_string {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("expected number or \"inf\", got {t:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionStats {
    pub n_virtual: u64,
    pub n_real_test: u64,
    pub collisions: u64,
    pub tau: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mle: Option<f64>,
    pub ci_low: f64,
    #[serde(with = "inf_string")]
    pub ci_high: f64,
    pub ci_level: f64,
    /// One-sided bound, present only when no collisions were seen.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub zero_collision_lower: Option<f64>,
}

impl CollisionStats {
    pub fn from_counts(n_virtual: u64, n_real_test: u64, collisions: u64, tau: f64, ci_level: f64) -> Result<Self> {
        let (n, l) = (n_virtual as f64, n_real_test as f64);
        let (ci_low, ci_high) = exact_poisson_ci(n, l, collisions, ci_level)?;
        let (mle, zero_collision_lower) = if collisions == 0 {
            (None, Some(zero_collision_bound(n, l, ci_level)?))
        } else {
            (Some(poisson_mle(n, l, collisions)?), None)
        };
        Ok(Self { n_virtual, n_real_test, collisions, tau, mle, ci_low, ci_high, ci_level, zero_collision_lower })
    }

    pub fn measure(virtual_set: &VirtualSet, test_gallery: &Gallery, tau: f64, ci_level: f64) -> Result<Self> {
        let c = count_collisions(virtual_set, test_gallery, tau)?;
        Self::from_counts(virtual_set.len() as u64, test_gallery.len() as u64, c, tau, ci_level)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenWorldCurve {
    pub fractions: Vec<f64>,
    pub lengths: Vec<usize>,
    pub collisions: Vec<u64>,
    pub rates: Vec<f64>,
    pub n_virtual: usize,
    pub alpha: AlphaSpec,
    pub tau: f64,
}

impl OpenWorldCurve {
    /// Columns: fraction, l_f, collisions, rate.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["fraction", "l_f", "collisions", "rate"])?;
        for i in 0..self.fractions.len() {
            w.write_record([
                self.fractions[i].to_string(),
                self.lengths[i].to_string(),
                self.collisions[i].to_string(),
                format!("{:e}", self.rates[i]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Prefix length used for fraction `f` of `len` rows.
pub fn prefix_len(f: f64, len: usize) -> usize {
    ((f * len as f64) + 1e-9).floor() as usize
}

/// Collision rate of all of 𝒱 against growing prefixes of `heldout`.
pub fn open_world_stress(
    virtual_set: &VirtualSet,
    heldout: &Gallery,
    tau: f64,
    fractions: &[f64],
) -> Result<OpenWorldCurve> {
    let (v, g) = (&virtual_set.embeddings, &heldout.centroids);
    if v.dim() != g.dim() {
        return Err(Error::DimensionMismatch { expected: v.dim(), found: g.dim() });
    }
    if fractions.is_empty() {
        return Err(Error::domain("no fractions given"));
    }
    if fractions.iter().any(|&f| !(f > 0.0 && f <= 1.0)) || fractions.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::domain("fractions must be strictly increasing within (0, 1]"));
    }
    let lengths: Vec<usize> = fractions.iter().map(|&f| prefix_len(f, g.count())).collect();
    if lengths[0] == 0 || v.is_empty() {
        return Err(Error::domain("smallest prefix or virtual set is empty"));
    }
    let lmax = *lengths.last().unwrap();
    let prefix = &g.as_slice()[..lmax * g.dim()];
    // per virtual row, the number of hits below each prefix length
    let counts = (0..v.count())
        .into_par_iter()
        .map(|i| {
            let mut per = vec![0u64; lengths.len()];
            kernel::for_each_dot(v.row(i), prefix, g.dim(), |j, d| {
                if d >= tau {
                    for (c, &lf) in per.iter_mut().zip(&lengths) {
                        if j < lf {
                            *c += 1;
                        }
                    }
                }
            });
            per
        })
        .reduce(
            || vec![0u64; lengths.len()],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    let n = v.count();
    let rates = counts.iter().zip(&lengths).map(|(&c, &lf)| c as f64 / (n as f64 * lf as f64)).collect();
    Ok(OpenWorldCurve {
        fractions: fractions.to_vec(),
        lengths,
        collisions: counts,
        rates,
        n_virtual: n,
        alpha: virtual_set.config_snapshot.alpha,
        tau,
    })
}
