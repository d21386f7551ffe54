//! Non-collision and inter-separability metrics, threshold calibration and
//! pair-list verification protocols.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{kernel, EmbeddingMatrix, Gallery, VirtualSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BipMetrics {
    pub non_collision_pct: f64,
    pub inter_sep_pct: f64,
    pub n_virtual: usize,
    pub n_gallery: usize,
    pub tau: f64,
    /// Virtual rows with some gallery cosine `>= tau`.
    pub gallery_violations: u64,
    /// Unordered virtual pairs with cosine `>= tau`.
    pub pair_violations: u64,
}

impl fmt::Display for BipMetrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "tau               {}", self.tau)?;
        writeln!(f, "gallery rows      {}", self.n_gallery)?;
        writeln!(f, "virtual rows      {}", self.n_virtual)?;
        writeln!(f, "Non-Collision     {:.2}%  ({} violating rows)", self.non_collision_pct, self.gallery_violations)?;
        write!(f, "Inter-Sep         {:.2}%  ({} violating pairs)", self.inter_sep_pct, self.pair_violations)
    }
}

fn pct(pass: u64, total: u64) -> f64 {
    if total == 0 {
        100.0
    } else {
        100.0 * pass as f64 / total as f64
    }
}

fn gallery_violations(v: &EmbeddingMatrix, g: &EmbeddingMatrix, tau: f64) -> Result<u64> {
    if v.dim() != g.dim() {
        return Err(Error::DimensionMismatch { expected: g.dim(), found: v.dim() });
    }
    Ok((0..v.count())
        .into_par_iter()
        .filter(|&j| matches!(kernel::max_dot(v.row(j), g.as_slice(), g.dim()), Some((c, _)) if c >= tau))
        .count() as u64)
}

fn pair_violations(v: &EmbeddingMatrix, tau: f64) -> u64 {
    let dim = v.dim();
    (0..v.count())
        .into_par_iter()
        .map(|j| kernel::count_at_least(v.row(j), &v.as_slice()[(j + 1) * dim..], dim, tau))
        .sum()
}

/// Percentage of virtual rows whose max cosine to the gallery is `< tau`.
/// An empty set scores 100.
pub fn non_collision_rate(virtual_set: &VirtualSet, gallery: &Gallery, tau: f64) -> Result<f64> {
    let n = virtual_set.len() as u64;
    let bad = gallery_violations(&virtual_set.embeddings, &gallery.centroids, tau)?;
    Ok(pct(n - bad, n))
}

/// Percentage of the N(N−1)/2 unordered virtual pairs with cosine `< tau`.
/// Fewer than two rows score 100.
pub fn inter_sep_rate(virtual_set: &VirtualSet, tau: f64) -> f64 {
    inter_sep_rate_rows(&virtual_set.embeddings, tau)
}

pub fn inter_sep_rate_rows(rows: &EmbeddingMatrix, tau: f64) -> f64 {
    let n = rows.count() as u64;
    let total = n * n.saturating_sub(1) / 2;
    pct(total - pair_violations(rows, tau), total)
}

pub fn bip_metrics(virtual_set: &VirtualSet, gallery: &Gallery, tau: f64) -> Result<BipMetrics> {
    let v = &virtual_set.embeddings;
    let n = v.count() as u64;
    let gv = gallery_violations(v, &gallery.centroids, tau)?;
    let pv = pair_violations(v, tau);
    let total = n * n.saturating_sub(1) / 2;
    Ok(BipMetrics {
        non_collision_pct: pct(n - gv, n),
        inter_sep_pct: pct(total - pv, total),
        n_virtual: v.count(),
        n_gallery: gallery.len(),
        tau,
        gallery_violations: gv,
        pair_violations: pv,
    })
}

/// Largest θ such that at least `target_tar` of the scores are `>= θ`.
/// This is an order statistic of the scores; no interpolation.
pub fn calibrate_threshold(genuine_scores: &[f64], target_tar: f64) -> Result<f64> {
    if genuine_scores.is_empty() {
        return Err(Error::EmptyScores);
    }
    if !(target_tar > 0.0 && target_tar <= 1.0) {
        return Err(Error::domain(format!("target TAR = {target_tar} outside (0, 1]")));
    }
    if genuine_scores.iter().any(|s| s.is_nan()) {
        return Err(Error::domain("scores contain NaN"));
    }
    let n = genuine_scores.len();
    // guard against 0.95 * 100 = 95.00000000000001
    let need = ((target_tar * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    let mut s = genuine_scores.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s[n - need])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pair {
    pub a: usize,
    pub b: usize,
    pub genuine: bool,
    pub fold: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairList {
    pub pairs: Vec<Pair>,
}

impl PairList {
    pub fn new(pairs: Vec<Pair>) -> Self {
        Self { pairs }
    }

    /// True when every pair carries a fold.
    pub fn has_folds(&self) -> bool {
        !self.pairs.is_empty() && self.pairs.iter().all(|p| p.fold.is_some())
    }

    pub fn folds(&self) -> Vec<u32> {
        self.pairs.iter().filter_map(|p| p.fold).collect::<BTreeSet<_>>().into_iter().collect()
    }

    /// CSV with columns `a_index, b_index, label (G|I), fold`. A header row
    /// is optional; the fold column may be empty or absent.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_path(path)?;
        let mut pairs = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if line == 0 && rec.get(0).is_some_and(|f| f.parse::<usize>().is_err()) {
                continue;
            }
            let field = |i: usize| rec.get(i).unwrap_or("");
            let err = |what: &str| Error::PairList(format!("line {}: {what}", line + 1));
            let a = field(0).parse().map_err(|_| err("bad a_index"))?;
            let b = field(1).parse().map_err(|_| err("bad b_index"))?;
            let genuine = match field(2) {
                "G" | "g" => true,
                "I" | "i" => false,
                other => return Err(err(&format!("label {other:?} is not G or I"))),
            };
            let fold = match field(3) {
                "" => None,
                f => Some(f.parse().map_err(|_| err("bad fold"))?),
            };
            pairs.push(Pair { a, b, genuine, fold });
        }
        Ok(Self { pairs })
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["a_index", "b_index", "label", "fold"])?;
        for p in &self.pairs {
            w.write_record([
                p.a.to_string(),
                p.b.to_string(),
                if p.genuine { "G" } else { "I" }.to_string(),
                p.fold.map(|f| f.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Protocol {
    #[serde(rename = "R-R")]
    RealReal,
    #[serde(rename = "V-V")]
    VirtualVirtual,
    #[serde(rename = "R-V")]
    RealVirtual,
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "R-R" | "RR" => Ok(Protocol::RealReal),
            "V-V" | "VV" => Ok(Protocol::VirtualVirtual),
            "R-V" | "RV" => Ok(Protocol::RealVirtual),
            _ => Err(Error::PairList(format!("unknown protocol {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdMode {
    Fixed(f64),
    /// Per fold, calibrate on the genuine scores of the other folds.
    Folded { target_tar: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: u32,
    pub threshold: f64,
    pub accuracy: Option<f64>,
    pub far: Option<f64>,
    pub n_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub protocol: Protocol,
    /// Absent for R-V, whose pairs are all non-mated.
    pub accuracy: Option<f64>,
    pub far: Option<f64>,
    pub threshold_used: f64,
    pub per_fold: Option<Vec<FoldReport>>,
    pub n_pairs: usize,
    pub n_genuine: usize,
    pub n_impostor: usize,
}

#[derive(Default, Clone, Copy)]
struct Confusion {
    correct: usize,
    total: usize,
    false_accepts: usize,
    impostors: usize,
}

impl Confusion {
    fn add(&mut self, score: f64, genuine: bool, theta: f64) {
        let accept = score >= theta;
        self.total += 1;
        if accept == genuine {
            self.correct += 1;
        }
        if !genuine {
            self.impostors += 1;
            if accept {
                self.false_accepts += 1;
            }
        }
    }

    fn accuracy(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }

    fn far(&self) -> Option<f64> {
        (self.impostors > 0).then(|| self.false_accepts as f64 / self.impostors as f64)
    }
}

/// Cosine of every pair, `a` rows from `embeddings_a`, `b` rows from
/// `embeddings_b`.
pub fn pair_scores(embeddings_a: &EmbeddingMatrix, embeddings_b: &EmbeddingMatrix, pairs: &PairList) -> Result<Vec<f64>> {
    if embeddings_a.dim() != embeddings_b.dim() {
        return Err(Error::DimensionMismatch { expected: embeddings_a.dim(), found: embeddings_b.dim() });
    }
    pairs
        .pairs
        .iter()
        .map(|p| {
            if p.a >= embeddings_a.count() {
                return Err(Error::IndexOutOfRange { index: p.a, len: embeddings_a.count() });
            }
            if p.b >= embeddings_b.count() {
                return Err(Error::IndexOutOfRange { index: p.b, len: embeddings_b.count() });
            }
            Ok(kernel::dot(embeddings_a.row(p.a), embeddings_b.row(p.b)))
        })
        .collect()
}

pub fn evaluate_pairs(
    embeddings_a: &EmbeddingMatrix,
    embeddings_b: &EmbeddingMatrix,
    pairs: &PairList,
    mode: ThresholdMode,
    protocol: Protocol,
) -> Result<ProtocolReport> {
    let scores = pair_scores(embeddings_a, embeddings_b, pairs)?;
    let n_genuine = pairs.pairs.iter().filter(|p| p.genuine).count();
    let n_pairs = pairs.pairs.len();
    let (overall, threshold_used, per_fold) = match mode {
        ThresholdMode::Fixed(theta) => {
            let mut c = Confusion::default();
            for (p, &s) in pairs.pairs.iter().zip(&scores) {
                c.add(s, p.genuine, theta);
            }
            (c, theta, None)
        }
        ThresholdMode::Folded { target_tar } => {
            if !pairs.has_folds() {
                return Err(Error::MissingFolds);
            }
            let mut overall = Confusion::default();
            let mut reports = Vec::new();
            for fold in pairs.folds() {
                let train: Vec<f64> = pairs
                    .pairs
                    .iter()
                    .zip(&scores)
                    .filter(|(p, _)| p.genuine && p.fold != Some(fold))
                    .map(|(_, &s)| s)
                    .collect();
                let theta = calibrate_threshold(&train, target_tar)?;
                let mut c = Confusion::default();
                for (p, &s) in pairs.pairs.iter().zip(&scores).filter(|(p, _)| p.fold == Some(fold)) {
                    c.add(s, p.genuine, theta);
                    overall.add(s, p.genuine, theta);
                }
                reports.push(FoldReport { fold, threshold: theta, accuracy: c.accuracy(), far: c.far(), n_pairs: c.total });
            }
            let mean_theta = reports.iter().map(|r| r.threshold).sum::<f64>() / reports.len() as f64;
            (overall, mean_theta, Some(reports))
        }
    };
    let accuracy = if protocol == Protocol::RealVirtual { None } else { overall.accuracy() };
    Ok(ProtocolReport {
        protocol,
        accuracy,
        far: overall.far(),
        threshold_used,
        per_fold,
        n_pairs,
        n_genuine,
        n_impostor: n_pairs - n_genuine,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocator::AllocConfig;

    fn vset(dim: usize, data: &[f32]) -> VirtualSet {
        let mut v = VirtualSet::new(dim, AllocConfig::default());
        v.embeddings = EmbeddingMatrix::new(dim, data.to_vec()).unwrap();
        v
    }

    #[test]
    fn vacuous_sets() {
        let g = Gallery::unlabeled(EmbeddingMatrix::new(2, vec![1.0, 0.0]).unwrap(), "t");
        let empty = vset(2, &[]);
        assert_eq!(non_collision_rate(&empty, &g, 0.391).unwrap(), 100.0);
        assert_eq!(inter_sep_rate(&empty, 0.391), 100.0);
        assert_eq!(inter_sep_rate(&vset(2, &[0.0, 1.0]), 0.391), 100.0);
    }

    #[test]
    fn duplicated_pair_is_one_violation() {
        let v = vset(2, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        let r = inter_sep_rate(&v, 0.391);
        assert!((r - 200.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn calibration_order_statistics() {
        let s: Vec<f64> = (1..=100).map(|i| i as f64 / 100.0).collect();
        // 95 scores (0.06..=1.00) are >= 0.06; 96 would need 0.05
        assert_eq!(calibrate_threshold(&s, 0.95).unwrap(), 0.06);
        assert_eq!(calibrate_threshold(&s, 1.0).unwrap(), 0.01);
        assert_eq!(calibrate_threshold(&[0.9; 100], 0.95).unwrap(), 0.9);
        assert!(matches!(calibrate_threshold(&[], 0.95), Err(Error::EmptyScores)));
    }

    #[test]
    fn protocol_names() {
        assert_eq!(serde_json::to_string(&Protocol::RealVirtual).unwrap(), "\"R-V\"");
        assert_eq!("r-v".parse::<Protocol>().unwrap(), Protocol::RealVirtual);
    }
}
