#![allow(dead_code)]

use bip_core::{sample_vmf_mixture, AllocConfig, EmbeddingMatrix, Gallery, SynthGalleryConfig, VirtualSet};

/// Plain double-precision dot product, written independently of the crate
/// kernels.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] as f64 * b[i] as f64;
    }
    s
}

pub fn cos(a: &[f32], b: &[f32]) -> f64 {
    dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())
}

/// Brute-force count of (gallery, pair) constraint violations.
pub fn brute_violations(gallery: &EmbeddingMatrix, virtuals: &EmbeddingMatrix, tau: f64) -> (usize, usize) {
    let mut g_bad = 0;
    for v in virtuals.rows() {
        if gallery.rows().any(|c| dot(v, c) >= tau) {
            g_bad += 1;
        }
    }
    let mut p_bad = 0;
    let n = virtuals.count();
    for i in 0..n {
        for j in i + 1..n {
            if dot(virtuals.row(i), virtuals.row(j)) >= tau {
                p_bad += 1;
            }
        }
    }
    (g_bad, p_bad)
}

pub fn vmf_gallery(n_clusters: usize, per_cluster: usize, dim: usize, concentration: f64, seed: u64) -> Gallery {
    sample_vmf_mixture(&SynthGalleryConfig { dim, n_clusters, per_cluster, concentration, seed }).unwrap()
}

pub fn unit_rows(dim: usize, rows: &[Vec<f64>]) -> EmbeddingMatrix {
    let normalized: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            r.iter().map(|x| x / n).collect()
        })
        .collect();
    EmbeddingMatrix::from_f64_rows(dim, &normalized).unwrap()
}

pub fn virtual_set(rows: EmbeddingMatrix) -> VirtualSet {
    let mut v = VirtualSet::new(rows.dim(), AllocConfig::default());
    v.embeddings = rows;
    v
}

pub fn bits(m: &EmbeddingMatrix) -> Vec<u32> {
    m.as_slice().iter().map(|x| x.to_bits()).collect()
}
