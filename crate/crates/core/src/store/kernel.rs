//! Exact dot-product scans over row-major `f32` rows.
//!
//! Every dot product is accumulated in `f64`, term by term in index order,
//! so a scan returns the same bits as the naive loop
//! `acc += f64::from(a[i]) * f64::from(b[i])`. Rows are processed four at a
//! time to expose independent accumulation chains; each row still sees the
//! same sequence of additions.

use rayon::prelude::*;

/// Rows per parallel work unit in the `par_` scans.
pub const PAR_CHUNK_ROWS: usize = 2048;

#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        acc += f64::from(*x) * f64::from(*y);
    }
    acc
}

#[inline]
fn dot4(query: &[f64], block: &[f32], dim: usize) -> [f64; 4] {
    let (r0, rest) = block.split_at(dim);
    let (r1, rest) = rest.split_at(dim);
    let (r2, r3) = rest.split_at(dim);
    let (r0, r1, r2, r3) = (&r0[..dim], &r1[..dim], &r2[..dim], &r3[..dim]);
    let mut acc = [0.0f64; 4];
    for i in 0..dim {
        let q = query[i];
        acc[0] += q * f64::from(r0[i]);
        acc[1] += q * f64::from(r1[i]);
        acc[2] += q * f64::from(r2[i]);
        acc[3] += q * f64::from(r3[i]);
    }
    acc
}

#[inline]
fn dot_widened(query: &[f64], row: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (q, r) in query.iter().zip(row) {
        acc += q * f64::from(*r);
    }
    acc
}

/// Calls `f(row_index, dot)` for every row of `data`, in row order.
#[inline]
pub fn for_each_dot(query: &[f32], data: &[f32], dim: usize, mut f: impl FnMut(usize, f64)) {
    debug_assert_eq!(query.len(), dim);
    debug_assert_eq!(data.len() % dim, 0);
    let q: Vec<f64> = query.iter().map(|&x| f64::from(x)).collect();
    let mut blocks = data.chunks_exact(4 * dim);
    let mut row = 0;
    for block in &mut blocks {
        let d = dot4(&q, block, dim);
        f(row, d[0]);
        f(row + 1, d[1]);
        f(row + 2, d[2]);
        f(row + 3, d[3]);
        row += 4;
    }
    for r in blocks.remainder().chunks_exact(dim) {
        f(row, dot_widened(&q, r));
        row += 1;
    }
}

/// Maximum dot product and its first attaining row; `None` for no rows.
pub fn max_dot(query: &[f32], data: &[f32], dim: usize) -> Option<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for_each_dot(query, data, dim, |i, d| match best {
        Some((b, _)) if d <= b => {}
        _ => best = Some((d, i)),
    });
    best
}

/// Number of rows whose dot product with `query` is `>= threshold`.
pub fn count_at_least(query: &[f32], data: &[f32], dim: usize, threshold: f64) -> u64 {
    let mut n = 0u64;
    for_each_dot(query, data, dim, |_, d| {
        if d >= threshold {
            n += 1;
        }
    });
    n
}

/// Parallel [`max_dot`]; chunk maxima are reduced in row order with the
/// first-index tie rule, so the result is independent of the worker count.
pub fn par_max_dot(query: &[f32], data: &[f32], dim: usize) -> Option<(f64, usize)> {
    if data.len() <= PAR_CHUNK_ROWS * dim {
        return max_dot(query, data, dim);
    }
    let partial: Vec<Option<(f64, usize)>> = data
        .par_chunks(PAR_CHUNK_ROWS * dim)
        .enumerate()
        .map(|(c, chunk)| max_dot(query, chunk, dim).map(|(d, i)| (d, c * PAR_CHUNK_ROWS + i)))
        .collect();
    partial.into_iter().flatten().fold(None, |best, (d, i)| match best {
        Some((b, _)) if d <= b => best,
        _ => Some((d, i)),
    })
}

/// Outcome of [`scan_below`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scan {
    /// No row reached the threshold; carries the maximum (if any rows).
    Below(Option<(f64, usize)>),
    /// First row (in index order) whose dot product is `>= threshold`.
    Hit { index: usize, dot: f64 },
}

/// Scans rows in order and stops at the first dot product `>= threshold`.
pub fn scan_below(query: &[f32], data: &[f32], dim: usize, threshold: f64) -> Scan {
    debug_assert_eq!(query.len(), dim);
    let q: Vec<f64> = query.iter().map(|&x| f64::from(x)).collect();
    let mut best: Option<(f64, usize)> = None;
    let mut blocks = data.chunks_exact(4 * dim);
    let mut row = 0;
    for block in &mut blocks {
        let d = dot4(&q, block, dim);
        for (j, &v) in d.iter().enumerate() {
            if v >= threshold {
                return Scan::Hit { index: row + j, dot: v };
            }
            match best {
                Some((b, _)) if v <= b => {}
                _ => best = Some((v, row + j)),
            }
        }
        row += 4;
    }
    for r in blocks.remainder().chunks_exact(dim) {
        let v = dot_widened(&q, r);
        if v >= threshold {
            return Scan::Hit { index: row, dot: v };
        }
        match best {
            Some((b, _)) if v <= b => {}
            _ => best = Some((v, row)),
        }
        row += 1;
    }
    Scan::Below(best)
}

/// Single-precision dot with eight independent lane sums. Only used as a
/// prefilter; see [`fast_dot_margin`].
#[inline]
pub fn dot_f32_lanes(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for j in 0..8 {
            acc[j] += x[j] * y[j];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// Bound on `|dot_f32_lanes(a, b) - dot(a, b)|` when `||a|| * ||b|| <= norm_prod`.
///
/// Every term passes through at most `dim/8 + 12` roundings, so the
/// standard `gamma_n * sum |a_i b_i|` bound with `n = dim + 16` and unit
/// roundoff doubled is comfortably safe; the constant term covers the
/// double-precision reference itself.
pub fn fast_dot_margin(dim: usize, norm_prod: f64) -> f64 {
    (dim as f64 + 16.0) * f64::from(f32::EPSILON) * norm_prod + 1e-12
}

/// [`scan_below`] with a single-precision prefilter. Rows whose fast dot
/// falls within `margin` of a decision are recomputed exactly, so the
/// result is identical to [`scan_below`] whenever `margin` bounds the
/// prefilter error (see [`fast_dot_margin`]).
pub fn scan_below_fast(query: &[f32], data: &[f32], dim: usize, threshold: f64, margin: f64) -> Scan {
    debug_assert_eq!(query.len(), dim);
    let mut fast_max = f64::NEG_INFINITY;
    // rows that may still hold the exact maximum
    let mut contenders: Vec<(usize, f64)> = Vec::new();
    for (i, row) in data.chunks_exact(dim).enumerate() {
        let f = f64::from(dot_f32_lanes(query, row));
        if f >= threshold - margin {
            let exact = dot(query, row);
            if exact >= threshold {
                return Scan::Hit { index: i, dot: exact };
            }
        }
        if f >= fast_max - 2.0 * margin {
            if f > fast_max {
                fast_max = f;
                if contenders.len() > 32 {
                    contenders.retain(|&(_, g)| g >= fast_max - 2.0 * margin);
                }
            }
            contenders.push((i, f));
        }
    }
    let mut best: Option<(f64, usize)> = None;
    for (i, f) in contenders {
        if f < fast_max - 2.0 * margin {
            continue;
        }
        let exact = dot(query, &data[i * dim..(i + 1) * dim]);
        match best {
            Some((b, _)) if exact <= b => {}
            _ => best = Some((exact, i)),
        }
    }
    Scan::Below(best)
}
