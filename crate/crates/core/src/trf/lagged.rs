//! Lagged products without materialising the design matrix.
//!
//! Row `(f, a)` of the lagged design at sample `t` is `x_f[t - a]`, zero
//! before the start of the series. All sums run over sample intervals so
//! that cross-validation folds and guard bands can be expressed directly.
//!
//! Stimulus features are mostly event impulses, so every kernel walks the
//! nonzero samples of one operand. Gram blocks use the Toeplitz structure:
//! for a fixed lag difference `d = a - b` the window sum over `[lo, hi)`
//! changes by one term in and one term out as `a` grows.

use std::ops::Range;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;

/// A feature series with its nonzero sample indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSeries {
    values: Vec<f64>,
    nonzero: Vec<usize>,
}

impl SparseSeries {
    pub fn new(values: Vec<f64>) -> Self {
        let nonzero = values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, _)| i)
            .collect();
        Self { values, nonzero }
    }

    pub fn from_view(values: ArrayView1<'_, f64>) -> Self {
        Self::new(values.to_vec())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn nnz(&self) -> usize {
        self.nonzero.len()
    }

    /// Nonzero indices in `[lo, hi)`.
    fn nonzero_in(&self, lo: usize, hi: usize) -> &[usize] {
        let start = self.nonzero.partition_point(|&u| u < lo);
        let end = self.nonzero.partition_point(|&u| u < hi);
        &self.nonzero[start..end]
    }

    #[inline]
    fn at(&self, u: i64) -> f64 {
        if u < 0 {
            0.0
        } else {
            self.values.get(u as usize).copied().unwrap_or(0.0)
        }
    }
}

pub fn sparse_rows(features: ArrayView2<'_, f64>) -> Vec<SparseSeries> {
    features
        .rows()
        .into_iter()
        .map(SparseSeries::from_view)
        .collect()
}

/// Total number of samples covered by `intervals`.
pub fn interval_len(intervals: &[Range<usize>]) -> usize {
    intervals.iter().map(|r| r.len()).sum()
}

/// `G[a][b] = Σ_{t ∈ intervals} x[t - a] · y[t - b]` for `a < la`, `b < lb`.
pub fn gram_block(
    x: &SparseSeries,
    la: usize,
    y: &SparseSeries,
    lb: usize,
    intervals: &[Range<usize>],
) -> Array2<f64> {
    if x.nnz() > y.nnz() {
        return gram_block(y, lb, x, la, intervals)
            .reversed_axes()
            .as_standard_layout()
            .into_owned();
    }
    let mut out = Array2::zeros((la, lb));
    for r in intervals {
        if r.is_empty() {
            continue;
        }
        gram_block_interval(x, la, y, lb, r.start, r.end, &mut out);
    }
    out
}

fn gram_block_interval(
    x: &SparseSeries,
    la: usize,
    y: &SparseSeries,
    lb: usize,
    lo: usize,
    hi: usize,
    out: &mut Array2<f64>,
) {
    let n = y.len() as i64;
    let lb_i = lb as i64;
    let la_i = la as i64;
    // h[d + lb - 1] = Σ_{u ∈ [lo, hi)} x[u] y[u + d] for d ∈ [-(lb-1), la-1].
    let n_d = la + lb - 1;
    let mut h = vec![0.0; n_d];
    let yv = y.values();
    for &u in x.nonzero_in(lo, hi) {
        let xu = x.values[u];
        let ui = u as i64;
        let d_lo = (-(lb_i - 1)).max(-ui);
        let d_hi = (la_i - 1).min(n - 1 - ui);
        if d_lo > d_hi {
            continue;
        }
        let ys = &yv[(ui + d_lo) as usize..=(ui + d_hi) as usize];
        let hs = &mut h[(d_lo + lb_i - 1) as usize..=(d_hi + lb_i - 1) as usize];
        for (hv, yv) in hs.iter_mut().zip(ys) {
            *hv += xu * yv;
        }
    }
    let term = |u: i64, d: i64| -> f64 {
        let xv = x.at(u);
        if xv == 0.0 {
            0.0
        } else {
            xv * y.at(u + d)
        }
    };
    let (lo, hi) = (lo as i64, hi as i64);
    for (di, &h0) in h.iter().enumerate() {
        let d = di as i64 - (lb_i - 1);
        // Window for lag a covers u ∈ [lo - a, hi - a); a = 0 is h[di].
        let a_first = d.max(0);
        let a_last = (la_i - 1).min(lb_i - 1 + d);
        let mut w = h0;
        for a in 1..=a_last {
            w += term(lo - a, d) - term(hi - a, d);
            if a >= a_first {
                out[[a as usize, (a - d) as usize]] += w;
            }
        }
        if a_first == 0 && a_last >= 0 {
            out[[0, (-d) as usize]] += h[di];
        }
    }
}

/// `C[a][k] = Σ_{t ∈ intervals} x[t - a] · y_k[t]`.
pub fn cross_block(
    x: &SparseSeries,
    la: usize,
    y: ArrayView2<'_, f64>,
    intervals: &[Range<usize>],
) -> Array2<f64> {
    let k = y.nrows();
    let cols: Vec<Vec<f64>> = (0..k)
        .into_par_iter()
        .map(|row| {
            let yr = y.row(row);
            let ys = yr
                .as_slice()
                .map(std::borrow::Cow::Borrowed)
                .unwrap_or_else(|| std::borrow::Cow::Owned(yr.to_vec()));
            let mut c = vec![0.0; la];
            for r in intervals {
                for &u in x.nonzero_in(r.start.saturating_sub(la - 1), r.end) {
                    let xu = x.values[u];
                    let a_lo = r.start.saturating_sub(u);
                    let a_hi = (la - 1).min(r.end - 1 - u);
                    if a_lo > a_hi {
                        continue;
                    }
                    for (cv, yv) in c[a_lo..=a_hi].iter_mut().zip(&ys[u + a_lo..=u + a_hi]) {
                        *cv += xu * yv;
                    }
                }
            }
            c
        })
        .collect();
    let mut out = Array2::zeros((la, k));
    for (j, c) in cols.into_iter().enumerate() {
        out.column_mut(j).assign(&Array1::from(c));
    }
    out
}

/// `s[a] = Σ_{t ∈ intervals} x[t - a]`.
pub fn sum_block(x: &SparseSeries, la: usize, intervals: &[Range<usize>]) -> Array1<f64> {
    let mut s = Array1::zeros(la);
    for r in intervals {
        for &u in x.nonzero_in(r.start.saturating_sub(la - 1), r.end) {
            let a_lo = r.start.saturating_sub(u);
            let a_hi = (la - 1).min(r.end - 1 - u);
            for a in a_lo..=a_hi {
                s[a] += x.values[u];
            }
        }
    }
    s
}

/// Adds `Σ_a w[a][k] · x[t - a]` to `out[k][t - lo]` for `t ∈ [lo, hi)`.
pub fn convolve_into(
    x: &SparseSeries,
    weights: ArrayView2<'_, f64>,
    lo: usize,
    hi: usize,
    out: &mut Array2<f64>,
) {
    let la = weights.nrows();
    if la == 0 || hi <= lo {
        return;
    }
    let events = x.nonzero_in(lo.saturating_sub(la - 1), hi);
    // One output row at a time keeps both the kernel and the output contiguous.
    for (k, mut row) in out.rows_mut().into_iter().enumerate() {
        let kernel: Vec<f64> = weights.column(k).to_vec();
        let row = row.as_slice_mut().expect("standard layout output");
        for &u in events {
            let xu = x.values[u];
            let a_lo = lo.saturating_sub(u);
            let a_hi = (la - 1).min(hi - 1 - u);
            let t0 = u + a_lo - lo;
            let span = a_hi + 1 - a_lo;
            for (o, w) in row[t0..t0 + span].iter_mut().zip(&kernel[a_lo..=a_hi]) {
                *o += xu * w;
            }
        }
    }
}

/// Full Gram matrix for a set of series with per-series lag counts.
pub fn gram(series: &[&SparseSeries], lags: &[usize], intervals: &[Range<usize>]) -> Array2<f64> {
    let offsets = offsets(lags);
    let p = offsets[lags.len()];
    let pairs: Vec<(usize, usize)> = (0..series.len())
        .flat_map(|f| (f..series.len()).map(move |g| (f, g)))
        .collect();
    let blocks: Vec<Array2<f64>> = pairs
        .par_iter()
        .map(|&(f, g)| gram_block(series[f], lags[f], series[g], lags[g], intervals))
        .collect();
    let mut out = Array2::zeros((p, p));
    for ((f, g), b) in pairs.into_iter().zip(blocks) {
        let (rf, rg) = (offsets[f]..offsets[f + 1], offsets[g]..offsets[g + 1]);
        out.slice_mut(ndarray::s![rf.clone(), rg.clone()])
            .assign(&b);
        if f != g {
            out.slice_mut(ndarray::s![rg, rf]).assign(&b.t());
        }
    }
    out
}

pub fn offsets(lags: &[usize]) -> Vec<usize> {
    let mut o = Vec::with_capacity(lags.len() + 1);
    o.push(0);
    for &l in lags {
        o.push(o.last().copied().unwrap_or(0) + l);
    }
    o
}
