//! Temporal response functions: lagged linear regression from stimulus
//! feature series to multi-sensor recordings.
//!
//! A model predicts sensor `s` at sample `t` as
//! `Σ_f Σ_a w[f, a, s] · x_f[t - a]`, with lags `a` running from zero to the
//! feature's window. Fitting solves the ridge-penalised normal equations,
//! assembled from sparse lagged products so the dense design never needs to
//! exist.

pub mod lagged;
pub mod recording;
pub mod solve;

use std::io::{Read, Write};
use std::ops::Range;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureSeries;
use crate::stats::pearson;
pub use lagged::SparseSeries;
pub use recording::NeuralRecording;
pub use solve::CgSettings;

/// Default lag window for word-level features, seconds.
pub const WORD_LAG_WINDOW_S: f64 = 0.8;
/// Default lag window for sublexical and acoustic features, seconds.
pub const SUBLEXICAL_LAG_WINDOW_S: f64 = 0.6;

/// Number of lags spanning `[0, window_s]` at `fs`.
pub fn lag_count(window_s: f64, fs: f64) -> Result<usize> {
    if !(window_s.is_finite() && window_s >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "lag window must be non-negative, got {window_s}"
        )));
    }
    if !(fs.is_finite() && fs > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sampling rate must be positive, got {fs}"
        )));
    }
    // The epsilon keeps windows that are whole multiples of the sample period exact.
    Ok((window_s * fs + 1e-9).floor() as usize + 1)
}

/// Names and lag counts of the features entering a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub names: Vec<String>,
    pub lags: Vec<usize>,
    pub fs: f64,
}

impl FeatureLayout {
    pub fn new(names: Vec<String>, lags: Vec<usize>, fs: f64) -> Result<Self> {
        if names.len() != lags.len() {
            return Err(Error::Shape(format!(
                "{} feature names for {} lag counts",
                names.len(),
                lags.len()
            )));
        }
        if lags.contains(&0) {
            return Err(Error::InvalidArgument(
                "every feature needs at least one lag".into(),
            ));
        }
        if !(fs.is_finite() && fs > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sampling rate must be positive, got {fs}"
            )));
        }
        Ok(Self { names, lags, fs })
    }

    pub fn from_windows(names: Vec<String>, windows_s: &[f64], fs: f64) -> Result<Self> {
        let lags = windows_s
            .iter()
            .map(|&w| lag_count(w, fs))
            .collect::<Result<Vec<_>>>()?;
        Self::new(names, lags, fs)
    }

    pub fn n_features(&self) -> usize {
        self.names.len()
    }

    pub fn n_params(&self) -> usize {
        self.lags.iter().sum()
    }

    pub fn max_lag(&self) -> usize {
        self.lags.iter().copied().max().unwrap_or(1) - 1
    }

    /// Start of each feature's parameter block, plus the total.
    pub fn offsets(&self) -> Vec<usize> {
        lagged::offsets(&self.lags)
    }

    pub fn block(&self, feature: usize) -> Range<usize> {
        let o = self.offsets();
        o[feature]..o[feature + 1]
    }
}

/// Dense lagged design: row `(f, a)` at column `t` holds `x_f[t - a]`, zero before the start.
pub fn design_matrix(features: &FeatureSeries, layout: &FeatureLayout) -> Result<Array2<f64>> {
    check_features(features, layout)?;
    let t_len = features.n_samples();
    let mut d = Array2::zeros((layout.n_params(), t_len));
    let mut row = 0;
    for (f, &l) in layout.lags.iter().enumerate() {
        let x = features.data.row(f);
        for a in 0..l {
            if a < t_len {
                d.slice_mut(s![row, a..]).assign(&x.slice(s![..t_len - a]));
            }
            row += 1;
        }
    }
    Ok(d)
}

fn check_features(features: &FeatureSeries, layout: &FeatureLayout) -> Result<()> {
    if features.n_channels() != layout.n_features() {
        return Err(Error::Shape(format!(
            "{} feature series for a layout of {} features",
            features.n_channels(),
            layout.n_features()
        )));
    }
    if (features.fs - layout.fs).abs() > 1e-9 * layout.fs {
        return Err(Error::InvalidArgument(format!(
            "feature sampling rate {} does not match model rate {}",
            features.fs, layout.fs
        )));
    }
    if features.names != layout.names {
        return Err(Error::Shape(format!(
            "feature names {:?} do not match layout {:?}",
            features.names, layout.names
        )));
    }
    Ok(())
}

/// Feature series prepared for sparse lagged products.
#[derive(Debug, Clone)]
pub struct LaggedDesign {
    pub layout: FeatureLayout,
    pub series: Vec<SparseSeries>,
    n_samples: usize,
}

impl LaggedDesign {
    pub fn new(features: &FeatureSeries, layout: FeatureLayout) -> Result<Self> {
        check_features(features, &layout)?;
        Ok(Self {
            series: lagged::sparse_rows(features.data.view()),
            n_samples: features.n_samples(),
            layout,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn gram(&self, intervals: &[Range<usize>]) -> Array2<f64> {
        let refs: Vec<&SparseSeries> = self.series.iter().collect();
        lagged::gram(&refs, &self.layout.lags, intervals)
    }

    /// `C[(f, a), k] = Σ_t x_f[t - a] · y_k[t]` over `intervals`.
    pub fn cross(&self, y: ArrayView2<'_, f64>, intervals: &[Range<usize>]) -> Array2<f64> {
        let blocks: Vec<Array2<f64>> = self
            .series
            .iter()
            .zip(&self.layout.lags)
            .map(|(x, &l)| lagged::cross_block(x, l, y, intervals))
            .collect();
        let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
        ndarray::concatenate(Axis(0), &views).unwrap_or_else(|_| Array2::zeros((0, y.nrows())))
    }

    pub fn sums(&self, intervals: &[Range<usize>]) -> Array1<f64> {
        let parts: Vec<Array1<f64>> = self
            .series
            .iter()
            .zip(&self.layout.lags)
            .map(|(x, &l)| lagged::sum_block(x, l, intervals))
            .collect();
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        ndarray::concatenate(Axis(0), &views).unwrap_or_else(|_| Array1::zeros(0))
    }

    /// `Σ_{f,a} w[(f,a), k] · x_f[t - a]` for `t ∈ [lo, hi)`, as `K × (hi - lo)`.
    pub fn apply(&self, weights: ArrayView2<'_, f64>, lo: usize, hi: usize) -> Array2<f64> {
        let mut out = Array2::zeros((weights.ncols(), hi.saturating_sub(lo)));
        let offsets = self.layout.offsets();
        for (f, x) in self.series.iter().enumerate() {
            lagged::convolve_into(
                x,
                weights.slice(s![offsets[f]..offsets[f + 1], ..]),
                lo,
                hi,
                &mut out,
            );
        }
        out
    }
}

/// Sufficient statistics of a ridge problem over a set of sample intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalEquations {
    /// `P × P` lagged Gram matrix.
    pub gram: Array2<f64>,
    /// `P × K` lagged cross products with the responses.
    pub cross: Array2<f64>,
    /// Per-parameter sums of the lagged design.
    pub sums: Array1<f64>,
    /// Per-response sums.
    pub response_sums: Array1<f64>,
    pub n: usize,
}

impl NormalEquations {
    pub fn assemble(
        design: &LaggedDesign,
        y: ArrayView2<'_, f64>,
        intervals: &[Range<usize>],
    ) -> Result<Self> {
        check_response(design, y, intervals)?;
        Ok(Self {
            gram: design.gram(intervals),
            cross: design.cross(y, intervals),
            sums: design.sums(intervals),
            response_sums: response_sums(y, intervals),
            n: lagged::interval_len(intervals),
        })
    }

    /// Gram and cross products with the interval means removed.
    pub fn centered(&self) -> (Array2<f64>, Array2<f64>) {
        let n = self.n as f64;
        let s_col = self.sums.view().insert_axis(Axis(1));
        let gram = &self.gram - &(s_col.dot(&s_col.t()) / n);
        let cross = &self.cross - &(s_col.dot(&self.response_sums.view().insert_axis(Axis(0))) / n);
        (gram, cross)
    }
}

fn check_response(
    design: &LaggedDesign,
    y: ArrayView2<'_, f64>,
    intervals: &[Range<usize>],
) -> Result<()> {
    if y.ncols() != design.n_samples() {
        return Err(Error::Shape(format!(
            "responses have {} samples, features have {}",
            y.ncols(),
            design.n_samples()
        )));
    }
    if let Some(r) = intervals.iter().find(|r| r.end > y.ncols()) {
        return Err(Error::OutOfRange {
            what: "sample interval end",
            index: r.end,
            len: y.ncols(),
        });
    }
    if lagged::interval_len(intervals) == 0 {
        return Err(Error::InvalidArgument("no samples to fit".into()));
    }
    Ok(())
}

pub fn response_sums(y: ArrayView2<'_, f64>, intervals: &[Range<usize>]) -> Array1<f64> {
    let mut out = Array1::zeros(y.nrows());
    for r in intervals {
        out += &y.slice(s![.., r.clone()]).sum_axis(Axis(1));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RidgePenalty {
    Global(f64),
    /// One strength per feature, applied to all of its lags.
    PerFeature(Vec<f64>),
}

impl RidgePenalty {
    pub fn diagonal(&self, layout: &FeatureLayout) -> Result<Array1<f64>> {
        let per_feature = match self {
            RidgePenalty::Global(r) => vec![*r; layout.n_features()],
            RidgePenalty::PerFeature(v) => {
                if v.len() != layout.n_features() {
                    return Err(Error::Shape(format!(
                        "{} ridge strengths for {} features",
                        v.len(),
                        layout.n_features()
                    )));
                }
                v.clone()
            }
        };
        if let Some(r) = per_feature.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "ridge strength must be finite and non-negative, got {r}"
            )));
        }
        Ok(per_feature
            .iter()
            .zip(&layout.lags)
            .flat_map(|(&r, &l)| std::iter::repeat_n(r, l))
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Solver {
    /// Cholesky up to `max_direct` parameters, conjugate gradients beyond.
    Auto {
        max_direct: usize,
    },
    Cholesky,
    ConjugateGradient(CgSettings),
}

impl Default for Solver {
    fn default() -> Self {
        Solver::Auto { max_direct: 6000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub ridge: RidgePenalty,
    /// Remove interval means from features and responses before solving.
    pub center: bool,
    pub solver: Solver,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            ridge: RidgePenalty::Global(1.0),
            center: true,
            solver: Solver::default(),
        }
    }
}

/// Solves an assembled problem; returns `(weights P × K, feature means, response means)`.
pub fn solve_normal_equations(
    eq: &NormalEquations,
    layout: &FeatureLayout,
    options: &FitOptions,
) -> Result<(Array2<f64>, Array1<f64>, Array1<f64>)> {
    let penalty = options.ridge.diagonal(layout)?;
    let (gram, cross) = if options.center {
        eq.centered()
    } else {
        (eq.gram.clone(), eq.cross.clone())
    };
    let weights = solve::cholesky_solve(gram.view(), &penalty, cross.view())?;
    Ok(means(eq, options.center, weights))
}

fn means(
    eq: &NormalEquations,
    center: bool,
    weights: Array2<f64>,
) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    if center {
        let n = eq.n as f64;
        (weights, &eq.sums / n, &eq.response_sums / n)
    } else {
        (
            weights,
            Array1::zeros(eq.sums.len()),
            Array1::zeros(eq.response_sums.len()),
        )
    }
}

/// A fitted (or constructed) response model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrfModel {
    pub layout: FeatureLayout,
    pub sensors: Vec<String>,
    pub ridge: RidgePenalty,
    /// `P × S`: row `(f, a)`, column sensor.
    pub weights: Array2<f64>,
    pub feature_means: Array1<f64>,
    pub response_means: Array1<f64>,
}

impl TrfModel {
    /// An uncentered model with the given coefficients.
    pub fn from_weights(
        layout: FeatureLayout,
        sensors: Vec<String>,
        weights: Array2<f64>,
    ) -> Result<Self> {
        if weights.nrows() != layout.n_params() || weights.ncols() != sensors.len() {
            return Err(Error::Shape(format!(
                "weights {:?} for {} parameters and {} sensors",
                weights.shape(),
                layout.n_params(),
                sensors.len()
            )));
        }
        Ok(Self {
            feature_means: Array1::zeros(layout.n_params()),
            response_means: Array1::zeros(sensors.len()),
            ridge: RidgePenalty::Global(0.0),
            layout,
            sensors,
            weights,
        })
    }

    pub fn n_sensors(&self) -> usize {
        self.sensors.len()
    }

    /// Coefficients of one feature for one sensor, by lag.
    pub fn kernel(&self, feature: usize, sensor: usize) -> Array1<f64> {
        self.weights
            .slice(s![self.layout.block(feature), sensor])
            .to_owned()
    }

    /// Intercept per sensor.
    pub fn offset(&self) -> Array1<f64> {
        &self.response_means - &self.weights.t().dot(&self.feature_means)
    }

    /// Prediction over `[lo, hi)`, `S × (hi - lo)`.
    pub fn predict_range(
        &self,
        design: &LaggedDesign,
        lo: usize,
        hi: usize,
    ) -> Result<Array2<f64>> {
        if design.layout != self.layout {
            return Err(Error::Shape(
                "feature layout does not match the model".into(),
            ));
        }
        if hi > design.n_samples() || lo > hi {
            return Err(Error::OutOfRange {
                what: "prediction range",
                index: hi,
                len: design.n_samples(),
            });
        }
        let mut y = design.apply(self.weights.view(), lo, hi);
        y += &self.offset().insert_axis(Axis(1));
        Ok(y)
    }

    pub fn predict(&self, design: &LaggedDesign) -> Result<Array2<f64>> {
        self.predict_range(design, 0, design.n_samples())
    }

    /// Prediction from an explicit dense design matrix.
    pub fn predict_dense(&self, design: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if design.nrows() != self.layout.n_params() {
            return Err(Error::Shape(format!(
                "design has {} rows, model has {} parameters",
                design.nrows(),
                self.layout.n_params()
            )));
        }
        let mut y = self.weights.t().dot(&design);
        y += &self.offset().insert_axis(Axis(1));
        Ok(y)
    }

    pub fn write_coefficients_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let csv_err = |e: csv::Error| Error::Numerical(e.to_string());
        wr.write_record(["feature", "sensor", "lag_s", "value"])
            .map_err(csv_err)?;
        let offsets = self.layout.offsets();
        for (f, name) in self.layout.names.iter().enumerate() {
            for (s_idx, sensor) in self.sensors.iter().enumerate() {
                for a in 0..self.layout.lags[f] {
                    let lag_s = a as f64 / self.layout.fs;
                    wr.write_record([
                        name.as_str(),
                        sensor.as_str(),
                        &format!("{lag_s:.9}"),
                        &format!("{:e}", self.weights[[offsets[f] + a, s_idx]]),
                    ])
                    .map_err(csv_err)?;
                }
            }
        }
        wr.flush().map_err(|e| Error::Numerical(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub feature: String,
    pub sensor: String,
    pub lag_s: f64,
    pub value: f64,
}

pub fn read_coefficients_csv<R: Read>(r: R, source: &str) -> Result<Vec<CoefficientRow>> {
    let mut rd = csv::Reader::from_reader(r);
    rd.deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| Error::load(format!("{source}:{}", i + 2), e.to_string())))
        .collect()
}

/// Fits a model on the samples in `intervals`.
pub fn fit(
    design: &LaggedDesign,
    recording: &NeuralRecording,
    intervals: &[Range<usize>],
    options: &FitOptions,
) -> Result<TrfModel> {
    let y = recording.data.view();
    let p = design.layout.n_params();
    let use_cg = match options.solver {
        Solver::Auto { max_direct } => p > max_direct,
        Solver::Cholesky => false,
        Solver::ConjugateGradient(_) => true,
    };
    let (weights, feature_means, response_means) = if use_cg {
        let settings = match options.solver {
            Solver::ConjugateGradient(s) => s,
            _ => CgSettings::default(),
        };
        fit_iterative(design, y, intervals, options, settings)?
    } else {
        let eq = NormalEquations::assemble(design, y, intervals)?;
        solve_normal_equations(&eq, &design.layout, options)?
    };
    Ok(TrfModel {
        layout: design.layout.clone(),
        sensors: recording.sensors.clone(),
        ridge: options.ridge.clone(),
        weights,
        feature_means,
        response_means,
    })
}

/// Conjugate gradients with the Gram operator applied through the lagged series.
fn fit_iterative(
    design: &LaggedDesign,
    y: ArrayView2<'_, f64>,
    intervals: &[Range<usize>],
    options: &FitOptions,
    settings: CgSettings,
) -> Result<(Array2<f64>, Array1<f64>, Array1<f64>)> {
    check_response(design, y, intervals)?;
    let penalty = options.ridge.diagonal(&design.layout)?;
    let sums = design.sums(intervals);
    let ysums = response_sums(y, intervals);
    let n = lagged::interval_len(intervals);
    let mut cross = design.cross(y, intervals);
    if options.center {
        cross -= &(sums
            .view()
            .insert_axis(Axis(1))
            .dot(&ysums.view().insert_axis(Axis(0)))
            / n as f64);
    }
    let t_len = design.n_samples();
    let apply = |v: &Array1<f64>| -> Array1<f64> {
        let w = v.view().insert_axis(Axis(1));
        let mut z = Array2::zeros((1, t_len));
        for r in intervals {
            let part = design.apply(w, r.start, r.end);
            z.slice_mut(s![.., r.clone()]).assign(&part);
        }
        let mut out = design.cross(z.view(), intervals).column(0).to_owned();
        if options.center {
            out.scaled_add(-sums.dot(v) / n as f64, &sums);
        }
        out + &(&penalty * v)
    };
    let weights = solve::conjugate_gradient(apply, cross.view(), settings)?;
    let eq = NormalEquations {
        gram: Array2::zeros((0, 0)),
        cross: Array2::zeros((0, 0)),
        sums,
        response_sums: ysums,
        n,
    };
    Ok(means(&eq, options.center, weights))
}

/// Ridge fit from an explicit design matrix (`P × T`) without centering.
pub fn fit_ridge_dense(
    design: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    ridge: f64,
) -> Result<Array2<f64>> {
    if design.ncols() != y.ncols() {
        return Err(Error::Shape(format!(
            "design has {} samples, responses {}",
            design.ncols(),
            y.ncols()
        )));
    }
    if !(ridge.is_finite() && ridge >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "ridge strength must be finite and non-negative, got {ridge}"
        )));
    }
    let gram = design.dot(&design.t());
    let cross = design.dot(&y.t());
    solve::cholesky_solve(
        gram.view(),
        &Array1::from_elem(design.nrows(), ridge),
        cross.view(),
    )
}

/// Pearson correlation per sensor between observed and predicted responses.
pub fn sensor_correlations(y: ArrayView2<'_, f64>, y_hat: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    if y.shape() != y_hat.shape() {
        return Err(Error::Shape(format!(
            "observed {:?} vs predicted {:?}",
            y.shape(),
            y_hat.shape()
        )));
    }
    y.rows()
        .into_iter()
        .zip(y_hat.rows())
        .enumerate()
        .map(|(s_idx, (a, b))| {
            pearson(&a.to_vec(), &b.to_vec()).map_err(|e| match e {
                Error::ZeroVariance(_) => Error::ZeroVariance(format!("sensor {s_idx}")),
                other => other,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn series(names: &[&str], data: Array2<f64>, fs: f64) -> FeatureSeries {
        FeatureSeries {
            names: names.iter().map(|s| s.to_string()).collect(),
            data,
            fs,
        }
    }

    fn random_problem(seed: u64, t_len: usize) -> (FeatureSeries, FeatureLayout, Array2<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = Array2::from_shape_fn((3, t_len), |(f, _)| {
            let density = [0.05, 0.3, 1.0][f];
            if rng.random::<f64>() < density {
                rng.random_range(-1.0..1.0)
            } else {
                0.0
            }
        });
        let fs = 50.0;
        let feats = series(&["a", "b", "c"], data, fs);
        let layout = FeatureLayout::new(feats.names.clone(), vec![4, 2, 3], fs).unwrap();
        let theta = Array2::from_shape_fn((layout.n_params(), 2), |_| rng.random_range(-1.0..1.0));
        (feats, layout, theta)
    }

    #[test]
    fn lag_counts() {
        assert_eq!(lag_count(0.8, 128.0).unwrap(), 103);
        assert_eq!(lag_count(0.6, 100.0).unwrap(), 61);
        assert_eq!(lag_count(0.0, 100.0).unwrap(), 1);
        assert!(lag_count(-0.1, 100.0).is_err());
    }

    #[test]
    fn impulse_shifts_along_lags() {
        let mut x = Array2::zeros((1, 20));
        x[[0, 10]] = 1.0;
        let feats = series(&["x"], x, 100.0);
        let layout = FeatureLayout::new(vec!["x".into()], vec![3], 100.0).unwrap();
        let d = design_matrix(&feats, &layout).unwrap();
        for a in 0..3 {
            let ones: Vec<usize> = (0..20).filter(|&t| d[[a, t]] != 0.0).collect();
            assert_eq!(ones, vec![10 + a]);
        }
        let zero = series(&["x"], Array2::zeros((1, 20)), 100.0);
        assert!(design_matrix(&zero, &layout)
            .unwrap()
            .iter()
            .all(|v| *v == 0.0));
        let other_fs = series(&["x"], Array2::zeros((1, 20)), 64.0);
        assert!(design_matrix(&other_fs, &layout).is_err());
    }

    #[test]
    fn prediction_matches_direct_double_sum() {
        let (feats, layout, theta) = random_problem(1, 60);
        let model = TrfModel::from_weights(
            layout.clone(),
            vec!["s0".into(), "s1".into()],
            theta.clone(),
        )
        .unwrap();
        let design = LaggedDesign::new(&feats, layout.clone()).unwrap();
        let y = model.predict(&design).unwrap();
        let offsets = layout.offsets();
        for s_idx in 0..2 {
            for t in 0..60 {
                let mut want = 0.0;
                for f in 0..3 {
                    for a in 0..layout.lags[f] {
                        if t >= a {
                            want += theta[[offsets[f] + a, s_idx]] * feats.data[[f, t - a]];
                        }
                    }
                }
                assert_abs_diff_eq!(y[[s_idx, t]], want, epsilon = 1e-12);
            }
        }
        let dense = design_matrix(&feats, &layout).unwrap();
        let y_dense = model.predict_dense(dense.view()).unwrap();
        for (a, b) in y.iter().zip(y_dense.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn structured_products_match_dense_design() {
        let (feats, layout, _) = random_problem(2, 90);
        let design = LaggedDesign::new(&feats, layout.clone()).unwrap();
        let dense = design_matrix(&feats, &layout).unwrap();
        let y = Array2::from_shape_fn((2, 90), |(s_idx, t)| ((s_idx + 1) * t % 7) as f64);
        let intervals = [5..40, 52..90];
        let cols: Vec<usize> = intervals.iter().flat_map(|r| r.clone()).collect();
        let d_sub = dense.select(Axis(1), &cols);
        let y_sub = y.select(Axis(1), &cols);
        let eq = NormalEquations::assemble(&design, y.view(), &intervals).unwrap();
        let want_g = d_sub.dot(&d_sub.t());
        let want_c = d_sub.dot(&y_sub.t());
        for (a, b) in eq.gram.iter().zip(want_g.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
        for (a, b) in eq.cross.iter().zip(want_c.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
        for (a, b) in eq.sums.iter().zip(d_sub.sum_axis(Axis(1)).iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn noiseless_data_recovers_weights() {
        let (feats, layout, theta) = random_problem(3, 400);
        let truth = TrfModel::from_weights(
            layout.clone(),
            vec!["s0".into(), "s1".into()],
            theta.clone(),
        )
        .unwrap();
        let design = LaggedDesign::new(&feats, layout.clone()).unwrap();
        let y = truth.predict(&design).unwrap();
        let rec = NeuralRecording::new("sub", y.clone(), feats.fs).unwrap();
        for center in [false, true] {
            let opts = FitOptions {
                ridge: RidgePenalty::Global(0.0),
                center,
                solver: Solver::Cholesky,
            };
            let model = fit(&design, &rec, &[0..400], &opts).unwrap();
            for (a, b) in model.weights.iter().zip(theta.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-8);
            }
        }
        let dense = design_matrix(&feats, &layout).unwrap();
        let w = fit_ridge_dense(dense.view(), y.view(), 0.0).unwrap();
        for (a, b) in w.iter().zip(theta.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
        }
    }

    #[test]
    fn normal_equation_residual_and_scaling() {
        let (feats, layout, _) = random_problem(4, 300);
        let design = LaggedDesign::new(&feats, layout.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let y = Array2::from_shape_fn((2, 300), |_| rng.random_range(-1.0..1.0));
        let ridge = 3.0;
        let opts = FitOptions {
            ridge: RidgePenalty::Global(ridge),
            center: false,
            solver: Solver::Cholesky,
        };
        let rec = NeuralRecording::new("sub", y.clone(), feats.fs).unwrap();
        let model = fit(&design, &rec, &[0..300], &opts).unwrap();
        let dense = design_matrix(&feats, &layout).unwrap();
        let lhs = (dense.dot(&dense.t()) + Array2::<f64>::eye(layout.n_params()) * ridge)
            .dot(&model.weights);
        let rhs = dense.dot(&y.t());
        let resid = (&lhs - &rhs).mapv(|v| v * v).sum().sqrt();
        assert!(resid <= 1e-6 * rhs.mapv(|v| v * v).sum().sqrt());

        let rec3 = NeuralRecording::new("sub", &y * 3.0, feats.fs).unwrap();
        let model3 = fit(&design, &rec3, &[0..300], &opts).unwrap();
        for (a, b) in model3.weights.iter().zip(model.weights.iter()) {
            assert_abs_diff_eq!(*a, 3.0 * b, epsilon = 1e-10);
        }
    }

    #[test]
    fn large_ridge_shrinks_to_zero_and_singular_is_signalled() {
        let (feats, layout, _) = random_problem(5, 200);
        let design = LaggedDesign::new(&feats, layout.clone()).unwrap();
        let y = Array2::from_shape_fn((2, 200), |(s_idx, t)| ((t * (s_idx + 3)) % 11) as f64);
        let rec = NeuralRecording::new("sub", y, feats.fs).unwrap();
        let opts = FitOptions {
            ridge: RidgePenalty::Global(1e12),
            ..FitOptions::default()
        };
        let model = fit(&design, &rec, &[0..200], &opts).unwrap();
        assert!(model.weights.iter().all(|w| w.abs() < 1e-6));

        let zero = series(&["a", "b", "c"], Array2::zeros((3, 200)), feats.fs);
        let zero_design = LaggedDesign::new(&zero, layout).unwrap();
        let opts = FitOptions {
            ridge: RidgePenalty::Global(0.0),
            ..FitOptions::default()
        };
        assert!(matches!(
            fit(&zero_design, &rec, &[0..200], &opts),
            Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn conjugate_gradient_matches_cholesky() {
        let (feats, layout, _) = random_problem(6, 250);
        let design = LaggedDesign::new(&feats, layout.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(66);
        let y = Array2::from_shape_fn((2, 250), |_| rng.random_range(-1.0..1.0));
        let rec = NeuralRecording::new("sub", y, feats.fs).unwrap();
        let intervals = [0..100, 130..250];
        for ridge in [
            RidgePenalty::Global(0.5),
            RidgePenalty::PerFeature(vec![0.1, 2.0, 0.7]),
        ] {
            let direct = fit(
                &design,
                &rec,
                &intervals,
                &FitOptions {
                    ridge: ridge.clone(),
                    center: true,
                    solver: Solver::Cholesky,
                },
            )
            .unwrap();
            let iterative = fit(
                &design,
                &rec,
                &intervals,
                &FitOptions {
                    ridge,
                    center: true,
                    solver: Solver::ConjugateGradient(CgSettings::default()),
                },
            )
            .unwrap();
            for (a, b) in direct.weights.iter().zip(iterative.weights.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn no_wraparound_at_start() {
        let mut x = Array2::zeros((1, 10));
        x[[0, 0]] = 1.0;
        let feats = series(&["x"], x, 10.0);
        let layout = FeatureLayout::new(vec!["x".into()], vec![4], 10.0).unwrap();
        let w = Array2::from_shape_vec((4, 1), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let model = TrfModel::from_weights(layout.clone(), vec!["s0".into()], w).unwrap();
        let y = model
            .predict(&LaggedDesign::new(&feats, layout).unwrap())
            .unwrap();
        assert_eq!(
            y.row(0).to_vec(),
            vec![1.0, 2.0, 3.0, 4.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn correlations() {
        let y = Array2::from_shape_fn((2, 6), |(s_idx, t)| ((t * t + s_idx) % 5) as f64);
        let r = sensor_correlations(y.view(), y.view()).unwrap();
        assert!(r.iter().all(|v| (v - 1.0).abs() < 1e-12));
        let r = sensor_correlations(y.view(), (-&y).view()).unwrap();
        assert!(r.iter().all(|v| (v + 1.0).abs() < 1e-12));
        let r = sensor_correlations(y.view(), (&y * 2.5 + 4.0).view()).unwrap();
        assert!(r.iter().all(|v| (v - 1.0).abs() < 1e-12));
        let flat = Array2::zeros((2, 6));
        let err = sensor_correlations(y.view(), flat.view()).unwrap_err();
        assert!(err.to_string().contains("sensor 0"));
    }

    #[test]
    fn coefficient_csv_round_trip() {
        let layout = FeatureLayout::new(vec!["a".into()], vec![2], 4.0).unwrap();
        let w = Array2::from_shape_vec((2, 1), vec![0.5, -1.25]).unwrap();
        let model = TrfModel::from_weights(layout, vec!["Cz".into()], w).unwrap();
        let mut buf = Vec::new();
        model.write_coefficients_csv(&mut buf).unwrap();
        let rows = read_coefficients_csv(&buf[..], "mem").unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(
            (rows[1].feature.as_str(), rows[1].sensor.as_str()),
            ("a", "Cz")
        );
        assert_eq!((rows[1].lag_s, rows[1].value), (0.25, -1.25));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn prediction_is_linear_in_weights(seed in 0u64..1000, c in -3.0f64..3.0) {
            let (feats, layout, theta) = random_problem(seed, 40);
            let design = LaggedDesign::new(&feats, layout.clone()).unwrap();
            let sensors = vec!["s0".to_string(), "s1".to_string()];
            let m1 = TrfModel::from_weights(layout.clone(), sensors.clone(), theta.clone()).unwrap();
            let m2 = TrfModel::from_weights(layout, sensors, &theta * c).unwrap();
            let y1 = m1.predict(&design).unwrap();
            let y2 = m2.predict(&design).unwrap();
            for (a, b) in y1.iter().zip(y2.iter()) {
                prop_assert!((a * c - b).abs() < 1e-10);
            }
        }
    }
}
