//! End-to-end fitting: a contiguous train/test split, cross-validated search
//! over the cognitive parameters and ridge strength, and one held-out
//! evaluation of the refitted best model.
//!
//! Every subject shares the stimulus, so a trial fits all subjects at once by
//! stacking their sensors as right-hand sides of one ridge problem. Products
//! involving only the sublexical features are computed once per fold and
//! reused by every trial.

mod sampler;
mod split;

use std::collections::HashMap;
use std::io::Write;
use std::ops::Range;
use std::sync::Mutex;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use sampler::{Sampler, SamplerKind, SearchSpace, TrialParams, UnitPoint, PARAMETER_NAMES};
pub use split::{split_data, DataSplit, Partition};

use crate::cognitive::{CognitiveParams, RecognitionProblem, RecognitionResult};
use crate::cohort::transcript_features;
use crate::dataset::Stimulus;
use crate::error::{Error, Result};
use crate::features::{
    build_xt, build_xv, time_to_sample, FeatureSeries, QuantileSplit, WordFeatures, XtOptions,
};
use crate::lexicon::{build_confusion, ConfusionMatrix};
use crate::linking::{assemble_word_design, grouping_split, LinkingSpec, LinkingVariant};
use crate::stats::mean;
use crate::trf::{
    lagged, sensor_correlations, solve, FeatureLayout, LaggedDesign, NeuralRecording,
    NormalEquations, RidgePenalty, TrfModel, SUBLEXICAL_LAG_WINDOW_S, WORD_LAG_WINDOW_S,
};

/// What a validation fold is scored by; higher is always better.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Mean over subjects of the mean per-sensor Pearson r.
    #[default]
    Correlation,
    /// Negative mean squared prediction error.
    SquaredError,
}

/// Model and protocol settings that stay fixed during a search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOptions {
    pub word_lag_s: f64,
    pub sublexical_lag_s: f64,
    pub xt: XtOptions,
    /// Keep only the `top_k` most probable candidates per token (the truth is always kept).
    pub top_k: Option<usize>,
    pub test_fraction: f64,
    pub n_folds: usize,
    /// Guard band in samples; the longest lag when absent.
    pub guard: Option<usize>,
    pub objective: Objective,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            word_lag_s: WORD_LAG_WINDOW_S,
            sublexical_lag_s: SUBLEXICAL_LAG_WINDOW_S,
            xt: XtOptions::default(),
            top_k: None,
            test_fraction: 0.25,
            n_folds: 4,
            guard: None,
            objective: Objective::Correlation,
        }
    }
}

impl ModelOptions {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (name, w) in [
            ("word_lag_s", self.word_lag_s),
            ("sublexical_lag_s", self.sublexical_lag_s),
        ] {
            if !(w.is_finite() && w >= 0.0) {
                v.push(format!(
                    "model.{name} = {w} must be finite and non-negative"
                ));
            }
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            v.push(format!(
                "model.test_fraction = {} must be in (0, 1)",
                self.test_fraction
            ));
        }
        if self.n_folds < 2 {
            v.push(format!(
                "model.n_folds = {} must be at least 2",
                self.n_folds
            ));
        }
        if self.top_k == Some(0) {
            v.push("model.top_k must be at least 1".into());
        }
        v
    }

    pub fn xt_layout(&self, names: Vec<String>, fs: f64) -> Result<FeatureLayout> {
        let windows = vec![self.sublexical_lag_s; names.len()];
        FeatureLayout::from_windows(names, &windows, fs)
    }

    pub fn word_layout(&self, variant: LinkingVariant, fs: f64) -> Result<FeatureLayout> {
        let names = variant.feature_names();
        let windows = vec![self.word_lag_s; names.len()];
        FeatureLayout::from_windows(names, &windows, fs)
    }
}

/// Stimulus-derived features and the recordings of every subject, aligned on one timeline.
pub struct StudyData {
    pub fs: f64,
    pub subjects: Vec<String>,
    pub sensors: Vec<Vec<String>>,
    subject_rows: Vec<Range<usize>>,
    /// All subjects' sensors stacked, `(Σ sensors) × samples`.
    responses: Array2<f64>,
    xt: FeatureSeries,
    words: WordFeatures,
    problem: RecognitionProblem,
    confusion: ConfusionMatrix,
}

impl StudyData {
    pub fn new(
        stimulus: &Stimulus,
        recordings: &[NeuralRecording],
        options: &ModelOptions,
    ) -> Result<Self> {
        let first = recordings
            .first()
            .ok_or_else(|| Error::InvalidArgument("at least one recording is required".into()))?;
        let (fs, n_samples) = (first.fs, first.n_samples());
        let mut subjects: Vec<String> = Vec::with_capacity(recordings.len());
        for r in recordings {
            if (r.fs - fs).abs() > 1e-9 * fs || r.n_samples() != n_samples {
                return Err(Error::InvalidArgument(format!(
                    "recording {:?} has {} samples at {} Hz, but {:?} has {n_samples} at {fs} Hz; \
                     every subject must share the stimulus timeline",
                    r.subject,
                    r.n_samples(),
                    r.fs,
                    first.subject
                )));
            }
            if subjects.contains(&r.subject) {
                return Err(Error::InvalidArgument(format!(
                    "subject {:?} appears twice",
                    r.subject
                )));
            }
            subjects.push(r.subject.clone());
        }
        let mut subject_rows = Vec::with_capacity(recordings.len());
        let mut start = 0;
        for r in recordings {
            subject_rows.push(start..start + r.n_sensors());
            start += r.n_sensors();
        }
        let views: Vec<ArrayView2<'_, f64>> = recordings.iter().map(|r| r.data.view()).collect();
        let responses =
            ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))?;

        let cohort = transcript_features(
            &stimulus.transcript,
            &stimulus.priors,
            &stimulus.lexicon,
            &stimulus.inventory,
        )?;
        let xt = build_xt(&stimulus.transcript, &cohort, fs, n_samples, options.xt)?;
        let words = build_xv(&stimulus.transcript, &stimulus.priors, &stimulus.unigram)?;
        let problem = RecognitionProblem::new(
            &stimulus.transcript,
            &stimulus.priors,
            &stimulus.lexicon,
            &stimulus.inventory,
            options.top_k,
        )?;
        let confusion = build_confusion(&stimulus.confusion_counts, &stimulus.inventory, 1.0)?;
        Ok(Self {
            fs,
            subjects,
            sensors: recordings.iter().map(|r| r.sensors.clone()).collect(),
            subject_rows,
            responses,
            xt,
            words,
            problem,
            confusion,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.responses.ncols()
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn xt(&self) -> &FeatureSeries {
        &self.xt
    }

    pub fn words(&self) -> &WordFeatures {
        &self.words
    }

    /// Recognition results for every word, in transcript order.
    pub fn recognize(&self, params: &CognitiveParams) -> Result<Vec<RecognitionResult>> {
        params.validate()?;
        self.problem.run(params, &self.confusion)
    }

    /// One subject's recording as stored.
    pub fn responses(&self, subject: usize) -> ArrayView2<'_, f64> {
        self.responses
            .slice(s![self.subject_rows[subject].clone(), ..])
    }
}

/// Sufficient statistics of the sublexical block over one set of fit intervals.
struct FixedBlocks {
    intervals: Vec<Range<usize>>,
    gram: Array2<f64>,
    cross: Array2<f64>,
    sums: Array1<f64>,
    response_sums: Array1<f64>,
}

struct Solution {
    weights: Array2<f64>,
    feature_means: Array1<f64>,
    response_means: Array1<f64>,
    penalty: f64,
}

/// Held-out correlations of one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectTestScores {
    pub subject: String,
    pub sensors: Vec<String>,
    pub r: Vec<f64>,
    pub mean_r: f64,
}

/// The best parameters refitted on the whole training span.
#[derive(Debug, Clone)]
pub struct FinalFit {
    pub params: TrialParams,
    /// Absolute ridge penalty on each coefficient.
    pub penalty: f64,
    pub models: Vec<TrfModel>,
    pub test_scores: Vec<SubjectTestScores>,
    /// Per subject, `sensors × scored test samples`.
    pub test_predictions: Vec<Array2<f64>>,
    pub recognition: Option<Vec<RecognitionResult>>,
    pub grouping: Option<QuantileSplit>,
}

type ScoreKey = (Option<usize>, Vec<i64>, u64);

/// A linking variant bound to study data and a split, ready to score trials.
pub struct Pipeline<'a> {
    data: &'a StudyData,
    variant: LinkingVariant,
    options: ModelOptions,
    split: DataSplit,
    xt_design: LaggedDesign,
    word_layout: FeatureLayout,
    fold_blocks: Vec<FixedBlocks>,
    final_blocks: FixedBlocks,
    cache: Mutex<HashMap<ScoreKey, f64>>,
}

impl<'a> Pipeline<'a> {
    pub fn new(
        data: &'a StudyData,
        variant: LinkingVariant,
        options: &ModelOptions,
    ) -> Result<Self> {
        let v = options.violations();
        if !v.is_empty() {
            return Err(Error::Validation(v));
        }
        let xt_layout = options.xt_layout(data.xt.names.clone(), data.fs)?;
        let word_layout = options.word_layout(variant, data.fs)?;
        let guard = options
            .guard
            .unwrap_or_else(|| xt_layout.max_lag().max(word_layout.max_lag()));
        let split = split_data(
            data.n_samples(),
            options.test_fraction,
            options.n_folds,
            guard,
        )?;
        let xt_design = LaggedDesign::new(&data.xt, xt_layout)?;
        let blocks = |intervals: Vec<Range<usize>>| {
            let y = data.responses.view();
            FixedBlocks {
                gram: xt_design.gram(&intervals),
                cross: xt_design.cross(y, &intervals),
                sums: xt_design.sums(&intervals),
                response_sums: crate::trf::response_sums(y, &intervals),
                intervals,
            }
        };
        let fold_blocks = (0..split.n_folds())
            .map(|f| blocks(split.fit_intervals(f)))
            .collect();
        let final_blocks = blocks(vec![split.training_span()]);
        Ok(Self {
            data,
            variant,
            options: options.clone(),
            split,
            xt_design,
            word_layout,
            fold_blocks,
            final_blocks,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn split(&self) -> &DataSplit {
        &self.split
    }

    pub fn variant(&self) -> LinkingVariant {
        self.variant
    }

    pub fn layout(&self) -> FeatureLayout {
        let x = &self.xt_design.layout;
        let w = &self.word_layout;
        FeatureLayout {
            names: x.names.iter().chain(&w.names).cloned().collect(),
            lags: x.lags.iter().chain(&w.lags).copied().collect(),
            fs: x.fs,
        }
    }

    fn recognition(&self, params: &TrialParams) -> Result<Option<Vec<RecognitionResult>>> {
        if self.variant.uses_recognition() {
            self.data.recognize(&params.cognitive()).map(Some)
        } else {
            Ok(None)
        }
    }

    /// Word placement for the model trained without `fold` (`None`: the final model).
    fn word_spec(
        &self,
        recognition: Option<&[RecognitionResult]>,
        fold: Option<usize>,
    ) -> Result<(LinkingSpec, Option<QuantileSplit>)> {
        let tau: Option<Vec<f64>> = recognition.map(|r| r.iter().map(|x| x.tau_s).collect());
        let mask = self
            .split
            .training_mask(&self.data.words.onset_s, self.data.fs, fold);
        let grouping = grouping_split(self.variant, &self.data.words, tau.as_deref(), &mask)?;
        let spec = LinkingSpec {
            variant: self.variant,
            recognition_s: if self.variant == LinkingVariant::Shift {
                tau
            } else {
                None
            },
            groups: grouping.as_ref().map(|g| g.assignment.clone()),
        };
        Ok((spec, grouping))
    }

    /// Everything about `spec` that changes the word design.
    fn design_key(&self, spec: &LinkingSpec) -> Vec<i64> {
        let words = &self.data.words;
        match (&spec.recognition_s, &spec.groups) {
            (Some(tau), _) => words
                .onset_s
                .iter()
                .zip(tau)
                .map(|(o, t)| time_to_sample(o + t, self.data.fs))
                .collect(),
            (None, Some(g)) => g.iter().map(|&b| b as i64).collect(),
            (None, None) => Vec::new(),
        }
    }

    fn word_design(&self, spec: &LinkingSpec) -> Result<LaggedDesign> {
        let series =
            assemble_word_design(spec, &self.data.words, self.data.fs, self.data.n_samples())?;
        LaggedDesign::new(&series, self.word_layout.clone())
    }

    fn solve(&self, blocks: &FixedBlocks, word: &LaggedDesign, ridge: f64) -> Result<Solution> {
        let intervals = &blocks.intervals;
        let y = self.data.responses.view();
        let pt = self.xt_design.layout.n_params();
        let pw = word.layout.n_params();
        let p = pt + pw;
        let mut gram = Array2::zeros((p, p));
        gram.slice_mut(s![..pt, ..pt]).assign(&blocks.gram);
        gram.slice_mut(s![pt.., pt..]).assign(&word.gram(intervals));
        let xt_off = self.xt_design.layout.offsets();
        let w_off = word.layout.offsets();
        let pairs: Vec<(usize, usize)> = (0..self.xt_design.series.len())
            .flat_map(|i| (0..word.series.len()).map(move |j| (i, j)))
            .collect();
        let mixed: Vec<Array2<f64>> = pairs
            .par_iter()
            .map(|&(i, j)| {
                lagged::gram_block(
                    &self.xt_design.series[i],
                    self.xt_design.layout.lags[i],
                    &word.series[j],
                    word.layout.lags[j],
                    intervals,
                )
            })
            .collect();
        for (&(i, j), block) in pairs.iter().zip(&mixed) {
            let rows = xt_off[i]..xt_off[i + 1];
            let cols = pt + w_off[j]..pt + w_off[j + 1];
            gram.slice_mut(s![rows.clone(), cols.clone()]).assign(block);
            gram.slice_mut(s![cols, rows]).assign(&block.t());
        }
        let cross = ndarray::concatenate(
            Axis(0),
            &[blocks.cross.view(), word.cross(y, intervals).view()],
        )
        .map_err(|e| Error::Shape(e.to_string()))?;
        let sums =
            ndarray::concatenate(Axis(0), &[blocks.sums.view(), word.sums(intervals).view()])
                .map_err(|e| Error::Shape(e.to_string()))?;
        let eq = NormalEquations {
            gram,
            cross,
            sums,
            response_sums: blocks.response_sums.clone(),
            n: lagged::interval_len(intervals),
        };
        let (gram_c, cross_c) = eq.centered();
        let penalty = ridge * gram_c.diag().mean().unwrap_or(0.0);
        let weights = solve::cholesky_solve(
            gram_c.view(),
            &Array1::from_elem(p, penalty),
            cross_c.view(),
        )?;
        let n = eq.n as f64;
        Ok(Solution {
            weights,
            feature_means: &eq.sums / n,
            response_means: &eq.response_sums / n,
            penalty,
        })
    }

    /// All subjects' predictions over `range`, stacked like the responses.
    fn predict(&self, sol: &Solution, word: &LaggedDesign, range: Range<usize>) -> Array2<f64> {
        let pt = self.xt_design.layout.n_params();
        let mut y = self
            .xt_design
            .apply(sol.weights.slice(s![..pt, ..]), range.start, range.end);
        y += &word.apply(sol.weights.slice(s![pt.., ..]), range.start, range.end);
        let offset = &sol.response_means - &sol.weights.t().dot(&sol.feature_means);
        y += &offset.insert_axis(Axis(1));
        y
    }

    /// Objective on `range`, averaged over subjects. NaN marks an undefined score.
    fn score(&self, predicted: &Array2<f64>, range: Range<usize>) -> Result<f64> {
        let observed = self.data.responses.slice(s![.., range]);
        let mut per_subject = Vec::with_capacity(self.data.n_subjects());
        for rows in &self.data.subject_rows {
            let obs = observed.slice(s![rows.clone(), ..]);
            let pred = predicted.slice(s![rows.clone(), ..]);
            let v = match self.options.objective {
                Objective::Correlation => match sensor_correlations(obs, pred) {
                    Ok(r) => mean(&r),
                    Err(Error::ZeroVariance(_)) => f64::NAN,
                    Err(e) => return Err(e),
                },
                Objective::SquaredError => {
                    -(&obs - &pred).mapv(|d| d * d).mean().unwrap_or(f64::NAN)
                }
            };
            per_subject.push(v);
        }
        Ok(mean(&per_subject))
    }

    fn fold_score(&self, fold: usize, spec: &LinkingSpec, ridge: f64) -> Result<f64> {
        let key = (Some(fold), self.design_key(spec), ridge.to_bits());
        if let Some(v) = self.cache.lock().expect("score cache").get(&key) {
            return Ok(*v);
        }
        let word = self.word_design(spec)?;
        let score = match self.solve(&self.fold_blocks[fold], &word, ridge) {
            Ok(sol) => {
                let range = self.split.scored_validation(fold);
                let pred = self.predict(&sol, &word, range.clone());
                self.score(&pred, range)?
            }
            Err(Error::Singular { .. }) => f64::NAN,
            Err(e) => return Err(e),
        };
        self.cache.lock().expect("score cache").insert(key, score);
        Ok(score)
    }

    /// Validation score of every fold at `params`.
    pub fn cross_validate(&self, params: &TrialParams) -> Result<Vec<f64>> {
        let recognition = self.recognition(params)?;
        (0..self.split.n_folds())
            .into_par_iter()
            .map(|fold| {
                let (spec, _) = self.word_spec(recognition.as_deref(), Some(fold))?;
                self.fold_score(fold, &spec, params.ridge)
            })
            .collect()
    }

    /// Refits at `params` on the whole training span and scores the test block once.
    pub fn refit(&self, params: &TrialParams) -> Result<FinalFit> {
        let recognition = self.recognition(params)?;
        let (spec, grouping) = self.word_spec(recognition.as_deref(), None)?;
        let word = self.word_design(&spec)?;
        let sol = self.solve(&self.final_blocks, &word, params.ridge)?;
        let range = self.split.scored_test();
        let pred = self.predict(&sol, &word, range.clone());
        let observed = self.data.responses.slice(s![.., range]);
        let layout = self.layout();
        let mut models = Vec::with_capacity(self.data.n_subjects());
        let mut test_scores = Vec::with_capacity(self.data.n_subjects());
        let mut test_predictions = Vec::with_capacity(self.data.n_subjects());
        for (i, rows) in self.data.subject_rows.iter().enumerate() {
            let p = pred.slice(s![rows.clone(), ..]).to_owned();
            let r = sensor_correlations(observed.slice(s![rows.clone(), ..]), p.view())?;
            test_scores.push(SubjectTestScores {
                subject: self.data.subjects[i].clone(),
                sensors: self.data.sensors[i].clone(),
                mean_r: mean(&r),
                r,
            });
            test_predictions.push(p);
            models.push(TrfModel {
                layout: layout.clone(),
                sensors: self.data.sensors[i].clone(),
                ridge: RidgePenalty::Global(sol.penalty),
                weights: sol.weights.slice(s![.., rows.clone()]).to_owned(),
                feature_means: sol.feature_means.clone(),
                response_means: sol.response_means.slice(s![rows.clone()]).to_owned(),
            });
        }
        Ok(FinalFit {
            params: *params,
            penalty: sol.penalty,
            models,
            test_scores,
            test_predictions,
            recognition,
            grouping,
        })
    }

    /// Each subject's prediction over the whole timeline from a final fit.
    pub fn predict_timeline(&self, fit: &FinalFit) -> Result<Vec<Array2<f64>>> {
        let (spec, _) = self.word_spec(fit.recognition.as_deref(), None)?;
        let word = self.word_design(&spec)?;
        let pt = self.xt_design.layout.n_params();
        let n = self.data.n_samples();
        fit.models
            .iter()
            .map(|m| {
                if m.weights.nrows() != pt + word.layout.n_params() {
                    return Err(Error::Shape(format!(
                        "model has {} coefficients per sensor, the {} design has {}",
                        m.weights.nrows(),
                        self.variant.as_str(),
                        pt + word.layout.n_params()
                    )));
                }
                let mut y = self.xt_design.apply(m.weights.slice(s![..pt, ..]), 0, n);
                y += &word.apply(m.weights.slice(s![pt.., ..]), 0, n);
                y += &m.offset().insert_axis(Axis(1));
                Ok(y)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: usize,
    pub params: TrialParams,
    pub fold_scores: Vec<Option<f64>>,
    /// Mean validation score; absent when the trial was discarded.
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub variant: LinkingVariant,
    pub objective: Objective,
    pub subjects: Vec<String>,
    pub split: DataSplit,
    pub best_trial: usize,
    pub best: TrialParams,
    /// Absolute ridge penalty of the refitted model.
    pub ridge_penalty: f64,
    pub validation_scores: Vec<f64>,
    pub validation_score: f64,
    pub test_scores: Vec<SubjectTestScores>,
    /// Edges of the tertile split used by the refitted model, if grouped.
    pub tertile_edges: Option<[f64; 2]>,
    /// Parameters whose extreme values leave the validation score unchanged.
    pub insensitive_parameters: Vec<String>,
    pub trials: Vec<TrialRecord>,
}

impl FitReport {
    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self).map_err(|e| Error::Numerical(e.to_string()))
    }

    /// One row per trial: parameters, fold scores and the mean.
    pub fn write_trials_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::Numerical(format!("csv write: {e}"));
        let n_folds = self.split.n_folds();
        let mut header: Vec<String> = vec!["trial".into()];
        header.extend(PARAMETER_NAMES.iter().map(|s| s.to_string()));
        header.extend((0..n_folds).map(|f| format!("fold_{f}")));
        header.push("score".into());
        wr.write_record(&header).map_err(err)?;
        let fmt = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v:e}"));
        for t in &self.trials {
            let p = &t.params;
            let mut row = vec![t.index.to_string()];
            row.extend(
                [
                    p.threshold,
                    p.temperature,
                    p.scatter,
                    p.prior_scatter,
                    p.ridge,
                ]
                .map(|v| format!("{v:e}")),
            );
            row.extend(t.fold_scores.iter().map(|v| fmt(*v)));
            row.push(fmt(t.score));
            wr.write_record(&row).map_err(err)?;
        }
        wr.flush().map_err(|e| Error::Numerical(e.to_string()))
    }
}

/// Search results plus the refitted models.
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub report: FitReport,
    pub fit: FinalFit,
}

/// Relative change below which a parameter counts as having no effect.
const FLAT_TOLERANCE: f64 = 1e-12;

fn trial_record(index: usize, params: TrialParams, folds: Result<Vec<f64>>) -> Result<TrialRecord> {
    let folds = match folds {
        Ok(f) => f,
        Err(e) if !e.is_validation() => {
            log::warn!("trial {index} discarded: {e}");
            Vec::new()
        }
        Err(e) => return Err(e),
    };
    let score = if !folds.is_empty() && folds.iter().all(|v| v.is_finite()) {
        Some(mean(&folds))
    } else {
        log::warn!("trial {index} discarded: non-finite validation score");
        None
    };
    Ok(TrialRecord {
        index,
        params,
        fold_scores: folds.iter().map(|&v| v.is_finite().then_some(v)).collect(),
        score,
    })
}

/// Runs `space.budget` trials, refits the best one and scores it on the test block.
pub fn search(pipeline: &Pipeline<'_>, space: &SearchSpace) -> Result<SearchOutcome> {
    space.validate()?;
    let mut sampler = Sampler::new(space);
    let mut trials = Vec::with_capacity(space.budget);
    if space.sampler == SamplerKind::Random {
        // Proposals do not depend on history, so trials can run concurrently.
        let points: Vec<UnitPoint> = (0..space.budget).map(|_| sampler.propose(&[])).collect();
        let records: Vec<Result<TrialRecord>> = points
            .par_iter()
            .enumerate()
            .map(|(i, u)| {
                let p = space.point(u);
                trial_record(i, p, pipeline.cross_validate(&p))
            })
            .collect();
        for r in records {
            trials.push(r?);
        }
    } else {
        let mut history: Vec<(UnitPoint, f64)> = Vec::new();
        for i in 0..space.budget {
            let u = sampler.propose(&history);
            let p = space.point(&u);
            let rec = trial_record(i, p, pipeline.cross_validate(&p))?;
            if let Some(s) = rec.score {
                history.push((u, s));
            }
            trials.push(rec);
        }
    }
    let (best_trial, best_score) = trials
        .iter()
        .filter_map(|t| t.score.map(|s| (t.index, s)))
        .fold(None, |acc: Option<(usize, f64)>, (i, s)| match acc {
            Some((_, b)) if b >= s => acc,
            _ => Some((i, s)),
        })
        .ok_or_else(|| {
            Error::Numerical(format!(
                "all {} trials produced non-finite scores",
                trials.len()
            ))
        })?;
    let best = trials[best_trial].params;
    let insensitive_parameters = insensitive_parameters(pipeline, space, &best, best_score)?;
    let fit = pipeline.refit(&best)?;
    let report = FitReport {
        variant: pipeline.variant,
        objective: pipeline.options.objective,
        subjects: pipeline.data.subjects.clone(),
        split: pipeline.split.clone(),
        best_trial,
        best,
        ridge_penalty: fit.penalty,
        validation_scores: trials[best_trial]
            .fold_scores
            .iter()
            .map(|v| v.unwrap_or(f64::NAN))
            .collect(),
        validation_score: best_score,
        test_scores: fit.test_scores.clone(),
        tertile_edges: fit
            .grouping
            .as_ref()
            .filter(|g| !g.degenerate)
            .map(|g| g.edges),
        insensitive_parameters,
        trials,
    };
    Ok(SearchOutcome { report, fit })
}

/// Parameters whose search-range extremes (holding the others at `best`)
/// reproduce the best score.
fn insensitive_parameters(
    pipeline: &Pipeline<'_>,
    space: &SearchSpace,
    best: &TrialParams,
    best_score: f64,
) -> Result<Vec<String>> {
    let ridge_lo = space
        .ridge_grid
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let ridge_hi = space
        .ridge_grid
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let probes: [(&str, [TrialParams; 2]); 5] = [
        (
            "threshold",
            space.threshold.map(|v| TrialParams {
                threshold: v,
                ..*best
            }),
        ),
        (
            "temperature",
            space.temperature.map(|v| TrialParams {
                temperature: v,
                ..*best
            }),
        ),
        (
            "scatter",
            space.scatter.map(|v| TrialParams {
                scatter: v,
                ..*best
            }),
        ),
        (
            "prior_scatter",
            space.prior_scatter.map(|v| TrialParams {
                prior_scatter: v,
                ..*best
            }),
        ),
        (
            "ridge",
            [ridge_lo, ridge_hi].map(|v| TrialParams { ridge: v, ..*best }),
        ),
    ];
    let mut flat = Vec::new();
    for (name, points) in probes {
        let mut unchanged = true;
        for p in points {
            let folds = match pipeline.cross_validate(&p) {
                Ok(f) => f,
                Err(e) if !e.is_validation() => vec![f64::NAN],
                Err(e) => return Err(e),
            };
            let s = mean(&folds);
            if !(s.is_finite()
                && (s - best_score).abs() <= FLAT_TOLERANCE * best_score.abs().max(1.0))
            {
                unchanged = false;
                break;
            }
        }
        if unchanged {
            flat.push(name.to_string());
        }
    }
    Ok(flat)
}

#[cfg(test)]
mod tests;
