//! Word-level regressors for the four linking models and statistical
//! comparison of their held-out fits.
//!
//! * `baseline`: onset, surprisal and frequency impulses at word onset.
//! * `shift`: the same three impulses at onset plus recognition time.
//! * `variable`: nine rows, the three features split by recognition-time
//!   tertile, still at word onset.
//! * `prior_variable`: as `variable` but split by surprisal tertile.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    tertile_split, time_to_sample, FeatureSeries, QuantileSplit, WordFeatures, WORD_FEATURE_NAMES,
};
use crate::stats::{mean, paired_t_test};
use crate::trf::sensor_correlations;

pub const TERTILE_NAMES: [&str; 3] = ["early", "mid", "late"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkingVariant {
    Baseline,
    Shift,
    Variable,
    PriorVariable,
}

impl LinkingVariant {
    pub const ALL: [LinkingVariant; 4] = [
        LinkingVariant::Baseline,
        LinkingVariant::Shift,
        LinkingVariant::Variable,
        LinkingVariant::PriorVariable,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LinkingVariant::Baseline => "baseline",
            LinkingVariant::Shift => "shift",
            LinkingVariant::Variable => "variable",
            LinkingVariant::PriorVariable => "prior_variable",
        }
    }

    /// Whether the design depends on recognition times.
    pub fn uses_recognition(self) -> bool {
        matches!(self, LinkingVariant::Shift | LinkingVariant::Variable)
    }

    pub fn is_grouped(self) -> bool {
        matches!(
            self,
            LinkingVariant::Variable | LinkingVariant::PriorVariable
        )
    }

    pub fn feature_names(self) -> Vec<String> {
        if self.is_grouped() {
            TERTILE_NAMES
                .iter()
                .flat_map(|g| WORD_FEATURE_NAMES.iter().map(move |f| format!("{f}_{g}")))
                .collect()
        } else {
            WORD_FEATURE_NAMES.iter().map(|s| s.to_string()).collect()
        }
    }
}

impl fmt::Display for LinkingVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LinkingVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LinkingVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown linking variant {s:?}; expected baseline, shift, variable or prior_variable"
                ))
            })
    }
}

/// Everything needed to place word features for one variant.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkingSpec {
    pub variant: LinkingVariant,
    /// Recognition time relative to word onset, per word in `WordFeatures` order.
    pub recognition_s: Option<Vec<f64>>,
    /// Tertile per word, for the grouped variants.
    pub groups: Option<Vec<usize>>,
}

impl LinkingSpec {
    pub fn baseline() -> Self {
        Self {
            variant: LinkingVariant::Baseline,
            recognition_s: None,
            groups: None,
        }
    }
}

/// Tertile split that defines the groups of a grouped variant, with edges
/// taken from the words flagged in `training` only.
pub fn grouping_split(
    variant: LinkingVariant,
    words: &WordFeatures,
    recognition_s: Option<&[f64]>,
    training: &[bool],
) -> Result<Option<QuantileSplit>> {
    match variant {
        LinkingVariant::Baseline | LinkingVariant::Shift => Ok(None),
        LinkingVariant::Variable => {
            let tau = recognition_s.ok_or_else(|| {
                Error::InvalidArgument("variable model needs recognition times".into())
            })?;
            tertile_split(tau, training).map(Some)
        }
        LinkingVariant::PriorVariable => {
            tertile_split(&words.surprisal().to_vec(), training).map(Some)
        }
    }
}

/// Word-level feature block for the response model.
pub fn assemble_word_design(
    spec: &LinkingSpec,
    words: &WordFeatures,
    fs: f64,
    n_samples: usize,
) -> Result<FeatureSeries> {
    if !(fs.is_finite() && fs > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sampling rate must be positive, got {fs}"
        )));
    }
    let n = words.len();
    let tau = match (spec.variant, &spec.recognition_s) {
        (LinkingVariant::Shift, None) => {
            return Err(Error::InvalidArgument(
                "shift model needs recognition times".into(),
            ));
        }
        (LinkingVariant::Shift, Some(t)) => Some(t),
        _ => None,
    };
    if let Some(t) = tau {
        check_len("recognition times", t.len(), n)?;
        if let Some((i, v)) = t.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "token {}: recognition time {v} is not finite",
                words.token_index[i]
            )));
        }
    }
    let groups = if spec.variant.is_grouped() {
        let g = spec.groups.as_ref().ok_or_else(|| {
            Error::InvalidArgument(format!(
                "{} model needs a tertile assignment per token",
                spec.variant
            ))
        })?;
        check_len("tertile assignments", g.len(), n)?;
        if let Some((i, b)) = g.iter().enumerate().find(|(_, b)| **b > 2) {
            return Err(Error::InvalidArgument(format!(
                "token {}: tertile {b} out of range",
                words.token_index[i]
            )));
        }
        Some(g)
    } else {
        None
    };

    let names = spec.variant.feature_names();
    let mut data = Array2::zeros((names.len(), n_samples));
    for i in 0..n {
        let onset = time_to_sample(words.onset_s[i], fs);
        if onset < 0 || onset as usize >= n_samples {
            return Err(Error::InvalidArgument(format!(
                "token {}: word onset {:.4} s lies outside the recording of {n_samples} samples",
                words.token_index[i], words.onset_s[i]
            )));
        }
        let at = match tau {
            Some(t) => time_to_sample(words.onset_s[i] + t[i], fs),
            None => onset,
        };
        // Shifted events past the end of the recording carry no information.
        if at < 0 || at as usize >= n_samples {
            continue;
        }
        let row0 = groups.map_or(0, |g| 3 * g[i]);
        for f in 0..3 {
            data[[row0 + f, at as usize]] += words.values[[f, i]];
        }
    }
    Ok(FeatureSeries { names, data, fs })
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Shape(format!("{got} {what} for {want} words")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectScore {
    pub subject: String,
    pub score_a: f64,
    pub score_b: f64,
    pub difference: f64,
}

/// Paired comparison of two models across subjects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub model_a: String,
    pub model_b: String,
    pub per_subject_scores: Vec<SubjectScore>,
    pub t: f64,
    /// Two-sided.
    pub p: f64,
    pub n: usize,
    pub zero_variance: bool,
}

/// Held-out responses and both models' predictions for one subject.
#[derive(Debug, Clone, Copy)]
pub struct SubjectPredictions<'a> {
    pub subject: &'a str,
    pub observed: ArrayView2<'a, f64>,
    pub model_a: ArrayView2<'a, f64>,
    pub model_b: ArrayView2<'a, f64>,
}

/// Mean over sensors of the per-sensor Pearson r.
pub fn prediction_score(
    observed: ArrayView2<'_, f64>,
    predicted: ArrayView2<'_, f64>,
) -> Result<f64> {
    Ok(mean(&sensor_correlations(observed, predicted)?))
}

pub fn compare_fit(
    model_a: &str,
    model_b: &str,
    subjects: &[SubjectPredictions<'_>],
) -> Result<ComparisonReport> {
    let scores_a = subjects
        .iter()
        .map(|s| {
            Ok((
                s.subject.to_string(),
                prediction_score(s.observed, s.model_a)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let scores_b = subjects
        .iter()
        .map(|s| {
            Ok((
                s.subject.to_string(),
                prediction_score(s.observed, s.model_b)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    compare_scores(model_a, model_b, &scores_a, &scores_b)
}

/// Paired t-test on per-subject scores, matched by subject id.
pub fn compare_scores(
    model_a: &str,
    model_b: &str,
    scores_a: &[(String, f64)],
    scores_b: &[(String, f64)],
) -> Result<ComparisonReport> {
    let mut ids_a: Vec<&str> = scores_a.iter().map(|(s, _)| s.as_str()).collect();
    let mut ids_b: Vec<&str> = scores_b.iter().map(|(s, _)| s.as_str()).collect();
    ids_a.sort_unstable();
    ids_b.sort_unstable();
    if ids_a != ids_b || ids_a.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidArgument(format!(
            "subject sets differ or repeat: {ids_a:?} vs {ids_b:?}"
        )));
    }
    if scores_a.len() < 2 {
        return Err(Error::InvalidArgument(
            "model comparison needs at least two subjects".into(),
        ));
    }
    let per_subject: Vec<SubjectScore> = scores_a
        .iter()
        .map(|(subject, a)| {
            let b = scores_b
                .iter()
                .find(|(s, _)| s == subject)
                .map(|(_, b)| *b)
                .unwrap_or(f64::NAN);
            SubjectScore {
                subject: subject.clone(),
                score_a: *a,
                score_b: b,
                difference: a - b,
            }
        })
        .collect();
    let a: Vec<f64> = per_subject.iter().map(|s| s.score_a).collect();
    let b: Vec<f64> = per_subject.iter().map(|s| s.score_b).collect();
    let test = paired_t_test(&a, &b)?;
    Ok(ComparisonReport {
        model_a: model_a.to_string(),
        model_b: model_b.to_string(),
        per_subject_scores: per_subject,
        t: test.t,
        p: test.p,
        n: test.n,
        zero_variance: test.zero_variance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub latency_s: f64,
    pub amplitude: f64,
}

/// Most negative coefficient of a lag kernel within `[window.0, window.1]` seconds.
pub fn negative_peak(kernel: &Array1<f64>, fs: f64, window: (f64, f64)) -> Option<Peak> {
    kernel
        .iter()
        .enumerate()
        .map(|(a, &v)| (a as f64 / fs, v))
        .filter(|(lag, _)| *lag >= window.0 - 1e-12 && *lag <= window.1 + 1e-12)
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .map(|(latency_s, amplitude)| Peak {
            latency_s,
            amplitude,
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trf::{FeatureLayout, LaggedDesign, TrfModel};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn toy_words() -> WordFeatures {
        WordFeatures {
            token_index: vec![0, 1, 2],
            onset_s: vec![0.1, 0.5, 1.0],
            values: Array2::from_shape_vec(
                (3, 3),
                vec![1.0, 1.0, 1.0, 2.5, 0.7, 4.0, -3.0, -4.5, -2.0],
            )
            .unwrap(),
        }
    }

    #[test]
    fn baseline_places_features_at_onsets() {
        let d = assemble_word_design(&LinkingSpec::baseline(), &toy_words(), 100.0, 200).unwrap();
        assert_eq!(d.names, WORD_FEATURE_NAMES.to_vec());
        for (i, &t) in [10usize, 50, 100].iter().enumerate() {
            assert_eq!(d.data[[1, t]], toy_words().values[[1, i]]);
        }
        assert_eq!(d.data.iter().filter(|v| **v != 0.0).count(), 9);
    }

    #[test]
    fn shift_by_zero_is_baseline() {
        let words = toy_words();
        let base = assemble_word_design(&LinkingSpec::baseline(), &words, 100.0, 200).unwrap();
        let shift = LinkingSpec {
            variant: LinkingVariant::Shift,
            recognition_s: Some(vec![0.0; 3]),
            groups: None,
        };
        assert_eq!(
            assemble_word_design(&shift, &words, 100.0, 200).unwrap(),
            base
        );
        // Shifts that round onto the onset sample change nothing either.
        let tiny = LinkingSpec {
            recognition_s: Some(vec![0.004, 0.0, 0.0049]),
            ..shift
        };
        assert_eq!(
            assemble_word_design(&tiny, &words, 100.0, 200)
                .unwrap()
                .data,
            base.data
        );
    }

    #[test]
    fn toy_variable_design_by_hand() {
        // Recognition times 10, 50, 200 ms; edges from all three words put
        // one word in each tertile.
        let words = toy_words();
        let tau = vec![0.010, 0.050, 0.200];
        let split = grouping_split(LinkingVariant::Variable, &words, Some(&tau), &[true; 3])
            .unwrap()
            .unwrap();
        assert_eq!(split.assignment, vec![0, 1, 2]);
        let spec = LinkingSpec {
            variant: LinkingVariant::Variable,
            recognition_s: Some(tau),
            groups: Some(split.assignment),
        };
        let d = assemble_word_design(&spec, &words, 100.0, 200).unwrap();
        assert_eq!(d.names[4], "word_surprisal_mid");
        let onsets = [10usize, 50, 100];
        for (word, &t) in onsets.iter().enumerate() {
            for group in 0..3 {
                for f in 0..3 {
                    let want = if group == word {
                        words.values[[f, word]]
                    } else {
                        0.0
                    };
                    assert_eq!(
                        d.data[[3 * group + f, t]],
                        want,
                        "word {word} group {group} feature {f}"
                    );
                }
            }
        }
        assert_eq!(d.data.iter().filter(|v| **v != 0.0).count(), 9);
    }

    #[test]
    fn single_tertile_leaves_six_rows_empty() {
        let words = toy_words();
        let base = assemble_word_design(&LinkingSpec::baseline(), &words, 100.0, 200).unwrap();
        let spec = LinkingSpec {
            variant: LinkingVariant::Variable,
            recognition_s: Some(vec![0.1; 3]),
            groups: Some(vec![1; 3]),
        };
        let d = assemble_word_design(&spec, &words, 100.0, 200).unwrap();
        for r in 0..9 {
            if (3..6).contains(&r) {
                assert_eq!(d.data.row(r), base.data.row(r - 3));
            } else {
                assert!(d.data.row(r).iter().all(|v| *v == 0.0));
            }
        }
    }

    #[test]
    fn tied_coefficients_reproduce_baseline_predictions() {
        let words = toy_words();
        let fs = 100.0;
        let base = assemble_word_design(&LinkingSpec::baseline(), &words, fs, 200).unwrap();
        let spec = LinkingSpec {
            variant: LinkingVariant::PriorVariable,
            recognition_s: None,
            groups: Some(vec![2, 0, 1]),
        };
        let var = assemble_word_design(&spec, &words, fs, 200).unwrap();
        let base_layout = FeatureLayout::new(base.names.clone(), vec![5; 3], fs).unwrap();
        let var_layout = FeatureLayout::new(var.names.clone(), vec![5; 9], fs).unwrap();
        let theta =
            Array2::from_shape_fn((15, 2), |(i, s)| (i as f64 * 0.37 - 1.0) * (s as f64 + 1.0));
        let tied = ndarray::concatenate![ndarray::Axis(0), theta, theta, theta];
        let sensors = vec!["a".to_string(), "b".to_string()];
        let m_base = TrfModel::from_weights(base_layout.clone(), sensors.clone(), theta).unwrap();
        let m_var = TrfModel::from_weights(var_layout.clone(), sensors, tied).unwrap();
        let y_base = m_base
            .predict(&LaggedDesign::new(&base, base_layout).unwrap())
            .unwrap();
        let y_var = m_var
            .predict(&LaggedDesign::new(&var, var_layout).unwrap())
            .unwrap();
        for (a, b) in y_base.iter().zip(y_var.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn missing_inputs_are_errors() {
        let words = toy_words();
        let shift = LinkingSpec {
            variant: LinkingVariant::Shift,
            recognition_s: None,
            groups: None,
        };
        assert!(assemble_word_design(&shift, &words, 100.0, 200).is_err());
        let var = LinkingSpec {
            variant: LinkingVariant::Variable,
            recognition_s: Some(vec![0.0; 3]),
            groups: Some(vec![0, 1]),
        };
        assert!(assemble_word_design(&var, &words, 100.0, 200).is_err());
        assert!(assemble_word_design(&LinkingSpec::baseline(), &words, 100.0, 50).is_err());
        assert!("nope".parse::<LinkingVariant>().is_err());
        assert_eq!(
            "prior_variable".parse::<LinkingVariant>().unwrap(),
            LinkingVariant::PriorVariable
        );
    }

    #[test]
    fn shifted_events_past_the_end_are_dropped() {
        let words = toy_words();
        let spec = LinkingSpec {
            variant: LinkingVariant::Shift,
            recognition_s: Some(vec![0.0, 0.0, 5.0]),
            groups: None,
        };
        let d = assemble_word_design(&spec, &words, 100.0, 200).unwrap();
        assert_eq!(d.data.iter().filter(|v| **v != 0.0).count(), 6);
    }

    #[test]
    fn comparison_of_identical_models() {
        let y = Array2::from_shape_fn((2, 20), |(s, t)| ((t * 7 + s) % 5) as f64);
        let p = Array2::from_shape_fn((2, 20), |(s, t)| ((t * 3 + s) % 4) as f64);
        let subjects: Vec<SubjectPredictions> = ["s1", "s2", "s3"]
            .iter()
            .map(|id| SubjectPredictions {
                subject: id,
                observed: y.view(),
                model_a: p.view(),
                model_b: p.view(),
            })
            .collect();
        let r = compare_fit("m", "m", &subjects).unwrap();
        assert_eq!((r.t, r.p, r.zero_variance, r.n), (0.0, 1.0, true, 3));
    }

    #[test]
    fn hand_differences_and_mismatched_subjects() {
        let a: Vec<(String, f64)> = [0.4, 0.5, 0.45, 0.35]
            .iter()
            .enumerate()
            .map(|(i, v)| (format!("s{i}"), *v))
            .collect();
        let b: Vec<(String, f64)> = (0..4).map(|i| (format!("s{i}"), 0.3)).collect();
        let r = compare_scores("a", "b", &a, &b).unwrap();
        let diffs: Vec<f64> = r.per_subject_scores.iter().map(|s| s.difference).collect();
        let m = diffs.iter().sum::<f64>() / 4.0;
        let sd = (diffs.iter().map(|d| (d - m).powi(2)).sum::<f64>() / 3.0).sqrt();
        assert_abs_diff_eq!(r.t, m / (sd / 2.0), epsilon = 1e-12);
        assert_abs_diff_eq!(r.t, 3.8729833462074184, epsilon = 1e-9);
        let mut c = b.clone();
        c[0].0 = "other".into();
        assert!(compare_scores("a", "b", &a, &c).is_err());
    }

    #[test]
    fn peak_extraction() {
        let fs = 100.0;
        let k = Array1::from_shape_fn(81, |a| {
            -2.0 * (-0.5 * ((a as f64 / fs - 0.4) / 0.05).powi(2)).exp()
        });
        let p = negative_peak(&k, fs, (0.2, 0.6)).unwrap();
        assert_abs_diff_eq!(p.latency_s, 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(p.amplitude, -2.0, epsilon = 1e-12);
        assert!(negative_peak(&k, fs, (2.0, 3.0)).is_none());
    }

    proptest! {
        #[test]
        fn grouped_rows_sum_to_baseline(groups in proptest::collection::vec(0usize..3, 3)) {
            let words = toy_words();
            let base = assemble_word_design(&LinkingSpec::baseline(), &words, 100.0, 200).unwrap();
            let spec = LinkingSpec { variant: LinkingVariant::PriorVariable, recognition_s: None, groups: Some(groups) };
            let d = assemble_word_design(&spec, &words, 100.0, 200).unwrap();
            for f in 0..3 {
                let summed = &d.data.row(f) + &d.data.row(3 + f) + d.data.row(6 + f);
                prop_assert_eq!(summed, base.data.row(f).to_owned());
            }
        }

        #[test]
        fn comparison_is_antisymmetric(xs in proptest::collection::vec(-1.0f64..1.0, 6)) {
            let a: Vec<(String, f64)> = xs[..3].iter().enumerate().map(|(i, v)| (format!("s{i}"), *v)).collect();
            let b: Vec<(String, f64)> = xs[3..].iter().enumerate().map(|(i, v)| (format!("s{i}"), *v)).collect();
            let ab = compare_scores("a", "b", &a, &b).unwrap();
            let ba = compare_scores("b", "a", &b, &a).unwrap();
            prop_assert_eq!(ab.t, -ba.t);
            prop_assert_eq!(ab.p, ba.p);
        }
    }
}
