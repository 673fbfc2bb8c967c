//! Regression predictors: the sublexical/acoustic series X_t, word-level
//! features X_v, and quantile splits over word-level variables.

mod transcript;

use std::collections::HashMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use transcript::{PhonemeTiming, StimulusTranscript, WordToken, SPECTRAL_BANDS};

use crate::cognitive::PriorTable;
use crate::cohort::TokenCohortFeatures;
use crate::error::{Error, Result};

/// Nearest sample to `time_s`, rounding halves up.
pub fn time_to_sample(time_s: f64, fs: f64) -> i64 {
    (time_s * fs + 0.5).floor() as i64
}

fn sample_in_bounds(
    time_s: f64,
    fs: f64,
    n_samples: usize,
    what: impl FnOnce() -> String,
) -> Result<usize> {
    let s = time_to_sample(time_s, fs);
    if s < 0 || s as usize >= n_samples {
        return Err(Error::InvalidArgument(format!(
            "{} at {time_s:.4} s (sample {s}) lies outside the recording of {n_samples} samples",
            what()
        )));
    }
    Ok(s as usize)
}

/// Named feature channels sampled at the neural rate (`channels × samples`).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSeries {
    pub names: Vec<String>,
    pub data: Array2<f64>,
    pub fs: f64,
}

impl FeatureSeries {
    pub fn n_samples(&self) -> usize {
        self.data.ncols()
    }

    pub fn n_channels(&self) -> usize {
        self.data.nrows()
    }

    /// Stacks channel blocks that share a sampling rate and length.
    pub fn stack(parts: &[&FeatureSeries]) -> Result<FeatureSeries> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("nothing to stack".into()))?;
        let views: Vec<_> = parts.iter().map(|p| p.data.view()).collect();
        for p in parts {
            if p.fs != first.fs || p.n_samples() != first.n_samples() {
                return Err(Error::Shape(
                    "feature blocks differ in rate or length".into(),
                ));
            }
        }
        let data = ndarray::concatenate(ndarray::Axis(0), &views)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Ok(FeatureSeries {
            names: parts.iter().flat_map(|p| p.names.iter().cloned()).collect(),
            data,
            fs: first.fs,
        })
    }
}

/// How per-phoneme scalar controls enter the series.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Deposit {
    /// One impulse at the phoneme onset, scaled by the value.
    #[default]
    Impulse,
    /// The value held over the phoneme's span.
    Boxcar,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XtOptions {
    #[serde(default)]
    pub deposit: Deposit,
    /// Keep cohort features of tokens whose pronunciation left the cohort.
    #[serde(default)]
    pub include_flagged: bool,
}

impl Default for XtOptions {
    fn default() -> Self {
        Self {
            deposit: Deposit::Impulse,
            include_flagged: false,
        }
    }
}

pub const PHONEME_ONSET: &str = "phoneme_onset";
pub const ENVELOPE_VAR: &str = "envelope_var";
pub const PHONEME_SURPRISAL: &str = "phoneme_surprisal";
pub const PHONEME_ENTROPY: &str = "phoneme_entropy";

/// Channel names of X_t in row order.
pub fn xt_channel_names() -> Vec<String> {
    let mut names = vec![PHONEME_ONSET.to_string(), ENVELOPE_VAR.to_string()];
    names.extend((0..SPECTRAL_BANDS).map(|b| format!("spectral_{b}")));
    names.push(PHONEME_SURPRISAL.into());
    names.push(PHONEME_ENTROPY.into());
    names
}

/// Builds X_t: phoneme-onset impulses, envelope variance, eight spectral
/// bands, phoneme surprisal and entropy.
///
/// `cohort` is matched to words by token index; words without an entry get
/// zero surprisal/entropy.
pub fn build_xt(
    transcript: &StimulusTranscript,
    cohort: &[TokenCohortFeatures],
    fs: f64,
    n_samples: usize,
    options: XtOptions,
) -> Result<FeatureSeries> {
    if !(fs > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sampling rate must be positive, got {fs}"
        )));
    }
    let names = xt_channel_names();
    let mut data = Array2::<f64>::zeros((names.len(), n_samples));
    let by_token: HashMap<usize, &TokenCohortFeatures> =
        cohort.iter().map(|c| (c.token_index, c)).collect();

    for w in transcript.words() {
        let info = by_token
            .get(&w.token_index)
            .filter(|c| options.include_flagged || !c.flagged);
        if let Some(c) = info {
            if c.rows.len() != w.phonemes.len() {
                return Err(Error::Shape(format!(
                    "token {}: {} cohort rows for {} phonemes",
                    w.token_index,
                    c.rows.len(),
                    w.phonemes.len()
                )));
            }
        }
        for (k, p) in w.phonemes.iter().enumerate() {
            let onset = w.onset_s + p.onset_s;
            let start = sample_in_bounds(onset, fs, n_samples, || {
                format!("token {} phoneme {}", w.token_index, k + 1)
            })?;
            let end = match options.deposit {
                Deposit::Impulse => start + 1,
                Deposit::Boxcar => (time_to_sample(onset + p.duration_s, fs).max(start as i64 + 1)
                    as usize)
                    .min(n_samples),
            };
            data[[0, start]] += 1.0;
            let mut scalars = Vec::with_capacity(names.len() - 1);
            scalars.push(p.envelope_var);
            scalars.extend_from_slice(&p.spectral);
            if let Some(c) = info {
                scalars.push(c.rows[k].surprisal_bits);
                scalars.push(c.rows[k].entropy_bits);
            } else {
                scalars.extend([0.0, 0.0]);
            }
            debug_assert_eq!(scalars.len() + 1, names.len());
            for (row, v) in scalars.into_iter().enumerate() {
                for s in start..end {
                    data[[row + 1, s]] += v;
                }
            }
        }
    }
    Ok(FeatureSeries { names, data, fs })
}

/// Unigram counts; frequencies are `log10(count / total)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UnigramTable {
    log_freq: HashMap<String, f64>,
    floor: f64,
}

impl UnigramTable {
    /// Zero counts are imputed to 1 before normalising; unknown words get the
    /// smallest observed value.
    pub fn from_counts(counts: impl IntoIterator<Item = (String, u64)>) -> Result<Self> {
        let counts: Vec<(String, u64)> = counts.into_iter().map(|(f, c)| (f, c.max(1))).collect();
        if counts.is_empty() {
            return Err(Error::InvalidArgument("unigram table is empty".into()));
        }
        let total: f64 = counts.iter().map(|(_, c)| *c as f64).sum();
        let log_freq: HashMap<String, f64> = counts
            .into_iter()
            .map(|(f, c)| (f, (c as f64 / total).log10()))
            .collect();
        let floor = log_freq.values().copied().fold(f64::INFINITY, f64::min);
        Ok(Self { log_freq, floor })
    }

    pub fn read_csv<R: std::io::Read>(reader: R, source: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut counts = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let ctx = format!("{source}:{}", i + 2);
            let rec = rec.map_err(|e| Error::load(&ctx, e.to_string()))?;
            let form = rec.get(0).unwrap_or_default().to_string();
            let count = rec
                .get(1)
                .and_then(|c| c.parse::<u64>().ok())
                .ok_or_else(|| Error::load(&ctx, "count must be a non-negative integer"))?;
            counts.push((form, count));
        }
        Self::from_counts(counts).map_err(|e| Error::load(source, e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(file, &path.display().to_string())
    }

    pub fn log_frequency(&self, form: &str) -> f64 {
        self.log_freq.get(form).copied().unwrap_or(self.floor)
    }
}

pub const WORD_FEATURE_NAMES: [&str; 3] = ["word_onset", "word_surprisal", "word_frequency"];

/// X_v: one column per word (onset indicator, surprisal in bits, log10 frequency).
#[derive(Debug, Clone, PartialEq)]
pub struct WordFeatures {
    pub token_index: Vec<usize>,
    pub onset_s: Vec<f64>,
    pub values: Array2<f64>,
}

impl WordFeatures {
    pub fn len(&self) -> usize {
        self.token_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_index.is_empty()
    }

    pub fn surprisal(&self) -> ndarray::ArrayView1<'_, f64> {
        self.values.row(1)
    }
}

pub fn build_xv(
    transcript: &StimulusTranscript,
    priors: &PriorTable,
    unigram: &UnigramTable,
) -> Result<WordFeatures> {
    let n = transcript.len();
    let mut values = Array2::zeros((3, n));
    for (i, w) in transcript.words().iter().enumerate() {
        let cands = priors.get(w.token_index).ok_or_else(|| {
            Error::InvalidArgument(format!("token {}: no prior entry", w.token_index))
        })?;
        let prior = cands
            .iter()
            .find(|c| c.form == w.form)
            .map(|c| c.prior)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "token {}: ground truth {:?} missing from its candidates",
                    w.token_index, w.form
                ))
            })?;
        values[[0, i]] = 1.0;
        values[[1, i]] = (-prior.log2()).max(0.0);
        values[[2, i]] = unigram.log_frequency(&w.form);
    }
    Ok(WordFeatures {
        token_index: transcript.words().iter().map(|w| w.token_index).collect(),
        onset_s: transcript.words().iter().map(|w| w.onset_s).collect(),
        values,
    })
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Three-way split of a word-level variable. Bins are `[.., e1)`, `[e1, e2)`,
/// `[e2, ..]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileSplit {
    pub edges: [f64; 2],
    /// All training values were equal; every token is put in bin 0.
    pub degenerate: bool,
    pub assignment: Vec<usize>,
}

impl QuantileSplit {
    pub fn bin(&self, value: f64) -> usize {
        if self.degenerate || value < self.edges[0] {
            0
        } else if value < self.edges[1] {
            1
        } else {
            2
        }
    }

    pub fn counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for &b in &self.assignment {
            c[b] += 1;
        }
        c
    }
}

/// Tertile edges from the values where `training` is true; every value is assigned.
pub fn tertile_split(values: &[f64], training: &[bool]) -> Result<QuantileSplit> {
    if values.len() != training.len() {
        return Err(Error::Shape(format!(
            "{} values but {} mask entries",
            values.len(),
            training.len()
        )));
    }
    let mut train: Vec<f64> = values
        .iter()
        .zip(training)
        .filter(|(_, &t)| t)
        .map(|(&v, _)| v)
        .collect();
    if train.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "tertile split needs at least 3 training tokens, got {}",
            train.len()
        )));
    }
    if train.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite value in tertile split".into()));
    }
    train.sort_by(f64::total_cmp);
    let edges = [quantile(&train, 1.0 / 3.0), quantile(&train, 2.0 / 3.0)];
    let degenerate = train[0] == train[train.len() - 1];
    let mut split = QuantileSplit {
        edges,
        degenerate,
        assignment: Vec::new(),
    };
    split.assignment = values.iter().map(|&v| split.bin(v)).collect();
    Ok(split)
}
