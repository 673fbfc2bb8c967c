//! Incremental Bayesian word recognition.
//!
//! For each word token the posterior over candidate wordforms is tracked as
//! phonemes arrive: `P(w | C, I<=k) ∝ P(w | C) · Π_{j<=k} P(I_j | w_j)^(1/λ)`.
//! The recognition point is the first `k` at which the posterior on the
//! ground-truth word exceeds the threshold γ, and the recognition time is a
//! fraction α of that phoneme's span (or α_p of the first phoneme when the
//! word is recognised before any input).
//!
//! All arithmetic is in log space. A candidate shorter than the observed
//! prefix is dropped from the candidate set once the prefix outgrows it.

use std::collections::{BTreeMap, HashSet};
use std::io::BufRead;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{StimulusTranscript, WordToken};
use crate::lexicon::{ConfusionMatrix, Lexicon, PhonemeInventory};

/// Slack allowed on the total prior mass of a candidate set.
pub const PRIOR_MASS_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub form: String,
    pub prior: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PriorRecord {
    token_index: usize,
    candidates: Vec<Candidate>,
}

/// Contextual priors `P(w | C)` for every token, keyed by token index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PriorTable {
    entries: BTreeMap<usize, Vec<Candidate>>,
}

impl PriorTable {
    pub fn new(entries: BTreeMap<usize, Vec<Candidate>>) -> Self {
        Self { entries }
    }

    pub fn get(&self, token_index: usize) -> Option<&[Candidate]> {
        self.entries.get(&token_index).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[Candidate])> {
        self.entries.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    pub fn read_jsonl<R: BufRead>(reader: R, source: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, line) in reader.lines().enumerate() {
            let ctx = || format!("{source}:{}", lineno + 1);
            let line = line.map_err(|e| Error::load(ctx(), e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: PriorRecord =
                serde_json::from_str(&line).map_err(|e| Error::load(ctx(), e.to_string()))?;
            check_priors(&rec.candidates)
                .map_err(|m| Error::load(ctx(), format!("token {}: {m}", rec.token_index)))?;
            if entries.insert(rec.token_index, rec.candidates).is_some() {
                return Err(Error::load(
                    ctx(),
                    format!("duplicate token index {}", rec.token_index),
                ));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_jsonl(std::io::BufReader::new(file), &path.display().to_string())
    }

    pub fn write_jsonl<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        for (&token_index, candidates) in &self.entries {
            let rec = PriorRecord {
                token_index,
                candidates: candidates.clone(),
            };
            let line = serde_json::to_string(&rec).map_err(|e| Error::Numerical(e.to_string()))?;
            writeln!(w, "{line}").map_err(|e| Error::io("<priors>", e))?;
        }
        Ok(())
    }
}

fn check_priors(cands: &[Candidate]) -> std::result::Result<(), String> {
    if cands.is_empty() {
        return Err("empty candidate set".into());
    }
    let mut forms = HashSet::with_capacity(cands.len());
    let mut total = 0.0;
    for c in cands {
        if !(c.prior > 0.0 && c.prior.is_finite()) {
            return Err(format!(
                "prior for {:?} must be positive, got {}",
                c.form, c.prior
            ));
        }
        if !forms.insert(c.form.as_str()) {
            return Err(format!("candidate {:?} listed twice", c.form));
        }
        total += c.prior;
    }
    if total > 1.0 + PRIOR_MASS_TOLERANCE {
        return Err(format!("priors sum to {total} > 1"));
    }
    Ok(())
}

/// Candidates for one token, with the ground truth located among them.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub token_index: usize,
    candidates: Vec<Candidate>,
    truth: usize,
}

impl CandidateSet {
    pub fn new(token_index: usize, candidates: Vec<Candidate>, ground_truth: &str) -> Result<Self> {
        check_priors(&candidates)
            .map_err(|m| Error::InvalidArgument(format!("token {token_index}: {m}")))?;
        let truth = candidates
            .iter()
            .position(|c| c.form == ground_truth)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "token {token_index}: ground truth {ground_truth:?} is not among the candidates"
                ))
            })?;
        Ok(Self {
            token_index,
            candidates,
            truth,
        })
    }

    pub fn candidates(&self) -> &[Candidate] {
        &self.candidates
    }

    pub fn truth_index(&self) -> usize {
        self.truth
    }

    pub fn truth(&self) -> &Candidate {
        &self.candidates[self.truth]
    }

    /// Keeps the `k` highest-prior candidates, always retaining the ground truth.
    pub fn truncated(&self, k: usize) -> Self {
        let mut order: Vec<usize> = (0..self.candidates.len()).collect();
        order.sort_by(|&a, &b| {
            self.candidates[b]
                .prior
                .total_cmp(&self.candidates[a].prior)
                .then(a.cmp(&b))
        });
        let mut keep: Vec<usize> = order.into_iter().take(k.max(1)).collect();
        if !keep.contains(&self.truth) {
            keep.pop();
            keep.push(self.truth);
        }
        keep.sort_unstable();
        let truth = keep
            .iter()
            .position(|&i| i == self.truth)
            .unwrap_or_default();
        Self {
            token_index: self.token_index,
            candidates: keep
                .into_iter()
                .map(|i| self.candidates[i].clone())
                .collect(),
            truth,
        }
    }

    fn resolve<'a>(&self, lex: &'a Lexicon) -> Result<Vec<&'a [usize]>> {
        self.candidates
            .iter()
            .map(|c| {
                lex.get(&c.form).ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "token {}: candidate {:?} is not in the lexicon",
                        self.token_index, c.form
                    ))
                })
            })
            .collect()
    }
}

/// Cognitive model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CognitiveParams {
    /// Recognition threshold γ ∈ (0, 1).
    pub threshold: f64,
    /// Evidence temperature λ ∈ (0, ∞).
    pub temperature: f64,
    /// Scatter point α ∈ (0, 1).
    pub scatter: f64,
    /// Prior scatter point α_p ∈ (0, 1).
    pub prior_scatter: f64,
}

impl Default for CognitiveParams {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            temperature: 1.0,
            scatter: 0.5,
            prior_scatter: 0.5,
        }
    }
}

impl CognitiveParams {
    /// Lists every parameter outside its bounds.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let unit = |name: &str, v: f64, out: &mut Vec<String>| {
            if !(v > 0.0 && v < 1.0) {
                out.push(format!("{name} = {v} is outside (0, 1)"));
            }
        };
        unit("threshold (gamma)", self.threshold, &mut out);
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            out.push(format!(
                "temperature (lambda) = {} is outside (0, inf)",
                self.temperature
            ));
        }
        unit("scatter (alpha)", self.scatter, &mut out);
        unit("prior_scatter (alpha_p)", self.prior_scatter, &mut out);
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecognitionResult {
    pub token_index: usize,
    /// Recognition point; clamped to `|w|` when the threshold is never reached.
    pub k_star: usize,
    pub threshold_reached: bool,
    /// Recognition time in seconds relative to word onset.
    pub tau_s: f64,
    /// Posterior mass on the ground truth for k = 0..=|w|.
    pub trajectory: Vec<f64>,
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Normalised log scores → probabilities; `-inf` entries map to zero.
fn normalise(log_scores: &[f64]) -> Vec<f64> {
    let z = log_sum_exp(log_scores);
    log_scores.iter().map(|&s| (s - z).exp()).collect()
}

/// Log posterior scores (unnormalised) at every prefix length 0..=observed.len().
fn score_trajectory(
    log_priors: &[f64],
    phones: &[&[usize]],
    observed: &[usize],
    cm: &ConfusionMatrix,
) -> Vec<Vec<f64>> {
    let mut scores = log_priors.to_vec();
    let mut out = Vec::with_capacity(observed.len() + 1);
    out.push(scores.clone());
    for (j, &obs) in observed.iter().enumerate() {
        for (s, w) in scores.iter_mut().zip(phones) {
            *s = match w.get(j) {
                Some(&h) => *s + cm.log_likelihood(obs, h),
                None => f64::NEG_INFINITY,
            };
        }
        out.push(scores.clone());
    }
    out
}

fn check_observed(
    cands: &CandidateSet,
    truth_len: usize,
    observed: &[usize],
    cm: &ConfusionMatrix,
) -> Result<()> {
    if observed.len() > truth_len {
        return Err(Error::InvalidArgument(format!(
            "token {}: observed prefix of {} phonemes is longer than the ground truth ({truth_len})",
            cands.token_index,
            observed.len()
        )));
    }
    if let Some(&bad) = observed.iter().find(|&&p| p >= cm.len()) {
        return Err(Error::OutOfRange {
            what: "confusion matrix",
            index: bad,
            len: cm.len(),
        });
    }
    Ok(())
}

/// Posterior over `cands` (same order) after observing `observed_prefix`.
pub fn posterior(
    cands: &CandidateSet,
    observed_prefix: &[usize],
    cm: &ConfusionMatrix,
    lex: &Lexicon,
) -> Result<Vec<f64>> {
    let phones = cands.resolve(lex)?;
    check_observed(cands, phones[cands.truth].len(), observed_prefix, cm)?;
    let log_priors: Vec<f64> = cands.candidates.iter().map(|c| c.prior.ln()).collect();
    let traj = score_trajectory(&log_priors, &phones, observed_prefix, cm);
    Ok(normalise(traj.last().expect("trajectory has k = 0")))
}

/// Full posterior distributions for k = 0..=observed.len().
pub fn posterior_trajectory(
    cands: &CandidateSet,
    observed: &[usize],
    cm: &ConfusionMatrix,
    lex: &Lexicon,
) -> Result<Vec<Vec<f64>>> {
    let phones = cands.resolve(lex)?;
    check_observed(cands, phones[cands.truth].len(), observed, cm)?;
    let log_priors: Vec<f64> = cands.candidates.iter().map(|c| c.prior.ln()).collect();
    Ok(score_trajectory(&log_priors, &phones, observed, cm)
        .iter()
        .map(|s| normalise(s))
        .collect())
}

fn first_above(trajectory: &[f64], threshold: f64) -> Option<usize> {
    trajectory.iter().position(|&p| p > threshold)
}

/// First k in 0..=|observed| with posterior mass on the truth above `threshold`.
pub fn recognition_point(
    cands: &CandidateSet,
    observed: &[usize],
    cm: &ConfusionMatrix,
    lex: &Lexicon,
    threshold: f64,
) -> Result<Option<usize>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold {threshold} outside (0, 1)"
        )));
    }
    let traj = posterior_trajectory(cands, observed, cm, lex)?;
    let truth: Vec<f64> = traj.iter().map(|d| d[cands.truth]).collect();
    Ok(first_above(&truth, threshold))
}

/// Recognition time relative to word onset.
///
/// `onsets`/`durations` are per phoneme (1-based `k` indexes them from 1).
/// `None` (threshold never reached) is placed at the final phoneme.
pub fn recognition_time(
    k_star: Option<usize>,
    onsets: &[f64],
    durations: &[f64],
    scatter: f64,
    prior_scatter: f64,
) -> Result<f64> {
    let n = onsets.len();
    if durations.len() != n {
        return Err(Error::Shape(format!(
            "{n} phoneme onsets but {} durations",
            durations.len()
        )));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("word has no phonemes".into()));
    }
    if let Some(d) = durations.iter().find(|d| !(**d >= 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "negative phoneme duration {d}"
        )));
    }
    let k = k_star.unwrap_or(n);
    if k > n {
        return Err(Error::OutOfRange {
            what: "word phonemes",
            index: k,
            len: n,
        });
    }
    Ok(if k == 0 {
        prior_scatter * durations[0]
    } else {
        onsets[k - 1] + scatter * durations[k - 1]
    })
}

struct PreparedToken {
    token_index: usize,
    log_priors: Vec<f64>,
    /// Indices into the lexicon's phoneme storage, resolved once.
    phones: Vec<Vec<usize>>,
    truth: usize,
    observed: Vec<usize>,
    onsets: Vec<f64>,
    durations: Vec<f64>,
}

/// A transcript joined with its priors and lexicon, ready to be re-run under
/// many parameter settings.
pub struct RecognitionProblem {
    tokens: Vec<PreparedToken>,
}

impl RecognitionProblem {
    pub fn new(
        transcript: &StimulusTranscript,
        priors: &PriorTable,
        lex: &Lexicon,
        inventory: &PhonemeInventory,
        top_k: Option<usize>,
    ) -> Result<Self> {
        if priors.len() != transcript.len() {
            let words: HashSet<usize> = transcript.words().iter().map(|w| w.token_index).collect();
            if let Some((extra, _)) = priors.iter().find(|(i, _)| !words.contains(i)) {
                return Err(Error::InvalidArgument(format!(
                    "prior table has token {extra} which is not in the transcript"
                )));
            }
        }
        let tokens = transcript
            .words()
            .iter()
            .map(|w| Self::prepare(w, priors, lex, inventory, top_k))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { tokens })
    }

    fn prepare(
        w: &WordToken,
        priors: &PriorTable,
        lex: &Lexicon,
        inventory: &PhonemeInventory,
        top_k: Option<usize>,
    ) -> Result<PreparedToken> {
        let entry = priors.get(w.token_index).ok_or_else(|| {
            Error::InvalidArgument(format!("token {}: no prior entry", w.token_index))
        })?;
        let mut cands = CandidateSet::new(w.token_index, entry.to_vec(), &w.form)?;
        if let Some(k) = top_k {
            cands = cands.truncated(k);
        }
        let phones: Vec<Vec<usize>> = cands
            .resolve(lex)?
            .into_iter()
            .map(<[usize]>::to_vec)
            .collect();
        let symbols: Vec<&str> = w.phonemes.iter().map(|p| p.symbol.as_str()).collect();
        let observed = inventory
            .encode(&symbols)
            .map_err(|e| Error::InvalidArgument(format!("token {}: {e}", w.token_index)))?;
        let truth_len = phones[cands.truth].len();
        if observed.len() != truth_len {
            return Err(Error::Shape(format!(
                "token {} ({:?}): transcript has {} phonemes but the lexicon entry has {truth_len}",
                w.token_index,
                w.form,
                observed.len()
            )));
        }
        Ok(PreparedToken {
            token_index: w.token_index,
            log_priors: cands.candidates.iter().map(|c| c.prior.ln()).collect(),
            phones,
            truth: cands.truth,
            observed,
            onsets: w.phonemes.iter().map(|p| p.onset_s).collect(),
            durations: w.phonemes.iter().map(|p| p.duration_s).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Runs every token; `cm`'s temperature is replaced by `params.temperature`.
    pub fn run(
        &self,
        params: &CognitiveParams,
        cm: &ConfusionMatrix,
    ) -> Result<Vec<RecognitionResult>> {
        let cm = cm.with_temperature(params.temperature)?;
        self.tokens
            .par_iter()
            .map(|t| {
                let phones: Vec<&[usize]> = t.phones.iter().map(Vec::as_slice).collect();
                let truth: Vec<f64> = score_trajectory(&t.log_priors, &phones, &t.observed, &cm)
                    .iter()
                    .map(|s| normalise(s)[t.truth])
                    .collect();
                let k_star = first_above(&truth, params.threshold);
                let tau_s = recognition_time(
                    k_star,
                    &t.onsets,
                    &t.durations,
                    params.scatter,
                    params.prior_scatter,
                )?;
                Ok(RecognitionResult {
                    token_index: t.token_index,
                    k_star: k_star.unwrap_or(t.observed.len()),
                    threshold_reached: k_star.is_some(),
                    tau_s,
                    trajectory: truth,
                })
            })
            .collect()
    }
}

/// Recognition results for every token of `transcript`, in transcript order.
pub fn recognize_transcript(
    transcript: &StimulusTranscript,
    priors: &PriorTable,
    params: &CognitiveParams,
    cm: &ConfusionMatrix,
    lex: &Lexicon,
    inventory: &PhonemeInventory,
) -> Result<Vec<RecognitionResult>> {
    params.validate()?;
    RecognitionProblem::new(transcript, priors, lex, inventory, None)?.run(params, cm)
}

/// CSV with columns `token_index,k_star,tau_s,threshold_reached`.
pub fn write_results_csv<W: std::io::Write>(results: &[RecognitionResult], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let err = |e: csv::Error| Error::Numerical(format!("csv write: {e}"));
    out.write_record(["token_index", "k_star", "tau_s", "threshold_reached"])
        .map_err(err)?;
    for r in results {
        out.write_record([
            r.token_index.to_string(),
            r.k_star.to_string(),
            format!("{:.9}", r.tau_s),
            r.threshold_reached.to_string(),
        ])
        .map_err(err)?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
