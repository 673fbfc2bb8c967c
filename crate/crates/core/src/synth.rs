//! Synthetic studies with known ground truth.
//!
//! A random phoneme inventory and lexicon are drawn, each token gets a
//! Dirichlet-distributed prior over a random candidate set and the spoken
//! word is sampled from that prior. Recognition times come from the
//! recognition model run at the true parameters. Sensor data are the
//! forward pass of a response model with Gaussian-bump kernels, with the
//! word-surprisal kernel optionally scaled by recognition-time tertile, plus
//! Gaussian noise.

use std::path::Path;

use faer::linalg::solvers::Solve;
use ndarray::{Array1, Array2};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cognitive::{Candidate, CognitiveParams, PriorTable, RecognitionProblem};
use crate::cohort::transcript_features;
use crate::dataset::{write_file, write_lexicon_jsonl, write_unigram_csv, Stimulus};
use crate::error::{Error, Result};
use crate::features::{
    build_xt, build_xv, tertile_split, xt_channel_names, FeatureSeries, PhonemeTiming,
    StimulusTranscript, UnigramTable, WordToken, XtOptions, SPECTRAL_BANDS, WORD_FEATURE_NAMES,
};
use crate::lexicon::{build_confusion, CountMatrix, Lexicon, PhonemeInventory};
use crate::linking::{assemble_word_design, LinkingSpec, LinkingVariant};
use crate::trf::{
    lag_count, FeatureLayout, LaggedDesign, NeuralRecording, TrfModel, SUBLEXICAL_LAG_WINDOW_S,
    WORD_LAG_WINDOW_S,
};

/// A Gaussian bump `amplitude · exp(-(lag - latency)² / (2 width²))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub latency_s: f64,
    pub width_s: f64,
    pub amplitude: f64,
}

impl Bump {
    pub fn at(&self, lag_s: f64) -> f64 {
        let z = (lag_s - self.latency_s) / self.width_s;
        self.amplitude * (-0.5 * z * z).exp()
    }
}

/// File format of written recordings.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordingFormat {
    /// Binary, single precision.
    #[default]
    Nrc,
    /// Text, full double precision.
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Fixed per-sample standard deviation.
    pub sigma: f64,
    /// Per-sensor signal-to-noise ratio in dB; overrides `sigma` when set.
    pub snr_db: Option<f64>,
    /// Lag-one autocorrelation of the noise; zero gives white noise.
    pub ar1: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            sigma: 0.0,
            snr_db: None,
            ar1: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_subjects: usize,
    pub n_sensors: usize,
    pub fs: f64,
    pub duration_s: f64,
    pub inventory_size: usize,
    pub lexicon_size: usize,
    /// Inclusive range of phonemes per word.
    pub word_length: [usize; 2],
    pub phoneme_duration_s: [f64; 2],
    pub gap_s: [f64; 2],
    /// Unigram counts are log-uniform on `1..10^frequency_decades`.
    pub frequency_decades: f64,
    pub n_candidates: usize,
    /// Dirichlet concentration of the per-token priors; smaller is sharper.
    pub prior_concentration: f64,
    /// Mean diagonal confusion count; off-diagonal counts are uniform on `0..=confusion_off_max`.
    pub confusion_diagonal: u64,
    pub confusion_off_max: u64,
    pub cognitive: CognitiveParams,
    /// Sublexical channels that drive the response.
    pub xt_features: Vec<String>,
    pub word_lag_s: f64,
    pub sublexical_lag_s: f64,
    /// Gain on the word-surprisal kernel for early, mid and late recognition tertiles.
    pub tertile_gains: [f64; 3],
    /// Word-surprisal kernel shape (before per-sensor weights).
    pub surprisal_kernel: Bump,
    /// Range of bump widths for the other kernels.
    pub kernel_width_s: [f64; 2],
    /// Kernel amplitude in units of each feature's conditional standard deviation.
    pub kernel_amplitude: f64,
    /// Spread of per-subject kernel amplitude scaling.
    pub subject_jitter: f64,
    pub noise: NoiseConfig,
    pub recording_format: RecordingFormat,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_subjects: 4,
            n_sensors: 8,
            fs: 128.0,
            duration_s: 120.0,
            inventory_size: 20,
            lexicon_size: 200,
            word_length: [2, 6],
            phoneme_duration_s: [0.05, 0.12],
            gap_s: [0.05, 0.3],
            frequency_decades: 6.0,
            n_candidates: 25,
            prior_concentration: 0.3,
            confusion_diagonal: 40,
            confusion_off_max: 8,
            cognitive: CognitiveParams {
                threshold: 0.8,
                temperature: 1.0,
                scatter: 0.5,
                prior_scatter: 0.5,
            },
            xt_features: xt_channel_names(),
            word_lag_s: WORD_LAG_WINDOW_S,
            sublexical_lag_s: SUBLEXICAL_LAG_WINDOW_S,
            tertile_gains: [1.0, 1.5, 2.0],
            surprisal_kernel: Bump {
                latency_s: 0.4,
                width_s: 0.06,
                amplitude: -1.5,
            },
            kernel_width_s: [0.04, 0.08],
            kernel_amplitude: 1.0,
            subject_jitter: 0.1,
            noise: NoiseConfig::default(),
            recording_format: RecordingFormat::Nrc,
        }
    }
}

impl SynthConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let mut need = |ok: bool, msg: String| {
            if !ok {
                v.push(msg);
            }
        };
        need(self.n_subjects >= 1, "n_subjects must be at least 1".into());
        need(self.n_sensors >= 1, "n_sensors must be at least 1".into());
        need(
            self.fs.is_finite() && self.fs > 0.0,
            format!("fs = {} must be positive", self.fs),
        );
        need(
            self.duration_s.is_finite() && self.duration_s > 0.0,
            format!("duration_s = {} must be positive", self.duration_s),
        );
        need(
            self.inventory_size >= 2,
            "inventory_size must be at least 2".into(),
        );
        need(
            self.word_length[0] >= 1 && self.word_length[0] <= self.word_length[1],
            format!(
                "word_length {:?} must be a non-empty range of positive lengths",
                self.word_length
            ),
        );
        let possible = (self.word_length[0]..=self.word_length[1])
            .map(|l| (self.inventory_size as f64).powi(l as i32))
            .sum::<f64>();
        need(
            self.lexicon_size >= 1 && (self.lexicon_size as f64) <= possible,
            format!(
                "lexicon_size = {} cannot be filled with distinct phoneme strings",
                self.lexicon_size
            ),
        );
        need(
            self.n_candidates >= 1 && self.n_candidates <= self.lexicon_size,
            format!(
                "n_candidates = {} must be in 1..=lexicon_size",
                self.n_candidates
            ),
        );
        for (name, r) in [
            ("phoneme_duration_s", self.phoneme_duration_s),
            ("gap_s", self.gap_s),
            ("kernel_width_s", self.kernel_width_s),
        ] {
            need(
                r[0].is_finite() && r[0] > 0.0 && r[0] <= r[1] && r[1].is_finite(),
                format!("{name} {r:?} must be a positive range"),
            );
        }
        need(
            self.prior_concentration.is_finite() && self.prior_concentration > 0.0,
            format!(
                "prior_concentration = {} must be positive",
                self.prior_concentration
            ),
        );
        need(
            self.frequency_decades.is_finite() && (0.0..=15.0).contains(&self.frequency_decades),
            format!(
                "frequency_decades = {} must be in 0..=15",
                self.frequency_decades
            ),
        );
        need(
            self.confusion_diagonal >= 1,
            "confusion_diagonal must be at least 1".into(),
        );
        v.extend(self.cognitive.violations());
        let known = xt_channel_names();
        for f in &self.xt_features {
            if !known.contains(f) {
                v.push(format!("unknown sublexical feature {f:?}"));
            }
        }
        for (name, w) in [
            ("word_lag_s", self.word_lag_s),
            ("sublexical_lag_s", self.sublexical_lag_s),
        ] {
            if !(w.is_finite() && w > 0.0) {
                v.push(format!("{name} = {w} must be positive"));
            }
        }
        let k = &self.surprisal_kernel;
        if !(k.width_s > 0.0 && k.latency_s >= 0.0 && k.latency_s <= self.word_lag_s) {
            v.push(format!("surprisal_kernel {k:?} must have positive width and lie within the word lag window"));
        }
        if self.tertile_gains.iter().any(|g| !g.is_finite()) {
            v.push("tertile_gains must be finite".into());
        }
        if !(self.subject_jitter >= 0.0 && self.subject_jitter < 1.0) {
            v.push(format!(
                "subject_jitter = {} must be in [0, 1)",
                self.subject_jitter
            ));
        }
        let n = &self.noise;
        if !(n.sigma >= 0.0 && n.sigma.is_finite()) {
            v.push(format!("noise.sigma = {} must be non-negative", n.sigma));
        }
        if n.snr_db.is_some_and(|s| !s.is_finite()) {
            v.push("noise.snr_db must be finite".into());
        }
        if !(n.ar1 > -1.0 && n.ar1 < 1.0) {
            v.push(format!("noise.ar1 = {} must be in (-1, 1)", n.ar1));
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }

    /// Names of the baseline response features, sublexical first.
    pub fn base_feature_names(&self) -> Vec<String> {
        let mut names = self.xt_features.clone();
        names.extend(WORD_FEATURE_NAMES.iter().map(|s| s.to_string()));
        names
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenTruth {
    pub token_index: usize,
    pub form: String,
    pub k_star: usize,
    pub threshold_reached: bool,
    pub tau_s: f64,
    pub recognition_tertile: usize,
    pub surprisal_tertile: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureKernel {
    pub feature: String,
    pub shape: Bump,
    /// Per-sensor multiplier on `shape.amplitude`.
    pub sensor_weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectTruth {
    pub subject: String,
    pub amplitude_scale: f64,
    pub noise_sigma: Vec<f64>,
}

/// Every latent of a synthetic study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub config: SynthConfig,
    pub tokens: Vec<TokenTruth>,
    pub recognition_edges: [f64; 2],
    pub surprisal_edges: [f64; 2],
    pub kernels: Vec<FeatureKernel>,
    pub subjects: Vec<SubjectTruth>,
}

impl SynthTruth {
    pub fn recognition_times(&self) -> Vec<f64> {
        self.tokens.iter().map(|t| t.tau_s).collect()
    }

    pub fn recognition_tertiles(&self) -> Vec<usize> {
        self.tokens.iter().map(|t| t.recognition_tertile).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub stimulus: Stimulus,
    pub unigram_counts: Vec<(String, u64)>,
    pub recordings: Vec<NeuralRecording>,
    /// Per-subject kernels in the baseline layout (tertile gains not applied).
    pub base_models: Vec<TrfModel>,
    pub truth: SynthTruth,
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

fn dirichlet(rng: &mut ChaCha8Rng, n: usize, concentration: f64) -> Result<Vec<f64>> {
    let gamma =
        Gamma::new(concentration, 1.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut v: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let total: f64 = v.iter().sum();
    if !(total > 0.0) {
        v = vec![1.0; n];
    }
    // Floor tiny draws so every candidate keeps a representable prior.
    let total: f64 = v.iter().sum();
    v.iter_mut().for_each(|p| *p = (*p / total).max(1e-12));
    let total: f64 = v.iter().sum();
    v.iter_mut().for_each(|p| *p /= total);
    Ok(v)
}

fn categorical(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn subject_rng(seed: u64, subject: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(subject as u64 + 1);
    rng
}

/// Lexicon with distinct phoneme strings, plus unigram counts.
fn draw_lexicon(
    rng: &mut ChaCha8Rng,
    cfg: &SynthConfig,
    inv: &PhonemeInventory,
) -> Result<(Lexicon, Vec<(String, u64)>)> {
    let mut seen = std::collections::HashSet::new();
    let mut entries = Vec::with_capacity(cfg.lexicon_size);
    while entries.len() < cfg.lexicon_size {
        let len = rng.random_range(cfg.word_length[0]..=cfg.word_length[1]);
        let phones: Vec<usize> = (0..len).map(|_| rng.random_range(0..inv.len())).collect();
        if seen.insert(phones.clone()) {
            entries.push((format!("w{:04}", entries.len()), phones));
        }
    }
    // Log-uniform counts, so log-frequency varies widely relative to its mean.
    let counts = entries
        .iter()
        .map(|(form, _)| {
            let c = 10f64.powf(rng.random_range(0.0..=cfg.frequency_decades));
            (form.clone(), c.round().max(1.0) as u64)
        })
        .collect();
    Ok((Lexicon::new(entries, inv)?, counts))
}

fn draw_confusion(
    rng: &mut ChaCha8Rng,
    cfg: &SynthConfig,
    inv: &PhonemeInventory,
) -> Result<CountMatrix> {
    let n = inv.len();
    let rows = (0..n)
        .map(|r| {
            (0..n)
                .map(|c| {
                    if r == c {
                        let jitter = rng.random_range(0..=cfg.confusion_diagonal / 4);
                        (cfg.confusion_diagonal + jitter) as i64
                    } else {
                        rng.random_range(0..=cfg.confusion_off_max) as i64
                    }
                })
                .collect()
        })
        .collect();
    CountMatrix::new(inv.symbols().to_vec(), rows)
}

struct Acoustics {
    envelope: Vec<f64>,
    spectral: Vec<[f64; SPECTRAL_BANDS]>,
}

fn draw_tokens(
    rng: &mut ChaCha8Rng,
    cfg: &SynthConfig,
    inv: &PhonemeInventory,
    lex: &Lexicon,
) -> Result<(StimulusTranscript, PriorTable)> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let acoustics = Acoustics {
        envelope: (0..inv.len()).map(|_| normal.sample(rng)).collect(),
        spectral: (0..inv.len())
            .map(|_| std::array::from_fn(|_| normal.sample(rng)))
            .collect(),
    };
    let forms: Vec<(&str, &[usize])> = lex.iter().collect();
    let mut words = Vec::new();
    let mut priors = std::collections::BTreeMap::new();
    let mut t = uniform(rng, cfg.gap_s);
    loop {
        let idx = words.len();
        let cand_idx = sample_indices(rng, forms.len(), cfg.n_candidates).into_vec();
        let probs = dirichlet(rng, cand_idx.len(), cfg.prior_concentration)?;
        let truth = cand_idx[categorical(rng, &probs)];
        let (form, phones) = forms[truth];
        let mut onset = 0.0;
        let phonemes: Vec<PhonemeTiming> = phones
            .iter()
            .map(|&p| {
                let duration_s = uniform(rng, cfg.phoneme_duration_s);
                let timing = PhonemeTiming {
                    symbol: inv.symbol(p).unwrap_or_default().to_string(),
                    onset_s: onset,
                    duration_s,
                    envelope_var: acoustics.envelope[p] + 0.5 * normal.sample(rng),
                    spectral: std::array::from_fn(|b| {
                        acoustics.spectral[p][b] + 0.5 * normal.sample(rng)
                    }),
                };
                onset += duration_s;
                timing
            })
            .collect();
        if t + onset >= cfg.duration_s {
            break;
        }
        words.push(WordToken {
            token_index: idx,
            form: form.to_string(),
            onset_s: t,
            phonemes,
        });
        priors.insert(
            idx,
            cand_idx
                .iter()
                .zip(&probs)
                .map(|(&c, &p)| Candidate {
                    form: forms[c].0.to_string(),
                    prior: p,
                })
                .collect(),
        );
        t += onset + uniform(rng, cfg.gap_s);
    }
    if words.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "duration {} s holds only {} words; at least 3 are needed",
            cfg.duration_s,
            words.len()
        )));
    }
    Ok((StimulusTranscript::new(words)?, PriorTable::new(priors)))
}

/// `1 / sd(x_f | other features)` at lag zero, so that a unit kernel
/// amplitude means the same estimability for every feature however
/// collinear the features are at their shared event samples.
fn conditional_scales(base: &FeatureSeries) -> Vec<f64> {
    let n = base.n_samples().max(1) as f64;
    let f = base.n_channels();
    let means = base.data.sum_axis(ndarray::Axis(1)) / n;
    let centered = &base.data - &means.view().insert_axis(ndarray::Axis(1));
    let mut g = faer::Mat::from_fn(f, f, |i, j| centered.row(i).dot(&centered.row(j)) / n);
    let jitter = 1e-12 * (0..f).map(|i| g[(i, i)]).sum::<f64>().max(1e-300);
    for i in 0..f {
        g[(i, i)] += jitter;
    }
    match g.llt(faer::Side::Lower) {
        Ok(c) => {
            let inv = c.solve(faer::Mat::<f64>::identity(f, f));
            (0..f).map(|i| inv[(i, i)].sqrt()).collect()
        }
        Err(_) => vec![1.0; f],
    }
}

fn draw_kernels(
    rng: &mut ChaCha8Rng,
    cfg: &SynthConfig,
    base: &FeatureSeries,
) -> Vec<FeatureKernel> {
    base.names
        .iter()
        .zip(conditional_scales(base))
        .map(|(name, unit)| {
            let scale = cfg.kernel_amplitude * unit;
            if name == WORD_FEATURE_NAMES[1] {
                let k = cfg.surprisal_kernel;
                return FeatureKernel {
                    feature: name.clone(),
                    shape: Bump {
                        amplitude: k.amplitude * scale,
                        ..k
                    },
                    sensor_weights: vec![1.0; cfg.n_sensors],
                };
            }
            let window = if WORD_FEATURE_NAMES.contains(&name.as_str()) {
                cfg.word_lag_s
            } else {
                cfg.sublexical_lag_s
            };
            let width_s = uniform(rng, cfg.kernel_width_s).min(window / 6.0);
            let latency_s = rng.random_range(
                0.05f64.min(window / 2.0)..=(window - 3.0 * width_s).max(0.05f64.min(window / 2.0)),
            );
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            FeatureKernel {
                feature: name.clone(),
                shape: Bump {
                    latency_s,
                    width_s,
                    amplitude: sign * scale,
                },
                sensor_weights: (0..cfg.n_sensors)
                    .map(|_| if rng.random::<f64>() < 0.2 { -1.0 } else { 1.0 })
                    .collect(),
            }
        })
        .collect()
}

/// Per-subject weights in the baseline layout.
fn base_weights(
    kernels: &[FeatureKernel],
    layout: &FeatureLayout,
    amplitude_scale: f64,
) -> Array2<f64> {
    let n_sensors = kernels.first().map_or(0, |k| k.sensor_weights.len());
    let mut w = Array2::zeros((layout.n_params(), n_sensors));
    for (f, k) in kernels.iter().enumerate() {
        let block = layout.block(f);
        for (a, row) in block.enumerate() {
            let v = k.shape.at(a as f64 / layout.fs) * amplitude_scale;
            for s in 0..n_sensors {
                w[[row, s]] = v * k.sensor_weights[s];
            }
        }
    }
    w
}

/// Expands baseline weights to the recognition-grouped layout, scaling the surprisal kernel per group.
fn grouped_weights(
    base: &Array2<f64>,
    base_layout: &FeatureLayout,
    n_xt: usize,
    gains: [f64; 3],
) -> Array2<f64> {
    let xt_rows = base_layout.offsets()[n_xt];
    let word = base.slice(ndarray::s![xt_rows.., ..]);
    let word_lags = base_layout.lags[n_xt];
    let mut blocks = vec![base.slice(ndarray::s![..xt_rows, ..]).to_owned()];
    for g in gains {
        let mut b = word.to_owned();
        b.slice_mut(ndarray::s![word_lags..2 * word_lags, ..])
            .mapv_inplace(|v| v * g);
        blocks.push(b);
    }
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    ndarray::concatenate(ndarray::Axis(0), &views).expect("matching widths")
}

fn add_noise(rng: &mut ChaCha8Rng, y: &mut Array2<f64>, noise: &NoiseConfig) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let innovation = (1.0 - noise.ar1 * noise.ar1).sqrt();
    let mut sigmas = Vec::with_capacity(y.nrows());
    for mut row in y.rows_mut() {
        let sigma = match noise.snr_db {
            Some(db) => {
                let n = row.len() as f64;
                let mean = row.sum() / n;
                let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                (var / 10f64.powf(db / 10.0)).sqrt()
            }
            None => noise.sigma,
        };
        sigmas.push(sigma);
        if sigma == 0.0 {
            continue;
        }
        let mut e: f64 = normal.sample(rng);
        for v in row.iter_mut() {
            *v += sigma * e;
            e = noise.ar1 * e + innovation * normal.sample(rng);
        }
    }
    sigmas
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let inventory = PhonemeInventory::new((0..cfg.inventory_size).map(|i| format!("P{i:02}")))?;
    let (lexicon, unigram_counts) = draw_lexicon(&mut rng, cfg, &inventory)?;
    let confusion_counts = draw_confusion(&mut rng, cfg, &inventory)?;
    let (transcript, priors) = draw_tokens(&mut rng, cfg, &inventory, &lexicon)?;
    let unigram = UnigramTable::from_counts(unigram_counts.clone())?;

    let cm = build_confusion(&confusion_counts, &inventory, cfg.cognitive.temperature)?;
    let recognition = RecognitionProblem::new(&transcript, &priors, &lexicon, &inventory, None)?
        .run(&cfg.cognitive, &cm)?;
    let tau: Vec<f64> = recognition.iter().map(|r| r.tau_s).collect();
    let all = vec![true; tau.len()];
    let rec_split = tertile_split(&tau, &all)?;

    let n_samples = (cfg.duration_s * cfg.fs).round() as usize;
    let cohort = transcript_features(&transcript, &priors, &lexicon, &inventory)?;
    let xt_all = build_xt(
        &transcript,
        &cohort,
        cfg.fs,
        n_samples,
        XtOptions::default(),
    )?;
    let rows: Vec<usize> = cfg
        .xt_features
        .iter()
        .map(|f| {
            xt_all
                .names
                .iter()
                .position(|n| n == f)
                .expect("validated feature name")
        })
        .collect();
    let xt = FeatureSeries {
        names: cfg.xt_features.clone(),
        data: xt_all.data.select(ndarray::Axis(0), &rows),
        fs: cfg.fs,
    };
    let words = build_xv(&transcript, &priors, &unigram)?;
    let surprisal_split = tertile_split(&words.surprisal().to_vec(), &all)?;

    let baseline_words = assemble_word_design(&LinkingSpec::baseline(), &words, cfg.fs, n_samples)?;
    let base_features = FeatureSeries::stack(&[&xt, &baseline_words])?;
    let grouped_words = assemble_word_design(
        &LinkingSpec {
            variant: LinkingVariant::Variable,
            recognition_s: Some(tau.clone()),
            groups: Some(rec_split.assignment.clone()),
        },
        &words,
        cfg.fs,
        n_samples,
    )?;
    let full_features = FeatureSeries::stack(&[&xt, &grouped_words])?;

    let sub_lags = lag_count(cfg.sublexical_lag_s, cfg.fs)?;
    let word_lags = lag_count(cfg.word_lag_s, cfg.fs)?;
    let n_xt = xt.n_channels();
    let base_layout = FeatureLayout::new(
        base_features.names.clone(),
        (0..base_features.n_channels())
            .map(|f| if f < n_xt { sub_lags } else { word_lags })
            .collect(),
        cfg.fs,
    )?;
    let full_layout = FeatureLayout::new(
        full_features.names.clone(),
        (0..full_features.n_channels())
            .map(|f| if f < n_xt { sub_lags } else { word_lags })
            .collect(),
        cfg.fs,
    )?;
    let kernels = draw_kernels(&mut rng, cfg, &base_features);
    let design = LaggedDesign::new(&full_features, full_layout.clone())?;
    let sensors: Vec<String> = (0..cfg.n_sensors).map(|s| format!("s{s}")).collect();

    let per_subject: Vec<Result<(NeuralRecording, TrfModel, SubjectTruth)>> = (0..cfg.n_subjects)
        .into_par_iter()
        .map(|i| {
            let mut srng = subject_rng(cfg.seed, i);
            let normal = Normal::new(0.0, 1.0).expect("unit normal");
            let amplitude_scale =
                1.0 + cfg.subject_jitter * f64::clamp(normal.sample(&mut srng), -3.0, 3.0) / 3.0;
            let base = base_weights(&kernels, &base_layout, amplitude_scale);
            let full = grouped_weights(&base, &base_layout, n_xt, cfg.tertile_gains);
            let model = TrfModel::from_weights(full_layout.clone(), sensors.clone(), full)?;
            let mut y = model.predict(&design)?;
            let noise_sigma = add_noise(&mut srng, &mut y, &cfg.noise);
            let subject = format!("sub{:02}", i + 1);
            let rec = NeuralRecording::with_sensors(subject.clone(), sensors.clone(), y, cfg.fs)?;
            let base_model = TrfModel::from_weights(base_layout.clone(), sensors.clone(), base)?;
            Ok((
                rec,
                base_model,
                SubjectTruth {
                    subject,
                    amplitude_scale,
                    noise_sigma,
                },
            ))
        })
        .collect();
    let mut recordings = Vec::new();
    let mut base_models = Vec::new();
    let mut subjects = Vec::new();
    for r in per_subject {
        let (rec, m, s) = r?;
        recordings.push(rec);
        base_models.push(m);
        subjects.push(s);
    }

    let tokens = transcript
        .words()
        .iter()
        .zip(&recognition)
        .enumerate()
        .map(|(i, (w, r))| TokenTruth {
            token_index: w.token_index,
            form: w.form.clone(),
            k_star: r.k_star,
            threshold_reached: r.threshold_reached,
            tau_s: r.tau_s,
            recognition_tertile: rec_split.assignment[i],
            surprisal_tertile: surprisal_split.assignment[i],
        })
        .collect();
    Ok(SynthDataset {
        stimulus: Stimulus {
            inventory,
            lexicon,
            confusion_counts,
            transcript,
            priors,
            unigram,
        },
        unigram_counts,
        recordings,
        base_models,
        truth: SynthTruth {
            config: cfg.clone(),
            tokens,
            recognition_edges: rec_split.edges,
            surprisal_edges: surprisal_split.edges,
            kernels,
            subjects,
        },
    })
}

/// Relative file names used by [`SynthDataset::write`].
pub mod files {
    pub const LEXICON: &str = "lexicon.jsonl";
    pub const CONFUSION: &str = "confusion.csv";
    pub const TRANSCRIPT: &str = "transcript.jsonl";
    pub const PRIORS: &str = "priors.jsonl";
    pub const UNIGRAM: &str = "unigram.csv";
    pub const RECORDINGS: &str = "recordings";
    pub const TRUTH: &str = "truth.json";
    pub const TRUTH_KERNELS: &str = "truth";
}

impl SynthDataset {
    /// Writes every input format plus the ground-truth sidecar under `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        let s = &self.stimulus;
        let mut written = Vec::new();
        let mut out = |name: &str,
                       f: &dyn Fn(&mut std::io::BufWriter<std::fs::File>) -> Result<()>|
         -> Result<()> {
            let p = dir.join(name);
            write_file(&p, f)?;
            written.push(p);
            Ok(())
        };
        out(files::LEXICON, &|w| {
            write_lexicon_jsonl(&s.lexicon, &s.inventory, w)
        })?;
        out(files::CONFUSION, &|w| s.confusion_counts.write_csv(w))?;
        out(files::TRANSCRIPT, &|w| s.transcript.write_jsonl(w))?;
        out(files::PRIORS, &|w| s.priors.write_jsonl(w))?;
        out(files::UNIGRAM, &|w| {
            write_unigram_csv(&self.unigram_counts, w)
        })?;
        for rec in &self.recordings {
            match self.truth.config.recording_format {
                RecordingFormat::Nrc => out(
                    &format!("{}/{}.nrc", files::RECORDINGS, rec.subject),
                    &|w| rec.write_nrc(w).map_err(|e| Error::io(&rec.subject, e)),
                )?,
                RecordingFormat::Csv => out(
                    &format!("{}/{}.csv", files::RECORDINGS, rec.subject),
                    &|w| rec.write_csv(w),
                )?,
            }
        }
        for (m, subj) in self.base_models.iter().zip(&self.truth.subjects) {
            out(
                &format!("{}/theta_{}.csv", files::TRUTH_KERNELS, subj.subject),
                &|w| m.write_coefficients_csv(w),
            )?;
        }
        out(files::TRUTH, &|w| {
            serde_json::to_writer_pretty(&mut *w, &self.truth)
                .map_err(|e| Error::Numerical(e.to_string()))?;
            std::io::Write::write_all(w, b"\n").map_err(|e| Error::io(files::TRUTH, e))
        })?;
        Ok(written)
    }

    pub fn n_samples(&self) -> usize {
        self.recordings
            .first()
            .map_or(0, NeuralRecording::n_samples)
    }

    pub fn tau(&self) -> Array1<f64> {
        Array1::from(self.truth.recognition_times())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trf::{design_matrix, fit, FitOptions, RidgePenalty, Solver};
    use approx::assert_abs_diff_eq;

    fn small() -> SynthConfig {
        SynthConfig {
            seed: 11,
            n_subjects: 2,
            n_sensors: 3,
            fs: 64.0,
            duration_s: 40.0,
            lexicon_size: 60,
            n_candidates: 10,
            xt_features: vec!["phoneme_onset".into(), "phoneme_surprisal".into()],
            ..SynthConfig::default()
        }
    }

    #[test]
    fn config_violations_are_enumerated() {
        let cfg = SynthConfig {
            n_sensors: 0,
            fs: -1.0,
            cognitive: CognitiveParams {
                threshold: 1.5,
                ..CognitiveParams::default()
            },
            xt_features: vec!["bogus".into()],
            ..SynthConfig::default()
        };
        let v = cfg.violations();
        assert_eq!(v.len(), 4, "{v:?}");
        assert!(matches!(generate(&cfg), Err(Error::Validation(_))));
    }

    #[test]
    fn same_seed_same_data() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.recordings, b.recordings);
        let c = generate(&SynthConfig {
            seed: 12,
            ..small()
        })
        .unwrap();
        assert_ne!(a.truth.tokens, c.truth.tokens);
    }

    #[test]
    fn noiseless_forward_pass_is_the_double_sum() {
        let cfg = SynthConfig {
            tertile_gains: [1.0; 3],
            ..small()
        };
        let d = generate(&cfg).unwrap();
        let model = &d.base_models[0];
        let words = build_xv(
            &d.stimulus.transcript,
            &d.stimulus.priors,
            &d.stimulus.unigram,
        )
        .unwrap();
        let n = d.n_samples();
        let cohort = transcript_features(
            &d.stimulus.transcript,
            &d.stimulus.priors,
            &d.stimulus.lexicon,
            &d.stimulus.inventory,
        )
        .unwrap();
        let xt_all = build_xt(
            &d.stimulus.transcript,
            &cohort,
            cfg.fs,
            n,
            XtOptions::default(),
        )
        .unwrap();
        let xt = FeatureSeries {
            names: cfg.xt_features.clone(),
            data: xt_all.data.select(ndarray::Axis(0), &[0, 10]),
            fs: cfg.fs,
        };
        let wd = assemble_word_design(&LinkingSpec::baseline(), &words, cfg.fs, n).unwrap();
        let feats = FeatureSeries::stack(&[&xt, &wd]).unwrap();
        let y = &d.recordings[0].data;
        let offsets = model.layout.offsets();
        for s in 0..cfg.n_sensors {
            for t in (0..n).step_by(37) {
                let mut want = 0.0;
                for (f, &off) in offsets.iter().take(feats.n_channels()).enumerate() {
                    for a in 0..model.layout.lags[f].min(t + 1) {
                        want += model.weights[[off + a, s]] * feats.data[[f, t - a]];
                    }
                }
                assert_abs_diff_eq!(y[[s, t]], want, epsilon = 1e-12);
            }
        }
        // And the dense design agrees.
        let dense = design_matrix(&feats, &model.layout).unwrap();
        let y2 = model.predict_dense(dense.view()).unwrap();
        for (a, b) in y.iter().zip(y2.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn noiseless_kernels_are_recovered() {
        let cfg = SynthConfig {
            tertile_gains: [1.0; 3],
            ..small()
        };
        let d = generate(&cfg).unwrap();
        let n = d.n_samples();
        let words = build_xv(
            &d.stimulus.transcript,
            &d.stimulus.priors,
            &d.stimulus.unigram,
        )
        .unwrap();
        let cohort = transcript_features(
            &d.stimulus.transcript,
            &d.stimulus.priors,
            &d.stimulus.lexicon,
            &d.stimulus.inventory,
        )
        .unwrap();
        let xt_all = build_xt(
            &d.stimulus.transcript,
            &cohort,
            cfg.fs,
            n,
            XtOptions::default(),
        )
        .unwrap();
        let xt = FeatureSeries {
            names: cfg.xt_features.clone(),
            data: xt_all.data.select(ndarray::Axis(0), &[0, 10]),
            fs: cfg.fs,
        };
        let wd = assemble_word_design(&LinkingSpec::baseline(), &words, cfg.fs, n).unwrap();
        let feats = FeatureSeries::stack(&[&xt, &wd]).unwrap();
        let truth = &d.base_models[1];
        let design = LaggedDesign::new(&feats, truth.layout.clone()).unwrap();
        let opts = FitOptions {
            ridge: RidgePenalty::Global(0.0),
            center: true,
            solver: Solver::Cholesky,
        };
        let fitted = fit(&design, &d.recordings[1], &[0..n], &opts).unwrap();
        let err = (&fitted.weights - &truth.weights)
            .mapv(f64::abs)
            .fold(0.0f64, |a, &b| a.max(b));
        assert!(err < 1e-6, "max abs error {err}");
    }

    #[test]
    fn transcript_is_valid_and_latents_consistent() {
        let d = generate(&small()).unwrap();
        let t = &d.stimulus.transcript;
        assert_eq!(t.len(), d.truth.tokens.len());
        assert!(t.end_s() < small().duration_s);
        let counts = {
            let mut c = [0; 3];
            d.truth
                .tokens
                .iter()
                .for_each(|x| c[x.recognition_tertile] += 1);
            c
        };
        assert!(counts.iter().all(|&c| c > 0), "{counts:?}");
        for (w, tok) in t.words().iter().zip(&d.truth.tokens) {
            assert_eq!(w.form, tok.form);
            let cands = d.stimulus.priors.get(w.token_index).unwrap();
            assert!(cands.iter().any(|c| c.form == w.form));
            assert!(tok.tau_s >= 0.0 && tok.tau_s <= w.offset_s() - w.onset_s + 1e-12);
        }
    }

    #[test]
    fn sharper_priors_recognise_earlier() {
        let mean_tau = |conc: f64, seed: u64| {
            let cfg = SynthConfig {
                seed,
                prior_concentration: conc,
                n_subjects: 1,
                n_sensors: 1,
                xt_features: vec![],
                ..small()
            };
            let d = generate(&cfg).unwrap();
            let taus = d.truth.recognition_times();
            taus.iter().sum::<f64>() / taus.len() as f64
        };
        for seed in 0..5 {
            assert!(mean_tau(0.05, seed) < mean_tau(5.0, seed), "seed {seed}");
        }
    }

    #[test]
    fn snr_sets_noise_level() {
        let cfg = SynthConfig {
            noise: NoiseConfig {
                snr_db: Some(0.0),
                ..NoiseConfig::default()
            },
            ..small()
        };
        let noisy = generate(&cfg).unwrap();
        let clean = generate(&SynthConfig {
            noise: NoiseConfig::default(),
            ..cfg.clone()
        })
        .unwrap();
        for s in 0..cfg.n_sensors {
            let c = clean.recordings[0].data.row(s);
            let e = &noisy.recordings[0].data.row(s) - &c;
            let var = |x: &Array1<f64>| {
                let m = x.mean().unwrap();
                x.mapv(|v| (v - m).powi(2)).mean().unwrap()
            };
            let ratio = var(&e) / var(&c.to_owned());
            assert!(
                (ratio - 1.0).abs() < 0.1,
                "sensor {s}: noise/signal variance {ratio}"
            );
        }
    }

    #[test]
    fn writes_every_artifact() {
        let d = generate(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = d.write(dir.path()).unwrap();
        assert!(files.iter().all(|p| p.exists()));
        let paths = crate::dataset::StimulusPaths {
            lexicon: dir.path().join(files::LEXICON),
            confusion: vec![dir.path().join(files::CONFUSION)],
            transcript: dir.path().join(files::TRANSCRIPT),
            priors: dir.path().join(files::PRIORS),
            unigram: Some(dir.path().join(files::UNIGRAM)),
        };
        let s = Stimulus::load(&paths).unwrap();
        assert_eq!(s.transcript, d.stimulus.transcript);
        assert_eq!(s.priors, d.stimulus.priors);
        let rec = NeuralRecording::load(&dir.path().join("recordings/sub01.nrc")).unwrap();
        assert_eq!(rec.n_samples(), d.n_samples());
        let truth: SynthTruth =
            serde_json::from_reader(std::fs::File::open(dir.path().join(files::TRUTH)).unwrap())
                .unwrap();
        assert_eq!(truth, d.truth);
    }
}
