//! Force-aligned stimulus transcript: words, their phonemes, timings and
//! per-phoneme acoustic control values.

use std::collections::HashSet;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of log-mel spectral bands carried per phoneme.
pub const SPECTRAL_BANDS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhonemeTiming {
    pub symbol: String,
    /// Seconds relative to the word onset.
    pub onset_s: f64,
    pub duration_s: f64,
    #[serde(default)]
    pub envelope_var: f64,
    #[serde(default)]
    pub spectral: [f64; SPECTRAL_BANDS],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordToken {
    pub token_index: usize,
    pub form: String,
    /// Seconds from the start of the recording.
    pub onset_s: f64,
    pub phonemes: Vec<PhonemeTiming>,
}

impl WordToken {
    /// Onset of the `k`-th phoneme (1-based) relative to word onset.
    pub fn phoneme_onset(&self, k: usize) -> Option<f64> {
        k.checked_sub(1)
            .and_then(|i| self.phonemes.get(i))
            .map(|p| p.onset_s)
    }

    pub fn phoneme_duration(&self, k: usize) -> Option<f64> {
        k.checked_sub(1)
            .and_then(|i| self.phonemes.get(i))
            .map(|p| p.duration_s)
    }

    pub fn offset_s(&self) -> f64 {
        self.phonemes
            .iter()
            .map(|p| self.onset_s + p.onset_s + p.duration_s)
            .fold(self.onset_s, f64::max)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if !self.onset_s.is_finite() || self.onset_s < 0.0 {
            return Err(format!(
                "word onset {} must be finite and non-negative",
                self.onset_s
            ));
        }
        if self.phonemes.is_empty() {
            return Err("word has no phonemes".into());
        }
        let mut prev = f64::NEG_INFINITY;
        for (k, p) in self.phonemes.iter().enumerate() {
            if !p.onset_s.is_finite() || !p.duration_s.is_finite() {
                return Err(format!("phoneme {} has non-finite timing", k + 1));
            }
            if p.onset_s <= prev {
                return Err(format!(
                    "phoneme onsets must strictly increase (phoneme {})",
                    k + 1
                ));
            }
            if p.onset_s < 0.0 {
                return Err(format!("phoneme {} starts before its word", k + 1));
            }
            if p.duration_s < 0.0 {
                return Err(format!("phoneme {} has negative duration", k + 1));
            }
            if !p.envelope_var.is_finite() || p.spectral.iter().any(|v| !v.is_finite()) {
                return Err(format!("phoneme {} has non-finite acoustic values", k + 1));
            }
            prev = p.onset_s;
        }
        Ok(())
    }
}

/// Words sorted by onset (ties broken by token index).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StimulusTranscript {
    words: Vec<WordToken>,
}

impl StimulusTranscript {
    pub fn new(mut words: Vec<WordToken>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(words.len());
        for w in &words {
            w.validate()
                .map_err(|m| Error::InvalidArgument(format!("token {}: {m}", w.token_index)))?;
            if !seen.insert(w.token_index) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate token index {}",
                    w.token_index
                )));
            }
        }
        words.sort_by(|a, b| {
            a.onset_s
                .total_cmp(&b.onset_s)
                .then(a.token_index.cmp(&b.token_index))
        });
        Ok(Self { words })
    }

    pub fn read_jsonl<R: BufRead>(reader: R, source: &str) -> Result<Self> {
        let mut words = Vec::new();
        let mut seen = HashSet::new();
        for (lineno, line) in reader.lines().enumerate() {
            let ctx = || format!("{source}:{}", lineno + 1);
            let line = line.map_err(|e| Error::load(ctx(), e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let w: WordToken =
                serde_json::from_str(&line).map_err(|e| Error::load(ctx(), e.to_string()))?;
            w.validate()
                .map_err(|m| Error::load(ctx(), format!("token {}: {m}", w.token_index)))?;
            if !seen.insert(w.token_index) {
                return Err(Error::load(
                    ctx(),
                    format!("duplicate token index {}", w.token_index),
                ));
            }
            words.push(w);
        }
        Self::new(words)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_jsonl(std::io::BufReader::new(file), &path.display().to_string())
    }

    pub fn write_jsonl<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        for word in &self.words {
            let line = serde_json::to_string(word).map_err(|e| Error::Numerical(e.to_string()))?;
            writeln!(w, "{line}").map_err(|e| Error::io("<transcript>", e))?;
        }
        Ok(())
    }

    pub fn words(&self) -> &[WordToken] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// End of the last phoneme, in seconds.
    pub fn end_s(&self) -> f64 {
        self.words
            .iter()
            .map(WordToken::offset_s)
            .fold(0.0, f64::max)
    }
}
