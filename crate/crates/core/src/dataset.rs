//! Stimulus inputs bundled together, with loading and writing helpers.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cognitive::PriorTable;
use crate::error::{Error, Result};
use crate::features::{StimulusTranscript, UnigramTable};
use crate::lexicon::{CountMatrix, Lexicon, PhonemeInventory};

/// File locations of the stimulus side of a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StimulusPaths {
    pub lexicon: PathBuf,
    /// One or more count matrices, concatenated block-diagonally (e.g. consonants and vowels).
    pub confusion: Vec<PathBuf>,
    pub transcript: PathBuf,
    pub priors: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unigram: Option<PathBuf>,
}

impl StimulusPaths {
    /// Resolves relative paths against `base`.
    pub fn rebased(&self, base: &Path) -> Self {
        let r = |p: &PathBuf| {
            if p.is_absolute() {
                p.clone()
            } else {
                base.join(p)
            }
        };
        Self {
            lexicon: r(&self.lexicon),
            confusion: self.confusion.iter().map(r).collect(),
            transcript: r(&self.transcript),
            priors: r(&self.priors),
            unigram: self.unigram.as_ref().map(r),
        }
    }

    pub fn all(&self) -> Vec<&Path> {
        let mut v: Vec<&Path> = vec![&self.lexicon];
        v.extend(self.confusion.iter().map(PathBuf::as_path));
        v.push(&self.transcript);
        v.push(&self.priors);
        if let Some(u) = &self.unigram {
            v.push(u);
        }
        v
    }
}

/// Everything about the stimulus that the models consume.
#[derive(Debug, Clone)]
pub struct Stimulus {
    pub inventory: PhonemeInventory,
    pub lexicon: Lexicon,
    pub confusion_counts: CountMatrix,
    pub transcript: StimulusTranscript,
    pub priors: PriorTable,
    pub unigram: UnigramTable,
}

impl Stimulus {
    /// The phoneme inventory is taken from the confusion matrix labels.
    pub fn load(paths: &StimulusPaths) -> Result<Self> {
        if paths.confusion.is_empty() {
            return Err(Error::InvalidArgument(
                "at least one confusion count file is required".into(),
            ));
        }
        let blocks = paths
            .confusion
            .iter()
            .map(|p| CountMatrix::load(p))
            .collect::<Result<Vec<_>>>()?;
        let confusion_counts = CountMatrix::concat(&blocks)?;
        let inventory = PhonemeInventory::new(confusion_counts.labels().iter().cloned())?;
        let lexicon = Lexicon::load(&paths.lexicon, &inventory)?;
        let transcript = StimulusTranscript::load(&paths.transcript)?;
        let priors = PriorTable::load(&paths.priors)?;
        let unigram = match &paths.unigram {
            Some(p) => UnigramTable::load(p)?,
            None => UnigramTable::default(),
        };
        Ok(Self {
            inventory,
            lexicon,
            confusion_counts,
            transcript,
            priors,
            unigram,
        })
    }
}

pub fn write_lexicon_jsonl<W: Write>(
    lex: &Lexicon,
    inventory: &PhonemeInventory,
    mut w: W,
) -> Result<()> {
    for rec in lex.to_records(inventory) {
        let line = serde_json::to_string(&rec).map_err(|e| Error::Numerical(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io("<lexicon>", e))?;
    }
    Ok(())
}

pub fn write_unigram_csv<W: Write>(counts: &[(String, u64)], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let err = |e: csv::Error| Error::Numerical(format!("csv write: {e}"));
    wr.write_record(["form", "count"]).map_err(err)?;
    for (form, c) in counts {
        wr.write_record([form.as_str(), &c.to_string()])
            .map_err(err)?;
    }
    wr.flush().map_err(|e| Error::io("<unigram>", e))
}

/// Creates `path` and hands a buffered writer to `f`.
pub fn write_file<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut std::io::BufWriter<std::fs::File>) -> Result<()>,
{
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    f(&mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}
