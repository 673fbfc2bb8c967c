//! Run configuration: one JSON or TOML file naming the inputs, linking
//! variant, cognitive parameters, search space, model options and seed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cognitive::CognitiveParams;
use crate::dataset::StimulusPaths;
use crate::error::{Error, Result};
use crate::linking::LinkingVariant;
use crate::pipeline::{ModelOptions, SearchSpace};
use crate::trf::NeuralRecording;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub stimulus: StimulusPaths,
    /// Recording files, or directories whose `.nrc` and `.csv` files are all read.
    #[serde(default)]
    pub recordings: Vec<PathBuf>,
    #[serde(default = "default_variant")]
    pub variant: LinkingVariant,
    /// Parameters for recognition runs and fixed-parameter fits.
    #[serde(default)]
    pub cognitive: CognitiveParams,
    #[serde(default)]
    pub search: SearchSpace,
    #[serde(default)]
    pub model: ModelOptions,
    #[serde(default)]
    pub seed: u64,
}

fn default_variant() -> LinkingVariant {
    LinkingVariant::Baseline
}

impl RunConfig {
    /// Parses `text` as TOML when `toml` is set, otherwise as JSON.
    pub fn parse(text: &str, toml: bool, source: &str) -> Result<Self> {
        if toml {
            toml::from_str(text).map_err(|e| Error::load(source, e.to_string()))
        } else {
            serde_json::from_str(text).map_err(|e| Error::load(source, e.to_string()))
        }
    }

    /// Reads a `.toml` or `.json` file; relative input paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let is_toml = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("toml"));
        let cfg = Self::parse(&text, is_toml, &path.display().to_string())?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Ok(cfg.rebased(base))
    }

    pub fn rebased(mut self, base: &Path) -> Self {
        self.stimulus = self.stimulus.rebased(base);
        self.recordings = self
            .recordings
            .iter()
            .map(|p| {
                if p.is_absolute() {
                    p.clone()
                } else {
                    base.join(p)
                }
            })
            .collect();
        self
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Numerical(e.to_string()))
    }

    /// The search space with the run seed applied.
    pub fn search_space(&self) -> SearchSpace {
        SearchSpace {
            seed: self.seed,
            ..self.search.clone()
        }
    }

    /// Every violated bound, in a stable order.
    pub fn violations(&self) -> Vec<String> {
        let mut v: Vec<String> = self
            .cognitive
            .violations()
            .into_iter()
            .map(|m| format!("cognitive.{m}"))
            .collect();
        v.extend(self.search.violations());
        v.extend(self.model.violations());
        if self.stimulus.confusion.is_empty() {
            v.push("stimulus.confusion must name at least one count matrix".into());
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

    /// Recording files in a stable order, expanding directories.
    pub fn recording_files(&self) -> Result<Vec<PathBuf>> {
        let mut out = Vec::new();
        for p in &self.recordings {
            if p.is_dir() {
                let mut files: Vec<PathBuf> = std::fs::read_dir(p)
                    .map_err(|e| Error::io(p, e))?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|f| {
                        f.extension().and_then(|e| e.to_str()).is_some_and(|e| {
                            e.eq_ignore_ascii_case("nrc") || e.eq_ignore_ascii_case("csv")
                        })
                    })
                    .collect();
                files.sort();
                out.extend(files);
            } else {
                out.push(p.clone());
            }
        }
        if out.is_empty() {
            return Err(Error::InvalidArgument("no recordings configured".into()));
        }
        Ok(out)
    }

    pub fn load_recordings(&self) -> Result<Vec<NeuralRecording>> {
        self.recording_files()?
            .iter()
            .map(|p| NeuralRecording::load(p))
            .collect()
    }
}
