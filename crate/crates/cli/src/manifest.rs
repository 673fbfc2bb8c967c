//! Run manifest written next to every command's outputs.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub tool_version: String,
    pub seed: Option<u64>,
    /// Name of the resolved configuration file in the output directory, if any.
    pub config_file: Option<String>,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub started_at: String,
    pub finished_at: String,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Digests of `paths`, reported relative to `base` when they lie under it.
pub fn digests(paths: &[PathBuf], base: Option<&Path>) -> Result<Vec<FileDigest>> {
    paths
        .iter()
        .map(|p| {
            let shown = base.and_then(|b| p.strip_prefix(b).ok()).unwrap_or(p);
            Ok(FileDigest {
                path: shown.to_string_lossy().replace('\\', "/"),
                sha256: sha256_file(p)?,
            })
        })
        .collect()
}

/// Collects what a command read and wrote, then records it in the output directory.
pub struct Recorder {
    pub command: &'static str,
    pub out_dir: PathBuf,
    pub seed: Option<u64>,
    pub config_file: Option<String>,
    pub config: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    started_at: String,
}

impl Recorder {
    pub fn new(command: &'static str, out_dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(out_dir)
            .with_context(|| format!("creating {}", out_dir.display()))?;
        Ok(Self {
            command,
            out_dir: out_dir.to_path_buf(),
            seed: None,
            config_file: None,
            config: serde_json::Value::Null,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_at: now(),
        })
    }

    /// Path of an output file, creating its parent directory and remembering it.
    pub fn output(&mut self, relative: &str) -> Result<PathBuf> {
        let p = self.out_dir.join(relative);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))?;
        }
        self.outputs.push(p.clone());
        Ok(p)
    }

    pub fn finish(self) -> Result<PathBuf> {
        let manifest = RunManifest {
            command: self.command.to_string(),
            args: std::env::args().collect(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.seed,
            config_file: self.config_file,
            config: self.config,
            inputs: digests(&self.inputs, None)?,
            outputs: digests(&self.outputs, Some(&self.out_dir))?,
            started_at: self.started_at,
            finished_at: now(),
        };
        let path = self.out_dir.join(MANIFEST);
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}
