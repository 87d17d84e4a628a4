//! Run manifest: enough provenance (digests, seeds, versions) to reproduce
//! every output file byte-for-byte.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mdagar::Result;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config_digest: Option<String>,
    /// Content hash per input path.
    pub input_digests: BTreeMap<String, String>,
    pub wall_clock_seconds: f64,
    pub outputs: Vec<String>,
    /// Non-fatal events, e.g. per-ordering fit failures.
    pub notes: Vec<String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

pub struct ManifestBuilder {
    manifest: RunManifest,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str, seed: u64) -> Self {
        ManifestBuilder {
            manifest: RunManifest {
                command: command.to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                seed,
                config_digest: None,
                input_digests: BTreeMap::new(),
                wall_clock_seconds: 0.0,
                outputs: Vec::new(),
                notes: Vec::new(),
            },
            started: Instant::now(),
        }
    }

    pub fn config(&mut self, path: &Path) -> Result<()> {
        self.manifest.config_digest = Some(sha256_file(path)?);
        Ok(())
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.manifest
            .input_digests
            .insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn note(&mut self, msg: impl Into<String>) {
        self.manifest.notes.push(msg.into());
    }

    /// Writes `contents` under `out_dir` and records the path.
    pub fn emit(&mut self, out_dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
        let path = out_dir.join(name);
        std::fs::write(&path, contents)?;
        self.manifest.outputs.push(path.display().to_string());
        Ok(path)
    }

    pub fn finish(mut self, out_dir: &Path) -> Result<()> {
        self.manifest.wall_clock_seconds = self.started.elapsed().as_secs_f64();
        let path = out_dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&self.manifest)
            .expect("manifest serializes");
        std::fs::write(path, json)?;
        Ok(())
    }
}
