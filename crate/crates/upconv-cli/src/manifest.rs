//! Run manifests: every command that writes artifacts also writes a
//! `<first output>.manifest.json` recording the exact command line,
//! input hashes, seed, and tool version, so any artifact can be
//! regenerated bit-identically.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use upconv::{Error, Result};

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub args: Vec<String>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rng_seed: Option<u64>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hex::encode(hasher.finalize()))
}

impl Manifest {
    pub fn new(command: &str) -> Manifest {
        Manifest {
            tool: "upconv",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            args: std::env::args().skip(1).collect(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            rng_seed: None,
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs
            .insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    /// Write alongside the first output as `<output>.manifest.json`.
    pub fn write(&self) -> Result<PathBuf> {
        let first = self
            .outputs
            .first()
            .ok_or_else(|| Error::Config("manifest without outputs".into()))?;
        let path = PathBuf::from(format!("{first}.manifest.json"));
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("manifest serialization: {e}")))?;
        std::fs::write(&path, text)
            .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }
}
