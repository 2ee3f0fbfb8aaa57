//! Provenance record written next to every artifact.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{io_at, Result};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub generator: String,
    pub seed: u64,
    pub split_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool_version: String,
    pub command: String,
    pub config: BTreeMap<String, String>,
    pub seeds: Seeds,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
}

pub fn sha256_hex(data: &[u8]) -> String {
    Sha256::digest(data).iter().map(|b| format!("{b:02x}")).collect()
}

fn artifact(path: &Path, label: String) -> Result<Artifact> {
    let data = fs::read(path).map_err(io_at(path))?;
    Ok(Artifact {
        path: label,
        bytes: data.len() as u64,
        sha256: sha256_hex(&data),
    })
}

impl Manifest {
    pub fn new(command: &str, cfg: &RunConfig) -> Self {
        Manifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config: cfg.entries().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            seeds: Seeds {
                generator: dcdnn_core::rng::Generator::ChaCha8.id().into(),
                seed: cfg.seed,
                split_seed: cfg.split_seed,
            },
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(artifact(path, path.display().to_string())?);
        Ok(())
    }

    /// Records an output under its file name only, so manifests of runs in
    /// different directories stay comparable.
    pub fn add_output(&mut self, path: &Path) -> Result<()> {
        let name = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        self.outputs.push(artifact(path, name)?);
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(io_at(path))
    }
}
