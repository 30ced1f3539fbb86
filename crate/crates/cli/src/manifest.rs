//! Run manifest written beside every command's outputs.

use std::path::Path;

use rscn::config::ExperimentConfig;
use rscn::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub rscn_version: String,
    pub seed: Option<u64>,
    /// SHA-256 of the resolved config, overrides applied.
    pub config_hash: Option<String>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

impl Manifest {
    pub fn new(command: &str, cfg: Option<&ExperimentConfig>) -> Self {
        Manifest {
            command: command.to_string(),
            rscn_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: cfg.map(|c| c.seed),
            config_hash: cfg.map(|c| sha256_hex(c.to_toml_string().as_bytes())),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(mut self, p: &Path) -> Self {
        self.inputs.push(p.display().to_string());
        self
    }

    pub fn output(&mut self, name: &str) {
        self.outputs.push(name.to_string());
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join("manifest.toml");
        let text = toml::to_string(self).expect("manifest serializes");
        std::fs::write(&path, text).map_err(|e| Error::Io { path, source: e })
    }
}
