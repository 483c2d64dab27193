//! Per-run manifest: the resolved configuration, seeds, the command line and
//! SHA-256 hashes of every file read or written.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

#[derive(Debug, Serialize)]
pub struct Artifact {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: Vec<String>,
    pub seed: u64,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    pub config: RunConfig,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn artifact(role: &str, path: &Path) -> Result<Artifact> {
    let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(Artifact {
        role: role.to_string(),
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

impl Manifest {
    pub fn new(config: &RunConfig) -> Self {
        Manifest {
            tool: "upcr".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: std::env::args().collect(),
            seed: config.seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            config: config.clone(),
        }
    }

    pub fn input(&mut self, role: &str, path: &Path) -> Result<()> {
        self.inputs.push(artifact(role, path)?);
        Ok(())
    }

    pub fn output(&mut self, role: &str, path: &Path) -> Result<()> {
        self.outputs.push(artifact(role, path)?);
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).context("serialising manifest")?;
        std::fs::write(path, text).with_context(|| format!("writing manifest {}", path.display()))
    }
}

/// `<file>.manifest.toml` next to the main output, or a file in the working
/// directory named after the command.
pub fn default_path(main_output: Option<&Path>, command: &str) -> PathBuf {
    match main_output {
        Some(p) if p.is_dir() => p.join("manifest.toml"),
        Some(p) => {
            let mut s = p.as_os_str().to_owned();
            s.push(".manifest.toml");
            PathBuf::from(s)
        }
        None => PathBuf::from(format!("upcr-{command}.manifest.toml")),
    }
}
