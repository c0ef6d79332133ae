use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use dart_core::Result;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize)]
pub struct FileRecord {
    pub path: PathBuf,
    pub sha256: String,
}

/// Provenance of one command run. Written before work starts and again,
/// with the finish time, once every output exists.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<PathBuf>,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seeds: Vec<u64>, inputs: &[&Path]) -> Result<Self> {
        let canonical = serde_json::to_vec(&config)?;
        Ok(Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: hex::encode(Sha256::digest(&canonical)),
            config,
            seeds,
            inputs: inputs
                .iter()
                .map(|p| {
                    Ok(FileRecord {
                        path: p.to_path_buf(),
                        sha256: sha256_file(p)?,
                    })
                })
                .collect::<Result<_>>()?,
            outputs: Vec::new(),
            started_unix: now(),
            finished_unix: None,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn finish(&mut self, path: &Path) -> Result<()> {
        self.finished_unix = Some(now());
        self.write(path)
    }
}
