use std::path::Path;

use dart_core::mlm::{PretrainStage, DEFAULT_RESERVED};
use dart_core::objectives::TrainConfig;
use dart_core::{DartError, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;
pub const SEED_ENV: &str = "DART_SEED";

/// Parse a JSON config file, mapping every failure to a config error that
/// names the file and, where serde knows it, the field.
pub fn load<T: DeserializeOwned + Versioned>(path: &Path) -> Result<T> {
    let text =
        std::fs::read_to_string(path).map_err(|e| DartError::Config(format!("cannot read {}: {e}", path.display())))?;
    let value: T = serde_json::from_str(&text).map_err(|e| DartError::Config(format!("{}: {e}", path.display())))?;
    if value.schema_version() != SCHEMA_VERSION {
        return Err(DartError::Config(format!(
            "{}: schema_version {} is not supported (expected {SCHEMA_VERSION})",
            path.display(),
            value.schema_version()
        )));
    }
    Ok(value)
}

pub trait Versioned {
    fn schema_version(&self) -> u32;
}

/// `DART_SEED`, when set, replaces the configured seed.
pub fn seed_override() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| DartError::Config(format!("{SEED_ENV}={s:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelDims {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_len: usize,
    pub d_ff: usize,
    pub init_std: f32,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            max_len: 64,
            d_ff: 128,
            init_std: 0.02,
        }
    }
}

/// `dart pretrain` configuration. Without `stages` the default two-stage
/// curriculum seeded from `seed` runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainFile {
    pub schema_version: u32,
    pub seed: u64,
    #[serde(default = "default_reserved")]
    pub reserved: usize,
    #[serde(default)]
    pub model: ModelDims,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stages: Option<Vec<PretrainStage>>,
}

fn default_reserved() -> usize {
    DEFAULT_RESERVED
}

impl Versioned for PretrainFile {
    fn schema_version(&self) -> u32 {
        self.schema_version
    }
}

/// Fine-tuning overrides shared by `finetune`, `sweep` and `analyze`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    /// Keys of the training configuration to replace.
    #[serde(default)]
    pub train: serde_json::Map<String, serde_json::Value>,
}

impl Versioned for RunFile {
    fn schema_version(&self) -> u32 {
        self.schema_version
    }
}

impl RunFile {
    pub fn empty() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            ..Default::default()
        }
    }

    /// `base` with this file's overrides. The phase schedule belongs to the
    /// method and the seed to the episode, so neither may be set here.
    pub fn apply(&self, base: &TrainConfig) -> Result<TrainConfig> {
        for fixed in ["phases", "seed"] {
            if self.train.contains_key(fixed) {
                return Err(DartError::Config(format!("train.{fixed} cannot be overridden")));
            }
        }
        base.with_overrides(&self.train)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridFile {
    pub schema_version: u32,
    pub grid: dart_core::harness::GridSpace,
}

impl Versioned for GridFile {
    fn schema_version(&self) -> u32 {
        self.schema_version
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse<T: DeserializeOwned + Versioned>(text: &str) -> Result<T> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, text).unwrap();
        load(&p)
    }

    #[test]
    fn pretrain_file_defaults_and_errors() {
        let f: PretrainFile = parse(r#"{"schema_version":1,"seed":3}"#).unwrap();
        assert_eq!(
            (f.reserved, f.model.d_model, f.stages.is_none()),
            (DEFAULT_RESERVED, 64, true)
        );
        let e = parse::<PretrainFile>(r#"{"schema_version":1}"#).unwrap_err();
        assert!(e.to_string().contains("`seed`"), "{e}");
        let e = parse::<PretrainFile>(r#"{"schema_version":1,"seed":3,"sed":4}"#).unwrap_err();
        assert!(e.to_string().contains("sed"), "{e}");
        let e = parse::<PretrainFile>(r#"{"schema_version":2,"seed":3}"#).unwrap_err();
        assert!(matches!(e, DartError::Config(_)));
    }

    #[test]
    fn run_file_guards_method_owned_keys() {
        let f: RunFile = parse(r#"{"schema_version":1,"train":{"epochs":2}}"#).unwrap();
        assert_eq!(f.apply(&TrainConfig::default()).unwrap().epochs, 2);
        let f: RunFile = parse(r#"{"schema_version":1,"train":{"phases":"full_only"}}"#).unwrap();
        assert!(f.apply(&TrainConfig::default()).is_err());
        assert!(parse::<RunFile>(r#"{"schema_version":1,"lr":1}"#).is_err());
    }
}
