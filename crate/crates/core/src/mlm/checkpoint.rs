//! Single-file checkpoint: `DARTCKPT`, a little-endian u64 manifest length,
//! the JSON manifest, then every parameter as raw little-endian f32 in
//! manifest order.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{MlmConfig, ToyMlmModel};
use super::vocab::Vocabulary;
use crate::error::{DartError, Result};
use crate::prompt::PromptSpec;
use crate::tensor::{ParamStore, Tensor};

pub const MAGIC: &[u8; 8] = b"DARTCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the float section, in elements.
    pub offset: usize,
    pub no_decay: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub config: MlmConfig,
    pub vocabulary: Vocabulary,
    pub parameters: Vec<ParamEntry>,
    #[serde(default)]
    pub prompt_spec: Option<PromptSpec>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn into_model(self) -> Result<(ToyMlmModel, Option<PromptSpec>)> {
        let Manifest {
            config,
            vocabulary,
            prompt_spec,
            ..
        } = self.manifest;
        let model = ToyMlmModel::from_store(config, vocabulary, self.params)?;
        Ok((model, prompt_spec))
    }
}

pub fn encode_checkpoint(model: &ToyMlmModel, prompt_spec: Option<&PromptSpec>) -> Result<Vec<u8>> {
    let mut parameters = Vec::new();
    let mut offset = 0;
    for (_, p) in model.params().iter() {
        parameters.push(ParamEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            offset,
            no_decay: p.no_decay,
        });
        offset += p.value.numel();
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        config: model.config().clone(),
        vocabulary: model.vocab().clone(),
        parameters,
        prompt_spec: prompt_spec.cloned(),
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(16 + json.len() + offset * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, p) in model.params().iter() {
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_checkpoint(path: &Path, model: &ToyMlmModel, prompt_spec: Option<&PromptSpec>) -> Result<()> {
    let bytes = encode_checkpoint(model, prompt_spec)?;
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(DartError::Format("missing DARTCKPT header".into()));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    if body.len() < len {
        return Err(DartError::Format("manifest truncated".into()));
    }
    let manifest: Manifest =
        serde_json::from_slice(&body[..len]).map_err(|e| DartError::Format(format!("manifest: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(DartError::Format(format!(
            "unsupported format version {}",
            manifest.format_version
        )));
    }
    let floats = &body[len..];
    if !floats.len().is_multiple_of(4) {
        return Err(DartError::Format("float section is not a multiple of 4 bytes".into()));
    }
    let data: Vec<f32> = floats
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let mut store = ParamStore::new();
    let mut expected_offset = 0;
    for entry in &manifest.parameters {
        let numel: usize = entry.shape.iter().product();
        if entry.offset != expected_offset || entry.offset + numel > data.len() {
            return Err(DartError::Format(format!(
                "parameter `{}` at offset {} with {} values does not fit",
                entry.name, entry.offset, numel
            )));
        }
        let values = data[entry.offset..entry.offset + numel].to_vec();
        store.register(&entry.name, Tensor::new(entry.shape.clone(), values)?, entry.no_decay)?;
        expected_offset += numel;
    }
    if expected_offset != data.len() {
        return Err(DartError::Format(format!(
            "manifest covers {expected_offset} values but file holds {}",
            data.len()
        )));
    }
    Ok(Checkpoint {
        manifest,
        params: store,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}
