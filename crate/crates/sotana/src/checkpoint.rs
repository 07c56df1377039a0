//! Versioned JSON checkpoints.
//!
//! A full checkpoint holds the whole model. An adapters-only export holds
//! the config, the base seed and the trained factors; the frozen base is
//! rebuilt from the seed on load, since `MicroModel::new_base` is
//! deterministic.

use std::fs::File;
use std::io::{self, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sotana_core::microlm::{Adapter, FrozenWeight, MicroModel, ModelConfig, ModelError};
use sotana_core::rng::seeded;

pub const FORMAT: &str = "sotana-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Full,
    Adapters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerAdapter {
    pub layer: String,
    pub adapter: Adapter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Payload {
    Full { model: MicroModel },
    Adapters { config: ModelConfig, int8_frozen: bool, adapters: Vec<LayerAdapter> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Envelope {
    format: String,
    version: u32,
    base_seed: u64,
    #[serde(flatten)]
    payload: Payload,
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("cannot access {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path} is not a valid checkpoint: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{path}: unsupported checkpoint version {found} (expected {VERSION})")]
    Version { path: PathBuf, found: u32 },
    #[error("{path}: {source}")]
    Model { path: PathBuf, source: ModelError },
}

/// A loaded model plus the seed its frozen base was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub base_seed: u64,
    pub model: MicroModel,
}

pub fn save(path: &Path, model: &MicroModel, base_seed: u64, kind: Kind) -> Result<(), CheckpointError> {
    let payload = match kind {
        Kind::Full => Payload::Full { model: model.clone() },
        Kind::Adapters => {
            let adapters: Vec<LayerAdapter> = model
                .linears()
                .into_iter()
                .filter_map(|l| l.adapter().map(|a| LayerAdapter { layer: l.name().to_string(), adapter: a.clone() }))
                .collect();
            if adapters.is_empty() {
                return Err(CheckpointError::Model { path: path.to_path_buf(), source: ModelError::NoAdapters });
            }
            let int8_frozen = model.linears().iter().any(|l| matches!(l.weight(), FrozenWeight::Int8(_)));
            Payload::Adapters { config: *model.config(), int8_frozen, adapters }
        }
    };
    let env = Envelope { format: FORMAT.into(), version: VERSION, base_seed, payload };
    let io_err = |source| CheckpointError::Io { path: path.to_path_buf(), source };
    let file = File::create(path).map_err(io_err)?;
    serde_json::to_writer(io::BufWriter::new(file), &env).map_err(|e| io_err(e.into()))
}

pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let file = File::open(path).map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })?;
    let value: serde_json::Value = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| CheckpointError::Format { path: path.to_path_buf(), message: e.to_string() })?;
    let format_err = |message: String| CheckpointError::Format { path: path.to_path_buf(), message };
    if value.get("format").and_then(|f| f.as_str()) != Some(FORMAT) {
        return Err(format_err(format!("missing or wrong \"format\" (expected {FORMAT:?})")));
    }
    match value.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == VERSION as u64 => {}
        Some(v) => return Err(CheckpointError::Version { path: path.to_path_buf(), found: v as u32 }),
        None => return Err(format_err("missing \"version\"".into())),
    }
    let env: Envelope = serde_json::from_value(value).map_err(|e| format_err(e.to_string()))?;
    let model_err = |source| CheckpointError::Model { path: path.to_path_buf(), source };
    let model = match env.payload {
        Payload::Full { model } => model,
        Payload::Adapters { config, int8_frozen, adapters } => {
            let mut model = MicroModel::new_base(config, &mut seeded(env.base_seed)).map_err(model_err)?;
            if int8_frozen {
                model.quantize_frozen();
            }
            apply_adapters(&mut model, adapters).map_err(model_err)?;
            model
        }
    };
    model.check_shapes().map_err(model_err)?;
    Ok(Checkpoint { base_seed: env.base_seed, model })
}

/// Every linear must receive exactly one adapter.
fn apply_adapters(model: &mut MicroModel, adapters: Vec<LayerAdapter>) -> Result<(), ModelError> {
    let mut by_name: std::collections::HashMap<String, Adapter> =
        adapters.into_iter().map(|la| (la.layer, la.adapter)).collect();
    for linear in model.linears_mut() {
        let adapter = by_name.remove(linear.name()).ok_or(ModelError::NoAdapters)?;
        linear.set_adapter(adapter)?;
    }
    if !by_name.is_empty() {
        return Err(ModelError::InvalidConfig("adapter export names a layer the model does not have"));
    }
    Ok(())
}
