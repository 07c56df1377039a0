//! LoRA micro language model: int8-capable frozen weights, low-rank
//! adapters on every linear, manual backpropagation, Adam, greedy decoding.

mod adam;
mod lora;
mod matrix;
mod model;
mod quant;
pub mod tokenizer;
mod train;

use alloc::string::String;

pub use adam::AdamState;
pub use lora::{Adapter, AdapterGrad, FrozenWeight, LoraLinear, LORA_A_INIT_STD};
pub use matrix::Matrix;
pub use model::{inject_lora, Gradients, LoraSpec, MicroModel, ModelConfig, ParamCount, TrainSequence};
pub use quant::{dequantize_int8, quantize_int8, QuantizedMatrix};
pub use train::{encode_prompt, encode_triple, train, TrainConfig, TrainingHistory};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("rank {rank} is invalid for layer {layer} (must be in 1..={max})")]
    RankTooLarge { layer: String, rank: usize, max: usize },
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("model already carries adapters")]
    AdaptersPresent,
    #[error("model has no adapters")]
    NoAdapters,
    #[error("layer {0} holds int8 weights; merging needs full precision")]
    QuantizedMerge(String),
    #[error("batch has no masked target positions")]
    EmptyMask,
    #[error("sequence of {len} tokens exceeds the limit of {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("token id {0} is outside the vocabulary")]
    TokenOutOfRange(u32),
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Prompt(#[from] crate::corpus::CorpusError),
}
