//! Instruction tuning of adapter factors.

use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::model::{LoraSpec, MicroModel, TrainSequence};
use super::tokenizer::{encode, EOS};
use super::ModelError;
use crate::corpus::{CorpusError, PromptTemplate};
use crate::dataforge::InstructionTriple;
use crate::rng::seeded;

/// Fine-tuning hyperparameters. `rank`, `alpha`, `learning_rate`,
/// `dropout_p` and `epochs` default to the published LLaMA settings; batch
/// size (published: 512) and sequence length (published: 512) are scaled
/// down for a CPU.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub rank: usize,
    pub alpha: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub dropout_p: f64,
    pub max_seq_len: usize,
    pub epochs: usize,
    pub rng_seed: u64,
    pub int8_frozen: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            rank: 8,
            alpha: 16.0,
            learning_rate: 1e-4,
            batch_size: 32,
            dropout_p: 0.05,
            max_seq_len: 128,
            epochs: 5,
            rng_seed: 0,
            int8_frozen: false,
        }
    }
}

impl TrainConfig {
    pub fn lora_spec(&self) -> LoraSpec {
        LoraSpec { rank: self.rank, alpha: self.alpha, dropout_p: self.dropout_p }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.rank == 0 || self.batch_size == 0 || self.max_seq_len < 2 {
            return Err(ModelError::InvalidConfig("rank, batch_size and max_seq_len must be positive"));
        }
        if !(self.alpha > 0.0 && self.learning_rate > 0.0) {
            return Err(ModelError::InvalidConfig("alpha and learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(ModelError::InvalidConfig("dropout_p must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    /// Mean masked cross-entropy of every optimizer step, in order.
    pub losses: Vec<f64>,
}

impl TrainingHistory {
    pub fn steps(&self) -> usize {
        self.losses.len()
    }
}

/// Prompt tokens followed by response tokens and EOS; only the response
/// (and EOS) is marked for the loss. The response keeps at least
/// `min(|output| + 1, max_len / 2)` positions; the prompt input shrinks
/// first.
pub fn encode_triple(t: &InstructionTriple, max_len: usize) -> Result<TrainSequence, ModelError> {
    let mut response = encode(&t.output);
    response.push(EOS);
    let reserve = response.len().min(max_len / 2).max(1);
    let mut tokens = encode_prompt(&t.instruction, &t.input, max_len, reserve)?;
    let mut target_mask = vec![false; tokens.len()];
    let room = max_len - tokens.len();
    response.truncate(room);
    target_mask.extend(core::iter::repeat_n(true, response.len()));
    tokens.extend(response);
    Ok(TrainSequence { tokens, target_mask })
}

/// Prompt tokens leaving `reserve` positions of a `max_len` window free.
/// When the instruction alone is too long for that, the input is dropped
/// and the reserve shrinks instead; only an instruction that fills the
/// whole window is an error.
pub fn encode_prompt(instruction: &str, input: &str, max_len: usize, reserve: usize) -> Result<Vec<u32>, ModelError> {
    let budget = max_len.saturating_sub(reserve);
    let prompt = match PromptTemplate::new(budget).render("", instruction, input) {
        Err(CorpusError::PromptTooLong { needed, .. }) if needed < max_len => {
            PromptTemplate::new(needed).render("", instruction, input)?
        }
        r => r?,
    };
    Ok(encode(&prompt.rendered))
}

/// Runs `epochs × ceil(N / batch_size)` Adam steps on the adapter factors.
/// The example order is reshuffled every epoch from `rng_seed`; adapter
/// dropout draws from the same stream.
pub fn train(
    model: &mut MicroModel,
    dataset: &[InstructionTriple],
    cfg: &TrainConfig,
) -> Result<TrainingHistory, ModelError> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if !model.has_all_adapters() {
        return Err(ModelError::NoAdapters);
    }
    let max_len = cfg.max_seq_len.min(model.config().max_seq_len);
    let encoded = dataset
        .iter()
        .map(|t| encode_triple(t, max_len))
        .collect::<Result<Vec<_>, _>>()?;

    let mut rng = seeded(cfg.rng_seed);
    let mut adam = AdamState::new(model);
    let mut history = TrainingHistory::default();
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| encoded[i].clone()));
            let (loss, grads) = model.loss_and_grads(&batch, Some(&mut rng))?;
            if !loss.is_finite() {
                return Err(ModelError::NonFiniteLoss { step: history.steps() });
            }
            adam.apply(model, &grads, cfg.learning_rate);
            history.losses.push(loss);
        }
    }
    Ok(history)
}
