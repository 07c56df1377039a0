//! Building models for training and turning prompts into text.

use sotana_core::microlm::tokenizer::decode;
use sotana_core::microlm::{encode_prompt, MicroModel, ModelConfig, ModelError, TrainConfig};
use sotana_core::rng::seeded;

/// Instruction used for each evaluation task when prompting the model.
pub const QA_INSTRUCTION: &str = "Answer the question.";
pub const SUMM_INSTRUCTION: &str = "Summarize this code in one sentence.";
pub const CODEGEN_INSTRUCTION: &str = "Complete the Python function.";

/// A fresh base drawn from `base_seed`, optionally int8, with adapters
/// injected from the same stream.
pub fn adapted_model(model: ModelConfig, train: &TrainConfig, base_seed: u64) -> Result<MicroModel, ModelError> {
    let mut rng = seeded(base_seed);
    let mut base = MicroModel::new_base(model, &mut rng)?;
    if train.int8_frozen {
        base.quantize_frozen();
    }
    base.inject_lora(train.lora_spec(), &mut rng)
}

/// Greedy continuation of the rendered prompt, without the prompt.
/// The prompt is cut so that `max_new` positions stay free where the
/// window allows it.
pub fn complete(model: &MicroModel, instruction: &str, input: &str, max_new: usize) -> Result<String, ModelError> {
    let window = model.config().max_seq_len;
    let reserve = max_new.clamp(1, window / 2);
    let prompt = encode_prompt(instruction, input, window, reserve)?;
    let out = model.generate_greedy(&prompt, max_new)?;
    Ok(decode(&out[prompt.len()..]))
}
