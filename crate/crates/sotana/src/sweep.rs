//! Data-volume sweep: train on growing prefixes of one fixed shuffle and
//! score each model on the same evaluation set.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sotana_core::dataforge::InstructionTriple;
use sotana_core::evalmetrics::{score_corpus, tokenize, MetricError};
use sotana_core::microlm::{train, ModelConfig, ModelError, TrainConfig};
use sotana_core::rng::seeded;

use crate::infer::{adapted_model, complete};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub size: usize,
    pub steps: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub bleu: f64,
    pub meteor: f64,
    pub rouge_l: f64,
    pub cider: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error("sweep size {size} exceeds the {available} examples in the dataset")]
    SizeTooLarge { size: usize, available: usize },
    #[error("sweep needs at least one size")]
    NoSizes,
    #[error("sweep size must be positive")]
    ZeroSize,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone, Copy)]
pub struct SweepSettings {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub max_new_tokens: usize,
}

/// One row per size, in the order given. Each size trains a fresh model
/// from the same base seed, so equal sizes give equal rows.
pub fn sweep(
    data: &[InstructionTriple],
    sizes: &[usize],
    eval_set: &[InstructionTriple],
    settings: &SweepSettings,
) -> Result<Vec<SweepRow>, SweepError> {
    if sizes.is_empty() {
        return Err(SweepError::NoSizes);
    }
    for &size in sizes {
        if size == 0 {
            return Err(SweepError::ZeroSize);
        }
        if size > data.len() {
            return Err(SweepError::SizeTooLarge { size, available: data.len() });
        }
    }
    let mut shuffled = data.to_vec();
    shuffled.shuffle(&mut seeded(settings.train.rng_seed));

    let ids: Vec<String> = (0..eval_set.len()).map(|i| i.to_string()).collect();
    let refs: Vec<_> = eval_set.iter().map(|t| tokenize(&t.output)).collect();
    let mut rows = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let mut model = adapted_model(settings.model, &settings.train, settings.train.rng_seed)?;
        let history = train(&mut model, &shuffled[..size], &settings.train)?;
        let mut cands = Vec::with_capacity(eval_set.len());
        for t in eval_set {
            cands.push(tokenize(&complete(&model, &t.instruction, &t.input, settings.max_new_tokens)?));
        }
        let report = score_corpus(&ids, &cands, &refs)?;
        let row = SweepRow {
            size,
            steps: history.steps(),
            initial_loss: history.losses.first().copied().unwrap_or(f64::NAN),
            final_loss: history.losses.last().copied().unwrap_or(f64::NAN),
            bleu: report.corpus.bleu_mean,
            meteor: report.corpus.meteor_mean,
            rouge_l: report.corpus.rouge_l_mean,
            cider: report.corpus.cider,
        };
        log::info!("sweep size {size}: {} steps, loss {:.4} -> {:.4}", row.steps, row.initial_loss, row.final_loss);
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_csv<W: std::io::Write>(rows: &[SweepRow], w: W) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}
