//! Decoder-only micro-transformer with LoRA on every linear weight.
//!
//! Layout per block (pre-normalisation, no biases):
//! `h += Wo·attn(Wq·n, Wk·n, Wv·n)` with `n = rms(h)`, then
//! `h += Wdown·gelu(Wup·rms(h))`. A final RMS norm feeds `lm_head`.
//! Embeddings and norm gains are frozen; only adapter factors train.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::lora::{AdapterGrad, LinearCache, LoraLinear};
use super::matrix::{axpy, dot, Matrix};
use super::tokenizer::{EOS, VOCAB_SIZE};
use super::ModelError;
use crate::rng::DetRng;

const RMS_EPS: f64 = 1e-5;
const EMBED_STD: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: VOCAB_SIZE,
            d_model: 64,
            n_layers: 2,
            n_heads: 2,
            d_ff: 256,
            max_seq_len: 128,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.vocab_size == 0
            || self.d_model == 0
            || self.n_heads == 0
            || self.d_ff == 0
            || self.max_seq_len == 0
        {
            return Err(ModelError::InvalidConfig("model dimensions must be positive"));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(ModelError::InvalidConfig("d_model must be divisible by n_heads"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Adapter hyperparameters applied uniformly to every linear.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoraSpec {
    pub rank: usize,
    pub alpha: f64,
    pub dropout_p: f64,
}

impl Default for LoraSpec {
    fn default() -> Self {
        Self { rank: 8, alpha: 16.0, dropout_p: 0.05 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    attn_norm: Vec<f64>,
    wq: LoraLinear,
    wk: LoraLinear,
    wv: LoraLinear,
    wo: LoraLinear,
    ff_norm: Vec<f64>,
    w_up: LoraLinear,
    w_down: LoraLinear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub frozen: usize,
    pub trainable: usize,
}

/// One training example: `target_mask[i]` marks tokens whose prediction
/// (from position `i - 1`) enters the loss. Index 0 is never predicted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainSequence {
    pub tokens: Vec<u32>,
    pub target_mask: Vec<bool>,
}

/// Adapter gradients in [`MicroModel::linears`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub per_linear: Vec<AdapterGrad>,
}

impl Gradients {
    pub fn max_abs(&self) -> f64 {
        self.per_linear
            .iter()
            .map(|g| g.a.max_abs().max(g.b.max_abs()))
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MicroModel {
    config: ModelConfig,
    tok_emb: Matrix,
    pos_emb: Matrix,
    blocks: Vec<Block>,
    final_norm: Vec<f64>,
    lm_head: LoraLinear,
}

struct NormCache {
    x: Matrix,
    inv: Vec<f64>,
}

struct BlockCache {
    norm1: NormCache,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    q_c: LinearCache,
    k_c: LinearCache,
    v_c: LinearCache,
    probs: Vec<Vec<f64>>,
    o_c: LinearCache,
    norm2: NormCache,
    up: Matrix,
    /// tanh term of the GELU at each `up` entry.
    up_tanh: Matrix,
    up_c: LinearCache,
    down_c: LinearCache,
}

struct ForwardCache {
    blocks: Vec<BlockCache>,
    final_norm: NormCache,
}

/// Half-open row ranges of each sequence inside a stacked batch.
type Segments = Vec<(usize, usize)>;

impl MicroModel {
    /// A randomly initialised plain model (no adapters). Linear weights use
    /// `N(0, 1/fan_in)`, embeddings `N(0, 1)`, norm gains 1.
    pub fn new_base<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self, ModelError> {
        config.validate()?;
        let d = config.d_model;
        let lin = |name: alloc::string::String, n: usize, k: usize, rng: &mut R| {
            LoraLinear::plain(name, Matrix::gaussian(n, k, 1.0 / libm::sqrt(k as f64), rng))
        };
        let tok_emb = Matrix::gaussian(config.vocab_size, d, EMBED_STD, rng);
        let pos_emb = Matrix::gaussian(config.max_seq_len, d, EMBED_STD, rng);
        let mut blocks = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            blocks.push(Block {
                attn_norm: vec![1.0; d],
                wq: lin(format!("blocks.{l}.attn.q"), d, d, rng),
                wk: lin(format!("blocks.{l}.attn.k"), d, d, rng),
                wv: lin(format!("blocks.{l}.attn.v"), d, d, rng),
                wo: lin(format!("blocks.{l}.attn.o"), d, d, rng),
                ff_norm: vec![1.0; d],
                w_up: lin(format!("blocks.{l}.ff.up"), config.d_ff, d, rng),
                w_down: lin(format!("blocks.{l}.ff.down"), d, config.d_ff, rng),
            });
        }
        let lm_head = lin("lm_head".into(), config.vocab_size, d, rng);
        Ok(Self {
            config,
            tok_emb,
            pos_emb,
            blocks,
            final_norm: vec![1.0; d],
            lm_head,
        })
    }

    /// Verifies every tensor against the config. Deserialized models
    /// should pass this before use; the forward pass assumes it.
    pub fn check_shapes(&self) -> Result<(), ModelError> {
        let c = &self.config;
        c.validate()?;
        let d = c.d_model;
        let mat = |m: &Matrix, rows: usize| {
            if m.is_well_formed() && m.shape() == (rows, d) {
                Ok(())
            } else {
                Err(ModelError::ShapeMismatch { expected: rows * d, got: m.rows() * m.cols() })
            }
        };
        mat(&self.tok_emb, c.vocab_size)?;
        mat(&self.pos_emb, c.max_seq_len)?;
        if self.blocks.len() != c.n_layers {
            return Err(ModelError::ShapeMismatch { expected: c.n_layers, got: self.blocks.len() });
        }
        let gains = self.blocks.iter().flat_map(|b| [&b.attn_norm, &b.ff_norm]).chain([&self.final_norm]);
        for g in gains {
            if g.len() != d {
                return Err(ModelError::ShapeMismatch { expected: d, got: g.len() });
            }
        }
        for b in &self.blocks {
            for l in [&b.wq, &b.wk, &b.wv, &b.wo] {
                l.check_shape(d, d)?;
            }
            b.w_up.check_shape(c.d_ff, d)?;
            b.w_down.check_shape(d, c.d_ff)?;
        }
        self.lm_head.check_shape(c.vocab_size, d)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Every linear weight in canonical order: per block `q, k, v, o, up,
    /// down`, then `lm_head`.
    pub fn linears(&self) -> Vec<&LoraLinear> {
        let mut out = Vec::with_capacity(self.blocks.len() * 6 + 1);
        for b in &self.blocks {
            out.extend([&b.wq, &b.wk, &b.wv, &b.wo, &b.w_up, &b.w_down]);
        }
        out.push(&self.lm_head);
        out
    }

    pub fn linears_mut(&mut self) -> Vec<&mut LoraLinear> {
        let mut out = Vec::with_capacity(self.blocks.len() * 6 + 1);
        for b in &mut self.blocks {
            out.extend([
                &mut b.wq,
                &mut b.wk,
                &mut b.wv,
                &mut b.wo,
                &mut b.w_up,
                &mut b.w_down,
            ]);
        }
        out.push(&mut self.lm_head);
        out
    }

    pub fn is_plain(&self) -> bool {
        self.linears().iter().all(|l| l.adapter().is_none())
    }

    pub fn has_all_adapters(&self) -> bool {
        self.linears().iter().all(|l| l.adapter().is_some())
    }

    /// Wraps every linear with an adapter (Gaussian `A`, zero `B`).
    /// All ranks are validated before anything is mutated.
    pub fn inject_lora<R: Rng + ?Sized>(mut self, spec: LoraSpec, rng: &mut R) -> Result<Self, ModelError> {
        if !self.is_plain() {
            return Err(ModelError::AdaptersPresent);
        }
        for l in self.linears() {
            let max = l.out_dim().min(l.in_dim());
            if spec.rank == 0 || spec.rank > max {
                return Err(ModelError::RankTooLarge {
                    layer: l.name().into(),
                    rank: spec.rank,
                    max,
                });
            }
        }
        for l in self.linears_mut() {
            l.attach_adapter(spec.rank, spec.alpha, spec.dropout_p, rng)?;
        }
        Ok(self)
    }

    /// Folds every adapter into its frozen weight, leaving a plain model.
    pub fn merge_adapters(&mut self) -> Result<(), ModelError> {
        if !self.has_all_adapters() {
            return Err(ModelError::NoAdapters);
        }
        if let Some(l) = self
            .linears()
            .into_iter()
            .find(|l| matches!(l.weight(), super::lora::FrozenWeight::Int8(_)))
        {
            return Err(ModelError::QuantizedMerge(l.name().into()));
        }
        for l in self.linears_mut() {
            l.merge()?;
        }
        Ok(())
    }

    /// Stores every frozen linear weight as per-row int8.
    pub fn quantize_frozen(&mut self) {
        for l in self.linears_mut() {
            l.quantize_frozen();
        }
    }

    pub fn count_params(&self) -> ParamCount {
        let d = self.config.d_model;
        let mut frozen = self.tok_emb.data().len() + self.pos_emb.data().len() + d;
        frozen += self.blocks.len() * 2 * d;
        let mut trainable = 0;
        for l in self.linears() {
            frozen += l.frozen_count();
            trainable += l.trainable_count();
        }
        ParamCount { frozen, trainable }
    }

    /// Full logits (`T × vocab`) for one token sequence, inference mode.
    pub fn logits(&self, tokens: &[u32]) -> Result<Matrix, ModelError> {
        let segs = vec![(0, tokens.len())];
        let (hidden, _) = self.forward_stack(tokens, &segs, None, false)?;
        Ok(self.lm_head.forward_cached(&hidden, None).0)
    }

    /// Mean next-token cross-entropy over masked targets, no gradients.
    pub fn loss(&self, batch: &[TrainSequence]) -> Result<f64, ModelError> {
        let prepared = self.prepare_batch(batch)?;
        let (hidden, _) = self.forward_stack(&prepared.inputs, &prepared.segs, None, false)?;
        let sel = hidden.gather_rows(&prepared.rows);
        let logits = self.lm_head.forward_cached(&sel, None).0;
        Ok(cross_entropy(&logits, &prepared.targets).0)
    }

    /// Loss plus gradients for every adapter factor. `dropout` enables
    /// training-mode adapter dropout drawn from the given stream.
    pub fn loss_and_grads(
        &self,
        batch: &[TrainSequence],
        mut dropout: Option<&mut DetRng>,
    ) -> Result<(f64, Gradients), ModelError> {
        if !self.has_all_adapters() {
            return Err(ModelError::NoAdapters);
        }
        let prepared = self.prepare_batch(batch)?;
        let (hidden, cache) =
            self.forward_stack(&prepared.inputs, &prepared.segs, dropout.as_deref_mut(), true)?;
        let cache = cache.expect("cache requested");
        let sel = hidden.gather_rows(&prepared.rows);
        let (logits, head_cache) = self.lm_head.forward_cached(&sel, dropout.as_deref_mut());
        let (loss, dlogits) = cross_entropy(&logits, &prepared.targets);

        let mut grads: Vec<AdapterGrad> = self
            .linears()
            .iter()
            .map(|l| AdapterGrad::zeros_like(l.adapter().expect("adapters checked")))
            .collect();
        let n_lin = grads.len();

        let dsel = self.lm_head.backward(&dlogits, &head_cache, Some(&mut grads[n_lin - 1]));
        let mut dfinal = Matrix::zeros(hidden.rows(), hidden.cols());
        for (r, &row) in prepared.rows.iter().enumerate() {
            dfinal.row_mut(row).copy_from_slice(dsel.row(r));
        }
        let mut dh = rms_norm_backward(&dfinal, &cache.final_norm, &self.final_norm);

        for (bi, (block, bc)) in self.blocks.iter().zip(&cache.blocks).enumerate().rev() {
            let slots = &mut grads[bi * 6..bi * 6 + 6];
            // feed-forward branch
            let dact = block.w_down.backward(&dh, &bc.down_c, Some(&mut slots[5]));
            let mut dup = dact;
            for ((g, &x), &t) in dup.data_mut().iter_mut().zip(bc.up.data()).zip(bc.up_tanh.data()) {
                *g *= gelu_grad_with(x, t);
            }
            let df_in = block.w_up.backward(&dup, &bc.up_c, Some(&mut slots[4]));
            let mut dh1 = dh;
            dh1.add_assign(&rms_norm_backward(&df_in, &bc.norm2, &block.ff_norm));

            // attention branch
            let datt = block.wo.backward(&dh1, &bc.o_c, Some(&mut slots[3]));
            let (dq, dk, dv) = self.attention_backward(&datt, bc, &prepared.segs);
            let mut da_in = block.wq.backward(&dq, &bc.q_c, Some(&mut slots[0]));
            da_in.add_assign(&block.wk.backward(&dk, &bc.k_c, Some(&mut slots[1])));
            da_in.add_assign(&block.wv.backward(&dv, &bc.v_c, Some(&mut slots[2])));
            let mut next = dh1;
            next.add_assign(&rms_norm_backward(&da_in, &bc.norm1, &block.attn_norm));
            dh = next;
        }
        Ok((loss, Gradients { per_linear: grads }))
    }

    /// Greedy decoding: appends the argmax token (lowest id on ties) until
    /// `max_new` tokens, end-of-sequence, or the position limit.
    /// Returns the prompt followed by the new tokens (EOS excluded).
    pub fn generate_greedy(&self, prompt: &[u32], max_new: usize) -> Result<Vec<u32>, ModelError> {
        if prompt.len() >= self.config.max_seq_len {
            return Err(ModelError::SequenceTooLong {
                len: prompt.len(),
                max: self.config.max_seq_len - 1,
            });
        }
        let mut tokens = prompt.to_vec();
        for _ in 0..max_new {
            if tokens.is_empty() || tokens.len() >= self.config.max_seq_len {
                break;
            }
            let segs = vec![(0, tokens.len())];
            let (hidden, _) = self.forward_stack(&tokens, &segs, None, false)?;
            let last = hidden.gather_rows(&[hidden.rows() - 1]);
            let logits = self.lm_head.forward_cached(&last, None).0;
            let next = argmax_lowest(logits.row(0)) as u32;
            if next == EOS {
                break;
            }
            tokens.push(next);
        }
        Ok(tokens)
    }

    fn prepare_batch(&self, batch: &[TrainSequence]) -> Result<PreparedBatch, ModelError> {
        let mut p = PreparedBatch::default();
        for seq in batch {
            if seq.tokens.len() != seq.target_mask.len() {
                return Err(ModelError::ShapeMismatch {
                    expected: seq.tokens.len(),
                    got: seq.target_mask.len(),
                });
            }
            if seq.tokens.len() > self.config.max_seq_len {
                return Err(ModelError::SequenceTooLong {
                    len: seq.tokens.len(),
                    max: self.config.max_seq_len,
                });
            }
            if seq.tokens.len() < 2 {
                continue;
            }
            let start = p.inputs.len();
            let len = seq.tokens.len() - 1;
            p.inputs.extend_from_slice(&seq.tokens[..len]);
            p.segs.push((start, len));
            for i in 1..seq.tokens.len() {
                if seq.target_mask[i] {
                    p.rows.push(start + i - 1);
                    p.targets.push(seq.tokens[i] as usize);
                }
            }
        }
        if p.rows.is_empty() {
            return Err(ModelError::EmptyMask);
        }
        Ok(p)
    }

    fn forward_stack(
        &self,
        tokens: &[u32],
        segs: &Segments,
        mut dropout: Option<&mut DetRng>,
        want_cache: bool,
    ) -> Result<(Matrix, Option<ForwardCache>), ModelError> {
        let d = self.config.d_model;
        let mut h = Matrix::zeros(tokens.len(), d);
        for &(start, len) in segs {
            if len > self.config.max_seq_len {
                return Err(ModelError::SequenceTooLong { len, max: self.config.max_seq_len });
            }
            for pos in 0..len {
                let tok = tokens[start + pos] as usize;
                if tok >= self.config.vocab_size {
                    return Err(ModelError::TokenOutOfRange(tok as u32));
                }
                let row = h.row_mut(start + pos);
                row.copy_from_slice(self.tok_emb.row(tok));
                axpy(1.0, self.pos_emb.row(pos), row);
            }
        }

        let mut caches = Vec::new();
        for block in &self.blocks {
            let (n1, norm1) = rms_norm(&h, &block.attn_norm);
            let (q, q_c) = block.wq.forward_cached(&n1, dropout.as_deref_mut());
            let (k, k_c) = block.wk.forward_cached(&n1, dropout.as_deref_mut());
            let (v, v_c) = block.wv.forward_cached(&n1, dropout.as_deref_mut());
            let (att, probs) = self.attention(&q, &k, &v, segs);
            let (o, o_c) = block.wo.forward_cached(&att, dropout.as_deref_mut());
            h.add_assign(&o);

            let (n2, norm2) = rms_norm(&h, &block.ff_norm);
            let (up, up_c) = block.w_up.forward_cached(&n2, dropout.as_deref_mut());
            let mut up_tanh = up.clone();
            let mut act = up.clone();
            for (a, t) in act.data_mut().iter_mut().zip(up_tanh.data_mut()) {
                *t = gelu_tanh(*a);
                *a *= 0.5 * (1.0 + *t);
            }
            let (down, down_c) = block.w_down.forward_cached(&act, dropout.as_deref_mut());
            h.add_assign(&down);

            if want_cache {
                caches.push(BlockCache {
                    norm1,
                    q,
                    k,
                    v,
                    q_c,
                    k_c,
                    v_c,
                    probs,
                    o_c,
                    norm2,
                    up,
                    up_tanh,
                    up_c,
                    down_c,
                });
            }
        }
        let (out, final_norm) = rms_norm(&h, &self.final_norm);
        let cache = want_cache.then_some(ForwardCache { blocks: caches, final_norm });
        Ok((out, cache))
    }

    /// Causal multi-head attention per segment. Returns the concatenated
    /// head outputs and, per (segment, head), the `len × len` probabilities.
    fn attention(&self, q: &Matrix, k: &Matrix, v: &Matrix, segs: &Segments) -> (Matrix, Vec<Vec<f64>>) {
        let hd = self.config.head_dim();
        let scale = 1.0 / libm::sqrt(hd as f64);
        let mut out = Matrix::zeros(q.rows(), q.cols());
        let mut all_probs = Vec::with_capacity(segs.len() * self.config.n_heads);
        for &(s, t) in segs {
            for head in 0..self.config.n_heads {
                let off = head * hd;
                let mut p = vec![0.0; t * t];
                for i in 0..t {
                    let qi = &q.row(s + i)[off..off + hd];
                    let pi = &mut p[i * t..i * t + i + 1];
                    let mut m = f64::NEG_INFINITY;
                    for (j, pij) in pi.iter_mut().enumerate() {
                        *pij = dot(qi, &k.row(s + j)[off..off + hd]) * scale;
                        m = m.max(*pij);
                    }
                    let mut z = 0.0;
                    for pij in pi.iter_mut() {
                        *pij = libm::exp(*pij - m);
                        z += *pij;
                    }
                    let oi = &mut out.row_mut(s + i)[off..off + hd];
                    for (j, pij) in pi.iter_mut().enumerate() {
                        *pij /= z;
                        axpy(*pij, &v.row(s + j)[off..off + hd], oi);
                    }
                }
                all_probs.push(p);
            }
        }
        (out, all_probs)
    }

    fn attention_backward(&self, datt: &Matrix, bc: &BlockCache, segs: &Segments) -> (Matrix, Matrix, Matrix) {
        let hd = self.config.head_dim();
        let heads = self.config.n_heads;
        let scale = 1.0 / libm::sqrt(hd as f64);
        let (rows, cols) = datt.shape();
        let mut dq = Matrix::zeros(rows, cols);
        let mut dk = Matrix::zeros(rows, cols);
        let mut dv = Matrix::zeros(rows, cols);
        let mut dp = Vec::new();
        for (si, &(s, t)) in segs.iter().enumerate() {
            for head in 0..heads {
                let off = head * hd;
                let p = &bc.probs[si * heads + head];
                for i in 0..t {
                    let pi = &p[i * t..i * t + i + 1];
                    let doi = &datt.row(s + i)[off..off + hd];
                    dp.clear();
                    let mut rowdot = 0.0;
                    for (j, &pij) in pi.iter().enumerate() {
                        let g = dot(doi, &bc.v.row(s + j)[off..off + hd]);
                        rowdot += pij * g;
                        dp.push(g);
                        axpy(pij, doi, &mut dv.row_mut(s + j)[off..off + hd]);
                    }
                    for (j, &pij) in pi.iter().enumerate() {
                        let ds = pij * (dp[j] - rowdot) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        axpy(ds, &bc.k.row(s + j)[off..off + hd], &mut dq.row_mut(s + i)[off..off + hd]);
                        axpy(ds, &bc.q.row(s + i)[off..off + hd], &mut dk.row_mut(s + j)[off..off + hd]);
                    }
                }
            }
        }
        (dq, dk, dv)
    }
}

/// `inject_lora` as a free function over a plain model.
pub fn inject_lora<R: Rng + ?Sized>(
    model: MicroModel,
    rank: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<MicroModel, ModelError> {
    model.inject_lora(LoraSpec { rank, alpha, ..LoraSpec::default() }, rng)
}

#[derive(Default)]
struct PreparedBatch {
    inputs: Vec<u32>,
    segs: Segments,
    rows: Vec<usize>,
    targets: Vec<usize>,
}

fn rms_norm(x: &Matrix, gain: &[f64]) -> (Matrix, NormCache) {
    let (rows, d) = x.shape();
    let mut out = Matrix::zeros(rows, d);
    let mut inv = Vec::with_capacity(rows);
    for r in 0..rows {
        let xr = x.row(r);
        let ms = dot(xr, xr) / d as f64;
        let iv = 1.0 / libm::sqrt(ms + RMS_EPS);
        inv.push(iv);
        for ((o, &xv), &g) in out.row_mut(r).iter_mut().zip(xr).zip(gain) {
            *o = g * xv * iv;
        }
    }
    (out, NormCache { x: x.clone(), inv })
}

fn rms_norm_backward(dy: &Matrix, cache: &NormCache, gain: &[f64]) -> Matrix {
    let (rows, d) = dy.shape();
    let mut dx = Matrix::zeros(rows, d);
    let mut gy = vec![0.0; d];
    for r in 0..rows {
        let iv = cache.inv[r];
        let xr = cache.x.row(r);
        for ((g, &dyv), &gn) in gy.iter_mut().zip(dy.row(r)).zip(gain) {
            *g = dyv * gn;
        }
        let proj = dot(&gy, xr) / d as f64;
        let c = iv * iv * iv * proj;
        for ((o, &g), &xv) in dx.row_mut(r).iter_mut().zip(&gy).zip(xr) {
            *o = iv * g - c * xv;
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

/// `tanh(√(2/π)(x + 0.044715x³))` through a single `exp`.
fn gelu_tanh(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_K * x * x * x);
    1.0 - 2.0 / (libm::exp(2.0 * u) + 1.0)
}

#[cfg(test)]
fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + gelu_tanh(x))
}

#[cfg(test)]
fn gelu_grad(x: f64) -> f64 {
    gelu_grad_with(x, gelu_tanh(x))
}

fn gelu_grad_with(x: f64, t: f64) -> f64 {
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

/// Mean cross-entropy and its gradient w.r.t. the logits.
fn cross_entropy(logits: &Matrix, targets: &[usize]) -> (f64, Matrix) {
    let m = targets.len() as f64;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut total = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        let row = logits.row(r);
        let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let g = grad.row_mut(r);
        let mut z = 0.0;
        for (gi, &l) in g.iter_mut().zip(row) {
            *gi = libm::exp(l - mx);
            z += *gi;
        }
        total += libm::log(z) + mx - row[t];
        for gi in g.iter_mut() {
            *gi /= z * m;
        }
        g[t] -= 1.0 / m;
    }
    (total / m, grad)
}

fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn tiny() -> ModelConfig {
        ModelConfig { vocab_size: 11, d_model: 8, n_layers: 1, n_heads: 2, d_ff: 12, max_seq_len: 10 }
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax_lowest(&[1.0, 3.0, 3.0, 2.0]), 1);
    }

    #[test]
    fn gelu_grad_matches_difference_quotient() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn default_config_parameter_accounting() {
        let mut rng = seeded(0);
        let base = MicroModel::new_base(ModelConfig::default(), &mut rng).unwrap();
        assert_eq!(base.count_params().trainable, 0);
        let model = inject_lora(base, 8, 16.0, &mut rng).unwrap();
        let pc = model.count_params();
        // per block: 4 × (64+64)·8 + 2 × (256+64)·8 = 9216; lm_head (256+64)·8
        assert_eq!(pc.trainable, 2 * 9216 + 2560);
        assert_eq!(pc.frozen, 139_584);
    }

    #[test]
    fn rank_error_names_the_first_offending_layer() {
        let mut rng = seeded(0);
        let base = MicroModel::new_base(tiny(), &mut rng).unwrap();
        let err = inject_lora(base, 9, 16.0, &mut rng).unwrap_err();
        assert!(matches!(err, ModelError::RankTooLarge { ref layer, .. } if layer == "blocks.0.attn.q"));
    }

    #[test]
    fn all_masked_out_batch_is_rejected() {
        let mut rng = seeded(0);
        let model = inject_lora(MicroModel::new_base(tiny(), &mut rng).unwrap(), 2, 4.0, &mut rng).unwrap();
        let seq = TrainSequence { tokens: vec![1, 2, 3], target_mask: vec![false; 3] };
        assert!(matches!(model.loss_and_grads(&[seq], None), Err(ModelError::EmptyMask)));
    }

    #[test]
    fn duplicated_batch_keeps_the_loss() {
        let mut rng = seeded(2);
        let model = inject_lora(MicroModel::new_base(tiny(), &mut rng).unwrap(), 2, 4.0, &mut rng).unwrap();
        let a = TrainSequence { tokens: vec![1, 2, 3, 4], target_mask: vec![false, false, true, true] };
        let b = TrainSequence { tokens: vec![5, 6, 7], target_mask: vec![false, true, true] };
        let one = model.loss(&[a.clone(), b.clone()]).unwrap();
        let two = model.loss(&[a.clone(), b.clone(), a, b]).unwrap();
        assert!((one - two).abs() < 1e-12);
    }

    #[test]
    fn generation_is_deterministic_and_bounded() {
        let mut rng = seeded(4);
        let model = MicroModel::new_base(tiny(), &mut rng).unwrap();
        assert_eq!(model.generate_greedy(&[3, 4], 0).unwrap(), vec![3, 4]);
        let g1 = model.generate_greedy(&[3, 4], 5).unwrap();
        let g2 = model.generate_greedy(&[3, 4], 5).unwrap();
        assert_eq!(g1, g2);
        assert!(g1.len() <= tiny().max_seq_len);
        assert!(model.generate_greedy(&[1; 10], 1).is_err());
    }

    #[test]
    fn out_of_vocab_token_is_an_error() {
        let mut rng = seeded(4);
        let model = MicroModel::new_base(tiny(), &mut rng).unwrap();
        assert!(matches!(model.logits(&[11]), Err(ModelError::TokenOutOfRange(11))));
    }
}
