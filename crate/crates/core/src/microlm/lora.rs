//! Frozen linear weights with an optional trainable low-rank adapter.
//!
//! `y = W·x + (alpha / r) · B·(A·x_d)` with `W: n×k`, `A: r×k`, `B: n×r`,
//! where `x_d` is `x` after inverted dropout (training only).

use alloc::borrow::Cow;
use alloc::string::String;
use alloc::vec::Vec;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::quant::{dequantize_int8, quantize_int8, QuantizedMatrix};
use super::ModelError;
use crate::rng::DetRng;

/// Standard deviation of the Gaussian used for `A`.
pub const LORA_A_INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum FrozenWeight {
    Full(Matrix),
    Int8(QuantizedMatrix),
}

impl FrozenWeight {
    pub fn shape(&self) -> (usize, usize) {
        match self {
            FrozenWeight::Full(m) => m.shape(),
            FrozenWeight::Int8(q) => (q.rows(), q.cols()),
        }
    }

    pub fn is_well_formed(&self) -> bool {
        match self {
            FrozenWeight::Full(m) => m.is_well_formed(),
            FrozenWeight::Int8(q) => q.is_well_formed(),
        }
    }

    /// Full-precision view; int8 weights are dequantized on use.
    pub fn matrix(&self) -> Cow<'_, Matrix> {
        match self {
            FrozenWeight::Full(m) => Cow::Borrowed(m),
            FrozenWeight::Int8(q) => Cow::Owned(dequantize_int8(q)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adapter {
    pub a: Matrix,
    pub b: Matrix,
    pub alpha: f64,
    pub dropout_p: f64,
}

impl Adapter {
    pub fn rank(&self) -> usize {
        self.a.rows()
    }

    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank() as f64
    }
}

/// Gradient slots for one adapter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdapterGrad {
    pub a: Matrix,
    pub b: Matrix,
}

impl AdapterGrad {
    pub fn zeros_like(adapter: &Adapter) -> Self {
        Self {
            a: Matrix::zeros(adapter.a.rows(), adapter.a.cols()),
            b: Matrix::zeros(adapter.b.rows(), adapter.b.cols()),
        }
    }
}

/// What the backward pass needs from one forward call.
#[derive(Clone, Debug)]
pub(crate) struct LinearCache {
    x_d: Matrix,
    u: Matrix,
    mask: Option<Matrix>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoraLinear {
    name: String,
    weight: FrozenWeight,
    adapter: Option<Adapter>,
}

impl LoraLinear {
    pub fn plain(name: impl Into<String>, weight: Matrix) -> Self {
        Self { name: name.into(), weight: FrozenWeight::Full(weight), adapter: None }
    }

    /// Builds a layer with explicit factors; shapes must compose.
    pub fn with_factors(
        name: impl Into<String>,
        weight: Matrix,
        a: Matrix,
        b: Matrix,
        alpha: f64,
        dropout_p: f64,
    ) -> Result<Self, ModelError> {
        let name = name.into();
        let (n, k) = weight.shape();
        let r = a.rows();
        check_rank(&name, r, n, k)?;
        if a.cols() != k {
            return Err(ModelError::ShapeMismatch { expected: k, got: a.cols() });
        }
        if b.shape() != (n, r) {
            return Err(ModelError::ShapeMismatch { expected: n * r, got: b.rows() * b.cols() });
        }
        check_dropout(dropout_p)?;
        Ok(Self {
            name,
            weight: FrozenWeight::Full(weight),
            adapter: Some(Adapter { a, b, alpha, dropout_p }),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn weight(&self) -> &FrozenWeight {
        &self.weight
    }

    pub fn adapter(&self) -> Option<&Adapter> {
        self.adapter.as_ref()
    }

    pub fn adapter_mut(&mut self) -> Option<&mut Adapter> {
        self.adapter.as_mut()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape().0
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape().1
    }

    pub fn frozen_count(&self) -> usize {
        let (n, k) = self.weight.shape();
        n * k
    }

    /// `(n + k) · r`, or 0 without an adapter.
    pub fn trainable_count(&self) -> usize {
        self.adapter
            .as_ref()
            .map_or(0, |ad| (self.out_dim() + self.in_dim()) * ad.rank())
    }

    /// Shape consistency of the weight and any adapter against `(n, k)`.
    pub fn check_shape(&self, n: usize, k: usize) -> Result<(), ModelError> {
        let bad = |expected: usize, got: usize| ModelError::ShapeMismatch { expected, got };
        if !self.weight.is_well_formed() || self.weight.shape() != (n, k) {
            let (wn, wk) = self.weight.shape();
            return Err(bad(n * k, wn * wk));
        }
        if let Some(ad) = &self.adapter {
            check_rank(&self.name, ad.rank(), n, k)?;
            check_dropout(ad.dropout_p)?;
            if !ad.a.is_well_formed() || ad.a.cols() != k {
                return Err(bad(k, ad.a.cols()));
            }
            if !ad.b.is_well_formed() || ad.b.shape() != (n, ad.rank()) {
                return Err(bad(n * ad.rank(), ad.b.rows() * ad.b.cols()));
            }
        }
        Ok(())
    }

    /// Gaussian `A`, zero `B`.
    pub fn attach_adapter<R: Rng + ?Sized>(
        &mut self,
        rank: usize,
        alpha: f64,
        dropout_p: f64,
        rng: &mut R,
    ) -> Result<(), ModelError> {
        if self.adapter.is_some() {
            return Err(ModelError::AdaptersPresent);
        }
        let (n, k) = self.weight.shape();
        check_rank(&self.name, rank, n, k)?;
        check_dropout(dropout_p)?;
        let a = Matrix::gaussian(rank, k, LORA_A_INIT_STD, rng);
        let b = Matrix::zeros(n, rank);
        self.adapter = Some(Adapter { a, b, alpha, dropout_p });
        Ok(())
    }

    /// Installs trained factors, e.g. from an adapters-only export. The
    /// layer is left untouched if the shapes do not fit.
    pub fn set_adapter(&mut self, adapter: Adapter) -> Result<(), ModelError> {
        let (n, k) = self.weight.shape();
        let previous = self.adapter.replace(adapter);
        if let Err(e) = self.check_shape(n, k) {
            self.adapter = previous;
            return Err(e);
        }
        Ok(())
    }

    pub fn quantize_frozen(&mut self) {
        if let FrozenWeight::Full(m) = &self.weight {
            self.weight = FrozenWeight::Int8(quantize_int8(m));
        }
    }

    /// Folds `(alpha/r)·B·A` into `W` and drops the adapter.
    pub fn merge(&mut self) -> Result<(), ModelError> {
        let adapter = self.adapter.as_ref().ok_or(ModelError::NoAdapters)?;
        let FrozenWeight::Full(w) = &mut self.weight else {
            return Err(ModelError::QuantizedMerge(self.name.clone()));
        };
        // ΔW = B·A, computed as B · (Aᵀ)ᵀ
        let mut delta = adapter.b.matmul(&adapter.a);
        delta.scale_in_place(adapter.scaling());
        w.add_assign(&delta);
        self.adapter = None;
        Ok(())
    }

    /// Single-vector forward. With `training` set, adapter-input dropout
    /// draws from `rng`.
    pub fn forward_vec(
        &self,
        x: &[f64],
        training: Option<&mut DetRng>,
    ) -> Result<Vec<f64>, ModelError> {
        if x.len() != self.in_dim() {
            return Err(ModelError::ShapeMismatch { expected: self.in_dim(), got: x.len() });
        }
        let xm = Matrix::from_vec(1, x.len(), x.to_vec());
        let (y, _) = self.forward_cached(&xm, training);
        Ok(y.data().to_vec())
    }

    /// Batched inference forward: rows of `x` are inputs.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix, ModelError> {
        if x.cols() != self.in_dim() {
            return Err(ModelError::ShapeMismatch { expected: self.in_dim(), got: x.cols() });
        }
        Ok(self.forward_cached(x, None).0)
    }

    pub(crate) fn forward_cached(
        &self,
        x: &Matrix,
        training: Option<&mut DetRng>,
    ) -> (Matrix, LinearCache) {
        let w = self.weight.matrix();
        let mut y = x.matmul_t(&w);
        let Some(ad) = &self.adapter else {
            let cache = LinearCache {
                x_d: Matrix::zeros(0, 0),
                u: Matrix::zeros(0, 0),
                mask: None,
            };
            return (y, cache);
        };
        let mask = match training {
            Some(rng) if ad.dropout_p > 0.0 => Some(dropout_mask(x.rows(), x.cols(), ad.dropout_p, rng)),
            _ => None,
        };
        let x_d = match &mask {
            Some(m) => {
                let mut xd = x.clone();
                xd.hadamard_in_place(m);
                xd
            }
            None => x.clone(),
        };
        let u = x_d.matmul_t(&ad.a);
        let mut delta = u.matmul_t(&ad.b);
        delta.scale_in_place(ad.scaling());
        y.add_assign(&delta);
        (y, LinearCache { x_d, u, mask })
    }

    /// Accumulates adapter gradients into `grad` and returns `∂L/∂x`.
    pub(crate) fn backward(
        &self,
        g: &Matrix,
        cache: &LinearCache,
        grad: Option<&mut AdapterGrad>,
    ) -> Matrix {
        let mut dx = g.matmul(&self.weight.matrix());
        if let (Some(ad), Some(grad)) = (&self.adapter, grad) {
            let s = ad.scaling();
            // dB += s · gᵀ u
            let mut gs = g.clone();
            gs.scale_in_place(s);
            gs.t_matmul_acc(&cache.u, &mut grad.b);
            // du = s · g B
            let du = gs.matmul(&ad.b);
            du.t_matmul_acc(&cache.x_d, &mut grad.a);
            let mut dx_adapter = du.matmul(&ad.a);
            if let Some(m) = &cache.mask {
                dx_adapter.hadamard_in_place(m);
            }
            dx.add_assign(&dx_adapter);
        }
        dx
    }
}

fn check_rank(name: &str, rank: usize, n: usize, k: usize) -> Result<(), ModelError> {
    let max = n.min(k);
    if rank == 0 || rank > max {
        return Err(ModelError::RankTooLarge { layer: String::from(name), rank, max });
    }
    Ok(())
}

fn check_dropout(p: f64) -> Result<(), ModelError> {
    if !(0.0..1.0).contains(&p) {
        return Err(ModelError::InvalidConfig("dropout_p must lie in [0, 1)"));
    }
    Ok(())
}

/// Inverted-dropout mask: each entry is 0 with probability `p`, else `1/(1-p)`.
/// Inverted-dropout mask; each entry is dropped with probability `p`
/// (resolved to 2⁻³², two entries per 64-bit draw).
fn dropout_mask(rows: usize, cols: usize, p: f64, rng: &mut DetRng) -> Matrix {
    let keep = 1.0 / (1.0 - p);
    let threshold = (p * 4_294_967_296.0) as u64;
    let n = rows * cols;
    let mut data = Vec::with_capacity(n);
    while data.len() < n {
        let bits = rng.next_u64();
        for half in [bits & 0xffff_ffff, bits >> 32] {
            if data.len() < n {
                data.push(if half < threshold { 0.0 } else { keep });
            }
        }
    }
    Matrix::from_vec(rows, cols, data)
}
