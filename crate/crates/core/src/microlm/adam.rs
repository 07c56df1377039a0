//! Adam over adapter factors only.

use alloc::vec::Vec;

use super::lora::AdapterGrad;
use super::matrix::Matrix;
use super::model::{Gradients, MicroModel};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct AdamState {
    step: u64,
    /// First and second moments, shaped like each adapter's `A` and `B`.
    moments: Vec<(AdapterGrad, AdapterGrad)>,
}

impl AdamState {
    pub fn new(model: &MicroModel) -> Self {
        let moments = model
            .linears()
            .iter()
            .filter_map(|l| l.adapter())
            .map(|ad| (AdapterGrad::zeros_like(ad), AdapterGrad::zeros_like(ad)))
            .collect();
        Self { step: 0, moments }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Number of moment matrices held (two per trained factor).
    pub fn moment_matrices(&self) -> usize {
        self.moments.len() * 4
    }

    pub fn apply(&mut self, model: &mut MicroModel, grads: &Gradients, lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - libm::pow(BETA1, self.step as f64);
        let bc2 = 1.0 - libm::pow(BETA2, self.step as f64);
        let adapters = model.linears_mut().into_iter().filter_map(|l| l.adapter_mut());
        for ((ad, g), (m, v)) in adapters.zip(&grads.per_linear).zip(&mut self.moments) {
            update(&mut ad.a, &g.a, &mut m.a, &mut v.a, lr, bc1, bc2);
            update(&mut ad.b, &g.b, &mut m.b, &mut v.b, lr, bc1, bc2);
        }
    }
}

fn update(p: &mut Matrix, g: &Matrix, m: &mut Matrix, v: &mut Matrix, lr: f64, bc1: f64, bc2: f64) {
    let iter = p
        .data_mut()
        .iter_mut()
        .zip(g.data())
        .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
    for ((pi, &gi), (mi, vi)) in iter {
        *mi = BETA1 * *mi + (1.0 - BETA1) * gi;
        *vi = BETA2 * *vi + (1.0 - BETA2) * gi * gi;
        let mhat = *mi / bc1;
        let vhat = *vi / bc2;
        *pi -= lr * mhat / (libm::sqrt(vhat) + EPS);
    }
}
