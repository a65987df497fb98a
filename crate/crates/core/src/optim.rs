//! SGD with heavy-ball momentum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Momentum SGD over a flat list of parameter tensors.
///
/// Only parameters that received a gradient in a step are touched; their
/// momentum buffers persist across steps. Update rule:
/// `v ← μ·v + g`, `p ← p − lr·v`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sgd {
    pub momentum: f64,
    buffers: Vec<Option<Vec<f64>>>,
}

impl Sgd {
    pub fn new(momentum: f64, num_params: usize) -> Self {
        Sgd {
            momentum,
            buffers: vec![None; num_params],
        }
    }

    pub fn buffers(&self) -> &[Option<Vec<f64>>] {
        &self.buffers
    }

    /// Applies one update. `grads` pairs a parameter index with its
    /// gradient. Nothing is modified if any gradient is non-finite.
    pub fn step(
        &mut self,
        params: &mut [Tensor],
        grads: &[(usize, Vec<f64>)],
        lr: f64,
        step: usize,
    ) -> Result<()> {
        for (id, g) in grads {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence {
                    step,
                    detail: format!("non-finite gradient for parameter {id}"),
                });
            }
            if *id >= params.len() || params[*id].len() != g.len() {
                return Err(Error::shape("sgd_step", format!("gradient for parameter {id}")));
            }
        }
        for (id, g) in grads {
            let buf = self.buffers[*id].get_or_insert_with(|| vec![0.0; g.len()]);
            for ((p, v), &gi) in params[*id].data_mut().iter_mut().zip(buf.iter_mut()).zip(g) {
                *v = self.momentum * *v + gi;
                *p -= lr * *v;
            }
        }
        Ok(())
    }
}

/// Cosine-annealed learning rate from `base` at step 0 towards 0 at `total`.
pub fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    let progress = (step as f64 / total as f64).min(1.0);
    0.5 * base * (1.0 + (std::f64::consts::PI * progress).cos())
}
