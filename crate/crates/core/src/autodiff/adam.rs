use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bias-corrected Adam with per-tensor moment buffers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    /// Zeroed moments shaped like `tensors`, default betas and epsilon.
    pub fn new(tensors: &[&[f64]], lr: f64) -> Self {
        AdamState {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            first: tensors.iter().map(|t| vec![0.0; t.len()]).collect(),
            second: tensors.iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn matches(&self, tensors: &[&[f64]]) -> bool {
        self.first.len() == tensors.len()
            && self.first.iter().zip(tensors).all(|(m, t)| m.len() == t.len())
    }
}

/// Applies one update in place and advances `state.step`.
pub fn adam_step<G: AsRef<[f64]>>(
    params: &mut [&mut [f64]],
    grads: &[G],
    state: &mut AdamState,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(Error::shape(format!(
            "adam: {} parameter tensors, {} gradients, {} moment buffers",
            params.len(),
            grads.len(),
            state.first.len()
        )));
    }
    for (k, (p, g)) in params.iter().zip(grads).enumerate() {
        let g = g.as_ref();
        if p.len() != g.len() || p.len() != state.first[k].len() {
            return Err(Error::shape(format!(
                "adam: tensor {k} has {} values, gradient {}, moments {}",
                p.len(),
                g.len(),
                state.first[k].len()
            )));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (k, p) in params.iter_mut().enumerate() {
        let g = grads[k].as_ref();
        let m = &mut state.first[k];
        let v = &mut state.second[k];
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}
