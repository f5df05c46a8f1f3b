//! Adam optimizer with bias correction.

use ndarray::Array2;

use super::params::{GradSet, ParamSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment estimates, aligned with a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        AdamState {
            m: params.iter().map(|e| Array2::zeros(e.values.dim())).collect(),
            v: params.iter().map(|e| Array2::zeros(e.values.dim())).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update. Verifies every gradient is finite before touching any
/// parameter; a non-finite gradient aborts the whole step.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &GradSet,
    state: &mut AdamState,
    lr: f64,
    hyper: &AdamHyper,
) -> Result<()> {
    assert_eq!(params.len(), grads.entries.len(), "param/grad count mismatch");
    for (idx, (name, g)) in grads.entries.iter().enumerate() {
        assert_eq!(
            params.entry(idx).values.dim(),
            g.dim(),
            "shape mismatch for {name}"
        );
        if !g.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteGradient(name.clone()));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - hyper.beta1.powi(t);
    let bias2 = 1.0 - hyper.beta2.powi(t);

    for (idx, (_, g)) in grads.entries.iter().enumerate() {
        let m = &mut state.m[idx];
        let v = &mut state.v[idx];
        let p = &mut params.entry_mut(idx).values;
        for ((pv, gv), (mv, vv)) in p.iter_mut().zip(g.iter()).zip(m.iter_mut().zip(v.iter_mut())) {
            *mv = hyper.beta1 * *mv + (1.0 - hyper.beta1) * gv;
            *vv = hyper.beta2 * *vv + (1.0 - hyper.beta2) * gv * gv;
            let m_hat = *mv / bias1;
            let v_hat = *vv / bias2;
            *pv -= lr * m_hat / (v_hat.sqrt() + hyper.epsilon);
        }
    }
    Ok(())
}

/// Scale gradients so their global L2 norm is at most `max_norm`.
pub fn clip_global_norm(grads: &mut GradSet, max_norm: f64) {
    let norm = grads.squared_norm().sqrt();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
}
