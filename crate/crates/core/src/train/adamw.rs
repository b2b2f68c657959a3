//! AdamW with decoupled weight decay and bias correction.

use crate::error::{Error, Result};
use crate::model::{decays, Parameters, TENSOR_NAMES};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Moment accumulators shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Parameters<f64>,
    pub v: Parameters<f64>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &Parameters<f32>) -> Self {
        Self {
            m: Parameters::zeroed(params.config()),
            v: Parameters::zeroed(params.config()),
            step: 0,
        }
    }
}

/// One update of a flat slice. `step` is the already-incremented counter.
pub fn adamw_update_slice(
    param: &mut [f32],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    decay: bool,
    cfg: &AdamWConfig,
) {
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    for i in 0..param.len() {
        let mut p = param[i] as f64;
        if decay {
            p -= cfg.lr * cfg.weight_decay * p;
        }
        let g = grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        param[i] = p as f32;
    }
}

/// Applies one step to every tensor. Biases and layer-norm parameters are
/// not decayed. Gradients are checked before anything is modified.
pub fn adamw_step(
    params: &mut Parameters<f32>,
    grads: &Parameters<f64>,
    state: &mut OptimizerState,
    cfg: &AdamWConfig,
) -> Result<()> {
    if params.config() != grads.config() || params.config() != state.m.config() {
        return Err(Error::Validation(
            "optimizer shapes do not match parameters".into(),
        ));
    }
    for (li, layer) in grads.layers.iter().enumerate() {
        for (ti, t) in layer.tensors().iter().enumerate() {
            if !t.all_finite() {
                return Err(Error::NonFiniteGradient {
                    tensor: format!("layer{li}.{}", TENSOR_NAMES[ti]),
                });
            }
        }
    }
    state.step += 1;
    let step = state.step;
    for (li, layer) in params.layers.iter_mut().enumerate() {
        let g = grads.layers[li].tensors();
        let m = state.m.layers[li].tensors_mut();
        let v = state.v.layers[li].tensors_mut();
        for (ti, ((p, m), v)) in layer.tensors_mut().into_iter().zip(m).zip(v).enumerate() {
            adamw_update_slice(
                p.as_mut_slice(),
                g[ti].as_slice(),
                m.as_mut_slice(),
                v.as_mut_slice(),
                step,
                decays(ti),
                cfg,
            );
        }
    }
    Ok(())
}
