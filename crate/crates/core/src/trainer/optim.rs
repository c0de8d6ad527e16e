use super::TrainConfig;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Inverse-square-root schedule with linear warmup.
pub fn lr_at(step: u64, cfg: &TrainConfig) -> Result<f64> {
    if step == 0 {
        return Err(Error::invalid("learning-rate schedule starts at step 1"));
    }
    let (s, w) = (step as f64, cfg.warmup_updates as f64);
    Ok(if step <= cfg.warmup_updates {
        cfg.base_lr * s / w
    } else {
        cfg.base_lr * (w / s).sqrt()
    })
}

/// Adam moments, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
}

impl OptimizerState {
    pub fn new(params: &[Tensor<f32>]) -> Self {
        let zeros = |t: &Tensor<f32>| Tensor::zeros(t.shape());
        Self {
            step: 0,
            m: params.iter().map(zeros).collect(),
            v: params.iter().map(zeros).collect(),
        }
    }
}

pub fn global_norm(grads: &[Tensor<f32>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data())
        .map(|&x| (x as f64) * (x as f64))
        .sum::<f64>()
        .sqrt()
}

/// Rescale `grads` so their global L2 norm is at most `max_norm`; returns the norm before clipping.
pub fn clip_gradients(grads: &mut [Tensor<f32>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let s = (max_norm / norm) as f32;
        grads.iter_mut().flat_map(|g| g.data_mut()).for_each(|x| *x *= s);
    }
    norm
}

/// One bias-corrected Adam update after global-norm clipping.
/// Returns the gradient norm before clipping.
pub fn adam_step(
    params: &mut [Tensor<f32>],
    grads: &mut [Tensor<f32>],
    state: &mut OptimizerState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<f64> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(
            "adam_step",
            format!("{} params, {} grads, {} moments", params.len(), grads.len(), state.m.len()),
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads.iter()).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(Error::shape("adam_step", format!("tensor {i}: {:?} vs {:?}", p.shape(), g.shape())));
        }
        if !g.all_finite() {
            return Err(Error::NonFinite(format!("gradient of parameter tensor {i}")));
        }
    }
    let norm = clip_gradients(grads, cfg.clip_norm);
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads.iter()).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        let iter = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut().iter_mut().zip(v.data_mut()));
        for ((theta, &g), (m, v)) in iter {
            let g = g as f64;
            let mn = b1 * *m as f64 + (1.0 - b1) * g;
            let vn = b2 * *v as f64 + (1.0 - b2) * g * g;
            *m = mn as f32;
            *v = vn as f32;
            let update = lr * (mn / c1) / ((vn / c2).sqrt() + cfg.adam_eps);
            *theta = (*theta as f64 - update) as f32;
        }
    }
    Ok(norm)
}
