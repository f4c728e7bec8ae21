use super::graph::Gradients;
use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::{dim_err, Result};
use crate::scalar::Real;

/// Adam moments for every tensor of a [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamSet<T>) -> Self {
        Self::with_betas(params, T::lit(0.9), T::lit(0.999), T::lit(1e-8))
    }

    pub fn with_betas(params: &ParamSet<T>, beta1: T, beta2: T, eps: T) -> Self {
        let zeros: Vec<Tensor<T>> = params.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
            beta1,
            beta2,
            eps,
        }
    }
}

/// One bias-corrected Adam update. Parameters without a gradient entry see a zero gradient.
pub fn adam_step<T: Real>(
    params: &mut ParamSet<T>,
    grads: &Gradients<T>,
    state: &mut AdamState<T>,
    lr: T,
) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(dim_err(
            "adam_step",
            format!("state tracks {} tensors, parameter set has {}", state.m.len(), params.len()),
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let bc1 = T::one() - b1.powi(t);
    let bc2 = T::one() - b2.powi(t);
    for id in params.ids() {
        let p = params.get_mut(id);
        let (m, v) = (&mut state.m[id.0], &mut state.v[id.0]);
        if m.shape() != p.shape() {
            return Err(dim_err("adam_step", format!("moment {:?} vs param {:?}", m.shape(), p.shape())));
        }
        let g = grads.get(id);
        if let Some(g) = g {
            if g.shape() != p.shape() {
                return Err(dim_err("adam_step", format!("grad {:?} vs param {:?}", g.shape(), p.shape())));
            }
        }
        for k in 0..p.len() {
            let gk = g.map_or(T::zero(), |g| g.data()[k]);
            let mk = b1 * m.data()[k] + (T::one() - b1) * gk;
            let vk = b2 * v.data()[k] + (T::one() - b2) * gk * gk;
            m.data_mut()[k] = mk;
            v.data_mut()[k] = vk;
            let mhat = mk / bc1;
            let vhat = vk / bc2;
            p.data_mut()[k] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
