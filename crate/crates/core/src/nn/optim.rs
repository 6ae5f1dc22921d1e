use serde::{Deserialize, Serialize};

use super::layers::ParamSet;
use super::tensor::Tensor;
use crate::error::{shape_err, Error, Result};

/// Adam moments and settings for one [`ParamSet`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub eps: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Global gradient-norm ceiling applied before each step.
    pub max_grad_norm: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

/// What happened during one [`adam_update`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo {
    pub grad_norm: f64,
    pub clipped_norm: f64,
}

impl AdamState {
    pub fn new(params: &ParamSet, lr: f64, eps: f64, max_grad_norm: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            lr,
            eps,
            beta1: 0.9,
            beta2: 0.999,
            max_grad_norm,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().map(Tensor::norm_sq).sum::<f64>().sqrt()
}

/// Scales `grads` so their global norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let k = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= k);
        }
    }
    norm
}

/// Bias-corrected Adam step without weight decay, after global-norm clipping.
pub fn adam_update(
    state: &mut AdamState,
    params: &mut ParamSet,
    mut grads: Vec<Tensor>,
) -> Result<StepInfo> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return shape_err(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        ));
    }
    for (i, (g, p)) in grads.iter().zip(params.tensors()).enumerate() {
        if g.shape() != p.shape() {
            return shape_err(format!(
                "gradient {:?} for parameter {} of shape {:?}",
                g.shape(),
                params.names()[i],
                p.shape()
            ));
        }
        if let Some(bad) = g.data().iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient of {} at element {bad} is {}",
                params.names()[i],
                g.data()[bad]
            )));
        }
    }
    let grad_norm = clip_global_norm(&mut grads, state.max_grad_norm);
    let clipped_norm = global_norm(&grads);
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.lr, state.eps);
    for (((p, g), m), v) in params
        .tensors_mut()
        .iter_mut()
        .zip(&grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let mh = *mi / bc1;
            let vh = *vi / bc2;
            *x -= lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(StepInfo { grad_norm, clipped_norm })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_set(v: f64) -> ParamSet {
        let mut ps = ParamSet::new();
        ps.add("alpha.weight", Tensor::scalar(v));
        ps
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut ps = scalar_set(1.5);
        let mut st = AdamState::new(&ps, 1e-3, 1e-5, 10.0);
        for _ in 0..5 {
            adam_update(&mut st, &mut ps, vec![Tensor::scalar(0.0)]).unwrap();
        }
        assert_eq!(ps.tensors()[0].item(), 1.5);
    }

    #[test]
    fn constant_gradient_moves_monotonically() {
        let mut ps = scalar_set(0.0);
        let mut st = AdamState::new(&ps, 1e-2, 1e-5, 10.0);
        let mut prev = 0.0;
        for _ in 0..100 {
            adam_update(&mut st, &mut ps, vec![Tensor::scalar(3.0)]).unwrap();
            let x = ps.tensors()[0].item();
            assert!(x < prev);
            prev = x;
        }
    }

    #[test]
    fn clips_to_max_norm() {
        let mut g = vec![Tensor::row(vec![12.0, 16.0])];
        let before = clip_global_norm(&mut g, 10.0);
        assert_eq!(before, 20.0);
        assert!((global_norm(&g) - 10.0).abs() < 1e-12);
        assert!((g[0].data()[0] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut ps = scalar_set(0.0);
        let mut st = AdamState::new(&ps, 1e-3, 1e-5, 10.0);
        let err = adam_update(&mut st, &mut ps, vec![Tensor::scalar(f64::NAN)]).unwrap_err();
        assert!(err.to_string().contains("alpha.weight"));
        assert_eq!(st.step, 0);
    }
}
