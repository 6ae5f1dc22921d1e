#![allow(dead_code)]

pub mod commander_checks;
pub mod env_checks;
pub mod executor_ref;
pub mod grad;
pub mod repro;

use magex::nn::{Bound, ParamSet, Tape, Tensor, Var};
use magex::Result;
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn random_tensor<R: Rng>(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut R) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Reduces `out` to a scalar with fixed random weights so every output entry
/// contributes a distinct amount.
pub fn project(tape: &mut Tape<'_>, out: Var, weights: &Tensor) -> Result<Var> {
    let w = tape.constant(weights.clone());
    let p = tape.mul(out, w)?;
    Ok(tape.sum(p))
}

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-12 {
        0.0
    } else {
        diff / scale
    }
}

/// Compares reverse-mode gradients of a scalar with central differences, for
/// every parameter tensor and every input tensor. Returns the worst
/// per-tensor relative error.
pub fn gradient_check<F>(params: &mut ParamSet, inputs: &mut [Tensor], build: F) -> f64
where
    F: Fn(&mut Tape<'_>, &Bound, &[Var]) -> Result<Var>,
{
    let eval = |params: &ParamSet, inputs: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
        let out = build(&mut tape, &bound, &vars).expect("forward");
        tape.value(out).item()
    };

    let (param_grads, input_grads) = {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
        let out = build(&mut tape, &bound, &vars).expect("forward");
        let g = tape.backward(out).expect("backward");
        (
            bound.vars().iter().map(|&v| g.wrt(v).into_data()).collect::<Vec<_>>(),
            vars.iter().map(|&v| g.wrt(v).into_data()).collect::<Vec<_>>(),
        )
    };

    let mut worst: f64 = 0.0;
    for p in 0..params.len() {
        let mut fd = Vec::new();
        for k in 0..params.tensors()[p].len() {
            let orig = params.tensors()[p].data()[k];
            params.tensors_mut()[p].data_mut()[k] = orig + FD_STEP;
            let up = eval(params, inputs);
            params.tensors_mut()[p].data_mut()[k] = orig - FD_STEP;
            let down = eval(params, inputs);
            params.tensors_mut()[p].data_mut()[k] = orig;
            fd.push((up - down) / (2.0 * FD_STEP));
        }
        worst = worst.max(relative_error(&fd, &param_grads[p]));
    }
    for i in 0..inputs.len() {
        let mut fd = Vec::new();
        for k in 0..inputs[i].len() {
            let orig = inputs[i].data()[k];
            inputs[i].data_mut()[k] = orig + FD_STEP;
            let up = eval(params, inputs);
            inputs[i].data_mut()[k] = orig - FD_STEP;
            let down = eval(params, inputs);
            inputs[i].data_mut()[k] = orig;
            fd.push((up - down) / (2.0 * FD_STEP));
        }
        worst = worst.max(relative_error(&fd, &input_grads[i]));
    }
    worst
}
