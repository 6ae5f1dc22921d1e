//! Reverse-mode gradients of a small MLP checked against central differences.
//!
//! cargo run --release --example autodiff_gradients

use magex::nn::{mlp_forward, Activation, LayerParams, ParamSet, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn loss(params: &ParamSet, layers: &[LayerParams], x: &Tensor) -> magex::Result<f64> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let xv = tape.leaf_ref(x, false);
    let y = mlp_forward(&mut tape, &bound, layers, xv, Activation::Relu, Activation::Identity)?;
    let t = tape.tanh(y);
    let s = tape.sum(t);
    Ok(tape.value(s).item())
}

fn main() -> magex::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut params = ParamSet::new();
    let layers = vec![
        LayerParams::new(&mut params, "hidden", 4, 8, 1.0, &mut rng),
        LayerParams::new(&mut params, "out", 8, 3, 1.0, &mut rng),
    ];
    let x = Tensor::matrix(5, 4, (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect())?;

    let grads = {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let xv = tape.leaf_ref(&x, false);
        let y = mlp_forward(&mut tape, &bound, &layers, xv, Activation::Relu, Activation::Identity)?;
        let t = tape.tanh(y);
        let s = tape.sum(t);
        let g = tape.backward(s)?;
        bound.vars().iter().map(|&v| g.wrt(v)).collect::<Vec<_>>()
    };

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for p in 0..params.len() {
        for k in 0..params.tensors()[p].len() {
            let orig = params.tensors()[p].data()[k];
            params.tensors_mut()[p].data_mut()[k] = orig + h;
            let up = loss(&params, &layers, &x)?;
            params.tensors_mut()[p].data_mut()[k] = orig - h;
            let down = loss(&params, &layers, &x)?;
            params.tensors_mut()[p].data_mut()[k] = orig;
            let fd = (up - down) / (2.0 * h);
            let an = grads[p].data()[k];
            worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-8));
        }
    }
    println!("{} parameters, worst relative error {worst:.2e}", params.num_scalars());
    Ok(())
}
