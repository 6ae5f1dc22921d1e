//! One graph convolution and its permutation equivariance.
//!
//! cargo run --release --example gcn_layer

use magex::nn::{gcn_layer, Activation, LayerParams, ParamSet, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn run(params: &ParamSet, layer: &LayerParams, h: &Tensor, a: &Tensor) -> magex::Result<Tensor> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let hv = tape.leaf_ref(h, false);
    let av = tape.leaf_ref(a, false);
    let out = gcn_layer(&mut tape, &bound, hv, av, layer, Activation::Relu)?;
    Ok(tape.value(out).clone())
}

fn permute_rows(t: &Tensor, perm: &[usize]) -> Tensor {
    let rows: Vec<Vec<f64>> = perm.iter().map(|&i| t.row_slice(i).to_vec()).collect();
    Tensor::from_rows(&rows).unwrap()
}

fn main() -> magex::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 4;
    let mut params = ParamSet::new();
    let layer = LayerParams::new(&mut params, "gcn", 3, 5, 1.0, &mut rng);
    let h = Tensor::matrix(n, 3, (0..n * 3).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    // Path graph 0-1-2-3.
    let mut a = Tensor::zeros(&[n, n]);
    for i in 0..n - 1 {
        a.data_mut()[i * n + i + 1] = 1.0;
        a.data_mut()[(i + 1) * n + i] = 1.0;
    }
    let out = run(&params, &layer, &h, &a)?;
    println!("output rows:");
    for r in 0..n {
        println!("  {:?}", out.row_slice(r).iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>());
    }

    let perm = [2, 0, 3, 1];
    let ph = permute_rows(&h, &perm);
    let pa = {
        let mut p = Tensor::zeros(&[n, n]);
        for i in 0..n {
            for j in 0..n {
                p.data_mut()[i * n + j] = a.at(perm[i], perm[j]);
            }
        }
        p
    };
    let pout = run(&params, &layer, &ph, &pa)?;
    println!("relabeling nodes moves output rows with them: max diff {:.1e}", pout.max_abs_diff(&permute_rows(&out, &perm)));
    Ok(())
}
