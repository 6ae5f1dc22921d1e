//! Straight-through Gumbel-softmax: one-hot rows forward, relaxed gradients backward.
//!
//! cargo run --release --example gumbel_adjacency

use magex::nn::{gumbel_softmax, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> magex::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let logits = Tensor::matrix(3, 3, vec![2.0, 0.5, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 3.0])?;
    let mut tape = Tape::new();
    let l = tape.input(logits.clone());
    let sample = gumbel_softmax(&mut tape, l, 1.0, &mut rng)?;
    println!("soft rows: {:?}", tape.value(sample.soft).data().iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>());
    println!("hard rows: {:?}", tape.value(sample.hard).data());

    // Weighted read-out of the hard sample still carries gradient to every logit.
    let w = tape.constant(Tensor::matrix(3, 3, vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0, 1.0, 2.0, 3.0])?);
    let prod = tape.mul(sample.hard, w)?;
    let s = tape.sum(prod);
    let g = tape.backward(s)?;
    println!("d/dlogits: {:?}", g.wrt(l).data().iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>());

    // Empirical frequency of the argmax matches the softmax of the logits.
    let trials = 20_000;
    let mut counts = [0usize; 3];
    for _ in 0..trials {
        let mut tape = Tape::new();
        let l = tape.constant(Tensor::row(vec![2.0, 0.5, -1.0]));
        let s = gumbel_softmax(&mut tape, l, 1.0, &mut rng)?;
        let row = tape.value(s.hard).data();
        counts[row.iter().position(|&v| v == 1.0).unwrap()] += 1;
    }
    let p = magex::nn::softmax(&[2.0, 0.5, -1.0]);
    for k in 0..3 {
        println!("class {k}: sampled {:.3} softmax {:.3}", counts[k] as f64 / trials as f64, p[k]);
    }
    Ok(())
}
