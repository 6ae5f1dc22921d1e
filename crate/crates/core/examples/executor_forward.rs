//! Action executor on one team: sampled ego graphs, action distribution, value.
//!
//! cargo run --release --example executor_forward

use magex::envs::{body_len, observe, reset, EnvConfig, Task};
use magex::executor::{ExecutorConfig, ExecutorPolicy, FEATURE};
use magex::nn::{softmax, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> magex::Result<()> {
    let env = EnvConfig::preset(Task::SimpleSpread, 5)?;
    let state = reset(&env, 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cfg = ExecutorConfig::new(env.n_agents, body_len(&env), env.dim(), env.num_actions());
    let policy = ExecutorPolicy::new(cfg, &mut rng);
    println!("{} parameters", policy.params.num_scalars());

    let rows: Vec<Vec<f64>> = observe(&env, &state).iter().map(|o| o.flatten()).collect();
    let x = Tensor::from_rows(&rows)?;
    let h = Tensor::zeros(&[env.n_agents, FEATURE]);
    let noise = policy.sample_noise(1, &mut rng);
    let mut tape = Tape::new();
    let bound = policy.params.bind(&mut tape);
    let xv = tape.leaf_ref(&x, false);
    let hv = tape.leaf_ref(&h, false);
    let out = policy.forward(&mut tape, &bound, xv, hv, &noise)?;

    for (b, a) in out.adjacency.iter().enumerate() {
        let a = tape.value(*a);
        let picks: Vec<usize> = (0..a.rows()).map(|r| a.row_slice(r).iter().position(|&v| v == 1.0).unwrap()).collect();
        println!("block {b}: agent k links to {:?}", picks);
    }
    let logits = tape.value(out.logits);
    for k in 0..env.n_agents {
        let p = softmax(logits.row_slice(k));
        println!("agent {k}: action probs {:?} value {:.4}",
            p.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>(), tape.value(out.values).data()[k]);
    }
    Ok(())
}
