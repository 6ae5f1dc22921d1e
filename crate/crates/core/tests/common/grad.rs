//! Finite-difference checks of each layer primitive over random shapes and seeds.

use super::{gradient_check, project, random_tensor};
use magex::nn::{gcn_layer, gumbel_noise, gumbel_softmax_with_noise, huber_loss, mlp_forward, Activation, GruCell, LayerParams, ParamSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DRAWS: u64 = 20;
pub const TOLERANCE: f64 = 1e-4;

pub fn mlp_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, i, h, o) = (rng.gen_range(1..5), rng.gen_range(1..6), rng.gen_range(2..8), rng.gen_range(1..5));
    let mut params = ParamSet::new();
    let layers = vec![
        LayerParams::new(&mut params, "a", i, h, 1.0, &mut rng),
        LayerParams::new(&mut params, "b", h, o, 1.0, &mut rng),
    ];
    for t in params.tensors_mut() {
        t.data_mut().iter_mut().for_each(|x| *x += rng.gen_range(-0.3..0.3));
    }
    let w = random_tensor(b, o, -1.0, 1.0, &mut rng);
    let mut inputs = vec![random_tensor(b, i, -1.0, 1.0, &mut rng)];
    gradient_check(&mut params, &mut inputs, |tape, bound, v| {
        let y = mlp_forward(tape, bound, &layers, v[0], Activation::Relu, Activation::Identity)?;
        let y = tape.tanh(y);
        project(tape, y, &w)
    })
}

pub fn gcn_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, fi, fo) = (rng.gen_range(2..7), rng.gen_range(1..5), rng.gen_range(1..5));
    let mut params = ParamSet::new();
    let layer = LayerParams::new(&mut params, "g", fi, fo, 1.0, &mut rng);
    for t in params.tensors_mut() {
        t.data_mut().iter_mut().for_each(|x| *x += rng.gen_range(-0.3..0.3));
    }
    let w = random_tensor(n, fo, -1.0, 1.0, &mut rng);
    let mut inputs = vec![random_tensor(n, fi, -1.0, 1.0, &mut rng), random_tensor(n, n, 0.1, 1.0, &mut rng)];
    gradient_check(&mut params, &mut inputs, |tape, bound, v| {
        let y = gcn_layer(tape, bound, v[0], v[1], &layer, Activation::Identity)?;
        let y = tape.tanh(y);
        project(tape, y, &w)
    })
}

/// The ego-subgraph propagation used inside the executor's graph blocks:
/// pairwise logits, a relaxed adjacency, ego normalization and propagation.
pub fn ego_graph_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, n, f) = (rng.gen_range(1..3), rng.gen_range(2..5), rng.gen_range(1..5));
    let mut params = ParamSet::new();
    let w = random_tensor(b * n, f, -1.0, 1.0, &mut rng);
    let noise = gumbel_noise(&[b * n, n], &mut rng);
    let mut inputs = vec![random_tensor(b * n, f, -1.0, 1.0, &mut rng)];
    gradient_check(&mut params, &mut inputs, |tape, _, v| {
        let logits = tape.pairwise_dot(v[0], n, 0.7)?;
        let g = gumbel_softmax_with_noise(tape, logits, 1.3, noise.clone())?;
        let m = tape.ego_norm(g.soft, n)?;
        let y = tape.graph_propagate(m, v[0], n)?;
        project(tape, y, &w)
    })
}

pub fn gru_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, i, h) = (rng.gen_range(1..4), rng.gen_range(1..5), rng.gen_range(1..6));
    let mut params = ParamSet::new();
    let cell = GruCell::new(&mut params, "gru", i, h, &mut rng);
    for t in params.tensors_mut() {
        t.data_mut().iter_mut().for_each(|x| *x += rng.gen_range(-0.3..0.3));
    }
    let w = random_tensor(b, h, -1.0, 1.0, &mut rng);
    let mut inputs = vec![random_tensor(b, i, -1.0, 1.0, &mut rng), random_tensor(b, h, -1.0, 1.0, &mut rng)];
    gradient_check(&mut params, &mut inputs, |tape, bound, v| {
        // Two steps so the gradient also runs through the recurrence.
        let h1 = cell.step(tape, bound, v[0], v[1])?;
        let h2 = cell.step(tape, bound, v[0], h1)?;
        project(tape, h2, &w)
    })
}

pub fn softmax_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (r, c) = (rng.gen_range(1..5), rng.gen_range(2..7));
    let mut params = ParamSet::new();
    let w1 = random_tensor(r, c, -1.0, 1.0, &mut rng);
    let w2 = random_tensor(r, c, -1.0, 1.0, &mut rng);
    let mut inputs = vec![random_tensor(r, c, -3.0, 3.0, &mut rng)];
    gradient_check(&mut params, &mut inputs, |tape, _, v| {
        let p = tape.softmax_rows(v[0]);
        let lp = tape.log_softmax_rows(v[0]);
        let a = project(tape, p, &w1)?;
        let b = project(tape, lp, &w2)?;
        tape.add(a, b)
    })
}

pub fn gumbel_soft_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (r, c) = (rng.gen_range(1..5), rng.gen_range(2..7));
    let temperature = rng.gen_range(0.5..2.0);
    let noise = gumbel_noise(&[r, c], &mut rng);
    let mut params = ParamSet::new();
    let w = random_tensor(r, c, -1.0, 1.0, &mut rng);
    let mut inputs = vec![random_tensor(r, c, -2.0, 2.0, &mut rng)];
    gradient_check(&mut params, &mut inputs, |tape, _, v| {
        let g = gumbel_softmax_with_noise(tape, v[0], temperature, noise.clone())?;
        project(tape, g.soft, &w)
    })
}

pub fn huber_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..8);
    let delta = rng.gen_range(0.3..2.0);
    let mut params = ParamSet::new();
    let mut inputs = vec![random_tensor(n, 1, -3.0, 3.0, &mut rng), random_tensor(n, 1, -3.0, 3.0, &mut rng)];
    gradient_check(&mut params, &mut inputs, |tape, _, v| huber_loss(tape, v[0], v[1], delta))
}

/// Worst error over all draws for one primitive.
pub fn worst_over_draws(check: fn(u64) -> f64) -> f64 {
    (0..DRAWS).map(check).fold(0.0, f64::max)
}

pub const PRIMITIVES: [(&str, fn(u64) -> f64); 7] = [
    ("mlp", mlp_error),
    ("gcn", gcn_error),
    ("ego graph", ego_graph_error),
    ("gru", gru_error),
    ("softmax", softmax_error),
    ("gumbel soft path", gumbel_soft_error),
    ("huber", huber_error),
];
