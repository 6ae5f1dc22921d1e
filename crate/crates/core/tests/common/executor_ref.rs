//! Executor structure: permutation equivariance and a plain re-implementation
//! of one graph-encoder block.

use magex::executor::{graph_encoder_block, ExecutorConfig, ExecutorPolicy, FEATURE};
use magex::nn::{gumbel_noise, softmax, Tape, Tensor};
use magex::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::random_tensor;

pub fn policy(n: usize, seed: u64) -> ExecutorPolicy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ExecutorPolicy::new(ExecutorConfig::new(n, 2 * n + 2, 2, 4), &mut rng);
    // Leave the small-gain initialization so action distributions differ per agent.
    for t in p.params.tensors_mut() {
        t.data_mut().iter_mut().for_each(|x| *x += rng.gen_range(-0.2..0.2));
    }
    p
}

fn permute_rows(t: &Tensor, perm: &[usize]) -> Tensor {
    Tensor::from_rows(&perm.iter().map(|&i| t.row_slice(i).to_vec()).collect::<Vec<_>>()).unwrap()
}

fn permute_square(t: &Tensor, perm: &[usize]) -> Tensor {
    let n = perm.len();
    let mut out = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            out.data_mut()[i * n + j] = t.at(perm[i], perm[j]);
        }
    }
    out
}

pub struct ForwardValues {
    pub probs: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub hidden: Tensor,
    pub adjacency: Vec<Tensor>,
}

pub fn forward(p: &ExecutorPolicy, x: &Tensor, h: &Tensor, noise: &[Tensor]) -> Result<ForwardValues> {
    let mut tape = Tape::new();
    let bound = p.params.bind(&mut tape);
    let xv = tape.leaf_ref(x, false);
    let hv = tape.leaf_ref(h, false);
    let out = p.forward(&mut tape, &bound, xv, hv, noise)?;
    let logits = tape.value(out.logits);
    Ok(ForwardValues {
        probs: (0..logits.rows()).map(|r| softmax(logits.row_slice(r))).collect(),
        values: tape.value(out.values).data().to_vec(),
        hidden: tape.value(out.hidden).clone(),
        adjacency: out.adjacency.iter().map(|&a| tape.value(a).clone()).collect(),
    })
}

/// Largest change in action distributions, values and hidden states when the
/// agents (their observation rows, hidden states and adjacency noise) are
/// relabeled, after undoing the relabeling on the outputs.
pub fn equivariance_error(n: usize, seed: u64) -> Result<f64> {
    let p = policy(n, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let x = random_tensor(n, p.cfg.input_len(), -1.0, 1.0, &mut rng);
    let h = random_tensor(n, FEATURE, -0.5, 0.5, &mut rng);
    let noise = p.sample_noise(1, &mut rng);
    let mut perm: Vec<usize> = (0..n).collect();
    while perm.iter().enumerate().all(|(i, &j)| i == j) && n > 1 {
        perm = magex::assignment::random_permutation(n, &mut rng);
    }
    let base = forward(&p, &x, &h, &noise)?;
    let pnoise: Vec<Tensor> = noise.iter().map(|t| permute_square(t, &perm)).collect();
    let moved = forward(&p, &permute_rows(&x, &perm), &permute_rows(&h, &perm), &pnoise)?;
    let mut worst: f64 = 0.0;
    for (i, &j) in perm.iter().enumerate() {
        for (a, b) in moved.probs[i].iter().zip(&base.probs[j]) {
            worst = worst.max((a - b).abs());
        }
        worst = worst.max((moved.values[i] - base.values[j]).abs());
    }
    worst = worst.max(moved.hidden.max_abs_diff(&permute_rows(&base.hidden, &perm)));
    for (a, b) in moved.adjacency.iter().zip(&base.adjacency) {
        worst = worst.max(a.max_abs_diff(&permute_square(b, &perm)));
    }
    Ok(worst)
}

/// True when every row of every sampled adjacency is exactly one-hot.
pub fn adjacency_rows_one_hot(n: usize, batch: usize, seed: u64) -> Result<bool> {
    let p = policy(n, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_tensor(batch * n, p.cfg.input_len(), -1.0, 1.0, &mut rng);
    let h = random_tensor(batch * n, FEATURE, -0.5, 0.5, &mut rng);
    let noise = p.sample_noise(batch, &mut rng);
    let out = forward(&p, &x, &h, &noise)?;
    Ok(out.adjacency.iter().all(|a| {
        (0..a.rows()).all(|r| {
            let row = a.row_slice(r);
            row.iter().filter(|&&v| v == 1.0).count() == 1 && row.iter().all(|&v| v == 0.0 || v == 1.0)
        })
    }))
}

fn dense(x: &[Vec<f64>], w: &Tensor, b: &Tensor) -> Vec<Vec<f64>> {
    let (i_dim, o_dim) = (w.rows(), w.cols());
    x.iter()
        .map(|row| (0..o_dim).map(|o| b.data()[o] + (0..i_dim).map(|i| row[i] * w.at(i, o)).sum::<f64>()).collect())
        .collect()
}

/// Block computed with loops over plain vectors: per-node edge embeddings,
/// scaled pairwise logits, Gumbel-perturbed row softmax and its argmax,
/// then for each agent the symmetric-normalized ego subgraph (its own
/// selected edge plus self-loops) applied to the transformed features.
pub fn reference_block(p: &ExecutorPolicy, block: usize, h: &[Vec<f64>], noise: &Tensor) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = h.len();
    let blk = &p.blocks[block];
    let get = |id| p.params.get(id);
    let e = dense(h, get(blk.edge.weight), get(blk.edge.bias));
    let scale = 1.0 / (FEATURE as f64).sqrt();
    let tau = p.cfg.temperature;
    let mut hard = vec![vec![0.0; n]; n];
    for i in 0..n {
        let z: Vec<f64> = (0..n)
            .map(|j| (scale * e[i].iter().zip(&e[j]).map(|(a, b)| a * b).sum::<f64>() + noise.at(i, j)) / tau)
            .collect();
        let s = softmax(&z);
        let best = (0..n).fold(0, |b, j| if s[j] > s[b] { j } else { b });
        hard[i][best] = 1.0;
    }
    let hw = dense(h, get(blk.gcn.weight), &Tensor::zeros(&[FEATURE]));
    let bias = get(blk.gcn.bias);
    let mut out = vec![vec![0.0; FEATURE]; n];
    for k in 0..n {
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            a[i][i] += 1.0;
        }
        for j in 0..n {
            a[k][j] += hard[k][j];
        }
        let deg: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
        for f in 0..FEATURE {
            let v: f64 = (0..n).map(|j| a[k][j] / (deg[k] * deg[j]).sqrt() * hw[j][f]).sum::<f64>() + bias.data()[f];
            out[k][f] = v.max(0.0);
        }
    }
    (out, hard)
}

/// Largest difference between the library block and the reference on a
/// random team of `n`.
pub fn reference_block_error(n: usize, seed: u64) -> Result<f64> {
    let p = policy(n, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 99);
    let h = random_tensor(n, FEATURE, -1.0, 1.0, &mut rng);
    let noise = gumbel_noise(&[n, n], &mut rng);
    let mut worst: f64 = 0.0;
    for block in 0..p.blocks.len() {
        let mut tape = Tape::new();
        let bound = p.params.bind(&mut tape);
        let hv = tape.leaf_ref(&h, false);
        let out = graph_encoder_block(&p, &mut tape, &bound, hv, block, noise.clone())?;
        let rows: Vec<Vec<f64>> = (0..n).map(|r| h.row_slice(r).to_vec()).collect();
        let (ref_out, ref_hard) = reference_block(&p, block, &rows, &noise);
        let got = tape.value(out.features);
        let adj = tape.value(out.adjacency);
        for k in 0..n {
            for f in 0..FEATURE {
                worst = worst.max((got.at(k, f) - ref_out[k][f]).abs());
            }
            for j in 0..n {
                worst = worst.max((adj.at(k, j) - ref_hard[k][j]).abs());
            }
        }
    }
    Ok(worst)
}
