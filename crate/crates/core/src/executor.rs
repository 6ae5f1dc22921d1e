//! Action executor: per-agent observation embedding, a GCN over the fully
//! connected team graph, learned Gumbel-softmax subgraphs, a goal encoder and
//! a recurrent state extractor feeding the action and value heads.
//!
//! Everything is batched over `B` environments: per-agent tensors are stacked
//! `[B * N, F]` with the agents of one environment in consecutive rows.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::nn::{
    argmax, gumbel_noise, gumbel_softmax_with_noise, softmax, Bound, GruCell, LayerParams,
    ParamSet, Tape, Tensor, Var,
};

/// Width of every hidden feature.
pub const FEATURE: usize = 32;

/// How adjacency samples enter the forward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GumbelMode {
    /// One-hot rows forward, relaxed gradient backward.
    #[default]
    StraightThrough,
    /// Relaxed rows forward and backward.
    Soft,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecutorConfig {
    pub n_agents: usize,
    /// Length of an agent's observation without its goal.
    pub body_len: usize,
    pub goal_dim: usize,
    pub num_actions: usize,
    pub graph_blocks: usize,
    pub temperature: f64,
    pub gumbel_mode: GumbelMode,
}

impl ExecutorConfig {
    pub fn new(n_agents: usize, body_len: usize, goal_dim: usize, num_actions: usize) -> Self {
        Self {
            n_agents,
            body_len,
            goal_dim,
            num_actions,
            graph_blocks: 2,
            temperature: 1.0,
            gumbel_mode: GumbelMode::StraightThrough,
        }
    }

    /// Width of one agent's input row: body followed by goal.
    pub fn input_len(&self) -> usize {
        self.body_len + self.goal_dim
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphBlock {
    /// Per-node edge embedding whose pairwise products give adjacency logits.
    pub edge: LayerParams,
    pub gcn: LayerParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecutorPolicy {
    pub cfg: ExecutorConfig,
    pub params: ParamSet,
    pub obs_embed: LayerParams,
    pub obs_gcn: LayerParams,
    pub blocks: Vec<GraphBlock>,
    pub goal_embed: LayerParams,
    pub state_fuse: LayerParams,
    pub gru: GruCell,
    pub action_head: LayerParams,
    pub value_head: LayerParams,
}

/// Intermediate and final outputs of one batched forward pass.
pub struct ExecutorOutput {
    /// Team graph after the observation GCN, `[B*N, 32]`.
    pub team: Var,
    /// Sampled adjacency per block, `[B*N, N]`.
    pub adjacency: Vec<Var>,
    /// Relaxed adjacency per block.
    pub soft_adjacency: Vec<Var>,
    /// Node features after the last block.
    pub agent_features: Var,
    pub goal_features: Var,
    pub hidden: Var,
    pub logits: Var,
    pub values: Var,
}

impl ExecutorPolicy {
    pub fn new<R: Rng + ?Sized>(cfg: ExecutorConfig, rng: &mut R) -> Self {
        let mut p = ParamSet::new();
        let f = FEATURE;
        let obs_embed = LayerParams::new(&mut p, "executor.obs_embed", cfg.body_len, f, 1.0, rng);
        let obs_gcn = LayerParams::new(&mut p, "executor.obs_gcn", f, f, 1.0, rng);
        let blocks = (0..cfg.graph_blocks)
            .map(|b| GraphBlock {
                edge: LayerParams::new(&mut p, &format!("executor.block{b}.edge"), f, f, 1.0, rng),
                gcn: LayerParams::new(&mut p, &format!("executor.block{b}.gcn"), f, f, 1.0, rng),
            })
            .collect();
        let goal_embed =
            LayerParams::new(&mut p, "executor.goal_embed", cfg.input_len(), f, 1.0, rng);
        let state_fuse = LayerParams::new(&mut p, "executor.state_fuse", 2 * f, f, 1.0, rng);
        let gru = GruCell::new(&mut p, "executor.gru", f, f, rng);
        let action_head =
            LayerParams::new(&mut p, "executor.action_head", f, cfg.num_actions, 0.01, rng);
        let value_head = LayerParams::new(&mut p, "executor.value_head", f, 1, 1.0, rng);
        Self {
            cfg,
            params: p,
            obs_embed,
            obs_gcn,
            blocks,
            goal_embed,
            state_fuse,
            gru,
            action_head,
            value_head,
        }
    }

    /// Fresh Gumbel noise for `batch` environments, one tensor per block.
    pub fn sample_noise<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<Tensor> {
        let n = self.cfg.n_agents;
        (0..self.cfg.graph_blocks).map(|_| gumbel_noise(&[batch * n, n], rng)).collect()
    }

    /// Full batched forward pass. `x` is `[B*N, body + goal]`, `h_prev`
    /// `[B*N, 32]`, and `noise` holds one `[B*N, N]` tensor per block.
    pub fn forward(
        &self,
        tape: &mut Tape<'_>,
        bound: &Bound,
        x: Var,
        h_prev: Var,
        noise: &[Tensor],
    ) -> Result<ExecutorOutput> {
        let cfg = &self.cfg;
        let xv = tape.value(x);
        if xv.cols() != cfg.input_len() || !xv.rows().is_multiple_of(cfg.n_agents) {
            return shape_err(format!(
                "executor input {:?}, expected [B*{}, {}]",
                xv.shape(),
                cfg.n_agents,
                cfg.input_len()
            ));
        }
        if noise.len() != self.blocks.len() {
            return shape_err(format!("{} noise tensors for {} blocks", noise.len(), self.blocks.len()));
        }
        let body = tape.slice_cols(x, 0, cfg.body_len)?;
        let team = encode_observations(self, tape, bound, body)?;
        let mut h = team;
        let mut adjacency = Vec::new();
        let mut soft_adjacency = Vec::new();
        for (b, nz) in noise.iter().enumerate() {
            let out = graph_encoder_block(self, tape, bound, h, b, nz.clone())?;
            h = out.features;
            adjacency.push(out.adjacency);
            soft_adjacency.push(out.soft);
        }
        let goal = tape.slice_cols(x, cfg.body_len, cfg.goal_dim)?;
        let goal_in = tape.concat_cols(&[goal, body])?;
        let goal_features = goal_encode(self, tape, bound, goal_in)?;
        let hidden = state_extract(self, tape, bound, goal_features, h, h_prev)?;
        let logits = self.action_head.forward(tape, bound, hidden)?;
        let values = self.value_head.forward(tape, bound, hidden)?;
        Ok(ExecutorOutput {
            team,
            adjacency,
            soft_adjacency,
            agent_features: h,
            goal_features,
            hidden,
            logits,
            values,
        })
    }
}

/// `relu(GCN(relu(f_o(o)), fully connected))`. With every off-diagonal edge
/// present and the GCN self-loop, the normalized adjacency is `1/N` everywhere.
pub fn encode_observations(
    policy: &ExecutorPolicy,
    tape: &mut Tape<'_>,
    bound: &Bound,
    body: Var,
) -> Result<Var> {
    let n = policy.cfg.n_agents;
    let rows = tape.value(body).rows();
    let e = policy.obs_embed.forward(tape, bound, body)?;
    let e = tape.relu(e);
    let m = tape.constant(Tensor::filled(&[rows, n], 1.0 / n as f64));
    let xw = tape.matmul(e, bound.var(policy.obs_gcn.weight))?;
    let prop = tape.graph_propagate(m, xw, n)?;
    let out = tape.add_row(prop, bound.var(policy.obs_gcn.bias))?;
    Ok(tape.relu(out))
}

pub struct BlockOutput {
    pub features: Var,
    pub adjacency: Var,
    pub soft: Var,
}

/// One graph-encoder block: adjacency logits from scaled pairwise products of
/// per-node edge embeddings, a row-wise Gumbel-softmax sample, then a GCN
/// over each agent's ego subgraph (its selected out-edges plus self-loops).
pub fn graph_encoder_block(
    policy: &ExecutorPolicy,
    tape: &mut Tape<'_>,
    bound: &Bound,
    h: Var,
    block: usize,
    noise: Tensor,
) -> Result<BlockOutput> {
    let Some(blk) = policy.blocks.get(block) else {
        return Err(Error::Input(format!("block {block} of {}", policy.blocks.len())));
    };
    let n = policy.cfg.n_agents;
    let e = blk.edge.forward(tape, bound, h)?;
    let logits = tape.pairwise_dot(e, n, 1.0 / (FEATURE as f64).sqrt())?;
    let g = gumbel_softmax_with_noise(tape, logits, policy.cfg.temperature, noise)?;
    let adjacency = match policy.cfg.gumbel_mode {
        GumbelMode::StraightThrough => g.hard,
        GumbelMode::Soft => g.soft,
    };
    let m = tape.ego_norm(adjacency, n)?;
    let xw = tape.matmul(h, bound.var(blk.gcn.weight))?;
    let prop = tape.graph_propagate(m, xw, n)?;
    let out = tape.add_row(prop, bound.var(blk.gcn.bias))?;
    Ok(BlockOutput { features: tape.relu(out), adjacency, soft: g.soft })
}

/// `relu(f_goal(goal, own observation))`.
pub fn goal_encode(policy: &ExecutorPolicy, tape: &mut Tape<'_>, bound: &Bound, goal_and_obs: Var) -> Result<Var> {
    let e = policy.goal_embed.forward(tape, bound, goal_and_obs)?;
    Ok(tape.relu(e))
}

/// `GRU(relu(f_state([goal features, agent features])), h_prev)`; the new
/// hidden state doubles as the extracted feature.
pub fn state_extract(
    policy: &ExecutorPolicy,
    tape: &mut Tape<'_>,
    bound: &Bound,
    goal_features: Var,
    agent_features: Var,
    h_prev: Var,
) -> Result<Var> {
    let cat = tape.concat_cols(&[goal_features, agent_features])?;
    let f = policy.state_fuse.forward(tape, bound, cat)?;
    let f = tape.relu(f);
    policy.gru.step(tape, bound, f, h_prev)
}

/// Draws one action per row of `logits` (or takes the argmax when `greedy`).
/// Returns actions and their log-probabilities.
pub fn act<R: Rng + ?Sized>(logits: &Tensor, greedy: bool, rng: &mut R) -> (Vec<usize>, Vec<f64>) {
    let c = logits.cols();
    let mut actions = Vec::with_capacity(logits.rows());
    let mut log_probs = Vec::with_capacity(logits.rows());
    for row in logits.data().chunks(c) {
        let p = softmax(row);
        let a = if greedy { argmax(&p) } else { sample_categorical(&p, rng) };
        actions.push(a);
        log_probs.push(log_softmax_at(row, a));
    }
    (actions, log_probs)
}

pub fn sample_categorical<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &x) in p.iter().enumerate() {
        acc += x;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

fn log_softmax_at(row: &[f64], a: usize) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    row[a] - lse
}

/// One decision for a batch of environments.
#[derive(Clone, Debug, PartialEq)]
pub struct ExecutorStep {
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub hidden: Tensor,
    pub noise: Vec<Tensor>,
    pub logits: Tensor,
}

/// Runs the executor on stacked inputs `[B*N, body + goal]` and hidden states
/// `[B*N, 32]`, sampling adjacency noise and actions from `rng`.
pub fn executor_forward<R: Rng + ?Sized>(
    policy: &ExecutorPolicy,
    inputs: &Tensor,
    hidden: &Tensor,
    greedy: bool,
    rng: &mut R,
) -> Result<ExecutorStep> {
    let n = policy.cfg.n_agents;
    if !inputs.rows().is_multiple_of(n) {
        return shape_err(format!("{} input rows for teams of {n}", inputs.rows()));
    }
    let noise = policy.sample_noise(inputs.rows() / n, rng);
    let mut tape = Tape::new();
    let bound = policy.params.bind(&mut tape);
    let x = tape.leaf_ref(inputs, false);
    let h = tape.leaf_ref(hidden, false);
    let out = policy.forward(&mut tape, &bound, x, h, &noise)?;
    let logits = tape.value(out.logits).clone();
    if !logits.is_finite() {
        return Err(Error::NonFinite("executor logits".into()));
    }
    let (actions, log_probs) = act(&logits, greedy, rng);
    Ok(ExecutorStep {
        actions,
        log_probs,
        values: tape.value(out.values).data().to_vec(),
        hidden: tape.value(out.hidden).clone(),
        noise,
        logits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn policy(n: usize, seed: u64) -> ExecutorPolicy {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ExecutorPolicy::new(ExecutorConfig::new(n, 5, 2, 4), &mut rng)
    }

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn hard_adjacency_rows_are_one_hot() {
        let p = policy(4, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(8, 7, &mut rng);
        let h = Tensor::zeros(&[8, FEATURE]);
        let noise = p.sample_noise(2, &mut rng);
        let mut tape = Tape::new();
        let b = p.params.bind(&mut tape);
        let (xv, hv) = (tape.constant(x), tape.constant(h));
        let out = p.forward(&mut tape, &b, xv, hv, &noise).unwrap();
        for a in &out.adjacency {
            for row in tape.value(*a).data().chunks(4) {
                assert_eq!(row.iter().filter(|&&v| v == 1.0).count(), 1);
                assert_eq!(row.iter().filter(|&&v| v == 0.0).count(), 3);
            }
        }
        for s in &out.soft_adjacency {
            for row in tape.value(*s).data().chunks(4) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn single_agent_team_graph_is_self_loop() {
        let p = policy(1, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let body = random(1, 5, &mut rng);
        let mut tape = Tape::new();
        let b = p.params.bind(&mut tape);
        let bv = tape.constant(body.clone());
        let g = encode_observations(&p, &mut tape, &b, bv).unwrap();
        let e = p.obs_embed.forward(&mut tape, &b, bv).unwrap();
        let e = tape.relu(e);
        let manual = p.obs_gcn.forward(&mut tape, &b, e).unwrap();
        let manual = tape.relu(manual);
        assert!(tape.value(g).max_abs_diff(tape.value(manual)) < 1e-14);
    }

    #[test]
    fn forward_is_deterministic_given_noise() {
        let p = policy(3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(3, 7, &mut rng);
        let h = random(3, FEATURE, &mut rng);
        let a = executor_forward(&p, &x, &h, false, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = executor_forward(&p, &x, &h, false, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn recurrence_is_live() {
        let p = policy(3, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random(3, 7, &mut rng);
        let h1 = Tensor::zeros(&[3, FEATURE]);
        let h2 = random(3, FEATURE, &mut rng);
        let a = executor_forward(&p, &x, &h1, true, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = executor_forward(&p, &x, &h2, true, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(a.hidden.max_abs_diff(&b.hidden) > 1e-6);
    }

    #[test]
    fn action_log_probs_normalize() {
        let logits = Tensor::matrix(2, 4, vec![0.1, -0.3, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        for r in 0..2 {
            let row = logits.row_slice(r);
            let total: f64 = (0..4).map(|a| log_softmax_at(row, a).exp()).sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (a, _) = act(&logits, true, &mut rng);
        assert_eq!(a, vec![2, 0]);
    }

    #[test]
    fn rejects_wrong_width() {
        let p = policy(2, 0);
        let x = Tensor::zeros(&[2, 6]);
        let h = Tensor::zeros(&[2, FEATURE]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(executor_forward(&p, &x, &h, true, &mut rng), Err(Error::Shape(_))));
    }
}
