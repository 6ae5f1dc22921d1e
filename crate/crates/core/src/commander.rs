//! Goal commander: scores goals from the flat agent and goal positions, ranks
//! them, and hands the i-th ranked goal to agent i.
//!
//! Training samples rankings from the Plackett-Luce distribution over the
//! goal scores; greedy decoding (the mode of that distribution) is used at
//! evaluation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::EnvConfig;
use crate::error::{shape_err, Result};
use crate::nn::{softmax, Bound, LayerParams, ParamSet, Tape, Tensor, Var};

/// Hidden width of the commander value head.
pub const COMMANDER_HIDDEN: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommanderPolicy {
    pub params: ParamSet,
    /// Scorer: `2 * dim * N -> N`.
    pub scorer: LayerParams,
    pub value_hidden: LayerParams,
    pub value_out: LayerParams,
    pub n_agents: usize,
    pub dim: usize,
}

impl CommanderPolicy {
    pub fn new<R: Rng + ?Sized>(n_agents: usize, dim: usize, rng: &mut R) -> Self {
        let mut params = ParamSet::new();
        let input = 2 * dim * n_agents;
        let scorer = LayerParams::new(&mut params, "commander.scorer", input, n_agents, 1.0, rng);
        let value_hidden =
            LayerParams::new(&mut params, "commander.value.0", input, COMMANDER_HIDDEN, 1.0, rng);
        let value_out =
            LayerParams::new(&mut params, "commander.value.1", COMMANDER_HIDDEN, 1, 1.0, rng);
        Self { params, scorer, value_hidden, value_out, n_agents, dim }
    }

    pub fn input_len(&self) -> usize {
        2 * self.dim * self.n_agents
    }

    /// Goal scores `[B, N]` for stacked inputs `[B, 2 * dim * N]`.
    pub fn logits(&self, tape: &mut Tape<'_>, bound: &Bound, x: Var) -> Result<Var> {
        self.scorer.forward(tape, bound, x)
    }

    /// Baseline estimates `[B, 1]`.
    pub fn values(&self, tape: &mut Tape<'_>, bound: &Bound, x: Var) -> Result<Var> {
        let h = self.value_hidden.forward(tape, bound, x)?;
        let h = tape.relu(h);
        self.value_out.forward(tape, bound, h)
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_len() {
            return shape_err(format!(
                "commander input has {} values, expected {}",
                input.len(),
                self.input_len()
            ));
        }
        Ok(())
    }

    /// Raw scores for one input.
    pub fn scores(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let x = tape.constant(Tensor::row(input.to_vec()));
        let s = self.logits(&mut tape, &bound, x)?;
        Ok(tape.value(s).data().to_vec())
    }
}

/// Flat commander input: agents then goals, each coordinate scaled to `[0, 1]`
/// by the arena bounds.
pub fn commander_input(cfg: &EnvConfig, agents: &[Vec<f64>], goals: &[Vec<f64>]) -> Result<Vec<f64>> {
    if agents.len() != goals.len() {
        return shape_err(format!("{} agents for {} goals", agents.len(), goals.len()));
    }
    let bounds = cfg.bounds();
    let mut out = Vec::with_capacity(2 * agents.len() * bounds.len());
    for p in agents.iter().chain(goals) {
        if p.len() != bounds.len() {
            return shape_err(format!("position has {} coordinates, expected {}", p.len(), bounds.len()));
        }
        out.extend(p.iter().zip(&bounds).map(|(&x, &(lo, hi))| (x - lo) / (hi - lo)));
    }
    Ok(out)
}

/// `softmax(scorer(agents, goals))`.
pub fn score_goals(policy: &CommanderPolicy, agents: &[Vec<f64>], goals: &[Vec<f64>]) -> Result<Vec<f64>> {
    if agents.len() != goals.len() || agents.len() != policy.n_agents {
        return shape_err(format!(
            "commander for {} agents got {} agents and {} goals",
            policy.n_agents,
            agents.len(),
            goals.len()
        ));
    }
    let input: Vec<f64> = agents.iter().chain(goals).flatten().copied().collect();
    Ok(softmax(&policy.scores(&input)?))
}

pub fn commander_value(policy: &CommanderPolicy, input: &[f64]) -> Result<f64> {
    policy.check_input(input)?;
    let mut tape = Tape::new();
    let bound = policy.params.bind(&mut tape);
    let x = tape.constant(Tensor::row(input.to_vec()));
    let v = policy.values(&mut tape, &bound, x)?;
    Ok(tape.value(v).item())
}

/// Goals ranked by probability, highest first, lower index first on ties.
/// Agent `i` gets `perm[i]`.
pub fn decode_greedy(p_goal: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..p_goal.len()).collect();
    order.sort_by(|&a, &b| p_goal[b].total_cmp(&p_goal[a]).then(a.cmp(&b)));
    order
}

/// Plackett-Luce sample: goals drawn without replacement in proportion to
/// their remaining probability. Returns the ranking and its log-probability.
pub fn sample_assignment<R: Rng + ?Sized>(p_goal: &[f64], rng: &mut R) -> (Vec<usize>, f64) {
    let mut remaining: Vec<usize> = (0..p_goal.len()).collect();
    let mut perm = Vec::with_capacity(p_goal.len());
    let mut log_prob = 0.0;
    while !remaining.is_empty() {
        let total: f64 = remaining.iter().map(|&j| p_goal[j]).sum();
        let pick = if remaining.len() == 1 {
            0
        } else {
            let u = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut k = remaining.len() - 1;
            for (idx, &j) in remaining.iter().enumerate() {
                acc += p_goal[j];
                if u < acc {
                    k = idx;
                    break;
                }
            }
            k
        };
        let j = remaining.remove(pick);
        log_prob += (p_goal[j] / total).ln();
        perm.push(j);
    }
    (perm, log_prob)
}

/// Plackett-Luce log-probability of `perm` under `p_goal`.
pub fn plackett_luce_log_prob(p_goal: &[f64], perm: &[usize]) -> f64 {
    let mut total: f64 = p_goal.iter().sum();
    let mut lp = 0.0;
    for &j in perm {
        lp += (p_goal[j] / total).ln();
        total -= p_goal[j];
    }
    lp
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecodeMode {
    Greedy,
    Sample,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommanderDecision {
    pub scores: Vec<f64>,
    pub p_goal: Vec<f64>,
    pub perm: Vec<usize>,
    pub log_prob: f64,
    pub value: f64,
}

pub fn decide<R: Rng + ?Sized>(
    policy: &CommanderPolicy,
    input: &[f64],
    mode: DecodeMode,
    rng: &mut R,
) -> Result<CommanderDecision> {
    policy.check_input(input)?;
    let mut tape = Tape::new();
    let bound = policy.params.bind(&mut tape);
    let x = tape.constant(Tensor::row(input.to_vec()));
    let s = policy.logits(&mut tape, &bound, x)?;
    let v = policy.values(&mut tape, &bound, x)?;
    let scores = tape.value(s).data().to_vec();
    let value = tape.value(v).item();
    let p_goal = softmax(&scores);
    let (perm, log_prob) = match mode {
        DecodeMode::Greedy => {
            let perm = decode_greedy(&p_goal);
            let lp = plackett_luce_log_prob(&p_goal, &perm);
            (perm, lp)
        }
        DecodeMode::Sample => sample_assignment(&p_goal, rng),
    };
    Ok(CommanderDecision { scores, p_goal, perm, log_prob, value })
}
