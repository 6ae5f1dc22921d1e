use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::FlatPolicy;
use crate::envs::{body_len, observe, EnvConfig, WorldState};
use crate::error::Result;
use crate::executor::{ExecutorConfig, ExecutorPolicy};
use crate::nn::{Bound, ParamSet, Tape, Tensor, Var};

/// The per-agent controller trained by the low-level PPO stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LowLevelPolicy {
    Executor(ExecutorPolicy),
    Flat(FlatPolicy),
}

pub struct Heads {
    pub logits: Var,
    pub values: Var,
    pub hidden: Var,
}

impl LowLevelPolicy {
    pub fn executor<R: Rng + ?Sized>(env: &EnvConfig, temperature: f64, rng: &mut R) -> Self {
        let mut cfg = ExecutorConfig::new(env.n_agents, body_len(env), env.dim(), env.num_actions());
        cfg.temperature = temperature;
        Self::Executor(ExecutorPolicy::new(cfg, rng))
    }

    /// Flat policy seeing its own observation plus every landmark.
    pub fn flat<R: Rng + ?Sized>(env: &EnvConfig, rng: &mut R) -> Self {
        let input = body_len(env) + env.n_agents * env.dim();
        Self::Flat(FlatPolicy::new(input, env.num_actions(), rng))
    }

    pub fn params(&self) -> &ParamSet {
        match self {
            Self::Executor(p) => &p.params,
            Self::Flat(p) => &p.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        match self {
            Self::Executor(p) => &mut p.params,
            Self::Flat(p) => &mut p.params,
        }
    }

    pub fn input_len(&self) -> usize {
        match self {
            Self::Executor(p) => p.cfg.input_len(),
            Self::Flat(p) => p.input_len,
        }
    }

    /// Unnormalized input rows, one per agent.
    pub fn raw_inputs(&self, env: &EnvConfig, state: &WorldState) -> Vec<Vec<f64>> {
        let obs = observe(env, state);
        match self {
            Self::Executor(_) => obs.iter().map(|o| o.flatten()).collect(),
            Self::Flat(_) => {
                let bounds = env.bounds();
                let goals: Vec<f64> = state
                    .goal_pos
                    .iter()
                    .flat_map(|g| g.iter().zip(&bounds).map(|(&x, &(lo, hi))| (x - lo) / (hi - lo)))
                    .collect();
                obs.iter()
                    .map(|o| {
                        let mut row = o.body();
                        row.extend_from_slice(&goals);
                        row
                    })
                    .collect()
            }
        }
    }

    /// Adjacency noise for `batch` teams (none for the flat policy).
    pub fn sample_noise<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<Tensor> {
        match self {
            Self::Executor(p) => p.sample_noise(batch, rng),
            Self::Flat(_) => Vec::new(),
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, bound: &Bound, x: Var, h: Var, noise: &[Tensor]) -> Result<Heads> {
        match self {
            Self::Executor(p) => {
                let o = p.forward(tape, bound, x, h, noise)?;
                Ok(Heads { logits: o.logits, values: o.values, hidden: o.hidden })
            }
            Self::Flat(p) => {
                let o = p.forward(tape, bound, x, h)?;
                Ok(Heads { logits: o.logits, values: o.values, hidden: o.hidden })
            }
        }
    }
}

/// Stacks equal-width matrices vertically.
pub fn stack_rows<'t>(parts: impl IntoIterator<Item = &'t Tensor>, cols: usize) -> Tensor {
    let mut data = Vec::new();
    for p in parts {
        debug_assert_eq!(p.cols(), cols);
        data.extend_from_slice(p.data());
    }
    let rows = data.len() / cols.max(1);
    Tensor::matrix(rows, cols, data).expect("stacked shape")
}

/// Stacks each block's noise across records.
pub fn stack_noise<'t>(records: impl IntoIterator<Item = &'t [Tensor]> + Clone, blocks: usize, n: usize) -> Vec<Tensor> {
    (0..blocks).map(|b| stack_rows(records.clone().into_iter().map(|r| &r[b]), n)).collect()
}
