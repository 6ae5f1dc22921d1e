use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::nn::Tensor;

/// Generalized advantage estimation over one uninterrupted segment.
pub fn gae(rewards: &[f64], values: &[f64], bootstrap: f64, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    gae_with_dones(rewards, values, &vec![false; rewards.len()], bootstrap, gamma, lambda)
}

/// GAE where `dones[t]` marks that the episode ended after step `t`, so
/// nothing flows back across it. `bootstrap` is the value after the last step.
pub fn gae_with_dones(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(rewards.len(), values.len(), "gae reward/value lengths");
    assert_eq!(rewards.len(), dones.len(), "gae reward/done lengths");
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut last = 0.0;
    for t in (0..n).rev() {
        let next_v = if t + 1 == n { bootstrap } else { values[t + 1] };
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_v * live - values[t];
        last = delta + gamma * lambda * live * last;
        adv[t] = last;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// One environment step of one worker: a record for each of its `N` agents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Normalized policy inputs `[N, D]`.
    pub inputs: Tensor,
    /// Recurrent state before the step `[N, 32]`.
    pub hidden: Tensor,
    /// Adjacency noise per graph block `[N, N]`.
    pub noise: Vec<Tensor>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    /// Raw environment rewards.
    pub rewards: Vec<f64>,
    pub done: bool,
}

/// Low-level rollout storage for one collection round, kept as one segment
/// per worker so advantages run along each worker's timeline.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutBuffer {
    pub n_agents: usize,
    pub local_steps: usize,
    pub segments: Vec<Vec<StepRecord>>,
    /// Value estimate after the last step, per worker and agent.
    pub bootstrap: Vec<Vec<f64>>,
}

impl RolloutBuffer {
    pub fn new(threads: usize, local_steps: usize, n_agents: usize) -> Self {
        Self {
            n_agents,
            local_steps,
            segments: vec![Vec::with_capacity(local_steps); threads],
            bootstrap: vec![vec![0.0; n_agents]; threads],
        }
    }

    pub fn threads(&self) -> usize {
        self.segments.len()
    }

    pub fn capacity(&self) -> usize {
        self.threads() * self.local_steps
    }

    pub fn push(&mut self, worker: usize, record: StepRecord) -> Result<()> {
        if record.actions.len() != self.n_agents {
            return shape_err(format!("record for {} agents, buffer holds {}", record.actions.len(), self.n_agents));
        }
        if self.segments[worker].len() >= self.local_steps {
            return shape_err(format!("worker {worker} segment is full"));
        }
        self.segments[worker].push(record);
        Ok(())
    }

    pub fn step_records(&self) -> usize {
        self.segments.iter().map(Vec::len).sum()
    }

    /// Per-agent transitions stored.
    pub fn agent_records(&self) -> usize {
        self.step_records() * self.n_agents
    }

    pub fn is_full(&self) -> bool {
        self.segments.iter().all(|s| s.len() == self.local_steps)
    }

    /// Records in worker-major order.
    pub fn iter(&self) -> impl Iterator<Item = &StepRecord> {
        self.segments.iter().flatten()
    }

    /// Advantages and returns for every agent record, worker-major then step
    /// then agent. Stored values and bootstraps pass through `value` first,
    /// which maps the value head's output back to return units.
    pub fn advantages(&self, gamma: f64, lambda: f64, value: impl Fn(f64) -> f64) -> (Vec<f64>, Vec<f64>) {
        let n = self.n_agents;
        let mut adv = vec![0.0; self.agent_records()];
        let mut ret = vec![0.0; self.agent_records()];
        let mut offset = 0;
        for (seg, boot) in self.segments.iter().zip(&self.bootstrap) {
            let dones: Vec<bool> = seg.iter().map(|r| r.done).collect();
            for i in 0..n {
                let r: Vec<f64> = seg.iter().map(|s| s.rewards[i]).collect();
                let v: Vec<f64> = seg.iter().map(|s| value(s.values[i])).collect();
                let (a, g) = gae_with_dones(&r, &v, &dones, value(boot[i]), gamma, lambda);
                for t in 0..seg.len() {
                    adv[offset + t * n + i] = a[t];
                    ret[offset + t * n + i] = g[t];
                }
            }
            offset += seg.len() * n;
        }
        (adv, ret)
    }
}

/// One commander decision: agents to goals, or for Push Ball one of the two
/// stages (agents to balls, carried balls to landmarks).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommanderStage {
    pub input: Vec<f64>,
    pub perm: Vec<usize>,
    pub log_prob: f64,
    pub value: f64,
    pub reward: f64,
}

/// A finished episode's commander transition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommanderRecord {
    pub stages: Vec<CommanderStage>,
}

/// Commander transitions collected in one round, one per finished episode.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CommanderBuffer {
    pub records: Vec<CommanderRecord>,
}

impl CommanderBuffer {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn stages(&self) -> impl Iterator<Item = &CommanderStage> {
        self.records.iter().flat_map(|r| &r.stages)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_zero_is_td_residual() {
        let r = [1.0, -0.5, 2.0];
        let v = [0.3, 0.1, -0.2];
        let (a, ret) = gae(&r, &v, 0.7, 0.9, 0.0);
        let next = [0.1, -0.2, 0.7];
        for t in 0..3 {
            assert!((a[t] - (r[t] + 0.9 * next[t] - v[t])).abs() < 1e-12);
            assert!((ret[t] - a[t] - v[t]).abs() < 1e-12);
        }
    }

    #[test]
    fn gamma_zero_is_reward_minus_value() {
        let r = [1.0, -0.5, 2.0];
        let v = [0.3, 0.1, -0.2];
        let (a, _) = gae(&r, &v, 5.0, 0.0, 0.95);
        for t in 0..3 {
            assert!((a[t] - (r[t] - v[t])).abs() < 1e-12);
        }
    }

    #[test]
    fn done_cuts_the_trace() {
        let (a, _) = gae_with_dones(&[0.0, 0.0], &[0.0, 5.0], &[true, false], 0.0, 0.99, 0.95);
        assert_eq!(a[0], 0.0);
    }

    #[test]
    fn zero_rewards_zero_advantages() {
        let (a, _) = gae(&[0.0; 10], &[0.0; 10], 0.0, 0.99, 0.95);
        assert!(a.iter().all(|&x| x == 0.0));
    }
}
