//! JSON-lines episode dumps and bit-exact replay.
//!
//! The first line is a header with the environment config, reset seed and
//! assignment; every following line records one step's actions, rewards and
//! the resulting state.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{assign, reset, step, EnvConfig, WorldState};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrajectoryLine {
    Header { env: EnvConfig, seed: u64, goal_of: Vec<usize>, ball_of: Vec<usize> },
    Step { t: usize, actions: Vec<usize>, rewards: Vec<f64>, state: WorldState },
}

/// Collects an episode in memory and writes it as JSON lines.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecorder {
    lines: Vec<TrajectoryLine>,
}

impl TrajectoryRecorder {
    /// Starts a recording from a freshly reset (and assigned) state.
    pub fn new(env: &EnvConfig, seed: u64, initial: &WorldState) -> Self {
        let header = TrajectoryLine::Header {
            env: env.clone(),
            seed,
            goal_of: initial.goal_of.clone(),
            ball_of: initial.ball_of.clone(),
        };
        Self { lines: vec![header] }
    }

    pub fn record(&mut self, actions: &[usize], rewards: &[f64], state: &WorldState) {
        self.lines.push(TrajectoryLine::Step {
            t: state.t,
            actions: actions.to_vec(),
            rewards: rewards.to_vec(),
            state: state.clone(),
        });
    }

    pub fn lines(&self) -> &[TrajectoryLine] {
        &self.lines
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        for l in &self.lines {
            serde_json::to_writer(&mut out, l)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

pub fn read_trajectory<R: BufRead>(input: R) -> Result<Vec<TrajectoryLine>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TrajectoryLine = serde_json::from_str(&line)
            .map_err(|e| Error::Input(format!("trajectory line {}: {e}", i + 1)))?;
        out.push(parsed);
    }
    Ok(out)
}

/// Outcome of re-simulating a recorded episode.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayReport {
    pub steps: usize,
    /// First step whose re-simulated state or rewards differ, if any.
    pub first_mismatch: Option<usize>,
}

impl ReplayReport {
    pub fn matches(&self) -> bool {
        self.first_mismatch.is_none()
    }
}

/// Re-simulates the recorded actions from the header's seed and compares
/// every state and reward exactly.
pub fn replay(lines: &[TrajectoryLine]) -> Result<ReplayReport> {
    let Some(TrajectoryLine::Header { env, seed, goal_of, ball_of }) = lines.first() else {
        return Err(Error::Input("trajectory does not start with a header".into()));
    };
    let mut state = reset(env, *seed)?;
    let balls = (!ball_of.is_empty()).then_some(ball_of.as_slice());
    assign(&mut state, goal_of, balls)?;
    let mut steps = 0;
    for l in &lines[1..] {
        let TrajectoryLine::Step { actions, rewards, state: recorded, .. } = l else {
            return Err(Error::Input("header after the first line".into()));
        };
        let res = step(&mut state, actions, env)?;
        let same_rewards = res.rewards.len() == rewards.len()
            && res.rewards.iter().zip(rewards).all(|(a, b)| a.to_bits() == b.to_bits());
        if !same_rewards || !bit_equal(&state, recorded) {
            return Ok(ReplayReport { steps, first_mismatch: Some(steps) });
        }
        steps += 1;
    }
    Ok(ReplayReport { steps, first_mismatch: None })
}

fn bit_equal(a: &WorldState, b: &WorldState) -> bool {
    let vv = |x: &Vec<Vec<f64>>, y: &Vec<Vec<f64>>| {
        x.len() == y.len()
            && x.iter().zip(y).all(|(p, q)| {
                p.len() == q.len() && p.iter().zip(q).all(|(u, v)| u.to_bits() == v.to_bits())
            })
    };
    vv(&a.agent_pos, &b.agent_pos)
        && vv(&a.agent_vel, &b.agent_vel)
        && vv(&a.goal_pos, &b.goal_pos)
        && vv(&a.ball_pos, &b.ball_pos)
        && a.ball_attached == b.ball_attached
        && a.reached == b.reached
        && a.arrived == b.arrived
        && a.crashed == b.crashed
        && a.collisions == b.collisions
        && a.goal_of == b.goal_of
        && a.ball_of == b.ball_of
        && a.t == b.t
}
