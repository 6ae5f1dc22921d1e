//! Seedable navigation simulators: Simple Spread, Push Ball and a point-mass
//! quadrotor task, sharing one state type and one step function.

mod config;
mod spawn;
pub mod trajectory;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{
    EnvConfig, SpawnMode, Task, DRONE_ACCEL, DRONE_COLLISION_RADIUS, DRONE_HALF_EXTENT,
    DRONE_MAX_SPEED, DRONE_PHYSICS_HZ, DRONE_SPAWN_Z, DRONE_SUBSTEPS,
};

use crate::assignment::euclidean;
use crate::error::{Error, Result};
use crate::nn::is_permutation;

/// Full simulator state.
///
/// `reached[j]` is per landmark and drives the success metric. `arrived[i]`
/// is per agent: it turns true once agent `i` reaches its own assigned goal
/// and feeds the completion bonus and the reached label in observations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub agent_pos: Vec<Vec<f64>>,
    pub agent_vel: Vec<Vec<f64>>,
    pub goal_pos: Vec<Vec<f64>>,
    pub ball_pos: Vec<Vec<f64>>,
    pub ball_attached: Vec<bool>,
    pub reached: Vec<bool>,
    pub arrived: Vec<bool>,
    pub crashed: Vec<bool>,
    /// Collision events per agent during the last step.
    pub collisions: Vec<u32>,
    /// `goal_of[i]` is agent `i`'s landmark.
    pub goal_of: Vec<usize>,
    /// `ball_of[i]` is agent `i`'s ball (Push Ball only).
    pub ball_of: Vec<usize>,
    pub t: usize,
}

impl WorldState {
    pub fn n_agents(&self) -> usize {
        self.agent_pos.len()
    }

    /// Where agent `i` is heading now: its ball until attached, then its
    /// landmark.
    pub fn target_of(&self, i: usize) -> &[f64] {
        if !self.ball_pos.is_empty() && !self.ball_attached[i] {
            &self.ball_pos[self.ball_of[i]]
        } else {
            &self.goal_pos[self.goal_of[i]]
        }
    }
}

/// One agent's local view. Coordinates are scaled to `[0, 1]` by the arena
/// bounds and velocities by the maximum speed.
///
/// [`Observation::body`] flattens in this order: `self_pos`, `velocity`
/// (drone), `others_pos` in agent-index order skipping self, `ball_pos` and
/// `ball_attached` (Push Ball), `reached_label`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub self_pos: Vec<f64>,
    pub assigned_goal_pos: Vec<f64>,
    pub others_pos: Vec<Vec<f64>>,
    /// One-hot `[not arrived, arrived]`.
    pub reached_label: [f64; 2],
    pub ball_pos: Option<Vec<f64>>,
    /// One-hot `[free, attached]`.
    pub ball_attached: Option<[f64; 2]>,
    pub velocity: Option<Vec<f64>>,
}

impl Observation {
    pub fn body(&self) -> Vec<f64> {
        let mut v = self.self_pos.clone();
        if let Some(vel) = &self.velocity {
            v.extend_from_slice(vel);
        }
        for o in &self.others_pos {
            v.extend_from_slice(o);
        }
        if let Some(b) = &self.ball_pos {
            v.extend_from_slice(b);
        }
        if let Some(a) = &self.ball_attached {
            v.extend_from_slice(a);
        }
        v.extend_from_slice(&self.reached_label);
        v
    }

    /// `body()` followed by the assigned goal.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.body();
        v.extend_from_slice(&self.assigned_goal_pos);
        v
    }
}

/// Length of [`Observation::body`] for a task and team size.
pub fn body_len(cfg: &EnvConfig) -> usize {
    let d = cfg.dim();
    let n = cfg.n_agents;
    match cfg.task {
        Task::SimpleSpread => d * n + 2,
        Task::PushBall => d * n + 4 + 2,
        Task::Drone => d * n + d + 2,
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub success_rate: f64,
    pub collision_count: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observations: Vec<Observation>,
    pub rewards: Vec<f64>,
    pub done: bool,
    pub info: StepInfo,
}

/// Deterministic initial state for `(cfg, seed)`. Agent `i` starts assigned
/// to goal `i` (and ball `i`).
pub fn reset(cfg: &EnvConfig, seed: u64) -> Result<WorldState> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = spawn::spawn(cfg, &mut rng)?;
    let n = cfg.n_agents;
    let d = cfg.dim();
    let push = cfg.task == Task::PushBall;
    Ok(WorldState {
        agent_vel: vec![vec![0.0; d]; n],
        agent_pos: s.agents,
        goal_pos: s.goals,
        ball_pos: s.balls,
        ball_attached: if push { vec![false; n] } else { Vec::new() },
        reached: vec![false; n],
        arrived: vec![false; n],
        crashed: if cfg.task == Task::Drone { vec![false; n] } else { Vec::new() },
        collisions: vec![0; n],
        goal_of: (0..n).collect(),
        ball_of: if push { (0..n).collect() } else { Vec::new() },
        t: 0,
    })
}

/// Sets each agent's landmark and (for Push Ball) ball.
pub fn assign(state: &mut WorldState, goal_of: &[usize], ball_of: Option<&[usize]>) -> Result<()> {
    let n = state.n_agents();
    if !is_permutation(goal_of, n) {
        return Err(Error::Input(format!("goal assignment {goal_of:?} is not a permutation")));
    }
    state.goal_of = goal_of.to_vec();
    if let Some(b) = ball_of {
        if state.ball_pos.is_empty() {
            return Err(Error::Input("ball assignment on a task without balls".into()));
        }
        if !is_permutation(b, n) {
            return Err(Error::Input(format!("ball assignment {b:?} is not a permutation")));
        }
        state.ball_of = b.to_vec();
    }
    Ok(())
}

fn scale_pos(cfg: &EnvConfig, p: &[f64]) -> Vec<f64> {
    cfg.bounds().iter().zip(p).map(|(&(lo, hi), &x)| (x - lo) / (hi - lo)).collect()
}

pub fn observe(cfg: &EnvConfig, state: &WorldState) -> Vec<Observation> {
    let n = state.n_agents();
    (0..n)
        .map(|i| {
            let others = (0..n).filter(|&j| j != i).map(|j| scale_pos(cfg, &state.agent_pos[j])).collect();
            let label = if state.arrived[i] { [0.0, 1.0] } else { [1.0, 0.0] };
            let (ball_pos, ball_attached) = if cfg.task == Task::PushBall {
                let b = state.ball_of[i];
                let att = if state.ball_attached[i] { [0.0, 1.0] } else { [1.0, 0.0] };
                (Some(scale_pos(cfg, &state.ball_pos[b])), Some(att))
            } else {
                (None, None)
            };
            let velocity = (cfg.task == Task::Drone)
                .then(|| state.agent_vel[i].iter().map(|v| v / DRONE_MAX_SPEED).collect());
            Observation {
                self_pos: scale_pos(cfg, &state.agent_pos[i]),
                assigned_goal_pos: scale_pos(cfg, state.target_of(i)),
                others_pos: others,
                reached_label: label,
                ball_pos,
                ball_attached,
                velocity,
            }
        })
        .collect()
}

/// Drone action index to a direction in `{-1, 0, 1}^3`: per axis
/// 0 = backward, 1 = stop, 2 = forward, with x the most significant digit.
pub fn drone_direction(action: usize) -> [f64; 3] {
    [
        (action / 9) as f64 - 1.0,
        ((action / 3) % 3) as f64 - 1.0,
        (action % 3) as f64 - 1.0,
    ]
}

/// Particle action index to a unit displacement: Up, Down, Left, Right.
pub fn particle_direction(action: usize) -> [f64; 2] {
    match action {
        0 => [0.0, 1.0],
        1 => [0.0, -1.0],
        2 => [-1.0, 0.0],
        _ => [1.0, 0.0],
    }
}

fn clamp_into(cfg: &EnvConfig, p: &mut [f64]) {
    for (x, (lo, hi)) in p.iter_mut().zip(cfg.bounds()) {
        *x = x.clamp(lo, hi);
    }
}

/// Advances `state` by one policy step.
pub fn step(state: &mut WorldState, actions: &[usize], cfg: &EnvConfig) -> Result<StepResult> {
    let n = state.n_agents();
    if actions.len() != n {
        return Err(Error::Input(format!("{} actions for {n} agents", actions.len())));
    }
    if let Some((i, &a)) = actions.iter().enumerate().find(|(_, &a)| a >= cfg.num_actions()) {
        return Err(Error::Input(format!(
            "action {a} of agent {i} outside 0..{}",
            cfg.num_actions()
        )));
    }
    if state.t >= cfg.horizon {
        return Err(Error::Input("step past the horizon".into()));
    }
    let before = state.clone();
    state.collisions = vec![0; n];
    match cfg.task {
        Task::SimpleSpread | Task::PushBall => step_particles(state, actions, cfg),
        Task::Drone => step_drones(state, actions, cfg),
    }
    update_progress(state, cfg);
    state.t += 1;
    let rewards = reward(&before, actions, state, cfg);
    let all_crashed = !state.crashed.is_empty() && state.crashed.iter().all(|&c| c);
    let done = state.t == cfg.horizon || all_crashed;
    let info = StepInfo {
        success_rate: success_rate(state),
        collision_count: state.collisions.iter().sum::<u32>() / 2,
    };
    Ok(StepResult { observations: observe(cfg, state), rewards, done, info })
}

fn step_particles(state: &mut WorldState, actions: &[usize], cfg: &EnvConfig) {
    let n = state.n_agents();
    let h = cfg.step_size();
    let old = state.agent_pos.clone();
    for (p, &a) in state.agent_pos.iter_mut().zip(actions) {
        let d = particle_direction(a);
        p[0] += d[0] * h;
        p[1] += d[1] * h;
        clamp_into(cfg, p);
    }
    // Overlapping pairs bounce apart along the contact normal.
    let r = cfg.collision_radius;
    for i in 0..n {
        for j in i + 1..n {
            let (pi, pj) = (&state.agent_pos[i], &state.agent_pos[j]);
            let dist = euclidean(pi, pj);
            if dist >= r {
                continue;
            }
            state.collisions[i] += 1;
            state.collisions[j] += 1;
            let (nx, ny) = if dist > 0.0 {
                ((pi[0] - pj[0]) / dist, (pi[1] - pj[1]) / dist)
            } else {
                (1.0, 0.0)
            };
            let push = r - dist;
            state.agent_pos[i][0] += nx * push;
            state.agent_pos[i][1] += ny * push;
            state.agent_pos[j][0] -= nx * push;
            state.agent_pos[j][1] -= ny * push;
            clamp_into(cfg, &mut state.agent_pos[i]);
            clamp_into(cfg, &mut state.agent_pos[j]);
        }
    }
    for ((v, p), o) in state.agent_vel.iter_mut().zip(&state.agent_pos).zip(&old) {
        v[0] = p[0] - o[0];
        v[1] = p[1] - o[1];
    }
    if cfg.task == Task::PushBall {
        for i in 0..n {
            let b = state.ball_of[i];
            if !state.ball_attached[i] && euclidean(&state.agent_pos[i], &state.ball_pos[b]) <= cfg.reach_radius {
                state.ball_attached[i] = true;
            }
            if state.ball_attached[i] {
                state.ball_pos[b] = state.agent_pos[i].clone();
            }
        }
    }
}

fn step_drones(state: &mut WorldState, actions: &[usize], cfg: &EnvConfig) {
    let n = state.n_agents();
    let dt = 1.0 / DRONE_PHYSICS_HZ;
    let targets: Vec<[f64; 3]> = actions
        .iter()
        .map(|&a| {
            let d = drone_direction(a);
            let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            if norm == 0.0 {
                [0.0; 3]
            } else {
                [0, 1, 2].map(|k| d[k] / norm * DRONE_MAX_SPEED)
            }
        })
        .collect();
    let bounds = cfg.bounds();
    for _ in 0..DRONE_SUBSTEPS {
        for i in 0..n {
            if state.crashed[i] {
                continue;
            }
            let v = &mut state.agent_vel[i];
            let dv: Vec<f64> = (0..3).map(|k| targets[i][k] - v[k]).collect();
            let mag = dv.iter().map(|x| x * x).sum::<f64>().sqrt();
            let max_dv = DRONE_ACCEL * dt;
            if mag <= max_dv {
                v.copy_from_slice(&targets[i]);
            } else {
                for k in 0..3 {
                    v[k] += dv[k] / mag * max_dv;
                }
            }
            let speed = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if speed > DRONE_MAX_SPEED {
                v.iter_mut().for_each(|x| *x *= DRONE_MAX_SPEED / speed);
            }
            let p = &mut state.agent_pos[i];
            for k in 0..3 {
                p[k] += v[k] * dt;
                let (lo, hi) = bounds[k];
                if p[k] < lo || p[k] > hi {
                    p[k] = p[k].clamp(lo, hi);
                    v[k] = 0.0;
                }
            }
        }
        for i in 0..n {
            for j in i + 1..n {
                if state.crashed[i] && state.crashed[j] {
                    continue;
                }
                if euclidean(&state.agent_pos[i], &state.agent_pos[j]) < cfg.collision_radius {
                    for k in [i, j] {
                        if !state.crashed[k] {
                            state.crashed[k] = true;
                            state.collisions[k] += 1;
                            state.agent_vel[k] = vec![0.0; 3];
                        }
                    }
                }
            }
        }
    }
}

fn update_progress(state: &mut WorldState, cfg: &EnvConfig) {
    let n = state.n_agents();
    let r = cfg.reach_radius;
    match cfg.task {
        Task::PushBall => {
            for i in 0..n {
                let g = state.goal_of[i];
                if state.ball_attached[i] && euclidean(&state.agent_pos[i], &state.goal_pos[g]) <= r {
                    state.arrived[i] = true;
                    state.reached[g] = true;
                }
            }
        }
        Task::SimpleSpread | Task::Drone => {
            for i in 0..n {
                if state.crashed.get(i).copied().unwrap_or(false) {
                    continue;
                }
                for j in 0..n {
                    if euclidean(&state.agent_pos[i], &state.goal_pos[j]) <= r {
                        state.reached[j] = true;
                        if state.goal_of[i] == j {
                            state.arrived[i] = true;
                        }
                    }
                }
            }
        }
    }
}

/// Per-agent `alpha * R_b + beta * R_d + gamma * R_c`: completion bonus when
/// the agent's arrival flag turns on, negative distance to its current target
/// over the map size, and minus one per collision event.
pub fn reward(before: &WorldState, _actions: &[usize], after: &WorldState, cfg: &EnvConfig) -> Vec<f64> {
    (0..after.n_agents())
        .map(|i| {
            let bonus = if after.arrived[i] && !before.arrived[i] { 1.0 } else { 0.0 };
            let dist = -euclidean(&after.agent_pos[i], after.target_of(i)) / cfg.map_size;
            let coll = -(after.collisions[i] as f64);
            cfg.alpha * bonus + cfg.beta * dist + cfg.gamma * coll
        })
        .collect()
}

/// Fraction of landmarks reached.
pub fn success_rate(state: &WorldState) -> f64 {
    state.reached.iter().filter(|&&r| r).count() as f64 / state.reached.len() as f64
}

/// Fraction of crashed drones.
pub fn collision_rate(state: &WorldState, cfg: &EnvConfig) -> Result<f64> {
    if cfg.task != Task::Drone {
        return Err(Error::UnsupportedMetric(format!("collision rate on {:?}", cfg.task)));
    }
    Ok(state.crashed.iter().filter(|&&c| c).count() as f64 / state.crashed.len() as f64)
}

/// A configured environment instance owning its state.
#[derive(Clone, Debug)]
pub struct Env {
    pub cfg: EnvConfig,
    pub state: WorldState,
}

impl Env {
    pub fn new(cfg: EnvConfig, seed: u64) -> Result<Self> {
        let state = reset(&cfg, seed)?;
        Ok(Self { cfg, state })
    }

    pub fn reset(&mut self, seed: u64) -> Result<Vec<Observation>> {
        self.state = reset(&self.cfg, seed)?;
        Ok(self.observe())
    }

    pub fn observe(&self) -> Vec<Observation> {
        observe(&self.cfg, &self.state)
    }

    pub fn step(&mut self, actions: &[usize]) -> Result<StepResult> {
        step(&mut self.state, actions, &self.cfg)
    }

    pub fn assign(&mut self, goal_of: &[usize], ball_of: Option<&[usize]>) -> Result<()> {
        assign(&mut self.state, goal_of, ball_of)
    }
}
