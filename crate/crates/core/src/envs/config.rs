use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    SimpleSpread,
    PushBall,
    Drone,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpawnMode {
    #[default]
    Random,
    Mode1,
    Mode2,
    Mode3,
    Mode4,
}

/// Drone constants: physics rate, substeps per action, speed and acceleration limits.
pub const DRONE_PHYSICS_HZ: f64 = 120.0;
pub const DRONE_SUBSTEPS: usize = 4;
pub const DRONE_MAX_SPEED: f64 = 2.0;
pub const DRONE_ACCEL: f64 = 5.0;
/// Spawn plane height and horizontal half-extent of the drone arena.
pub const DRONE_SPAWN_Z: f64 = 1.5;
pub const DRONE_HALF_EXTENT: f64 = 1.5;
pub const DRONE_COLLISION_RADIUS: f64 = 0.06;

/// Environment configuration. Construct with [`EnvConfig::new`] or
/// [`EnvConfig::preset`] to get the derived radii and default reward weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub task: Task,
    pub n_agents: usize,
    /// Side length of the square arena, world units.
    pub map_size: f64,
    pub horizon: usize,
    pub spawn_mode: SpawnMode,
    /// Completion bonus weight.
    pub alpha: f64,
    /// Distance penalty weight.
    pub beta: f64,
    /// Collision penalty weight.
    pub gamma: f64,
    pub reach_radius: f64,
    pub collision_radius: f64,
    pub rng_seed: u64,
}

impl EnvConfig {
    pub fn new(task: Task, n_agents: usize, map_size: f64, horizon: usize) -> Self {
        let collision_radius = match task {
            Task::Drone => DRONE_COLLISION_RADIUS,
            _ => 0.025 * map_size,
        };
        Self {
            task,
            n_agents,
            map_size,
            horizon,
            spawn_mode: SpawnMode::Random,
            alpha: 1.0,
            beta: 0.1,
            gamma: 1.0,
            reach_radius: 0.05 * map_size,
            collision_radius,
            rng_seed: 0,
        }
    }

    /// Map size and horizon used for the benchmark settings of each task.
    pub fn preset_dims(task: Task, n_agents: usize) -> Option<(f64, usize)> {
        match (task, n_agents) {
            (Task::SimpleSpread, 5) => Some((4.0, 60)),
            (Task::SimpleSpread, 20) => Some((36.0, 100)),
            (Task::SimpleSpread, 50) => Some((100.0, 120)),
            (Task::PushBall, 5) => Some((16.0, 100)),
            (Task::PushBall, 20) => Some((144.0, 200)),
            (Task::Drone, 2) | (Task::Drone, 4) => Some((2.0 * DRONE_HALF_EXTENT, 120)),
            _ => None,
        }
    }

    pub fn preset(task: Task, n_agents: usize) -> Result<Self> {
        let (map, horizon) = Self::preset_dims(task, n_agents).ok_or_else(|| {
            Error::Config(format!("no preset for {task:?} with {n_agents} agents"))
        })?;
        let mut cfg = Self::new(task, n_agents, map, horizon);
        if n_agents >= 20 {
            cfg.spawn_mode = SpawnMode::Mode1;
        }
        Ok(cfg)
    }

    pub fn with_spawn(mut self, mode: SpawnMode) -> Self {
        self.spawn_mode = mode;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_agents == 0 {
            return bad("n_agents must be positive".into());
        }
        if self.horizon == 0 {
            return bad("horizon must be positive".into());
        }
        if !(self.map_size > 0.0) || !self.map_size.is_finite() {
            return bad(format!("map_size must be positive, got {}", self.map_size));
        }
        if !(self.reach_radius > 0.0) || !(self.collision_radius > 0.0) {
            return bad("radii must be positive".into());
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !v.is_finite() {
                return bad(format!("{name} must be finite"));
            }
        }
        if self.task == Task::Drone && self.spawn_mode != SpawnMode::Random {
            return bad("drone task only supports random spawns".into());
        }
        Ok(())
    }

    /// Spatial dimension: 2 for particle tasks, 3 for drones.
    pub fn dim(&self) -> usize {
        match self.task {
            Task::Drone => 3,
            _ => 2,
        }
    }

    pub fn num_actions(&self) -> usize {
        match self.task {
            Task::Drone => 27,
            _ => 4,
        }
    }

    /// Per-step displacement of a particle agent.
    pub fn step_size(&self) -> f64 {
        self.map_size / self.horizon as f64 * 2.0
    }

    /// Axis-aligned arena bounds `(lo, hi)` per coordinate.
    pub fn bounds(&self) -> Vec<(f64, f64)> {
        match self.task {
            Task::Drone => {
                let h = self.map_size / 2.0;
                vec![(-h, h), (-h, h), (0.0, 2.0 * DRONE_SPAWN_Z)]
            }
            _ => vec![(0.0, self.map_size); 2],
        }
    }
}
