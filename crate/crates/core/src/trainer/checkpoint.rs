use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LowLevelPolicy, Method, RunningNormalizer, TrainConfig};
use crate::commander::CommanderPolicy;
use crate::envs::EnvConfig;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to evaluate or inspect a run: config echo, RNG states,
/// normalizer statistics and both parameter sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub method: Method,
    pub env: EnvConfig,
    pub train: TrainConfig,
    pub round: usize,
    pub env_steps: u64,
    pub commander: Option<CommanderPolicy>,
    pub low: LowLevelPolicy,
    pub features: RunningNormalizer,
    pub returns: RunningNormalizer,
    pub rng: ChaCha8Rng,
    pub worker_rngs: Vec<ChaCha8Rng>,
}

impl Checkpoint {
    /// Writes through a temporary file so a crash never leaves a torn checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, serde_json::to_vec(self)?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Missing(format!("checkpoint {}", path.display())),
            _ => Error::Io(e),
        })?;
        let value: serde_json::Value = serde_json::from_slice(&bytes)?;
        let version = value.get("version").and_then(serde_json::Value::as_u64);
        if version != Some(CHECKPOINT_VERSION as u64) {
            return Err(Error::Version(format!(
                "checkpoint format {version:?}, this build reads {CHECKPOINT_VERSION}"
            )));
        }
        Ok(serde_json::from_value(value)?)
    }

    /// Fails unless `env` describes the environment the checkpoint was trained on,
    /// ignoring the spawn mode and seed which evaluation may vary.
    pub fn check_env(&self, env: &EnvConfig) -> Result<()> {
        let mut theirs = env.clone();
        theirs.spawn_mode = self.env.spawn_mode;
        theirs.rng_seed = self.env.rng_seed;
        if theirs != self.env {
            return Err(Error::Version(format!(
                "checkpoint trained on {:?} with {} agents, map {}, horizon {}; asked for {:?} with {} agents, map {}, horizon {}",
                self.env.task, self.env.n_agents, self.env.map_size, self.env.horizon,
                env.task, env.n_agents, env.map_size, env.horizon
            )));
        }
        Ok(())
    }
}
