//! Two training runs from one config, compared byte for byte.

use std::path::Path;

use magex::cli::{cmd_train, TrainOptions, METRICS_FILE};
use magex::Result;

pub const SMALL_RUN: &str = r#"
method = "mage_x"
run_name = "repro"
seeds = [0, 1]

[env]
task = "simple_spread"
n_agents = 3
map_size = 3.0
horizon = 40

[train]
lr = 1e-3
total_env_steps = 4500
eval_every_rounds = 10
eval_episodes = 4
"#;

/// Trains `config` into two output directories and reports whether every
/// seed's metrics file came out byte-identical (and non-empty).
pub fn metrics_identical(dir: &Path, config: &str) -> Result<bool> {
    let path = dir.join("config.toml");
    std::fs::write(&path, config)?;
    let mut runs = Vec::new();
    for out in ["first", "second"] {
        let o = format!("output_dir={:?}", dir.join(out).to_string_lossy());
        runs.push(cmd_train(&path, &[o], &TrainOptions::default())?);
    }
    let mut same = true;
    for seed in ["seed_0", "seed_1"] {
        let a = std::fs::read(runs[0].join(seed).join(METRICS_FILE))?;
        let b = std::fs::read(runs[1].join(seed).join(METRICS_FILE))?;
        same &= !a.is_empty() && a == b;
    }
    Ok(same)
}
