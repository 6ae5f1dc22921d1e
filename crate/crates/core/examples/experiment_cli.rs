//! The library side of the command line: train from a config, evaluate the
//! checkpoint with a trajectory dump, replay it, and aggregate learning curves.
//!
//! cargo run --release --example experiment_cli

use magex::cli::{cmd_eval, cmd_plotdata, cmd_replay, cmd_train, EvalOptions, EvalSource, PlotMetric, TrainOptions, CHECKPOINT_FILE, METRICS_FILE, OUTPUT_ROOT_VAR};

const CONFIG: &str = r#"
method = "mage_x"
run_name = "example"
seeds = [0, 1]

[env]
task = "simple_spread"
n_agents = 3
map_size = 3.0
horizon = 40

[train]
lr = 1e-3
total_env_steps = 6000
eval_every_rounds = 10
eval_episodes = 5
"#;

fn main() -> magex::Result<()> {
    let dir = std::env::temp_dir().join(format!("magex-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    std::env::set_var(OUTPUT_ROOT_VAR, &dir);
    let config = dir.join("spread.toml");
    std::fs::write(&config, CONFIG)?;

    let run = cmd_train(&config, &["train.gamma=0.98".into()], &TrainOptions { timing: false, log_every: 10 })?;
    println!("run directory {}", run.display());

    let traj = dir.join("episode.jsonl");
    let report = cmd_eval(&EvalOptions {
        source: EvalSource::Checkpoint { path: run.join("seed_0").join(CHECKPOINT_FILE), config: Some(config.clone()) },
        episodes: 10,
        seeds: vec![0, 1, 2],
        out: None,
        trajectory: Some(traj.clone()),
    })?;
    print!("{}", report.summary());

    let replayed = cmd_replay(&traj)?;
    println!("replayed {} steps, identical: {}", replayed.steps, replayed.matches());

    let files = vec![run.join("seed_0").join(METRICS_FILE), run.join("seed_1").join(METRICS_FILE)];
    let (tsv, warning) = cmd_plotdata(&files, PlotMetric::EvalSuccessRate)?;
    if let Some(w) = warning {
        eprintln!("{w}");
    }
    print!("{tsv}");
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
