//! Trains a method on Simple Spread and evaluates the greedy policy.
//!
//! cargo run --release --example train_spread -- [method] [total_steps] [lr] [seed] [agents] [map] [horizon]

use magex::envs::{EnvConfig, Task};
use magex::trainer::{evaluate, Method, TrainConfig, Trainer};

fn arg<T: std::str::FromStr>(args: &[String], i: usize, default: T) -> T {
    args.get(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> magex::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let method: Method = serde_json::from_value(serde_json::Value::String(arg(&args, 0, "mage_x".to_string())))?;
    let total: u64 = arg(&args, 1, 300_000);
    let lr: f64 = arg(&args, 2, 1e-3);
    let seed: u64 = arg(&args, 3, 0);
    let n: usize = arg(&args, 4, 3);
    let map: f64 = arg(&args, 5, 3.0);
    let horizon: usize = arg(&args, 6, 40);
    let env = EnvConfig::new(Task::SimpleSpread, n, map, horizon);
    let cfg = TrainConfig { lr, total_env_steps: total, eval_every_rounds: 0, seed, ..TrainConfig::default() };
    let mut trainer = Trainer::new(method, env.clone(), cfg)?;
    let start = std::time::Instant::now();
    trainer.train(|m| {
        if m.round % 100 == 0 {
            println!(
                "round {:5} steps {:7} success {:.3} reward {:8.3} entropy {:.3} {:.0}s",
                m.round,
                m.env_steps,
                m.success_rate.unwrap_or(f64::NAN),
                m.mean_episode_reward.unwrap_or(f64::NAN),
                m.entropy,
                start.elapsed().as_secs_f64()
            );
        }
        Ok(())
    })?;
    let report = evaluate(&trainer.controller(), &env, 100, &[1000 + seed])?;
    print!("{}", report.summary());
    Ok(())
}
