//! Evaluation protocol on the non-learning controllers: mean and std across seeds.
//!
//! cargo run --release --example evaluate_controls

use magex::envs::{EnvConfig, Task};
use magex::trainer::{evaluate, Controller};

fn main() -> magex::Result<()> {
    let seeds = [0, 1, 2];
    for (name, env) in [
        ("spread N=5", EnvConfig::preset(Task::SimpleSpread, 5)?),
        ("push ball N=5", EnvConfig::preset(Task::PushBall, 5)?),
    ] {
        for (label, c) in [("planner", Controller::Astar), ("random", Controller::Random)] {
            let r = evaluate(&c, &env, 50, &seeds)?;
            println!("{name:14} {label:8} success {:.3} ({:.3})", r.success_mean, r.success_std);
        }
    }
    let drone = EnvConfig::preset(Task::Drone, 2)?;
    let r = evaluate(&Controller::Random, &drone, 20, &seeds)?;
    print!("drone N=2      random   {}", r.summary());
    Ok(())
}
