//! Prioritized multi-agent A* on the grid and its success rate over many layouts.
//!
//! cargo run --release --example astar_planner

use magex::baselines::{assign_hungarian, ma_astar, run_astar_episode};
use magex::envs::{reset, success_rate, EnvConfig, Task};

fn main() -> magex::Result<()> {
    let env = EnvConfig::preset(Task::SimpleSpread, 5)?;
    let mut state = reset(&env, 0)?;
    assign_hungarian(&mut state)?;
    let plan = ma_astar(&state, &env)?;
    println!("cell size {:.3}, conflict free: {}", plan.cell_size, plan.is_conflict_free());
    for (i, a) in plan.actions.iter().enumerate() {
        println!("agent {i}: {} moves, failed {}", a.len(), plan.failed[i]);
    }

    let episodes = 100;
    let mut total = 0.0;
    for seed in 0..episodes {
        total += success_rate(&run_astar_episode(&env, seed)?.final_state);
    }
    println!("mean success over {episodes} layouts: {:.3}", total / episodes as f64);
    Ok(())
}
