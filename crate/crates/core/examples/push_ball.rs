//! Push Ball: agents are matched to balls, then carried balls are matched to goals.
//!
//! cargo run --release --example push_ball

use magex::baselines::run_astar_episode;
use magex::envs::{reset, success_rate, EnvConfig, Task};

fn main() -> magex::Result<()> {
    let env = EnvConfig::preset(Task::PushBall, 5)?;
    let state = reset(&env, 9)?;
    println!("{} agents, {} balls, {} goals", state.agent_pos.len(), state.ball_pos.len(), state.goal_pos.len());
    let ep = run_astar_episode(&env, 9)?;
    let s = &ep.final_state;
    println!("planner finished after {} steps with {} replans", s.t, ep.replans);
    println!("balls attached {:?}", s.ball_attached);
    println!("ball of each agent {:?}, goal of each agent {:?}", s.ball_of, s.goal_of);
    println!("success rate {:.2}", success_rate(s));
    Ok(())
}
