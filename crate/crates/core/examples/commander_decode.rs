//! Goal commander: score goals, decode a ranking greedily or by Plackett-Luce sampling.
//!
//! cargo run --release --example commander_decode

use magex::assignment::{commander_reward, hungarian, CostMatrix};
use magex::commander::{commander_input, decide, CommanderPolicy, DecodeMode};
use magex::envs::{reset, EnvConfig, Task};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> magex::Result<()> {
    let env = EnvConfig::preset(Task::SimpleSpread, 5)?;
    let state = reset(&env, 42)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let policy = CommanderPolicy::new(env.n_agents, env.dim(), &mut rng);
    let input = commander_input(&env, &state.agent_pos, &state.goal_pos)?;
    let cost = CostMatrix::from_positions(&state.agent_pos, &state.goal_pos)?;
    let best = hungarian(&cost);

    let greedy = decide(&policy, &input, DecodeMode::Greedy, &mut rng)?;
    println!("goal probabilities {:?}", greedy.p_goal.iter().map(|p| format!("{p:.3}")).collect::<Vec<_>>());
    println!("greedy ranking {:?} log-prob {:.3} value {:.3}", greedy.perm, greedy.log_prob, greedy.value);
    println!("  reward {:.3}", commander_reward(cost.total(&greedy.perm), best.total_cost));
    for _ in 0..3 {
        let d = decide(&policy, &input, DecodeMode::Sample, &mut rng)?;
        println!("sampled ranking {:?} log-prob {:.3} reward {:.3}", d.perm, d.log_prob,
            commander_reward(cost.total(&d.perm), best.total_cost));
    }
    println!("hungarian {:?}", best.perm);
    Ok(())
}
