//! The 3-D drone arena: 27 velocity commands, bounded speed and acceleration.
//!
//! cargo run --release --example drone_env

use magex::baselines::assign_hungarian;
use magex::envs::{collision_rate, drone_direction, reset, step, success_rate, EnvConfig, Task, DRONE_MAX_SPEED};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> magex::Result<()> {
    let env = EnvConfig::preset(Task::Drone, 2)?;
    let mut state = reset(&env, 3)?;
    assign_hungarian(&mut state)?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut top_speed: f64 = 0.0;
    loop {
        // Mostly head for the goal, sometimes pick a random command.
        let actions: Vec<usize> = (0..env.n_agents)
            .map(|i| {
                if rng.gen_bool(0.2) {
                    return rng.gen_range(0..env.num_actions());
                }
                let (p, g) = (&state.agent_pos[i], state.target_of(i));
                (0..env.num_actions())
                    .max_by(|&a, &b| {
                        let score = |k: usize| drone_direction(k).iter().zip(p.iter().zip(g)).map(|(d, (x, y))| d * (y - x)).sum::<f64>();
                        score(a).total_cmp(&score(b))
                    })
                    .unwrap()
            })
            .collect();
        let out = step(&mut state, &actions, &env)?;
        for v in &state.agent_vel {
            top_speed = top_speed.max(v.iter().map(|x| x * x).sum::<f64>().sqrt());
        }
        if out.done {
            break;
        }
    }
    println!("{} steps, success {:.2}, collision rate {:.2}", state.t, success_rate(&state), collision_rate(&state, &env)?);
    println!("top speed {top_speed:.3} (limit {DRONE_MAX_SPEED})");
    Ok(())
}
