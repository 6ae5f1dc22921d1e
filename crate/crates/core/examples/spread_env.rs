//! Simple Spread with Hungarian goals and greedy moves, recorded and replayed.
//!
//! cargo run --release --example spread_env

use magex::baselines::assign_hungarian;
use magex::envs::trajectory::{replay, TrajectoryRecorder};
use magex::envs::{particle_direction, reset, step, success_rate, EnvConfig, Task};

/// The move whose direction best reduces the distance to the target.
fn toward(from: &[f64], to: &[f64]) -> usize {
    let (dx, dy) = (to[0] - from[0], to[1] - from[1]);
    (0..4)
        .max_by(|&a, &b| {
            let da = particle_direction(a);
            let db = particle_direction(b);
            (da[0] * dx + da[1] * dy).total_cmp(&(db[0] * dx + db[1] * dy))
        })
        .unwrap()
}

fn main() -> magex::Result<()> {
    let env = EnvConfig::preset(Task::SimpleSpread, 5)?;
    let mut state = reset(&env, 17)?;
    assign_hungarian(&mut state)?;
    let mut rec = TrajectoryRecorder::new(&env, 17, &state);
    let mut total = 0.0;
    loop {
        let actions: Vec<usize> = (0..env.n_agents).map(|i| toward(&state.agent_pos[i], state.target_of(i))).collect();
        let out = step(&mut state, &actions, &env)?;
        rec.record(&actions, &out.rewards, &state);
        total += out.rewards.iter().sum::<f64>();
        if out.done {
            break;
        }
    }
    println!("{} steps, team reward {total:.2}, success rate {:.2}", state.t, success_rate(&state));
    let mut buf = Vec::new();
    rec.write(&mut buf)?;
    println!("trajectory: {} lines, {} bytes", rec.lines().len(), buf.len());
    let report = replay(rec.lines())?;
    println!("replay of {} steps matches: {}", report.steps, report.matches());
    Ok(())
}
