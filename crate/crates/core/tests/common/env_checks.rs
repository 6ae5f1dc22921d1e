//! Random-action episodes with exact replay, arena bounds and drone speed.

use magex::assignment::random_permutation;
use magex::envs::trajectory::{read_trajectory, replay, TrajectoryRecorder};
use magex::envs::{assign, reset, step, EnvConfig, Task, WorldState};
use magex::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Default, Clone, Copy)]
pub struct EpisodeCheck {
    pub replay_identical: bool,
    pub rerun_identical: bool,
    pub in_bounds: bool,
    pub max_speed: f64,
}

pub fn within_bounds(cfg: &EnvConfig, state: &WorldState) -> bool {
    let bounds = cfg.bounds();
    state
        .agent_pos
        .iter()
        .chain(&state.ball_pos)
        .all(|p| p.iter().zip(&bounds).all(|(&x, &(lo, hi))| x.is_finite() && lo <= x && x <= hi))
}

fn record(cfg: &EnvConfig, seed: u64) -> Result<(Vec<u8>, TrajectoryRecorder, bool, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa5a5);
    let mut state = reset(cfg, seed)?;
    let n = cfg.n_agents;
    let goals = random_permutation(n, &mut rng);
    let balls = (cfg.task == Task::PushBall).then(|| random_permutation(n, &mut rng));
    assign(&mut state, &goals, balls.as_deref())?;
    let mut rec = TrajectoryRecorder::new(cfg, seed, &state);
    let mut in_bounds = within_bounds(cfg, &state);
    let mut max_speed: f64 = 0.0;
    loop {
        let actions: Vec<usize> = (0..n).map(|_| rng.gen_range(0..cfg.num_actions())).collect();
        let out = step(&mut state, &actions, cfg)?;
        rec.record(&actions, &out.rewards, &state);
        in_bounds &= within_bounds(cfg, &state);
        for v in &state.agent_vel {
            max_speed = max_speed.max(v.iter().map(|x| x * x).sum::<f64>().sqrt());
        }
        if out.done {
            break;
        }
    }
    let mut bytes = Vec::new();
    rec.write(&mut bytes)?;
    Ok((bytes, rec, in_bounds, max_speed))
}

/// One random-action episode: the written dump re-simulates exactly, a second
/// run from the same seeds writes the same bytes, and every position stays
/// inside the arena.
pub fn check_episode(cfg: &EnvConfig, seed: u64) -> Result<EpisodeCheck> {
    let (bytes, _, in_bounds, max_speed) = record(cfg, seed)?;
    let lines = read_trajectory(&bytes[..])?;
    let replay_identical = replay(&lines)?.matches();
    let (again, ..) = record(cfg, seed)?;
    Ok(EpisodeCheck { replay_identical, rerun_identical: again == bytes, in_bounds, max_speed })
}

pub fn task_configs() -> Result<Vec<EnvConfig>> {
    Ok(vec![
        EnvConfig::preset(Task::SimpleSpread, 5)?,
        EnvConfig::preset(Task::PushBall, 5)?,
        EnvConfig::preset(Task::Drone, 2)?,
    ])
}

/// Aggregate over `episodes` seeds of one task.
pub fn check_task(cfg: &EnvConfig, episodes: u64) -> Result<EpisodeCheck> {
    let mut agg = EpisodeCheck { replay_identical: true, rerun_identical: true, in_bounds: true, max_speed: 0.0 };
    for seed in 0..episodes {
        let c = check_episode(cfg, seed)?;
        agg.replay_identical &= c.replay_identical;
        agg.rerun_identical &= c.rerun_identical;
        agg.in_bounds &= c.in_bounds;
        agg.max_speed = agg.max_speed.max(c.max_speed);
    }
    Ok(agg)
}
