use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{assign_episode, stack_rows, LowLevelPolicy, Method, RunningNormalizer};
use crate::baselines::{assign_hungarian, run_astar_episode_recorded};
use crate::commander::{CommanderPolicy, DecodeMode};
use crate::envs::trajectory::TrajectoryRecorder;
use crate::envs::{collision_rate, reset, step, success_rate, EnvConfig, Task, WorldState};
use crate::error::{Error, Result};
use crate::executor::{act, FEATURE};
use crate::nn::{Tape, Tensor};

/// What plays the evaluation episodes.
#[derive(Clone, Copy, Debug)]
pub enum Controller<'a> {
    /// Trained policies, decoded greedily at both levels.
    Learned {
        method: Method,
        commander: Option<&'a CommanderPolicy>,
        low: &'a LowLevelPolicy,
        features: &'a RunningNormalizer,
    },
    /// Hungarian goals with prioritized grid planning.
    Astar,
    /// Hungarian goals with uniformly random actions.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub episodes: usize,
    pub success: f64,
    pub collision: Option<f64>,
}

/// Means and population standard deviations across seeds of the per-seed
/// episode averages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_seed: Vec<SeedResult>,
    pub success_mean: f64,
    pub success_std: f64,
    pub collision_mean: Option<f64>,
    pub collision_std: Option<f64>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl EvalReport {
    pub fn from_seeds(per_seed: Vec<SeedResult>) -> Self {
        let success: Vec<f64> = per_seed.iter().map(|s| s.success).collect();
        let (success_mean, success_std) = mean_std(&success);
        let coll: Option<Vec<f64>> = per_seed.iter().map(|s| s.collision).collect();
        let coll = coll.filter(|c| !c.is_empty()).map(|c| mean_std(&c));
        Self {
            per_seed,
            success_mean,
            success_std,
            collision_mean: coll.map(|c| c.0),
            collision_std: coll.map(|c| c.1),
        }
    }

    /// `mean (std)` lines, two decimals.
    pub fn summary(&self) -> String {
        let mut s = format!("success_rate {:.2} ({:.2})\n", self.success_mean, self.success_std);
        if let (Some(m), Some(d)) = (self.collision_mean, self.collision_std) {
            s.push_str(&format!("collision_rate {m:.2} ({d:.2})\n"));
        }
        s
    }
}

/// Plays `episodes` episodes for every seed. Episode layouts depend only on
/// the seed, so different controllers see identical spawns.
pub fn evaluate(controller: &Controller<'_>, env: &EnvConfig, episodes: usize, seeds: &[u64]) -> Result<EvalReport> {
    env.validate()?;
    if episodes == 0 || seeds.is_empty() {
        return Err(Error::Config("evaluation needs at least one episode and one seed".into()));
    }
    if matches!(controller, Controller::Astar) && env.task == Task::Drone {
        return Err(Error::Config("the grid planner supports the particle tasks only".into()));
    }
    let mut per_seed = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut layouts = ChaCha8Rng::seed_from_u64(seed);
        let mut policy_rng = ChaCha8Rng::seed_from_u64(seed);
        policy_rng.set_stream(1);
        let mut success = 0.0;
        let mut collision = 0.0;
        for _ in 0..episodes {
            let env_seed: u64 = layouts.gen();
            let state = play(controller, env, env_seed, &mut policy_rng)?;
            success += success_rate(&state);
            if env.task == Task::Drone {
                collision += collision_rate(&state, env)?;
            }
        }
        let k = episodes as f64;
        per_seed.push(SeedResult {
            seed,
            episodes,
            success: success / k,
            collision: (env.task == Task::Drone).then_some(collision / k),
        });
    }
    Ok(EvalReport::from_seeds(per_seed))
}

/// Runs one episode to the end and returns the final state.
pub fn play(controller: &Controller<'_>, env: &EnvConfig, seed: u64, rng: &mut ChaCha8Rng) -> Result<WorldState> {
    Ok(play_recorded(controller, env, seed, rng, false)?.0)
}

/// [`play`], optionally keeping a replayable trajectory of the episode.
pub fn play_recorded(
    controller: &Controller<'_>,
    env: &EnvConfig,
    seed: u64,
    rng: &mut ChaCha8Rng,
    record: bool,
) -> Result<(WorldState, Option<TrajectoryRecorder>)> {
    match *controller {
        Controller::Astar => {
            let ep = run_astar_episode_recorded(env, seed, record)?;
            Ok((ep.final_state, ep.trajectory))
        }
        Controller::Random => {
            let mut state = reset(env, seed)?;
            assign_hungarian(&mut state)?;
            let mut rec = record.then(|| TrajectoryRecorder::new(env, seed, &state));
            let k = env.num_actions();
            loop {
                let actions: Vec<usize> = (0..env.n_agents).map(|_| rng.gen_range(0..k)).collect();
                if advance(&mut state, &actions, env, &mut rec)? {
                    return Ok((state, rec));
                }
            }
        }
        Controller::Learned { method, commander, low, features } => {
            let mut state = reset(env, seed)?;
            assign_episode(method, commander, env, &mut state, DecodeMode::Greedy, rng)?;
            let mut rec = record.then(|| TrajectoryRecorder::new(env, seed, &state));
            let n = env.n_agents;
            let mut hidden = Tensor::zeros(&[n, FEATURE]);
            loop {
                let rows: Vec<Tensor> = low
                    .raw_inputs(env, &state)
                    .iter()
                    .map(|r| Tensor::row(features.normalize(r)))
                    .collect();
                let x = stack_rows(&rows, low.input_len());
                let noise = low.sample_noise(1, rng);
                let (logits, next) = {
                    let mut tape = Tape::new();
                    let bound = low.params().bind(&mut tape);
                    let xv = tape.leaf_ref(&x, false);
                    let hv = tape.leaf_ref(&hidden, false);
                    let heads = low.forward(&mut tape, &bound, xv, hv, &noise)?;
                    (tape.value(heads.logits).clone(), tape.value(heads.hidden).clone())
                };
                logits.check_finite("policy logits during evaluation")?;
                hidden = next;
                let (actions, _) = act(&logits, true, rng);
                if advance(&mut state, &actions, env, &mut rec)? {
                    return Ok((state, rec));
                }
            }
        }
    }
}

/// Steps the episode, records it when asked, and reports whether it ended.
fn advance(state: &mut WorldState, actions: &[usize], env: &EnvConfig, rec: &mut Option<TrajectoryRecorder>) -> Result<bool> {
    let r = step(state, actions, env)?;
    if let Some(rec) = rec.as_mut() {
        rec.record(actions, &r.rewards, state);
    }
    Ok(r.done)
}
