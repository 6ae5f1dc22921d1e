//! Two-level training: a commander stream with one transition per finished
//! episode, and a low-level stream with one transition per agent per step,
//! both updated with a clipped policy-gradient objective after every
//! collection round.

mod buffer;
mod checkpoint;
mod eval;
mod normalize;
mod policy;
mod ppo;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use buffer::{gae, gae_with_dones, CommanderBuffer, CommanderRecord, CommanderStage, RolloutBuffer, StepRecord};
pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use eval::{evaluate, play, play_recorded, Controller, EvalReport, SeedResult};
pub use normalize::{RunningNormalizer, FEATURE_CLIP};
pub use policy::{stack_noise, stack_rows, Heads, LowLevelPolicy};
pub use ppo::{
    categorical_terms, clipped_objective, normalize_advantages, parameter_gradients, LossStats, PpoBatch,
    PpoCoefficients,
};

use crate::assignment::{commander_reward, hungarian, random_permutation, CostMatrix};
use crate::commander::{commander_input, decide, CommanderPolicy, DecodeMode};
use crate::envs::{collision_rate, success_rate, Env, EnvConfig, Task, WorldState};
use crate::error::{Error, Result};
use crate::executor::{act, FEATURE};
use crate::nn::{adam_update, AdamState, Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Learned commander plus graph executor.
    MageX,
    /// Graph executor with uniformly random goal assignment.
    MageXRg,
    /// Graph executor with Hungarian goal assignment.
    HungarianTeacher,
    /// Flat recurrent policy; goals assigned by Hungarian for rewards.
    Flat,
    /// Prioritized grid planner, no learning.
    MaAstar,
}

impl Method {
    pub fn is_trainable(self) -> bool {
        self != Method::MaAstar
    }
}

/// Training hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    /// Commander learning rate; `lr` when unset.
    pub commander_lr: Option<f64>,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub max_grad_norm: f64,
    pub huber_delta: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub adam_eps: f64,
    pub reward_norm: bool,
    pub feature_norm: bool,
    pub threads: usize,
    pub local_steps: usize,
    pub total_env_steps: u64,
    /// Greedy evaluation every this many rounds; 0 disables it.
    pub eval_every_rounds: usize,
    pub eval_episodes: usize,
    pub gumbel_temperature: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2.5e-5,
            commander_lr: None,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip: 0.2,
            epochs: 4,
            minibatches: 1,
            max_grad_norm: 10.0,
            huber_delta: 10.0,
            value_coef: 1.0,
            entropy_coef: 0.01,
            adam_eps: 1e-5,
            reward_norm: true,
            feature_norm: true,
            threads: 10,
            local_steps: 15,
            total_env_steps: 300_000,
            eval_every_rounds: 50,
            eval_episodes: 20,
            gumbel_temperature: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.lr > 0.0) || self.commander_lr.is_some_and(|l| !(l > 0.0)) {
            return bad("learning rates must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gamma and gae_lambda must lie in [0, 1]");
        }
        if !(self.clip > 0.0) {
            return bad("clip must be positive");
        }
        if self.epochs == 0 || self.minibatches == 0 || self.threads == 0 || self.local_steps == 0 {
            return bad("epochs, minibatches, threads and local_steps must be positive");
        }
        if self.minibatches > self.threads * self.local_steps {
            return bad("more minibatches than step records per round");
        }
        if !(self.gumbel_temperature > 0.0) {
            return bad("gumbel_temperature must be positive");
        }
        Ok(())
    }

    pub fn coefficients(&self) -> PpoCoefficients {
        PpoCoefficients {
            clip: self.clip,
            value_coef: self.value_coef,
            entropy_coef: self.entropy_coef,
            huber_delta: self.huber_delta,
        }
    }
}

/// One line of the metrics stream.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub round: usize,
    pub env_steps: u64,
    /// Episodes finished during this round.
    pub episodes: usize,
    /// Mean final success over those episodes.
    pub success_rate: Option<f64>,
    pub collision_rate: Option<f64>,
    /// Mean over episodes of the per-agent summed raw reward.
    pub mean_episode_reward: Option<f64>,
    pub commander_reward_mean: Option<f64>,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub commander_policy_loss: Option<f64>,
    pub commander_value_loss: Option<f64>,
    pub eval_success_rate: Option<f64>,
    pub eval_collision_rate: Option<f64>,
    pub wall_clock_s: Option<f64>,
}

/// Picks goals (and balls on Push Ball) for a freshly reset state and returns
/// the commander transition describing the choice.
pub fn assign_episode<R: Rng + ?Sized>(
    method: Method,
    commander: Option<&CommanderPolicy>,
    env: &EnvConfig,
    state: &mut WorldState,
    mode: DecodeMode,
    rng: &mut R,
) -> Result<CommanderRecord> {
    let n = state.n_agents();
    let mut stages = Vec::new();
    let mut pick = |from: &[Vec<f64>], to: &[Vec<f64>], rng: &mut R| -> Result<Vec<usize>> {
        let cost = CostMatrix::from_positions(from, to)?;
        let best = hungarian(&cost);
        let (perm, log_prob, value, input) = match method {
            Method::MageX => {
                let policy = commander.ok_or_else(|| Error::Config("learned commander missing".into()))?;
                let input = commander_input(env, from, to)?;
                let d = decide(policy, &input, mode, rng)?;
                (d.perm, d.log_prob, d.value, input)
            }
            Method::MageXRg => (random_permutation(n, rng), 0.0, 0.0, Vec::new()),
            _ => (best.perm.clone(), 0.0, 0.0, Vec::new()),
        };
        let reward = commander_reward(cost.total(&perm), best.total_cost);
        stages.push(CommanderStage { input, perm: perm.clone(), log_prob, value, reward });
        Ok(perm)
    };
    if env.task == Task::PushBall {
        let ball_of = pick(&state.agent_pos, &state.ball_pos, rng)?;
        let carried: Vec<Vec<f64>> = ball_of.iter().map(|&b| state.ball_pos[b].clone()).collect();
        let goal_of = pick(&carried, &state.goal_pos, rng)?;
        crate::envs::assign(state, &goal_of, Some(&ball_of))?;
    } else {
        let goal_of = pick(&state.agent_pos, &state.goal_pos, rng)?;
        crate::envs::assign(state, &goal_of, None)?;
    }
    Ok(CommanderRecord { stages })
}

#[derive(Clone, Debug)]
struct Worker {
    env: Env,
    hidden: Tensor,
    rng: ChaCha8Rng,
    pending: CommanderRecord,
    episode_reward: f64,
}

/// Stream selector for per-run generators: 0 is the trainer's own stream,
/// workers use `1 + index`.
fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Statistics of one collection-and-update round.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RoundStats {
    pub executor_records: usize,
    pub commander_records: usize,
    pub metrics: MetricsRecord,
}

pub struct Trainer {
    pub method: Method,
    pub env: EnvConfig,
    pub cfg: TrainConfig,
    pub commander: Option<CommanderPolicy>,
    pub low: LowLevelPolicy,
    pub features: RunningNormalizer,
    /// Running statistics of low-level returns, used to standardize value targets.
    pub returns: RunningNormalizer,
    pub round: usize,
    pub env_steps: u64,
    low_adam: AdamState,
    commander_adam: Option<AdamState>,
    rng: ChaCha8Rng,
    workers: Vec<Worker>,
}

impl Trainer {
    pub fn new(method: Method, env: EnvConfig, cfg: TrainConfig) -> Result<Self> {
        env.validate()?;
        cfg.validate()?;
        if !method.is_trainable() {
            return Err(Error::Config(format!("{method:?} has nothing to train")));
        }
        let mut rng = stream_rng(cfg.seed, 0);
        let commander = (method == Method::MageX).then(|| CommanderPolicy::new(env.n_agents, env.dim(), &mut rng));
        let low = match method {
            Method::Flat => LowLevelPolicy::flat(&env, &mut rng),
            _ => LowLevelPolicy::executor(&env, cfg.gumbel_temperature, &mut rng),
        };
        let low_adam = AdamState::new(low.params(), cfg.lr, cfg.adam_eps, cfg.max_grad_norm);
        let commander_adam = commander.as_ref().map(|c| {
            AdamState::new(&c.params, cfg.commander_lr.unwrap_or(cfg.lr), cfg.adam_eps, cfg.max_grad_norm)
        });
        let features = RunningNormalizer::new(low.input_len(), cfg.feature_norm);
        let returns = RunningNormalizer::new(1, cfg.reward_norm);
        let mut trainer = Self {
            method,
            env,
            cfg,
            commander,
            low,
            features,
            returns,
            round: 0,
            env_steps: 0,
            low_adam,
            commander_adam,
            rng,
            workers: Vec::new(),
        };
        for w in 0..trainer.cfg.threads {
            let mut wrng = stream_rng(trainer.cfg.seed, 1 + w as u64);
            let seed = wrng.gen();
            let env = Env::new(trainer.env.clone(), seed)?;
            let mut worker = Worker {
                env,
                hidden: Tensor::zeros(&[trainer.env.n_agents, FEATURE]),
                rng: wrng,
                pending: CommanderRecord { stages: Vec::new() },
                episode_reward: 0.0,
            };
            worker.pending = assign_episode(
                method,
                trainer.commander.as_ref(),
                &trainer.env,
                &mut worker.env.state,
                DecodeMode::Sample,
                &mut worker.rng,
            )?;
            trainer.workers.push(worker);
        }
        Ok(trainer)
    }

    pub fn is_done(&self) -> bool {
        self.env_steps >= self.cfg.total_env_steps
    }

    /// Collects `threads x local_steps` env steps and returns the buffers.
    pub fn collect(&mut self) -> Result<(RolloutBuffer, CommanderBuffer, Vec<Vec<f64>>, Vec<EpisodeSummary>)> {
        let n = self.env.n_agents;
        let d = self.low.input_len();
        let threads = self.workers.len();
        let mut buf = RolloutBuffer::new(threads, self.cfg.local_steps, n);
        let mut cbuf = CommanderBuffer::default();
        let mut raw_rows = Vec::with_capacity(threads * self.cfg.local_steps * n);
        let mut finished = Vec::new();
        for _ in 0..self.cfg.local_steps {
            let mut inputs = Vec::with_capacity(threads);
            for w in &self.workers {
                let raw = self.low.raw_inputs(&self.env, &w.env.state);
                let rows: Vec<f64> = raw.iter().flat_map(|r| self.features.normalize(r)).collect();
                raw_rows.extend(raw);
                inputs.push(Tensor::matrix(n, d, rows)?);
            }
            let noise: Vec<Vec<Tensor>> = self.workers.iter_mut().map(|w| self.low.sample_noise(1, &mut w.rng)).collect();
            let (logits, values, hidden) = self.policy_step(&inputs, &noise)?;
            for (wi, w) in self.workers.iter_mut().enumerate() {
                let rows = wi * n..(wi + 1) * n;
                let lg = Tensor::matrix(n, logits.cols(), logits.data()[rows.start * logits.cols()..rows.end * logits.cols()].to_vec())?;
                let (actions, log_probs) = act(&lg, false, &mut w.rng);
                let res = w.env.step(&actions)?;
                w.episode_reward += res.rewards.iter().sum::<f64>() / n as f64;
                let next_hidden = Tensor::matrix(n, FEATURE, hidden.data()[rows.start * FEATURE..rows.end * FEATURE].to_vec())?;
                let record = StepRecord {
                    inputs: inputs[wi].clone(),
                    hidden: std::mem::replace(&mut w.hidden, next_hidden),
                    noise: noise[wi].clone(),
                    actions,
                    log_probs,
                    values: values[rows].to_vec(),
                    rewards: res.rewards,
                    done: res.done,
                };
                buf.push(wi, record)?;
                if res.done {
                    let state = &w.env.state;
                    finished.push(EpisodeSummary {
                        success: success_rate(state),
                        collision: collision_rate(state, &self.env).ok(),
                        reward: w.episode_reward,
                        commander_reward: w.pending.stages.iter().map(|s| s.reward).sum::<f64>()
                            / w.pending.stages.len() as f64,
                    });
                    let seed = w.rng.gen();
                    w.env.reset(seed)?;
                    let next = assign_episode(
                        self.method,
                        self.commander.as_ref(),
                        &self.env,
                        &mut w.env.state,
                        DecodeMode::Sample,
                        &mut w.rng,
                    )?;
                    cbuf.records.push(std::mem::replace(&mut w.pending, next));
                    w.hidden = Tensor::zeros(&[n, FEATURE]);
                    w.episode_reward = 0.0;
                }
            }
            self.env_steps += threads as u64;
        }
        // Value of the state after the last step, for bootstrapping.
        let mut inputs = Vec::with_capacity(threads);
        for w in &self.workers {
            let raw = self.low.raw_inputs(&self.env, &w.env.state);
            let rows: Vec<f64> = raw.iter().flat_map(|r| self.features.normalize(r)).collect();
            inputs.push(Tensor::matrix(n, d, rows)?);
        }
        let noise: Vec<Vec<Tensor>> = self.workers.iter_mut().map(|w| self.low.sample_noise(1, &mut w.rng)).collect();
        let (_, values, _) = self.policy_step(&inputs, &noise)?;
        for wi in 0..threads {
            buf.bootstrap[wi] = values[wi * n..(wi + 1) * n].to_vec();
        }
        Ok((buf, cbuf, raw_rows, finished))
    }

    /// Batched forward over all workers: `(logits, values, next hidden)`.
    fn policy_step(&self, inputs: &[Tensor], noise: &[Vec<Tensor>]) -> Result<(Tensor, Vec<f64>, Tensor)> {
        let n = self.env.n_agents;
        let x = stack_rows(inputs, self.low.input_len());
        let h = stack_rows(self.workers.iter().map(|w| &w.hidden), FEATURE);
        let blocks = noise.first().map_or(0, Vec::len);
        let nz = stack_noise(noise.iter().map(Vec::as_slice), blocks, n);
        let mut tape = Tape::new();
        let bound = self.low.params().bind(&mut tape);
        let xv = tape.leaf_ref(&x, false);
        let hv = tape.leaf_ref(&h, false);
        let heads = self.low.forward(&mut tape, &bound, xv, hv, &nz)?;
        let logits = tape.value(heads.logits).clone();
        logits.check_finite("policy logits during rollout")?;
        Ok((logits, tape.value(heads.values).data().to_vec(), tape.value(heads.hidden).clone()))
    }

    /// Clipped-surrogate epochs over the low-level buffer.
    pub fn update_low(&mut self, buf: &RolloutBuffer) -> Result<LossStats> {
        let n = self.env.n_agents;
        let stats_before = self.returns.clone();
        let (mut adv, ret) = buf.advantages(self.cfg.gamma, self.cfg.gae_lambda, |v| stats_before.unstandardize(v));
        normalize_advantages(&mut adv);
        // The value head regresses standardized returns.
        self.returns.update(ret.iter().map(std::slice::from_ref));
        let ret: Vec<f64> = ret.iter().map(|&g| self.returns.standardize(g)).collect();
        let records: Vec<&StepRecord> = buf.iter().collect();
        let mut order: Vec<usize> = (0..records.len()).collect();
        let coef = self.cfg.coefficients();
        let mut stats = LossStats::default();
        let mut count = 0.0;
        for _ in 0..self.cfg.epochs {
            order.shuffle(&mut self.rng);
            let chunk = order.len().div_ceil(self.cfg.minibatches);
            for mb in order.chunks(chunk) {
                let x = stack_rows(mb.iter().map(|&i| &records[i].inputs), self.low.input_len());
                let h = stack_rows(mb.iter().map(|&i| &records[i].hidden), FEATURE);
                let blocks = records[0].noise.len();
                let nz = stack_noise(mb.iter().map(|&i| records[i].noise.as_slice()), blocks, n);
                let actions: Vec<usize> = mb.iter().flat_map(|&i| records[i].actions.iter().copied()).collect();
                let old: Vec<f64> = mb.iter().flat_map(|&i| records[i].log_probs.iter().copied()).collect();
                let a: Vec<f64> = mb.iter().flat_map(|&i| adv[i * n..(i + 1) * n].iter().copied()).collect();
                let r: Vec<f64> = mb.iter().flat_map(|&i| ret[i * n..(i + 1) * n].iter().copied()).collect();
                let (grads, s) = {
                    let mut tape = Tape::new();
                    let bound = self.low.params().bind(&mut tape);
                    let xv = tape.leaf_ref(&x, false);
                    let hv = tape.leaf_ref(&h, false);
                    let heads = self.low.forward(&mut tape, &bound, xv, hv, &nz)?;
                    let (logp, ent) = categorical_terms(&mut tape, heads.logits, &actions)?;
                    let batch = PpoBatch { old_log_probs: &old, advantages: &a, returns: &r };
                    let (loss, s) = clipped_objective(&mut tape, logp, ent, heads.values, &batch, &coef)?;
                    (parameter_gradients(&tape, loss, &bound)?, s)
                };
                adam_update(&mut self.low_adam, self.low.params_mut(), grads)?;
                stats.policy_loss += s.policy_loss;
                stats.value_loss += s.value_loss;
                stats.entropy += s.entropy;
                stats.clip_fraction += s.clip_fraction;
                count += 1.0;
            }
        }
        stats.policy_loss /= count;
        stats.value_loss /= count;
        stats.entropy /= count;
        stats.clip_fraction /= count;
        Ok(stats)
    }

    /// Clipped-surrogate epochs over the commander transitions; the
    /// advantage of a one-step episode is `reward - value`.
    pub fn update_commander(&mut self, cbuf: &CommanderBuffer) -> Result<Option<LossStats>> {
        let (Some(policy), Some(adam)) = (self.commander.as_mut(), self.commander_adam.as_mut()) else {
            return Ok(None);
        };
        let stages: Vec<&CommanderStage> = cbuf.stages().collect();
        if stages.is_empty() {
            return Ok(None);
        }
        let x = Tensor::from_rows(&stages.iter().map(|s| s.input.clone()).collect::<Vec<_>>())?;
        let perms: Vec<Vec<usize>> = stages.iter().map(|s| s.perm.clone()).collect();
        let firsts: Vec<usize> = perms.iter().map(|p| p[0]).collect();
        let old: Vec<f64> = stages.iter().map(|s| s.log_prob).collect();
        let ret: Vec<f64> = stages.iter().map(|s| s.reward).collect();
        let mut adv: Vec<f64> = stages.iter().map(|s| s.reward - s.value).collect();
        normalize_advantages(&mut adv);
        let coef = self.cfg.coefficients();
        let mut stats = LossStats::default();
        for _ in 0..self.cfg.epochs {
            let (grads, s) = {
                let mut tape = Tape::new();
                let bound = policy.params.bind(&mut tape);
                let xv = tape.leaf_ref(&x, false);
                let logits = policy.logits(&mut tape, &bound, xv)?;
                let logp = tape.plackett_luce(logits, &perms)?;
                let (_, ent) = categorical_terms(&mut tape, logits, &firsts)?;
                let values = policy.values(&mut tape, &bound, xv)?;
                let batch = PpoBatch { old_log_probs: &old, advantages: &adv, returns: &ret };
                let (loss, s) = clipped_objective(&mut tape, logp, ent, values, &batch, &coef)?;
                (parameter_gradients(&tape, loss, &bound)?, s)
            };
            adam_update(adam, &mut policy.params, grads)?;
            stats = s;
        }
        Ok(Some(stats))
    }

    /// One collection round followed by the updates of both levels.
    pub fn run_round(&mut self) -> Result<RoundStats> {
        let (buf, cbuf, raw_rows, finished) = self.collect()?;
        let low = self.update_low(&buf)?;
        let cmd = self.update_commander(&cbuf)?;
        self.features.update(raw_rows.iter().map(Vec::as_slice));
        self.round += 1;
        let mean = |xs: Vec<f64>| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
        let mut metrics = MetricsRecord {
            round: self.round,
            env_steps: self.env_steps,
            episodes: finished.len(),
            success_rate: mean(finished.iter().map(|e| e.success).collect()),
            collision_rate: mean(finished.iter().filter_map(|e| e.collision).collect()),
            mean_episode_reward: mean(finished.iter().map(|e| e.reward).collect()),
            commander_reward_mean: mean(finished.iter().map(|e| e.commander_reward).collect()),
            policy_loss: low.policy_loss,
            value_loss: low.value_loss,
            entropy: low.entropy,
            commander_policy_loss: cmd.map(|s| s.policy_loss),
            commander_value_loss: cmd.map(|s| s.value_loss),
            ..MetricsRecord::default()
        };
        let eval_due = self.cfg.eval_every_rounds > 0
            && (self.round.is_multiple_of(self.cfg.eval_every_rounds) || self.is_done());
        if eval_due && self.cfg.eval_episodes > 0 {
            let report = evaluate(&self.controller(), &self.env, self.cfg.eval_episodes, &[self.eval_seed()])?;
            metrics.eval_success_rate = Some(report.success_mean);
            metrics.eval_collision_rate = report.collision_mean;
        }
        Ok(RoundStats { executor_records: buf.agent_records(), commander_records: cbuf.len(), metrics })
    }

    /// Seed of the held-out evaluation episodes run during training.
    pub fn eval_seed(&self) -> u64 {
        self.cfg.seed.wrapping_add(1_000_003)
    }

    pub fn controller(&self) -> Controller<'_> {
        Controller::Learned {
            method: self.method,
            commander: self.commander.as_ref(),
            low: &self.low,
            features: &self.features,
        }
    }

    /// Runs rounds until the step budget is spent, passing each record to `sink`.
    pub fn train(&mut self, mut sink: impl FnMut(&MetricsRecord) -> Result<()>) -> Result<()> {
        while !self.is_done() {
            let stats = self.run_round()?;
            sink(&stats.metrics)?;
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            method: self.method,
            env: self.env.clone(),
            train: self.cfg.clone(),
            round: self.round,
            env_steps: self.env_steps,
            commander: self.commander.clone(),
            low: self.low.clone(),
            features: self.features.clone(),
            returns: self.returns.clone(),
            rng: self.rng.clone(),
            worker_rngs: self.workers.iter().map(|w| w.rng.clone()).collect(),
        }
    }
}

/// Outcome of one finished training episode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeSummary {
    pub success: f64,
    pub collision: Option<f64>,
    pub reward: f64,
    pub commander_reward: f64,
}
