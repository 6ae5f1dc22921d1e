//! Acceptance suite. Every criterion runs at its stated tolerance and prints
//! one PASS/FAIL line; the test fails if any criterion fails. Criteria run
//! in order inside one test so the timed ones are not competing for the CPU.
//!
//! The desk-scale learning criterion trains 9 runs of 300k steps and takes
//! roughly half an hour on one core.

mod common;

use std::io::Write;
use std::time::{Duration, Instant};

use common::commander_checks::{plackett_luce_mass_error, reward_at_double_cost, reward_at_optimum};
use common::env_checks::{check_task, task_configs};
use common::executor_ref::{adjacency_rows_one_hot, equivariance_error, reference_block_error};
use common::grad::{worst_over_draws, DRAWS, PRIMITIVES, TOLERANCE};
use magex::assignment::{brute_force, hungarian, CostMatrix};
use magex::envs::{EnvConfig, Task, DRONE_MAX_SPEED};
use magex::trainer::{evaluate, gae, Controller, Method, TrainConfig, Trainer};
use magex::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(id: &str, name: &str, outcome: &Result<Outcome>) -> bool {
    let (pass, detail) = match outcome {
        Ok(o) => (o.pass, o.detail.clone()),
        Err(e) => (false, format!("error: {e}")),
    };
    let line = format!("acceptance {id} {name}: {} ({detail})\n", if pass { "PASS" } else { "FAIL" });
    // Written straight to the stream so it shows without --nocapture.
    let _ = std::io::stderr().write_all(line.as_bytes());
    pass
}

fn assignment_oracle() -> Result<Outcome> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mismatches = 0;
    for n in 3..=7 {
        for _ in 0..1000 {
            let rows = (0..n).map(|_| (0..n).map(|_| rng.gen_range(0.0..100.0)).collect()).collect();
            let cost = CostMatrix::new(rows)?;
            if hungarian(&cost).total_cost != brute_force(&cost)?.total_cost {
                mismatches += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    Ok(Outcome {
        pass: mismatches == 0 && elapsed < Duration::from_secs(10),
        detail: format!("{mismatches} mismatches in 5000 matrices, {:.2}s", elapsed.as_secs_f64()),
    })
}

fn gradient_suite() -> Result<Outcome> {
    let mut parts = Vec::new();
    let mut pass = true;
    for (name, check) in PRIMITIVES {
        let worst = worst_over_draws(check);
        pass &= worst < TOLERANCE;
        parts.push(format!("{name} {worst:.1e}"));
    }
    Ok(Outcome { pass, detail: format!("worst relative error over {DRAWS} draws: {}", parts.join(", ")) })
}

fn executor_structure() -> Result<Outcome> {
    let mut equi: f64 = 0.0;
    for n in 2..=4 {
        for seed in 0..5 {
            equi = equi.max(equivariance_error(n, seed)?);
        }
    }
    let mut one_hot = true;
    for n in 1..=6 {
        one_hot &= adjacency_rows_one_hot(n, 4, 100 + n as u64)?;
    }
    let mut block: f64 = 0.0;
    for seed in 0..10 {
        block = block.max(reference_block_error(3, seed)?);
    }
    Ok(Outcome {
        pass: equi < 1e-8 && one_hot && block < 1e-10,
        detail: format!("equivariance {equi:.1e}, one-hot rows {one_hot}, block vs reference {block:.1e}"),
    })
}

fn commander_identities() -> Result<Outcome> {
    let at_opt = reward_at_optimum(1000, 4);
    let at_double = reward_at_double_cost(1000, 5);
    let mass = plackett_luce_mass_error(5, 200, 6);
    Ok(Outcome {
        pass: at_opt == 0.0 && at_double < 1e-15 && mass < 1e-9,
        detail: format!("|R| at optimum {at_opt:e}, |R+1| at double cost {at_double:.1e}, ranking mass error {mass:.1e}"),
    })
}

fn environment_bounds() -> Result<Outcome> {
    let mut pass = true;
    let mut parts = Vec::new();
    for cfg in task_configs()? {
        let c = check_task(&cfg, 100)?;
        let speed_ok = cfg.task != Task::Drone || c.max_speed <= DRONE_MAX_SPEED;
        pass &= c.replay_identical && c.rerun_identical && c.in_bounds && speed_ok;
        let mut part = format!("{:?}: replay {} rerun {} bounds {}", cfg.task, c.replay_identical, c.rerun_identical, c.in_bounds);
        if cfg.task == Task::Drone {
            part += &format!(" top speed {:.3}", c.max_speed);
        }
        parts.push(part);
    }
    Ok(Outcome { pass, detail: format!("100 episodes per task; {}", parts.join("; ")) })
}

fn planner_success() -> Result<Outcome> {
    let start = Instant::now();
    let env = EnvConfig::preset(Task::SimpleSpread, 5)?;
    let r = evaluate(&Controller::Astar, &env, 100, &[0, 1, 2])?;
    let elapsed = start.elapsed();
    Ok(Outcome {
        pass: r.success_mean >= 0.95 && elapsed < Duration::from_secs(120),
        detail: format!("success {:.3} ({:.3}) over 3x100 episodes, {:.1}s", r.success_mean, r.success_std, elapsed.as_secs_f64()),
    })
}

const LEARNING_STEPS: u64 = 300_000;
const LEARNING_SEEDS: [u64; 3] = [0, 1, 2];
const EVAL_EPISODES: usize = 100;

/// Trains one run and returns its greedy success on held-out layouts.
fn trained_success(method: Method, env: &EnvConfig, seed: u64) -> Result<f64> {
    let cfg = TrainConfig { lr: 1e-3, total_env_steps: LEARNING_STEPS, eval_every_rounds: 0, seed, ..TrainConfig::default() };
    let mut trainer = Trainer::new(method, env.clone(), cfg)?;
    trainer.train(|_| Ok(()))?;
    Ok(evaluate(&trainer.controller(), env, EVAL_EPISODES, &[10_000 + seed])?.success_mean)
}

fn desk_scale_learning() -> Result<Outcome> {
    let start = Instant::now();
    let small = EnvConfig::new(Task::SimpleSpread, 3, 3.0, 40);
    let mut reached = Vec::new();
    for seed in LEARNING_SEEDS {
        reached.push(trained_success(Method::MageX, &small, seed)?);
    }
    let hits = reached.iter().filter(|&&s| s >= 0.9).count();
    let part_a = hits >= 2 && start.elapsed() < Duration::from_secs(3600);
    let a_time = start.elapsed().as_secs_f64();

    // The ablation needs a layout where the matching matters; on three agents
    // random goals already solve it, so it runs on the five-agent preset.
    let five = EnvConfig::preset(Task::SimpleSpread, 5)?;
    let (mut learned, mut random) = (Vec::new(), Vec::new());
    for seed in LEARNING_SEEDS {
        learned.push(trained_success(Method::MageX, &five, seed)?);
        random.push(trained_success(Method::MageXRg, &five, seed)?);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let part_b = mean(&learned) > mean(&random);
    let fmt = |v: &[f64]| v.iter().map(|s| format!("{s:.2}")).collect::<Vec<_>>().join("/");
    Ok(Outcome {
        pass: part_a && part_b,
        detail: format!(
            "(a) N=3 success {} ({hits}/3 >= 0.9, {a_time:.0}s); (b) N=5 learned {} mean {:.3} vs random goals {} mean {:.3}",
            fmt(&reached),
            fmt(&learned),
            mean(&learned),
            fmt(&random),
            mean(&random)
        ),
    })
}

fn trainer_accounting() -> Result<Outcome> {
    let env = EnvConfig::new(Task::SimpleSpread, 3, 3.0, 40);
    let cfg = TrainConfig { total_env_steps: 150 * 12, eval_every_rounds: 0, ..TrainConfig::default() };
    let (threads, local) = (cfg.threads, cfg.local_steps);
    assert_eq!((threads, local), (10, 15));
    let mut trainer = Trainer::new(Method::MageX, env.clone(), cfg)?;
    let mut sizes_ok = true;
    let mut episodes = 0;
    let mut rounds = 0;
    while !trainer.is_done() {
        let s = trainer.run_round()?;
        rounds += 1;
        episodes += s.metrics.episodes;
        sizes_ok &= s.executor_records == threads * local * env.n_agents;
        sizes_ok &= s.commander_records == s.metrics.episodes;
        // Episodes end at the horizon, so completions follow from the step count.
        sizes_ok &= episodes == threads * (rounds * local / env.horizon);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut gae_err: f64 = 0.0;
    for _ in 0..200 {
        let len = rng.gen_range(1..30);
        let r: Vec<f64> = (0..len).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let v: Vec<f64> = (0..len).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let boot = rng.gen_range(-5.0..5.0);
        let gamma: f64 = rng.gen_range(0.0..1.0);
        let (td, _) = gae(&r, &v, boot, gamma, 0.0);
        let (imm, _) = gae(&r, &v, boot, 0.0, rng.gen_range(0.0..1.0));
        for t in 0..len {
            let next = if t + 1 == len { boot } else { v[t + 1] };
            gae_err = gae_err.max((td[t] - (r[t] + gamma * next - v[t])).abs());
            gae_err = gae_err.max((imm[t] - (r[t] - v[t])).abs());
        }
    }
    let (zero, _) = gae(&[0.0; 20], &[0.0; 20], 0.0, 0.99, 0.95);
    let zero_ok = zero.iter().all(|&a| a == 0.0);
    Ok(Outcome {
        pass: sizes_ok && gae_err < 1e-12 && zero_ok,
        detail: format!("{rounds} rounds of {threads}x{local}, sizes exact {sizes_ok}, {episodes} episodes; GAE identity error {gae_err:.1e}"),
    })
}

fn reproducibility() -> Result<Outcome> {
    let tmp = tempfile::tempdir()?;
    let same = common::repro::metrics_identical(tmp.path(), common::repro::SMALL_RUN)?;
    Ok(Outcome { pass: same, detail: "two seeds, metrics files compared byte for byte".into() })
}

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, &str, fn() -> Result<Outcome>); 9] = [
        ("1", "assignment oracle equivalence", assignment_oracle),
        ("2", "gradient suite", gradient_suite),
        ("3", "executor structural properties", executor_structure),
        ("4", "commander reward identities", commander_identities),
        ("5", "environment determinism and bounds", environment_bounds),
        ("6", "planner success on five-agent spread", planner_success),
        ("7", "desk-scale learning", desk_scale_learning),
        ("8", "trainer accounting", trainer_accounting),
        ("9", "reproducibility", reproducibility),
    ];
    let mut failed = Vec::new();
    for (id, name, run) in criteria {
        if !report(id, name, &run()) {
            failed.push(id);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
