//! Optimal agent-to-goal matching against exhaustive search and random matching.
//!
//! cargo run --release --example hungarian_assignment

use magex::assignment::{brute_force, commander_reward, hungarian, random_assignment, CostMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> magex::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let agents: Vec<Vec<f64>> = (0..6).map(|_| vec![rng.gen_range(0.0..4.0), rng.gen_range(0.0..4.0)]).collect();
    let goals: Vec<Vec<f64>> = (0..6).map(|_| vec![rng.gen_range(0.0..4.0), rng.gen_range(0.0..4.0)]).collect();
    let cost = CostMatrix::from_positions(&agents, &goals)?;

    let best = hungarian(&cost);
    let exhaustive = brute_force(&cost)?;
    let random = random_assignment(&cost, &mut rng);
    println!("hungarian   perm {:?} cost {:.4}", best.perm, best.total_cost);
    println!("brute force perm {:?} cost {:.4}", exhaustive.perm, exhaustive.total_cost);
    println!("random      perm {:?} cost {:.4}", random.perm, random.total_cost);
    // The commander's reward for a matching is 1 - cost / optimal cost.
    println!("commander reward: optimal {:.3}, random {:.3}",
        commander_reward(best.total_cost, best.total_cost),
        commander_reward(random.total_cost, best.total_cost));
    Ok(())
}
