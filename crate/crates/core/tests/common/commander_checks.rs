//! Commander reward identities and Plackett-Luce normalization.

use magex::assignment::{commander_reward, hungarian, next_permutation, CostMatrix};
use magex::commander::{decode_greedy, plackett_luce_log_prob};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Goal probabilities whose greedy decode hands agent `i` goal `perm[i]`.
pub fn probabilities_decoding_to(perm: &[usize]) -> Vec<f64> {
    let n = perm.len();
    let total = (n * (n + 1) / 2) as f64;
    let mut p = vec![0.0; n];
    for (rank, &g) in perm.iter().enumerate() {
        p[g] = (n - rank) as f64 / total;
    }
    p
}

/// Largest |reward| when the decoded ranking is the optimal matching.
pub fn reward_at_optimum(trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let n = rng.gen_range(2..8);
        let pts = |rng: &mut ChaCha8Rng| (0..n).map(|_| vec![rng.gen_range(0.0..5.0), rng.gen_range(0.0..5.0)]).collect::<Vec<_>>();
        let (a, g) = (pts(&mut rng), pts(&mut rng));
        let cost = CostMatrix::from_positions(&a, &g).unwrap();
        let best = hungarian(&cost);
        let decoded = decode_greedy(&probabilities_decoding_to(&best.perm));
        assert_eq!(decoded, best.perm);
        worst = worst.max(commander_reward(cost.total(&decoded), best.total_cost).abs());
    }
    worst
}

/// Largest |reward + 1| over random optima when the cost doubles.
pub fn reward_at_double_cost(trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..trials)
        .map(|_| {
            let c: f64 = rng.gen_range(0.01..100.0);
            (commander_reward(2.0 * c, c) + 1.0).abs()
        })
        .fold(0.0, f64::max)
}

/// Largest |sum of ranking probabilities - 1| over random goal distributions.
pub fn plackett_luce_mass_error(max_n: usize, draws: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for n in 1..=max_n {
        for _ in 0..draws {
            let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0f64..3.0).exp()).collect();
            let s: f64 = raw.iter().sum();
            let p: Vec<f64> = raw.iter().map(|x| x / s).collect();
            let mut perm: Vec<usize> = (0..n).collect();
            let mut total = 0.0;
            loop {
                total += plackett_luce_log_prob(&p, &perm).exp();
                if !next_permutation(&mut perm) {
                    break;
                }
            }
            worst = worst.max((total - 1.0).abs());
        }
    }
    worst
}
