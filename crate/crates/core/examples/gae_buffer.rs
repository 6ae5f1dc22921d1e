//! Generalized advantage estimation and its limiting cases.
//!
//! cargo run --release --example gae_buffer

use magex::trainer::{gae, gae_with_dones, RunningNormalizer};

fn main() {
    let rewards = [1.0, 0.0, -0.5, 2.0];
    let values = [0.5, 0.4, 0.1, 1.0];
    let (adv, ret) = gae(&rewards, &values, 0.3, 0.99, 0.95);
    println!("advantages {adv:.4?}\nreturns    {ret:.4?}");

    // Lambda 0 is the one-step TD error, lambda 1 the discounted return minus the value.
    let (td, _) = gae(&rewards, &values, 0.3, 0.99, 0.0);
    let (mc, _) = gae(&rewards, &values, 0.3, 0.99, 1.0);
    println!("td errors  {td:.4?}\nmc         {mc:.4?}");

    // An episode end after step 1 stops the second episode's credit flowing back.
    let (cut, _) = gae_with_dones(&rewards, &values, &[false, true, false, false], 0.3, 0.99, 0.95);
    println!("with reset {cut:.4?}");

    // Value targets are standardized by running return statistics.
    let mut norm = RunningNormalizer::new(1, true);
    let rows: Vec<[f64; 1]> = ret.iter().map(|&r| [r]).collect();
    norm.update(rows.iter().map(|r| &r[..]));
    let z: Vec<f64> = ret.iter().map(|&r| norm.standardize(r)).collect();
    println!("standardized returns {z:.4?}");
}
