//! Structural properties of the action executor.

mod common;

use common::executor_ref::{adjacency_rows_one_hot, equivariance_error, reference_block_error};
use magex::Result;

#[test]
fn relabeling_agents_relabels_outputs() -> Result<()> {
    for n in 2..=4 {
        for seed in 0..5 {
            let err = equivariance_error(n, seed)?;
            assert!(err < 1e-8, "n={n} seed={seed}: {err:e}");
        }
    }
    Ok(())
}

#[test]
fn sampled_adjacency_rows_are_one_hot() -> Result<()> {
    for n in 1..=6 {
        assert!(adjacency_rows_one_hot(n, 3, n as u64)?, "n={n}");
    }
    Ok(())
}

#[test]
fn block_matches_reference_computation() -> Result<()> {
    for seed in 0..10 {
        let err = reference_block_error(3, seed)?;
        assert!(err < 1e-10, "seed={seed}: {err:e}");
    }
    let err = reference_block_error(5, 42)?;
    assert!(err < 1e-10, "n=5: {err:e}");
    Ok(())
}
