//! Comparison methods: a flat shared-parameter recurrent policy and a
//! prioritized multi-agent A* planner.

mod astar;
mod flat;

pub use astar::{assign_hungarian, ma_astar, run_astar_episode, run_astar_episode_recorded, AstarEpisode, GridPlan};
pub use flat::{flat_policy_forward, FlatOutput, FlatPolicy};
