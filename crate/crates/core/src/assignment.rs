//! Goal assignment: an exact O(n^3) Hungarian solver, a brute-force oracle,
//! uniform random assignment, and the Hungarian-relative commander reward.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::nn::is_permutation;

/// Lower clamp for the commander reward when the optimal cost is zero.
pub const COMMANDER_REWARD_FLOOR: f64 = -100.0;

/// Square, non-negative agent-to-goal cost matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostMatrix {
    n: usize,
    cost: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return shape_err("empty cost matrix");
        }
        let mut cost = Vec::with_capacity(n * n);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != n {
                return shape_err(format!("cost row {i} has {} entries, expected {n}", r.len()));
            }
            for &c in r {
                if !(c >= 0.0) || !c.is_finite() {
                    return Err(Error::Input(format!("cost {c} in row {i} is not a finite non-negative value")));
                }
            }
            cost.extend_from_slice(r);
        }
        Ok(Self { n, cost })
    }

    /// Euclidean distances from each agent to each goal.
    pub fn from_positions(agents: &[Vec<f64>], goals: &[Vec<f64>]) -> Result<Self> {
        if agents.len() != goals.len() {
            return shape_err(format!("{} agents for {} goals", agents.len(), goals.len()));
        }
        let rows = agents
            .iter()
            .map(|a| goals.iter().map(|g| euclidean(a, g)).collect())
            .collect();
        Self::new(rows)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.cost[i * self.n + j]
    }

    /// `sum_i cost[i][perm[i]]`.
    pub fn total(&self, perm: &[usize]) -> f64 {
        perm.iter().enumerate().map(|(i, &j)| self.get(i, j)).sum()
    }

    pub fn assignment(&self, perm: Vec<usize>) -> Result<Assignment> {
        if !is_permutation(&perm, self.n) {
            return Err(Error::Input(format!("{perm:?} is not a permutation of 0..{}", self.n)));
        }
        let total_cost = self.total(&perm);
        Ok(Assignment { perm, total_cost })
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `perm[i]` is the goal of agent `i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub perm: Vec<usize>,
    pub total_cost: f64,
}

/// Minimum-cost perfect matching by shortest augmenting paths with dual
/// potentials. O(n^3).
pub fn hungarian(cost: &CostMatrix) -> Assignment {
    let n = cost.n;
    // 1-based with column 0 as a virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost.get(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0; n];
    for j in 1..=n {
        perm[row_of[j] - 1] = j - 1;
    }
    let total_cost = cost.total(&perm);
    Assignment { perm, total_cost }
}

/// Exhaustive minimum over all `n!` permutations, `n <= 9`. Ties go to the
/// lexicographically smallest permutation.
pub fn brute_force(cost: &CostMatrix) -> Result<Assignment> {
    let n = cost.n;
    if n > 9 {
        return Err(Error::Size(format!("brute force limited to n <= 9, got {n}")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = perm.clone();
    let mut best_cost = cost.total(&perm);
    // Lexicographic successor enumeration keeps the first minimum found.
    while next_permutation(&mut perm) {
        let c = cost.total(&perm);
        if c < best_cost {
            best_cost = c;
            best.clone_from(&perm);
        }
    }
    Ok(Assignment { perm: best, total_cost: best_cost })
}

/// Advances `p` to its lexicographic successor; false when `p` was the last.
pub fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Uniform random permutation (Fisher-Yates) scored on `cost`.
pub fn random_assignment<R: Rng + ?Sized>(cost: &CostMatrix, rng: &mut R) -> Assignment {
    let perm = random_permutation(cost.n, rng);
    let total_cost = cost.total(&perm);
    Assignment { perm, total_cost }
}

pub fn random_permutation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    perm
}

/// `1 - c_assign / c_hungarian`, clamped to `[-100, 0]` in the zero-cost case.
pub fn commander_reward(c_assign: f64, c_hungarian: f64) -> f64 {
    if c_hungarian > 0.0 {
        1.0 - c_assign / c_hungarian
    } else if c_assign <= 0.0 {
        0.0
    } else {
        COMMANDER_REWARD_FLOOR
    }
}
