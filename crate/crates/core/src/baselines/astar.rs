//! Prioritized multi-agent A* over a space-time grid.
//!
//! Each agent plans on its own lattice `start + step * (i, j)`, which is
//! exactly the set of points its Up/Down/Left/Right actions reach, so a
//! planned move is one env action. Lattice points map to global grid cells of
//! side `step`, and a reservation table of `(cell, t)` claims plus swapped
//! edges keeps later agents out of earlier agents' way. The action set has
//! no stop, so waiting happens as a move out and back, which the search
//! finds on its own. Once at its goal an agent keeps stepping between free
//! cells next to it.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::assignment::{euclidean, hungarian, CostMatrix};
use crate::envs::{assign, reset, step, EnvConfig, Task, WorldState};
use crate::envs::trajectory::TrajectoryRecorder;
use crate::error::{Error, Result};

type Cell = (i64, i64);

/// Per-agent plans from `start_t` to the horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPlan {
    pub cell_size: f64,
    pub start_t: usize,
    /// Global cell of each agent at `start_t + k`, for the reserved prefix.
    pub cells: Vec<Vec<Cell>>,
    /// Planned continuous position after each action.
    pub positions: Vec<Vec<[f64; 2]>>,
    pub actions: Vec<Vec<usize>>,
    /// No conflict-free path was found; the agent stays near where it is.
    pub failed: Vec<bool>,
}

impl GridPlan {
    /// True when no two agents claim the same cell at the same time after
    /// the start, and no two agents swap cells along one edge.
    pub fn is_conflict_free(&self) -> bool {
        let mut seen = HashSet::new();
        for path in &self.cells {
            for (k, c) in path.iter().enumerate().skip(1) {
                if !seen.insert((*c, k)) {
                    return false;
                }
            }
        }
        let mut edges = HashSet::new();
        for path in &self.cells {
            for k in 1..path.len() {
                edges.insert((path[k - 1], path[k], k));
            }
        }
        for path in &self.cells {
            for k in 1..path.len() {
                if path[k - 1] != path[k] && edges.contains(&(path[k], path[k - 1], k)) {
                    return false;
                }
            }
        }
        true
    }
}

struct Lattice {
    origin: [f64; 2],
    h: f64,
    lo: [i64; 2],
    hi: [i64; 2],
    base: [i64; 2],
}

impl Lattice {
    fn new(origin: &[f64], h: f64, map: f64) -> Self {
        let o = [origin[0], origin[1]];
        let lo = [0, 1].map(|k| (-o[k] / h).ceil() as i64);
        let hi = [0, 1].map(|k| ((map - o[k]) / h).floor() as i64);
        let base = [0, 1].map(|k| (o[k] / h).floor() as i64);
        Self { origin: o, h, lo, hi, base }
    }

    fn inside(&self, p: Cell) -> bool {
        (self.lo[0]..=self.hi[0]).contains(&p.0) && (self.lo[1]..=self.hi[1]).contains(&p.1)
    }

    fn cell(&self, p: Cell) -> Cell {
        (self.base[0] + p.0, self.base[1] + p.1)
    }

    fn point(&self, p: Cell) -> [f64; 2] {
        [self.origin[0] + p.0 as f64 * self.h, self.origin[1] + p.1 as f64 * self.h]
    }

    fn nearest(&self, target: &[f64]) -> Cell {
        let r = |k: usize| {
            (((target[k] - self.origin[k]) / self.h).round() as i64).clamp(self.lo[k], self.hi[k])
        };
        (r(0), r(1))
    }
}

const MOVES: [(Cell, usize); 4] = [((0, 1), 0), ((0, -1), 1), ((-1, 0), 2), ((1, 0), 3)];

#[derive(Default)]
struct Reservations {
    cells: HashSet<(Cell, usize)>,
    edges: HashSet<(Cell, Cell, usize)>,
}

impl Reservations {
    fn free(&self, from: Cell, to: Cell, t: usize) -> bool {
        !self.cells.contains(&(to, t)) && !self.edges.contains(&(to, from, t))
    }

    fn claim(&mut self, from: Cell, to: Cell, t: usize) {
        self.cells.insert((to, t));
        self.edges.insert((from, to, t));
    }
}

fn manhattan(a: Cell, b: Cell) -> i64 {
    (a.0 - b.0).abs() + (a.1 - b.1).abs()
}

/// Space-time A* on one lattice; returns the lattice path including the start.
fn search(lat: &Lattice, goal: Cell, steps: usize, res: &Reservations) -> Option<Vec<Cell>> {
    let start = (0, 0);
    let mut open = BinaryHeap::new();
    let mut parent: HashMap<(Cell, usize), Cell> = HashMap::new();
    let mut closed: HashSet<(Cell, usize)> = HashSet::new();
    let mut tie = 0u64;
    open.push(Reverse((manhattan(start, goal), tie, start, 0usize)));
    while let Some(Reverse((_, _, p, t))) = open.pop() {
        if !closed.insert((p, t)) {
            continue;
        }
        if p == goal {
            let mut path = vec![p];
            let mut cur = (p, t);
            while cur.1 > 0 {
                let prev = parent[&cur];
                path.push(prev);
                cur = (prev, cur.1 - 1);
            }
            path.reverse();
            return Some(path);
        }
        if t == steps {
            continue;
        }
        for (d, _) in MOVES {
            let q = (p.0 + d.0, p.1 + d.1);
            if !lat.inside(q) || closed.contains(&(q, t + 1)) {
                continue;
            }
            if manhattan(q, goal) as usize > steps - t - 1 {
                continue;
            }
            if !res.free(lat.cell(p), lat.cell(q), t + 1) {
                continue;
            }
            parent.entry((q, t + 1)).or_insert(p);
            tie += 1;
            let f = (t + 1) as i64 + manhattan(q, goal);
            open.push(Reverse((f, tie, q, t + 1)));
        }
    }
    None
}

/// Extends `path` to `len` positions by stepping to the free neighbour
/// closest to `goal`. Returns false if it ever had to take a claimed cell.
fn park(lat: &Lattice, path: &mut Vec<Cell>, goal: Cell, len: usize, res: &Reservations) -> bool {
    let mut clean = true;
    while path.len() < len {
        let t = path.len();
        let p = *path.last().expect("path has a start");
        let mut best: Option<(bool, i64, Cell)> = None;
        for (d, _) in MOVES {
            let q = (p.0 + d.0, p.1 + d.1);
            if !lat.inside(q) {
                continue;
            }
            let free = res.free(lat.cell(p), lat.cell(q), t);
            let key = (!free, manhattan(q, goal), q);
            if best.is_none_or(|b| key < b) {
                best = Some(key);
            }
        }
        let (taken, _, q) = best.expect("lattice has a neighbour");
        clean &= !taken;
        path.push(q);
    }
    clean
}

fn action_between(a: Cell, b: Cell) -> usize {
    let d = (b.0 - a.0, b.1 - a.1);
    MOVES.iter().find(|(m, _)| *m == d).map(|(_, a)| *a).expect("lattice moves are unit steps")
}

/// Plans every agent from the current state to the horizon, toward
/// `state.target_of(i)`. Agents closer to their target plan first.
pub fn ma_astar(state: &WorldState, cfg: &EnvConfig) -> Result<GridPlan> {
    if cfg.task == Task::Drone {
        return Err(Error::Config("multi-agent A* supports the particle tasks only".into()));
    }
    let n = state.n_agents();
    let h = cfg.step_size();
    let steps = cfg.horizon.saturating_sub(state.t);
    let lattices: Vec<Lattice> = state.agent_pos.iter().map(|p| Lattice::new(p, h, cfg.map_size)).collect();
    let goals: Vec<Cell> = (0..n).map(|i| lattices[i].nearest(state.target_of(i))).collect();
    let mut order: Vec<usize> = (0..n).collect();
    let dist: Vec<f64> = (0..n).map(|i| euclidean(&state.agent_pos[i], state.target_of(i))).collect();
    order.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));

    let mut res = Reservations::default();
    for i in 0..n {
        res.cells.insert((lattices[i].cell((0, 0)), 0));
    }
    let mut lattice_paths = vec![Vec::new(); n];
    let mut failed = vec![false; n];
    let mut reserved_len = vec![0; n];
    for &i in &order {
        let lat = &lattices[i];
        let mut path = match search(lat, goals[i], steps, &res) {
            Some(p) => p,
            None => {
                failed[i] = true;
                vec![(0, 0)]
            }
        };
        let goal = if failed[i] { (0, 0) } else { goals[i] };
        let planned = path.len();
        let clean = park(lat, &mut path, goal, steps + 1, &res);
        // Only the part of the path that avoided every claim is reserved.
        let keep = if clean {
            path.len()
        } else {
            let mut k = planned;
            while k < path.len() && res.free(lat.cell(path[k - 1]), lat.cell(path[k]), k) {
                k += 1;
            }
            k
        };
        for k in 1..keep {
            res.claim(lat.cell(path[k - 1]), lat.cell(path[k]), k);
        }
        reserved_len[i] = keep;
        lattice_paths[i] = path;
    }

    let mut cells = Vec::with_capacity(n);
    let mut positions = Vec::with_capacity(n);
    let mut actions = Vec::with_capacity(n);
    for i in 0..n {
        let lat = &lattices[i];
        let p = &lattice_paths[i];
        cells.push(p[..reserved_len[i]].iter().map(|&q| lat.cell(q)).collect());
        positions.push(p[1..].iter().map(|&q| lat.point(q)).collect());
        actions.push(p.windows(2).map(|w| action_between(w[0], w[1])).collect());
    }
    Ok(GridPlan { cell_size: h, start_t: state.t, cells, positions, actions, failed })
}

/// Hungarian assignment of agents to goals (and to balls first on Push Ball).
pub fn assign_hungarian(state: &mut WorldState) -> Result<()> {
    let goal_of = if state.ball_pos.is_empty() {
        hungarian(&CostMatrix::from_positions(&state.agent_pos, &state.goal_pos)?).perm
    } else {
        let ball_of = hungarian(&CostMatrix::from_positions(&state.agent_pos, &state.ball_pos)?).perm;
        let carried: Vec<Vec<f64>> = ball_of.iter().map(|&b| state.ball_pos[b].clone()).collect();
        let goal_of = hungarian(&CostMatrix::from_positions(&carried, &state.goal_pos)?).perm;
        state.ball_of = ball_of;
        goal_of
    };
    assign(state, &goal_of, None)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AstarEpisode {
    pub final_state: WorldState,
    pub replans: usize,
    pub plans: Vec<GridPlan>,
    pub trajectory: Option<TrajectoryRecorder>,
}

/// Plays one episode with Hungarian goals and A* plans, replanning whenever
/// an agent leaves its planned position (after a bounce) or its target
/// changes (a ball got attached).
pub fn run_astar_episode(cfg: &EnvConfig, seed: u64) -> Result<AstarEpisode> {
    run_astar_episode_recorded(cfg, seed, false)
}

/// [`run_astar_episode`], optionally keeping a replayable trajectory.
pub fn run_astar_episode_recorded(cfg: &EnvConfig, seed: u64, record: bool) -> Result<AstarEpisode> {
    let mut state = reset(cfg, seed)?;
    assign_hungarian(&mut state)?;
    let mut trajectory = record.then(|| TrajectoryRecorder::new(cfg, seed, &state));
    let mut plan = ma_astar(&state, cfg)?;
    let mut plans = vec![plan.clone()];
    let mut replans = 0;
    let mut targets: Vec<Vec<f64>> = (0..cfg.n_agents).map(|i| state.target_of(i).to_vec()).collect();
    while state.t < cfg.horizon {
        let k = state.t - plan.start_t;
        let actions: Vec<usize> = plan.actions.iter().map(|a| a[k]).collect();
        let r = step(&mut state, &actions, cfg)?;
        if let Some(rec) = trajectory.as_mut() {
            rec.record(&actions, &r.rewards, &state);
        }
        if r.done {
            break;
        }
        let off_plan = (0..cfg.n_agents).any(|i| {
            let p = plan.positions[i][k];
            (state.agent_pos[i][0] - p[0]).abs() > 1e-9 || (state.agent_pos[i][1] - p[1]).abs() > 1e-9
        });
        let new_targets: Vec<Vec<f64>> = (0..cfg.n_agents).map(|i| state.target_of(i).to_vec()).collect();
        if off_plan || new_targets != targets {
            plan = ma_astar(&state, cfg)?;
            plans.push(plan.clone());
            replans += 1;
            targets = new_targets;
        }
    }
    Ok(AstarEpisode { final_state: state, replans, plans, trajectory })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::success_rate;

    fn spread(n: usize) -> EnvConfig {
        EnvConfig::preset(Task::SimpleSpread, n).unwrap()
    }

    #[test]
    fn single_agent_path_is_manhattan_optimal() {
        let cfg = spread(5);
        let cfg = EnvConfig { n_agents: 1, ..cfg };
        let mut s = reset(&cfg, 0).unwrap();
        let h = cfg.step_size();
        s.agent_pos = vec![vec![0.5, 0.5]];
        s.goal_pos = vec![vec![0.5 + 5.0 * h, 0.5 + 3.0 * h]];
        let plan = ma_astar(&s, &cfg).unwrap();
        let arrive = plan.positions[0]
            .iter()
            .position(|p| euclidean(p, &s.goal_pos[0]) < 1e-9)
            .unwrap();
        assert_eq!(arrive + 1, 8);
        assert_eq!(plan.actions[0].len(), cfg.horizon);
    }

    #[test]
    fn swapping_agents_do_not_conflict() {
        let cfg = EnvConfig { n_agents: 2, ..spread(5) };
        let mut s = reset(&cfg, 0).unwrap();
        let h = cfg.step_size();
        s.agent_pos = vec![vec![1.0, 2.0], vec![1.0 + 6.0 * h, 2.0]];
        s.goal_pos = vec![s.agent_pos[1].clone(), s.agent_pos[0].clone()];
        let plan = ma_astar(&s, &cfg).unwrap();
        assert!(plan.is_conflict_free());
        assert!(!plan.failed.iter().any(|&f| f));
    }

    #[test]
    fn plans_are_conflict_free_on_random_spawns() {
        let cfg = spread(5);
        for seed in 0..30 {
            let mut s = reset(&cfg, seed).unwrap();
            assign_hungarian(&mut s).unwrap();
            let plan = ma_astar(&s, &cfg).unwrap();
            assert!(plan.is_conflict_free(), "seed {seed}");
            for path in &plan.cells {
                for w in path.windows(2) {
                    assert_eq!(manhattan(w[0], w[1]), 1);
                }
            }
        }
    }

    #[test]
    fn episodes_mostly_succeed() {
        let cfg = spread(5);
        let mean: f64 = (0..20)
            .map(|seed| success_rate(&run_astar_episode(&cfg, seed).unwrap().final_state))
            .sum::<f64>()
            / 20.0;
        assert!(mean >= 0.95, "{mean}");
    }

    #[test]
    fn push_ball_delivers() {
        let cfg = EnvConfig::preset(Task::PushBall, 5).unwrap();
        let ep = run_astar_episode(&cfg, 3).unwrap();
        assert!(success_rate(&ep.final_state) > 0.5);
    }

    #[test]
    fn drone_is_rejected() {
        let cfg = EnvConfig::preset(Task::Drone, 2).unwrap();
        let s = reset(&cfg, 0).unwrap();
        assert!(matches!(ma_astar(&s, &cfg), Err(Error::Config(_))));
    }
}
