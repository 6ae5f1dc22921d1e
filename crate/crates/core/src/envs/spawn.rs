//! Initial placement of agents, goals and balls.
//!
//! Random mode samples uniformly over the arena. The four structured modes
//! place each entity kind in a band around an axis-aligned or diagonal
//! segment, expressed as fractions of the map side. Bands are 0.1 wide except
//! the corner blocks, which are 0.4 wide:
//!
//! | mode  | agents                         | goals                           | balls                     |
//! |-------|--------------------------------|---------------------------------|---------------------------|
//! | Mode1 | left edge `x = 0.1`            | right edge `x = 0.9`            | centre column `x = 0.5`   |
//! | Mode2 | bottom edge `y = 0.1`          | top edge `y = 0.9`              | centre row `y = 0.5`      |
//! | Mode3 | bottom-left block `[0.05,0.45]^2` | top-right block `[0.55,0.95]^2` | anti-diagonal through centre |
//! | Mode4 | left and bottom edges          | right and top edges             | centre column             |
//!
//! Same-kind entities keep at least `collision_radius` apart (twice that for
//! drones so nothing spawns crashed).

use rand::Rng;

use super::config::{EnvConfig, SpawnMode, Task, DRONE_SPAWN_Z};
use crate::error::{Error, Result};

const BAND_HALF_WIDTH: f64 = 0.05;
const BLOCK_HALF_WIDTH: f64 = 0.2;
const MAX_ATTEMPTS: usize = 2000;

pub(crate) struct Spawn {
    pub agents: Vec<Vec<f64>>,
    pub goals: Vec<Vec<f64>>,
    pub balls: Vec<Vec<f64>>,
}

/// Segment endpoints and band half-width, in map fractions.
type Segment = ((f64, f64), (f64, f64), f64);

fn segments(mode: SpawnMode) -> (Vec<Segment>, Vec<Segment>, Vec<Segment>) {
    match mode {
        SpawnMode::Random => unreachable!("random mode has no segments"),
        SpawnMode::Mode1 => (
            vec![((0.1, 0.1), (0.1, 0.9), BAND_HALF_WIDTH)],
            vec![((0.9, 0.1), (0.9, 0.9), BAND_HALF_WIDTH)],
            vec![((0.5, 0.1), (0.5, 0.9), BAND_HALF_WIDTH)],
        ),
        SpawnMode::Mode2 => (
            vec![((0.1, 0.1), (0.9, 0.1), BAND_HALF_WIDTH)],
            vec![((0.1, 0.9), (0.9, 0.9), BAND_HALF_WIDTH)],
            vec![((0.1, 0.5), (0.9, 0.5), BAND_HALF_WIDTH)],
        ),
        SpawnMode::Mode3 => (
            vec![((0.05, 0.25), (0.45, 0.25), BLOCK_HALF_WIDTH)],
            vec![((0.55, 0.75), (0.95, 0.75), BLOCK_HALF_WIDTH)],
            vec![((0.3, 0.7), (0.7, 0.3), BAND_HALF_WIDTH)],
        ),
        SpawnMode::Mode4 => (
            vec![((0.1, 0.1), (0.1, 0.9), BAND_HALF_WIDTH), ((0.1, 0.1), (0.9, 0.1), BAND_HALF_WIDTH)],
            vec![((0.9, 0.1), (0.9, 0.9), BAND_HALF_WIDTH), ((0.1, 0.9), (0.9, 0.9), BAND_HALF_WIDTH)],
            vec![((0.5, 0.1), (0.5, 0.9), BAND_HALF_WIDTH)],
        ),
    }
}

fn far_enough(p: &[f64], placed: &[Vec<f64>], min_sep: f64) -> bool {
    placed.iter().all(|q| {
        let d2: f64 = p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
        d2 > min_sep * min_sep
    })
}

fn place<R: Rng + ?Sized>(
    n: usize,
    min_sep: f64,
    what: &str,
    rng: &mut R,
    mut draw: impl FnMut(&mut R) -> Vec<f64>,
) -> Result<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(n);
    for _ in 0..n {
        let mut ok = false;
        for _ in 0..MAX_ATTEMPTS {
            let p = draw(rng);
            if far_enough(&p, &out, min_sep) {
                out.push(p);
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(Error::Config(format!(
                "cannot place {n} {what} at least {min_sep} apart"
            )));
        }
    }
    Ok(out)
}

fn band_point<R: Rng + ?Sized>(segs: &[Segment], map: f64, bounds: (f64, f64), rng: &mut R) -> Vec<f64> {
    let ((x0, y0), (x1, y1), half) = segs[rng.gen_range(0..segs.len())];
    let u: f64 = rng.gen();
    let (dx, dy) = (x1 - x0, y1 - y0);
    let len = (dx * dx + dy * dy).sqrt();
    let (nx, ny) = (-dy / len, dx / len);
    let w = rng.gen_range(-half..=half);
    let x = (x0 + u * dx + w * nx) * map;
    let y = (y0 + u * dy + w * ny) * map;
    vec![x.clamp(bounds.0, bounds.1), y.clamp(bounds.0, bounds.1)]
}

pub(crate) fn spawn<R: Rng + ?Sized>(cfg: &EnvConfig, rng: &mut R) -> Result<Spawn> {
    let n = cfg.n_agents;
    let sep = cfg.collision_radius;
    let map = cfg.map_size;
    match cfg.task {
        Task::Drone => {
            let h = map / 2.0;
            let mut draw = |r: &mut R| {
                vec![r.gen_range(-h..h), r.gen_range(-h..h), DRONE_SPAWN_Z]
            };
            let agents = place(n, 2.0 * sep, "drones", rng, &mut draw)?;
            let goals = place(n, sep, "goals", rng, &mut draw)?;
            Ok(Spawn { agents, goals, balls: Vec::new() })
        }
        Task::SimpleSpread | Task::PushBall => {
            let with_balls = cfg.task == Task::PushBall;
            let (agents, goals, balls) = match cfg.spawn_mode {
                SpawnMode::Random => {
                    let mut draw = |r: &mut R| vec![r.gen_range(0.0..map), r.gen_range(0.0..map)];
                    let agents = place(n, sep, "agents", rng, &mut draw)?;
                    let goals = place(n, sep, "goals", rng, &mut draw)?;
                    let balls =
                        if with_balls { place(n, sep, "balls", rng, &mut draw)? } else { Vec::new() };
                    (agents, goals, balls)
                }
                mode => {
                    let (sa, sg, sb) = segments(mode);
                    let b = (0.0, map);
                    let agents = place(n, sep, "agents", rng, |r| band_point(&sa, map, b, r))?;
                    let goals = place(n, sep, "goals", rng, |r| band_point(&sg, map, b, r))?;
                    let balls = if with_balls {
                        place(n, sep, "balls", rng, |r| band_point(&sb, map, b, r))?
                    } else {
                        Vec::new()
                    };
                    (agents, goals, balls)
                }
            };
            Ok(Spawn { agents, goals, balls })
        }
    }
}
