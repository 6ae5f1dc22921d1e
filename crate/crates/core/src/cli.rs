//! Experiment plumbing behind the `magex` binary: TOML experiment configs
//! with dotted overrides, and the train / eval / plotdata / replay commands.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::trajectory::{read_trajectory, replay, ReplayReport};
use crate::envs::{EnvConfig, SpawnMode, Task};
use crate::error::{Error, Result};
use crate::trainer::{
    evaluate, play_recorded, Checkpoint, Controller, EvalReport, Method, MetricsRecord, TrainConfig, Trainer,
};

/// Environment variable that prefixes relative output directories.
pub const OUTPUT_ROOT_VAR: &str = "MAGEX_OUTPUT_ROOT";
pub const RESOLVED_CONFIG: &str = "config.resolved.toml";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

/// Environment section; omitted sizes come from the benchmark presets and
/// omitted coefficients from [`EnvConfig::new`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    pub task: Task,
    pub n_agents: usize,
    pub map_size: Option<f64>,
    pub horizon: Option<usize>,
    pub spawn_mode: Option<SpawnMode>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub reach_radius: Option<f64>,
    pub collision_radius: Option<f64>,
}

impl EnvSection {
    pub fn resolve(&self) -> Result<EnvConfig> {
        let preset = EnvConfig::preset_dims(self.task, self.n_agents);
        let missing = |field: &str| {
            Error::Config(format!(
                "env.{field} is required: no preset for {:?} with {} agents",
                self.task, self.n_agents
            ))
        };
        let map_size = self.map_size.or(preset.map(|p| p.0)).ok_or_else(|| missing("map_size"))?;
        let horizon = self.horizon.or(preset.map(|p| p.1)).ok_or_else(|| missing("horizon"))?;
        let mut env = EnvConfig::new(self.task, self.n_agents, map_size, horizon);
        if self.map_size.is_none() && self.horizon.is_none() {
            if let Ok(p) = EnvConfig::preset(self.task, self.n_agents) {
                env.spawn_mode = p.spawn_mode;
            }
        }
        env.spawn_mode = self.spawn_mode.unwrap_or(env.spawn_mode);
        env.alpha = self.alpha.unwrap_or(env.alpha);
        env.beta = self.beta.unwrap_or(env.beta);
        env.gamma = self.gamma.unwrap_or(env.gamma);
        env.reach_radius = self.reach_radius.unwrap_or(env.reach_radius);
        env.collision_radius = self.collision_radius.unwrap_or(env.collision_radius);
        env.validate()?;
        Ok(env)
    }

    /// The section with every field filled from `env`.
    pub fn from_resolved(env: &EnvConfig) -> Self {
        Self {
            task: env.task,
            n_agents: env.n_agents,
            map_size: Some(env.map_size),
            horizon: Some(env.horizon),
            spawn_mode: Some(env.spawn_mode),
            alpha: Some(env.alpha),
            beta: Some(env.beta),
            gamma: Some(env.gamma),
            reach_radius: Some(env.reach_radius),
            collision_radius: Some(env.collision_radius),
        }
    }
}

fn default_run_name() -> String {
    "run".into()
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    #[serde(default = "default_run_name")]
    pub run_name: String,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Training seeds, one run each; empty means `train.seed` alone.
    #[serde(default)]
    pub seeds: Vec<u64>,
    pub env: EnvSection,
    #[serde(default)]
    pub train: TrainConfig,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file and applies `a.b=value` overrides in order.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Missing(format!("config {}", path.display())),
            _ => Error::Io(e),
        })?;
        if overrides.is_empty() {
            return Self::parse(&text);
        }
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let text = toml::to_string(&table).map_err(|e| Error::Config(e.to_string()))?;
        Self::parse(&text)
    }

    /// Fills every default and checks the combination.
    pub fn resolve(&self) -> Result<Self> {
        let env = self.env.resolve()?;
        self.train.validate()?;
        if self.method == Method::MaAstar && env.task == Task::Drone {
            return Err(Error::Config("ma_astar supports the particle tasks only".into()));
        }
        let seeds = if self.seeds.is_empty() { vec![self.train.seed] } else { self.seeds.clone() };
        Ok(Self { env: EnvSection::from_resolved(&env), seeds, ..self.clone() })
    }

    pub fn env_config(&self) -> Result<EnvConfig> {
        self.env.resolve()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// `$MAGEX_OUTPUT_ROOT/output_dir/run_name`, or relative to the working
    /// directory when the variable is unset.
    pub fn run_dir(&self) -> PathBuf {
        let root = std::env::var_os(OUTPUT_ROOT_VAR).map(PathBuf::from).unwrap_or_default();
        root.join(&self.output_dir).join(&self.run_name)
    }
}

/// Short override spellings and the keys they stand for.
const OVERRIDE_ALIASES: &[(&str, &str)] = &[("train.total_steps", "train.total_env_steps")];

/// Sets `path = value` inside `table`, creating intermediate tables. The
/// value is read as TOML when it parses, else taken as a string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let path = path.trim();
    let path = OVERRIDE_ALIASES.iter().find(|(a, _)| *a == path).map_or(path, |(_, k)| k);
    let keys: Vec<&str> = path.split('.').collect();
    let (last, parents) = keys.split_last().expect("split yields one key");
    let mut cur = table;
    for k in parents {
        let entry = cur.entry(k.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{path}`: `{k}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Process exit status for an error: 2 config, 3 numeric, 4 missing artifact.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Version(_) | Error::Input(_) | Error::UnsupportedMetric(_) => 2,
        Error::NonFinite(_) | Error::Diverged(_) => 3,
        Error::Missing(_) => 4,
        Error::Io(e) if e.kind() == std::io::ErrorKind::NotFound => 4,
        _ => 1,
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Record wall-clock seconds in the metrics (breaks byte-identical output).
    pub timing: bool,
    /// Print one progress line every this many rounds; 0 is silent.
    pub log_every: usize,
}

/// Trains every seed of the experiment. Each seed gets `seed_<s>/` with the
/// metrics stream and checkpoint; the resolved config sits in the run directory.
pub fn cmd_train(config: &Path, overrides: &[String], opts: &TrainOptions) -> Result<PathBuf> {
    let exp = ExperimentConfig::load(config, overrides)?.resolve()?;
    if !exp.method.is_trainable() {
        return Err(Error::Config(format!("method {:?} has nothing to train; use eval", exp.method)));
    }
    let dir = exp.run_dir();
    fs::create_dir_all(&dir)?;
    fs::write(dir.join(RESOLVED_CONFIG), exp.to_toml()?)?;
    let env = exp.env_config()?;
    for &seed in &exp.seeds {
        let seed_dir = dir.join(format!("seed_{seed}"));
        fs::create_dir_all(&seed_dir)?;
        let cfg = TrainConfig { seed, ..exp.train.clone() };
        train_one(exp.method, env.clone(), cfg, &seed_dir, opts)?;
    }
    Ok(dir)
}

/// One training run writing metrics and checkpoints into `dir`. A numeric
/// failure leaves the last checkpoint in place.
pub fn train_one(method: Method, env: EnvConfig, cfg: TrainConfig, dir: &Path, opts: &TrainOptions) -> Result<()> {
    let every = cfg.eval_every_rounds;
    let mut trainer = Trainer::new(method, env, cfg)?;
    let mut metrics = BufWriter::new(File::create(dir.join(METRICS_FILE))?);
    let ck_path = dir.join(CHECKPOINT_FILE);
    let start = Instant::now();
    while !trainer.is_done() {
        let mut stats = trainer.run_round()?;
        if opts.timing {
            stats.metrics.wall_clock_s = Some(start.elapsed().as_secs_f64());
        }
        serde_json::to_writer(&mut metrics, &stats.metrics)?;
        metrics.write_all(b"\n")?;
        if every > 0 && trainer.round % every == 0 {
            metrics.flush()?;
            trainer.checkpoint().save(&ck_path)?;
        }
        if opts.log_every > 0 && trainer.round % opts.log_every == 0 {
            log_round(&stats.metrics);
        }
    }
    metrics.flush()?;
    trainer.checkpoint().save(&ck_path)
}

fn log_round(m: &MetricsRecord) {
    let opt = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"));
    eprintln!(
        "round {} steps {} success {} eval {} policy_loss {:.4} value_loss {:.4} entropy {:.3}",
        m.round,
        m.env_steps,
        opt(m.success_rate),
        opt(m.eval_success_rate),
        m.policy_loss,
        m.value_loss,
        m.entropy
    );
}

/// Which policy `cmd_eval` plays.
#[derive(Clone, Debug)]
pub enum EvalSource {
    Checkpoint { path: PathBuf, config: Option<PathBuf> },
    /// A non-learning method from a config: `ma_astar`, or uniform random actions.
    Config { path: PathBuf, random: bool },
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub source: EvalSource,
    pub episodes: usize,
    pub seeds: Vec<u64>,
    /// Directory for `eval.txt` and `eval.json`; defaults next to the source.
    pub out: Option<PathBuf>,
    /// Write the first episode of the first seed as a replayable trajectory.
    pub trajectory: Option<PathBuf>,
}

/// Evaluates and writes a `mean (std)` text report plus its JSON record.
pub fn cmd_eval(opts: &EvalOptions) -> Result<EvalReport> {
    if opts.episodes == 0 || opts.seeds.is_empty() {
        return Err(Error::Config("eval needs --episodes > 0 and at least one seed".into()));
    }
    let (report, out) = match &opts.source {
        EvalSource::Checkpoint { path, config } => {
            let ck = Checkpoint::load(path)?;
            let env = match config {
                Some(c) => {
                    let env = ExperimentConfig::load(c, &[])?.env_config()?;
                    ck.check_env(&env)?;
                    env
                }
                None => ck.env.clone(),
            };
            let controller = Controller::Learned {
                method: ck.method,
                commander: ck.commander.as_ref(),
                low: &ck.low,
                features: &ck.features,
            };
            let report = run_eval(&controller, &env, opts)?;
            (report, path.parent().map(Path::to_path_buf).unwrap_or_default())
        }
        EvalSource::Config { path, random } => {
            let exp = ExperimentConfig::load(path, &[])?.resolve()?;
            let env = exp.env_config()?;
            let controller = match (random, exp.method) {
                (true, _) => Controller::Random,
                (false, Method::MaAstar) => Controller::Astar,
                (false, m) => {
                    return Err(Error::Config(format!("method {m:?} is learned; evaluate a --checkpoint")))
                }
            };
            (run_eval(&controller, &env, opts)?, exp.run_dir())
        }
    };
    let out = opts.out.clone().unwrap_or(out);
    fs::create_dir_all(&out)?;
    fs::write(out.join("eval.txt"), report.summary())?;
    fs::write(out.join("eval.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

fn run_eval(controller: &Controller<'_>, env: &EnvConfig, opts: &EvalOptions) -> Result<EvalReport> {
    let report = evaluate(controller, env, opts.episodes, &opts.seeds)?;
    if let Some(path) = &opts.trajectory {
        // Same draws as the first episode of the first seed inside `evaluate`.
        let seed = opts.seeds[0];
        let env_seed: u64 = ChaCha8Rng::seed_from_u64(seed).gen();
        let mut policy_rng = ChaCha8Rng::seed_from_u64(seed);
        policy_rng.set_stream(1);
        let (_, rec) = play_recorded(controller, env, env_seed, &mut policy_rng, true)?;
        let rec = rec.expect("recording was requested");
        rec.write(BufWriter::new(File::create(path)?))?;
    }
    Ok(report)
}

/// Metrics columns that `cmd_plotdata` can aggregate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotMetric {
    SuccessRate,
    EvalSuccessRate,
}

impl PlotMetric {
    fn pick(self, m: &MetricsRecord) -> Option<f64> {
        match self {
            Self::SuccessRate => m.success_rate,
            Self::EvalSuccessRate => m.eval_success_rate,
        }
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Missing(format!("metrics {}", path.display())),
        _ => Error::Io(e),
    })?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Seed-aggregated curve as TSV: `env_steps success_mean success_std n`.
/// Files on different step grids are interpolated onto the first file's grid
/// (within the common range) and a warning is returned.
pub fn cmd_plotdata(files: &[PathBuf], metric: PlotMetric) -> Result<(String, Option<String>)> {
    if files.is_empty() {
        return Err(Error::Missing("plotdata needs at least one metrics file".into()));
    }
    let mut curves = Vec::with_capacity(files.len());
    for f in files {
        let pts: Vec<(f64, f64)> = read_metrics(f)?
            .iter()
            .filter_map(|m| metric.pick(m).map(|v| (m.env_steps as f64, v)))
            .collect();
        if pts.is_empty() {
            return Err(Error::Missing(format!("no {metric:?} points in {}", f.display())));
        }
        curves.push(pts);
    }
    let same_grid = curves.iter().all(|c| c.len() == curves[0].len() && c.iter().zip(&curves[0]).all(|(a, b)| a.0 == b.0));
    let mut warning = None;
    let grid: Vec<f64> = if same_grid {
        curves[0].iter().map(|p| p.0).collect()
    } else {
        let lo = curves.iter().map(|c| c[0].0).fold(f64::MIN, f64::max);
        let hi = curves.iter().map(|c| c[c.len() - 1].0).fold(f64::MAX, f64::min);
        warning = Some(format!(
            "warning: step grids differ across {} files; resampled onto {} points in [{lo}, {hi}]",
            files.len(),
            curves[0].len()
        ));
        curves[0].iter().map(|p| p.0).filter(|&s| s >= lo && s <= hi).collect()
    };
    let mut out = String::from("env_steps\tsuccess_mean\tsuccess_std\tn\n");
    for &s in &grid {
        let vals: Vec<f64> = curves.iter().map(|c| interpolate(c, s)).collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        out.push_str(&format!("{s}\t{mean:.6}\t{std:.6}\t{}\n", vals.len()));
    }
    Ok((out, warning))
}

/// Piecewise-linear value of a sorted curve at `x`, flat outside its range.
fn interpolate(curve: &[(f64, f64)], x: f64) -> f64 {
    let k = curve.partition_point(|p| p.0 < x);
    if k == 0 {
        return curve[0].1;
    }
    if k == curve.len() {
        return curve[k - 1].1;
    }
    let (x0, y0) = curve[k - 1];
    let (x1, y1) = curve[k];
    if x1 == x0 {
        y1
    } else {
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }
}

/// Re-simulates a trajectory dump and fails unless it matches bit for bit.
pub fn cmd_replay(path: &Path) -> Result<ReplayReport> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Missing(format!("trajectory {}", path.display())),
        _ => Error::Io(e),
    })?;
    let lines = read_trajectory(BufReader::new(file))?;
    let report = replay(&lines)?;
    match report.first_mismatch {
        None => Ok(report),
        Some(t) => Err(Error::Diverged(format!("step {t} of {} differs from the recording", report.steps))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "method = \"mage_x\"\n[env]\ntask = \"simple_spread\"\nn_agents = 5\n";

    #[test]
    fn presets_fill_sizes_and_echo_roundtrips() {
        let exp = ExperimentConfig::parse(MINIMAL).unwrap().resolve().unwrap();
        assert_eq!(exp.env.map_size, Some(4.0));
        assert_eq!(exp.env.horizon, Some(60));
        assert_eq!(exp.seeds, vec![0]);
        let again = ExperimentConfig::parse(&exp.to_toml().unwrap()).unwrap().resolve().unwrap();
        assert_eq!(again, exp);
    }

    #[test]
    fn missing_field_is_named() {
        let err = ExperimentConfig::parse("method = \"mage_x\"\n[env]\ntask = \"simple_spread\"\n").unwrap_err();
        assert!(err.to_string().contains("n_agents"), "{err}");
        let no_preset = "method = \"mage_x\"\n[env]\ntask = \"simple_spread\"\nn_agents = 3\n";
        let err = ExperimentConfig::parse(no_preset).unwrap().resolve().unwrap_err();
        assert!(err.to_string().contains("env.map_size"), "{err}");
        assert_eq!(exit_code(&err), 2);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{MINIMAL}bogus = 1\n");
        assert!(matches!(ExperimentConfig::parse(&text), Err(Error::Config(_))));
    }

    #[test]
    fn overrides_reach_the_echo() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.toml");
        fs::write(&path, MINIMAL).unwrap();
        let o = ["train.total_steps=1000".to_string(), "run_name=smoke".to_string(), "env.spawn_mode=\"mode2\"".to_string()];
        let exp = ExperimentConfig::load(&path, &o).unwrap().resolve().unwrap();
        assert_eq!(exp.train.total_env_steps, 1000);
        assert_eq!(exp.run_name, "smoke");
        assert_eq!(exp.env.spawn_mode, Some(SpawnMode::Mode2));
        assert!(exp.to_toml().unwrap().contains("total_env_steps = 1000"));
    }

    #[test]
    fn interpolation_and_plotdata_aggregation() {
        let c = [(0.0, 0.0), (10.0, 1.0)];
        assert_eq!(interpolate(&c, 5.0), 0.5);
        assert_eq!(interpolate(&c, 20.0), 1.0);
        let dir = tempfile::tempdir().unwrap();
        let write = |name: &str, pts: &[(u64, f64)]| {
            let p = dir.path().join(name);
            let lines: Vec<String> = pts
                .iter()
                .map(|&(s, v)| {
                    let m = MetricsRecord { env_steps: s, success_rate: Some(v), ..MetricsRecord::default() };
                    serde_json::to_string(&m).unwrap()
                })
                .collect();
            fs::write(&p, lines.join("\n")).unwrap();
            p
        };
        let a = write("a.jsonl", &[(100, 0.2), (200, 0.6)]);
        let b = write("b.jsonl", &[(100, 0.4), (200, 1.0)]);
        let (tsv, warn) = cmd_plotdata(&[a.clone(), b], PlotMetric::SuccessRate).unwrap();
        assert!(warn.is_none());
        assert_eq!(tsv.lines().nth(1).unwrap(), "100\t0.300000\t0.100000\t2");
        assert_eq!(tsv.lines().nth(2).unwrap(), "200\t0.800000\t0.200000\t2");
        let c = write("c.jsonl", &[(50, 0.0), (250, 1.0)]);
        let (tsv, warn) = cmd_plotdata(&[a, c], PlotMetric::SuccessRate).unwrap();
        assert!(warn.is_some());
        // 150 of the 200-step span covered at step 200: 0.75.
        assert_eq!(tsv.lines().nth(2).unwrap(), "200\t0.675000\t0.075000\t2");
        assert!(matches!(cmd_plotdata(&[], PlotMetric::SuccessRate), Err(Error::Missing(_))));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::NonFinite("x".into())), 3);
        assert_eq!(exit_code(&Error::Missing("x".into())), 4);
    }
}
