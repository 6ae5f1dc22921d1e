use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use magex::cli::{cmd_eval, cmd_plotdata, cmd_replay, cmd_train, exit_code, EvalOptions, EvalSource, PlotMetric, TrainOptions};

#[derive(Parser)]
#[command(name = "magex", version, about = "Train and evaluate hierarchical multi-agent navigation policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    SuccessRate,
    EvalSuccessRate,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of an experiment config.
    Train {
        config: PathBuf,
        /// Dotted override such as train.total_env_steps=1000 (repeatable).
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Record wall-clock seconds in the metrics stream.
        #[arg(long)]
        timing: bool,
        /// Progress line to stderr every N rounds (0 is silent).
        #[arg(long, default_value_t = 0)]
        log_every: usize,
    },
    /// Evaluate a checkpoint, or a planner/random control from a config.
    Eval {
        #[arg(long, conflicts_with = "random")]
        checkpoint: Option<PathBuf>,
        /// Experiment config: env check for a checkpoint, or the ma_astar / random source.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Play uniformly random actions on the config's environment.
        #[arg(long, requires = "config")]
        random: bool,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2])]
        seeds: Vec<u64>,
        /// Output directory for eval.txt and eval.json.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also dump the first episode as a replayable trajectory.
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Seed-aggregated training curve as TSV.
    Plotdata {
        files: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Metric::SuccessRate)]
        metric: Metric,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-simulate a trajectory dump and check it bit for bit.
    Replay { trajectory: PathBuf },
}

fn run(cli: Cli) -> magex::Result<()> {
    match cli.command {
        Command::Train { config, overrides, timing, log_every } => {
            let dir = cmd_train(&config, &overrides, &TrainOptions { timing, log_every })?;
            println!("{}", dir.display());
        }
        Command::Eval { checkpoint, config, random, episodes, seeds, out, trajectory } => {
            let source = match (checkpoint, config) {
                (Some(path), config) => EvalSource::Checkpoint { path, config },
                (None, Some(path)) => EvalSource::Config { path, random },
                (None, None) => return Err(magex::Error::Config("eval needs --checkpoint or --config".into())),
            };
            let report = cmd_eval(&EvalOptions { source, episodes, seeds, out, trajectory })?;
            print!("{}", report.summary());
        }
        Command::Plotdata { files, metric, out } => {
            let metric = match metric {
                Metric::SuccessRate => PlotMetric::SuccessRate,
                Metric::EvalSuccessRate => PlotMetric::EvalSuccessRate,
            };
            let (tsv, warning) = cmd_plotdata(&files, metric)?;
            if let Some(w) = warning {
                eprintln!("{w}");
            }
            match out {
                Some(p) => std::fs::write(p, tsv)?,
                None => print!("{tsv}"),
            }
        }
        Command::Replay { trajectory } => {
            let report = cmd_replay(&trajectory)?;
            println!("replayed {} steps, identical", report.steps);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
