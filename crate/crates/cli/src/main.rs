use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use perfest_cli::{
    baseline, fit_cmd, gen, metrics_cmd, replay, serve, BaselineArgs, CliError, FitArgs, GenArgs, MetricsArgs,
    ReplayArgs, ServeArgs, Transport,
};

/// Early final-accuracy estimation from partial learning curves.
#[derive(Parser)]
#[command(name = "perfest", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic trace corpus.
    Gen {
        /// Population file (key=value); defaults to the built-in mix.
        #[arg(long)]
        population: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        n: usize,
        /// Dataset profile file (key=value); defaults to balanced 10-class.
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Epochs per iteration; overrides the profile's E.
        #[arg(long = "epochs-per-iter")]
        epochs_per_iter: Option<f64>,
        /// Training horizon; overrides the profile's e_full.
        #[arg(long = "e-full")]
        e_full: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the engine over every trace of a corpus.
    Replay {
        #[arg(long)]
        corpus: PathBuf,
        /// Engine config file (key=value).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Config override, repeatable: --set t=0.25
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Stream through a running HTTP service instead of replaying locally.
        #[arg(long, value_name = "URL")]
        remote: Option<String>,
    },
    /// Patience-rule stop epochs for every trace.
    Baseline {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 10.0)]
        patience: f64,
        /// Defaults to the corpus horizon.
        #[arg(long = "e-max")]
        e_max: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Savings, throughput and top-x% comparisons.
    Metrics {
        #[arg(long)]
        outcomes: PathBuf,
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "10,20,30")]
        top: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the curve to one set of points.
    Fit {
        /// CSV of x,accuracy pairs.
        #[arg(long)]
        points: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Box override, repeatable: --box a_bounds=0.5,100
        #[arg(long = "box", value_name = "KEY=VALUE")]
        box_overrides: Vec<String>,
        #[arg(long, value_name = "URL")]
        remote: Option<String>,
    },
    /// Run the engine as a service.
    Serve {
        /// stdio, tcp or http
        #[arg(long)]
        transport: Option<Transport>,
        #[arg(long)]
        addr: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen { population, n, profile, seed, epochs_per_iter, e_full, out } => {
            gen(&GenArgs { population, n, profile, seed, epochs_per_iter, e_full, out })
        }
        Command::Replay { corpus, config, set, out, remote } => replay(&ReplayArgs { corpus, config, set, out, remote }),
        Command::Baseline { corpus, patience, e_max, out } => baseline(&BaselineArgs { corpus, patience, e_max, out }),
        Command::Metrics { outcomes, baseline, top, out } => metrics_cmd(&MetricsArgs { outcomes, baseline, top, out }),
        Command::Fit { points, config, box_overrides, remote } => {
            fit_cmd(&FitArgs { points, config, box_overrides, remote })
        }
        Command::Serve { transport, addr, config, set } => serve(&ServeArgs { transport, addr, config, set }),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("perfest: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
