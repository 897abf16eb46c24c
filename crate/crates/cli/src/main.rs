//! `ipcascade`: fit, generate, and analyze IP address sets as conservative
//! cascades.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Parser, Subcommand};
use ipcascade::address::DEFAULT_ZOOM_BITS;
use ipcascade::alloc::DEFAULT_AGGREGATE_THRESHOLD;
use ipcascade::moments::DEFAULT_LINEARITY_THRESHOLD;
use ipcascade::Error;

use config::{Overrides, RunConfig};

#[derive(Debug, Parser)]
#[command(
    name = "ipcascade",
    version,
    about = "Multifractal analysis of IP address sets"
)]
struct Cli {
    #[command(flatten)]
    flags: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the logit-normal generator to an address list.
    Fit {
        addresses: PathBuf,
        /// Also write a mirrored weight histogram with this many bins.
        #[arg(long, default_value_t = 0)]
        bins: usize,
    },
    /// Generate addresses from a conservative cascade.
    Generate,
    /// Partition functions, structure function and generalized dimensions.
    Analyze {
        addresses: PathBuf,
        /// q-window for the linearity test, as LO:HI.
        #[arg(long, default_value = "-0.5:1.7", allow_hyphen_values = true)]
        linearity_window: String,
        #[arg(long, default_value_t = DEFAULT_LINEARITY_THRESHOLD)]
        linearity_threshold: f64,
    },
    /// Score a stream on stdin, or run the injection experiment.
    #[command(group(ArgGroup::new("mode").required(true).args(["stream", "experiment"])))]
    Anomaly {
        /// Baseline loaded before streaming; in experiment mode, the
        /// population baselines are drawn from (a synthetic cascade if absent).
        baseline: Option<PathBuf>,
        #[arg(long)]
        stream: bool,
        /// Comma-separated lags to sweep.
        #[arg(long, value_delimiter = ',', value_name = "K,...")]
        experiment: Option<Vec<usize>>,
        /// Seeds per lag in experiment mode, counting up from --seed.
        #[arg(long, default_value_t = 10)]
        trials: u64,
    },
    /// Inclusion-tree statistics and aggregates for allocation records.
    Alloc {
        records: PathBuf,
        #[arg(long, default_value_t = DEFAULT_AGGREGATE_THRESHOLD)]
        threshold: f64,
        /// Also treat the records as equal-length labeled blocks and report
        /// maximal same-label runs.
        #[arg(long)]
        runs: bool,
    },
    /// Per-level sub-prefix counts around a target address.
    Zoom {
        addresses: PathBuf,
        target: String,
        /// Sub-resolution in bits, also the step between zoom levels.
        #[arg(long, default_value_t = DEFAULT_ZOOM_BITS)]
        zoom_bits: u32,
        /// First and last zoom level, as LO:HI (default: the whole address).
        #[arg(long)]
        zoom_levels: Option<String>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = RunConfig::resolve(&cli.flags)?;
    match cli.command {
        Command::Fit { addresses, bins } => commands::fit(&cfg, &addresses, bins),
        Command::Generate => commands::generate_cmd(&cfg),
        Command::Analyze {
            addresses,
            linearity_window,
            linearity_threshold,
        } => commands::analyze(&cfg, &addresses, &linearity_window, linearity_threshold),
        Command::Anomaly {
            baseline,
            stream,
            experiment,
            trials,
        } => match (stream, experiment) {
            (true, _) => commands::anomaly_stream(&cfg, baseline.as_deref()),
            (false, Some(ks)) => commands::anomaly_experiment(&cfg, baseline.as_deref(), &ks, trials),
            (false, None) => unreachable!("clap requires one mode"),
        },
        Command::Alloc {
            records,
            threshold,
            runs,
        } => commands::alloc(&cfg, &records, threshold, runs),
        Command::Zoom {
            addresses,
            target,
            zoom_bits,
            zoom_levels,
        } => commands::zoom(&cfg, &addresses, &target, zoom_bits, zoom_levels.as_deref()),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::InsufficientData(_) | Error::EmptySet | Error::UnusableLevel(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
