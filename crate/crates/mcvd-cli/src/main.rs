//! Command-line surface for the MCvD localization toolkit.

mod commands;
mod manifest;
mod runcfg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mcvd_locate::error::Error;

#[derive(Parser)]
#[command(
    name = "mcvd",
    version,
    about = "Diffusion-based molecular communication: simulate pilots, extract \
             octant features, and estimate Node A's pose with an attention-pooled MLP",
    after_help = "Full-scale recipe: gen-dataset -n 10000, then train, then eval. \
                  Each stage writes a run directory with config.json and manifest.json."
)]
struct Cli {
    /// Master seed; overrides the config file's seed, the scene seed, and
    /// the training init seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for simulation (0 = all cores); results are
    /// bit-identical regardless
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// JSON run config; sections scene/train/weights/split, all optional
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Smoke-test mode: smaller N and widened tolerances (validate-channel)
    #[arg(long, global = true)]
    quick: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the Monte Carlo channel against the closed-form hitting-time
    /// oracles (absorbed fraction, density peak, chi-square fit)
    ValidateChannel {
        /// Optional run directory for validation.json
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate one six-pilot scene and write the absorption log
    Simulate {
        /// Run directory for log.csv + log.header.json
        #[arg(long)]
        out: PathBuf,
        /// Node-A pose as x,y,z or x,y,z,qw,qx,qy,qz (default: sampled from
        /// the scene's pose distribution)
        #[arg(long)]
        pose: Option<String>,
    },
    /// Generate a labelled dataset of simulated scenes
    GenDataset {
        /// Sample count; the full-scale run is -n 10000
        #[arg(short, long, default_value_t = 2000)]
        n_samples: usize,
        /// Run directory for dataset.meta.json + dataset.data.csv
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the attention-pooled MLP on a generated dataset
    Train {
        /// Dataset base path, directory, or either dataset file
        #[arg(long)]
        dataset: PathBuf,
        /// Run directory for model.json + history.csv
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a trained model and the ridge baseline on the test split
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        /// Trained model JSON from `train`
        #[arg(long)]
        model: PathBuf,
        /// Run directory for metrics.json + scatter CSVs
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict Node A's pose from one absorption log
    Predict {
        /// Trained model JSON from `train`
        #[arg(long)]
        model: PathBuf,
        /// Event CSV from `simulate`
        #[arg(long)]
        log: PathBuf,
        /// Scene header JSON (default: <log>.header.json)
        #[arg(long)]
        header: Option<PathBuf>,
    },
    /// Export plotting-ready scatter and 3D-comparison CSVs for a model
    PlotExport {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Run directory for scatter.csv + comparison3d.csv
        #[arg(long)]
        out: PathBuf,
    },
}

/// 0 = success, 1 = scientific/assertion failure, 2 = usage/config/I-O.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_)
        | Error::Config(_)
        | Error::VersionMismatch { .. }
        | Error::MalformedHeader(_)
        | Error::TruncatedFile(_)
        | Error::MalformedRecord { .. }
        | Error::ShapeMismatch(_)
        | Error::Io(_) => 2,
        Error::Domain(_)
        | Error::State(_)
        | Error::Numeric(_)
        | Error::UndefinedMetric(_)
        | Error::UndefinedReduction { .. }
        | Error::Divergence { .. } => 1,
    }
}

fn run(cli: &Cli) -> Result<ExitCode, Error> {
    if let Some(w) = cli.workers {
        mcvd_locate::exec::set_workers(w);
    }
    let rc = runcfg::load(cli.config.as_deref(), cli.seed)?;
    match &cli.command {
        Command::ValidateChannel { out } => {
            commands::cmd_validate_channel(&rc, cli.quick, out.as_deref())
        }
        Command::Simulate { out, pose } => commands::cmd_simulate(&rc, pose.as_deref(), out),
        Command::GenDataset { n_samples, out } => commands::cmd_gen_dataset(&rc, *n_samples, out),
        Command::Train { dataset, out } => commands::cmd_train(&rc, dataset, out),
        Command::Eval {
            dataset,
            model,
            out,
        } => commands::cmd_eval(&rc, dataset, model, out),
        Command::Predict { model, log, header } => {
            commands::cmd_predict(model, log, header.as_deref())
        }
        Command::PlotExport {
            dataset,
            model,
            out,
        } => commands::cmd_plot_export(&rc, dataset, model, out),
    }
}

fn main() -> ExitCode {
    // die quietly when stdout is a closed pipe (e.g. `mcvd ... | head`)
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
