use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

mod commands;
mod run_args;

use run_args::RunArgs;

#[derive(Parser, Debug)]
#[command(name = "osa", version, about = "Ordinal anchor alignment for sequential recommenders")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Directory that relative output paths are resolved against.
    #[arg(long, global = true, env = "OSA_OUTPUT_ROOT")]
    output_root: Option<PathBuf>,

    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate a rating file and write a normalized log plus stats.
    Ingest(commands::IngestArgs),
    /// Generate a synthetic corpus with planted ordinal structure.
    SynthData(commands::SynthArgs),
    /// Train a model and write a checkpoint and training log.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
        /// Overwrite a non-empty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Hit@1 of a checkpoint on its fixed candidate sets.
    Eval(commands::EvalArgs),
    /// Pairwise preference accuracy of a checkpoint on held-out users.
    Pairwise(commands::PairwiseArgs),
    /// Train and evaluate the ablation arms on shared data.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated arms; all six when omitted.
        #[arg(long, value_delimiter = ',')]
        arms: Vec<osa_core::evaluation::AblationArm>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Compare analytic and finite-difference gradients on a small model.
    Gradcheck(commands::GradcheckArgs),
    /// Export a 2-D view of projected interactions and anchors.
    Geometry(commands::GeometryArgs),
    /// Create, permute or validate anchor banks.
    #[command(subcommand)]
    Anchors(commands::AnchorCommand),
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Info,
        1 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new()
        .format_target(false)
        .filter(None, level)
        .parse_env("OSA_LOG")
        .init();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let out = commands::Outputs::new(cli.output_root);
    match cli.command {
        Command::Ingest(args) => commands::ingest(&out, args),
        Command::SynthData(args) => commands::synth_data(&out, args),
        Command::Train { run, out: dir, force } => commands::train(&out, run, &dir, force),
        Command::Eval(args) => commands::eval(&out, args),
        Command::Pairwise(args) => commands::pairwise(&out, args),
        Command::Ablate {
            run,
            arms,
            out: dir,
            force,
        } => commands::ablate(&out, run, arms, &dir, force),
        Command::Gradcheck(args) => commands::gradcheck(&out, args),
        Command::Geometry(args) => commands::geometry(&out, args),
        Command::Anchors(cmd) => commands::anchors(&out, cmd),
    }
}
