//! Configuration and commands behind the `dca` binary.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{
    bench, export_filters, gen_data, read_designs_csv, train, validate, worker, GenDataSummary,
    TrainSummary,
};
pub use config::{BenchConfig, DataConfig, Overrides, RunConfig};

use crate::error::Result;

#[derive(Debug, Parser)]
#[command(name = "dca", version, about = "Distributed 1D convolutional autoencoder for fMRI-like time series")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON run configuration; defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Replaces every seed in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum CliCommand {
    /// Write train.fmts, eval.fmts, designs.csv and truth.csv.
    GenData(CommonArgs),
    /// Train and write model.dpsg plus loss, staleness and throughput CSVs.
    Train(CommonArgs),
    /// Time a fixed step budget per worker count; writes bench.csv.
    Bench {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated worker counts, e.g. 1,2,4.
        #[arg(long, value_delimiter = ',')]
        worker_counts: Option<Vec<usize>>,
    },
    /// Dictionary learning on raw and hidden features; writes validation.csv.
    Validate(CommonArgs),
    /// Write the first-layer filters to filters.csv.
    ExportFilters(CommonArgs),
    /// One worker process of a socket-mode run.
    #[command(hide = true)]
    Worker {
        #[arg(long)]
        connect: String,
        #[arg(long)]
        worker_id: u32,
        /// Resolved configuration written by the parent `train`.
        #[arg(long)]
        config: PathBuf,
    },
}

fn resolve(c: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(c.config.as_deref())?;
    cfg.apply(&Overrides {
        workers: c.workers,
        seed: c.seed,
        out: c.out.clone(),
    });
    Ok(cfg)
}

/// Executes a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        CliCommand::GenData(c) => {
            let s = gen_data(&resolve(&c)?)?;
            println!(
                "wrote {} training and {} evaluation signals ({} rejected)",
                s.train_signals, s.eval_signals, s.rejected
            );
        }
        CliCommand::Train(c) => {
            let exe = std::env::current_exe()?;
            let s = train(&resolve(&c)?, Some(&exe))?;
            println!(
                "{} updates, final loss {:.4}, {:.2} ms per batch, max staleness {}; model at {}",
                s.applied_steps,
                s.final_loss,
                s.mean_batch_ms,
                s.max_staleness,
                s.model_path.display()
            );
        }
        CliCommand::Bench { common, worker_counts } => {
            let mut cfg = resolve(&common)?;
            if let Some(w) = worker_counts {
                cfg.bench.worker_counts = w;
            }
            for r in bench(&cfg)? {
                println!(
                    "{} workers: {:.2} ms per batch, speedup {:.2}",
                    r.worker_count, r.mean_batch_ms, r.speedup_vs_1
                );
            }
        }
        CliCommand::Validate(c) => {
            let r = validate(&resolve(&c)?)?;
            println!(
                "mean best |PCC|: hidden features {:.3}, raw signals {:.3}",
                r.setup1_mean_pcc(),
                r.setup2_mean_pcc()
            );
        }
        CliCommand::ExportFilters(c) => {
            println!("{}", export_filters(&resolve(&c)?)?.display());
        }
        CliCommand::Worker {
            connect,
            worker_id,
            config,
        } => worker(&RunConfig::read_resolved(&config)?, &connect, worker_id)?,
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
