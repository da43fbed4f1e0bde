use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use catfed::config::RunConfig;
use catfed::datasets::{load_dataset, DatasetName, DatasetSpec, Split};
use catfed::runner;
use catfed::Result;

#[derive(Parser)]
#[command(name = "catfed", version, about = "Federated averaging with category-aware client selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment (or several seeds) and write per-round CSV.
    Run {
        /// Path to a `key = value` run configuration.
        config: PathBuf,
        /// Override the output CSV path.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Generate a client partition and its statistics.
    Partition {
        config: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Vary the selection limit N over a fixed partition.
    SweepN {
        config: PathBuf,
        /// Comma-separated N values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
        /// Skip training; report selection size and coverage only.
        #[arg(long)]
        coverage_only: bool,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Print the per-class histogram of a dataset split.
    InspectDataset {
        dataset: DatasetName,
        #[arg(long, default_value = "train")]
        split: Split,
        #[arg(long)]
        data_root: Option<PathBuf>,
    },
    /// Show the sorted order and coverage after each selection step.
    TraceSelection { config: PathBuf },
}

fn load(config: &Path, output: Option<PathBuf>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(out) = output {
        cfg.output = out;
    }
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, output } => {
            let cfg = load(&config, output)?;
            let summary = runner::cmd_run(&cfg)?;
            for p in &summary.csv_paths {
                println!("wrote {}", p.display());
            }
            println!("wrote {}", summary.summary_path.display());
        }
        Command::Partition { config, output } => {
            let cfg = load(&config, output)?;
            let out = runner::cmd_partition(&cfg)?;
            for v in &out.violations {
                eprintln!("warning: {v}");
            }
            println!("wrote {}", out.partition_path.display());
            println!("wrote {}", out.stats_path.display());
        }
        Command::SweepN {
            config,
            values,
            coverage_only,
            output,
        } => {
            let cfg = load(&config, output)?;
            let out = runner::cmd_sweep_n(&cfg, &values, coverage_only)?;
            match out.smallest_full_n {
                Some(n) => println!("smallest N with full coverage: {n}"),
                None => println!("no N in the sweep reached full coverage"),
            }
            println!("wrote {}", out.csv_path.display());
        }
        Command::InspectDataset {
            dataset,
            split,
            data_root,
        } => {
            let root = data_root.unwrap_or_else(|| {
                let mut cfg = RunConfig::new(
                    dataset,
                    catfed::distributions::DistributionKind::D1,
                    catfed::federation::Strategy::FedAvgRandom,
                    0,
                );
                cfg.data_root = None;
                cfg.resolved_data_root()
            });
            print!("{}", runner::inspect_dataset(dataset, split, &root)?);
        }
        Command::TraceSelection { config } => {
            let cfg = RunConfig::load(&config)?;
            let root = cfg.resolved_data_root();
            let train = load_dataset(&DatasetSpec::new(cfg.dataset, Split::Train, &root))?;
            print!("{}", runner::trace_selection(&cfg, &train)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
