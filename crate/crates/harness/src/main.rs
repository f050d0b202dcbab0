//! `oem` — experiment driver for the online EM library.
//!
//! Verbs: `generate` synthetic datasets, `run` a configured experiment,
//! `plot` result CSVs to SVG, and `ingest-check` an external CSV against a
//! family's expected layout.  Exit codes: 0 success, 2 config error,
//! 3 numerical error, 4 I/O error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use oem_harness::config::{self, ExperimentConfig, Family};
use oem_harness::{data, experiment, plot, HarnessError};

#[derive(Parser)]
#[command(name = "oem", version, about = "online EM experiment driver")]
struct Cli {
    /// Print the config-file schema and exit.
    #[arg(long, global = true)]
    print_schema: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config file (TOML).
    #[arg(long)]
    config: PathBuf,

    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset and its ground-truth model.
    Generate {
        #[command(flatten)]
        common: ConfigArgs,
    },
    /// Run the configured experiment and write result CSVs.
    Run {
        #[command(flatten)]
        common: ConfigArgs,

        /// Worker threads for distributed mode (results are unaffected).
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Render result CSVs to one SVG learning-curve plot.
    Plot {
        /// Input CSV files.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,

        /// Output SVG path.
        #[arg(long, default_value = "plot.svg")]
        out: PathBuf,

        /// Plot title.
        #[arg(long, default_value = "learning curves")]
        title: String,
    },
    /// Parse a CSV dataset and echo its shape.
    IngestCheck {
        /// CSV file to check.
        path: PathBuf,

        /// Family whose layout the file should follow.
        #[arg(long)]
        family: Family,
    },
}

fn load_config(common: &ConfigArgs) -> Result<ExperimentConfig, HarnessError> {
    let mut config = ExperimentConfig::from_path(&common.config)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn execute(cli: Cli) -> Result<(), HarnessError> {
    if cli.print_schema {
        print!("{}", config::SCHEMA);
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(HarnessError::config(
            "no command given; try --help or --print-schema",
        ));
    };
    match command {
        Command::Generate { common } => {
            let config = load_config(&common)?;
            let (data_path, truth_path) = experiment::generate_files(&config, &common.out)?;
            println!("wrote {}", data_path.display());
            println!("wrote {}", truth_path.display());
        }
        Command::Run { common, threads } => {
            let config = load_config(&common)?;
            let artifacts = experiment::run(&config, &common.out, threads)?;
            for path in &artifacts.log_paths {
                println!("wrote {}", path.display());
            }
            println!("wrote {}", artifacts.summary_path.display());
        }
        Command::Plot { inputs, out, title } => {
            plot::plot_files(&inputs, &out, &title)?;
            println!("wrote {}", out.display());
        }
        Command::IngestCheck { path, family } => {
            let dataset = data::read_dataset(&path, family)?;
            println!("{}", dataset.summary());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
