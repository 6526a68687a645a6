use std::path::PathBuf;
use std::process::ExitCode;

use cevae_cli::{config::ExperimentConfig, read_results, render_table, run, summarize, CliError, RunOptions};
use cevae_core::data;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cevae", version, about = "Treatment-effect experiments with CEVAE and baselines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write results.csv, summary.json and curves.csv.
    Run {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(short, long)]
        output_dir: Option<PathBuf>,
        /// Replications run concurrently.
        #[arg(short, long, default_value_t = 1)]
        workers: usize,
        /// Use this single seed instead of the config's seed list.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(short, long)]
        quiet: bool,
    },
    /// Print per-estimator mean ± standard error from a results CSV.
    Summarize {
        results: PathBuf,
        /// Emit the JSON summary instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Check that the external benchmark files are present and readable.
    ValidateData {
        /// Defaults to $CEVAE_DATA_DIR.
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
}

fn validate_data(dir: Option<PathBuf>) -> Result<(), CliError> {
    let dir = dir
        .or_else(data::data_dir_from_env)
        .ok_or_else(|| CliError::DataNotFound(format!("pass --data-dir or set {}", data::DATA_DIR_ENV)))?;
    let mut found = 0;
    match data::benchmarks::ihdp_replications(&dir).and_then(|n| data::load_ihdp(&dir, 1).map(|_| n)) {
        Ok(n) => {
            println!("ihdp: ok ({n} replications)");
            found += 1;
        }
        Err(e) => println!("ihdp: {e}"),
    }
    match data::load_jobs(&dir, 1) {
        Ok(b) => {
            println!("jobs: ok ({} training units in fold 1)", b.train.len());
            found += 1;
        }
        Err(e) => println!("jobs: {e}"),
    }
    match data::load_twins(&dir) {
        Ok(_) => {
            println!("twins: ok");
            found += 1;
        }
        Err(e) => println!("twins: {e}"),
    }
    if found == 0 {
        return Err(CliError::DataNotFound(format!("no benchmark data in {}", dir.display())));
    }
    Ok(())
}

fn main_inner(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Run {
            config,
            output_dir,
            workers,
            seed,
            quiet,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let outcome = run(
                &cfg,
                &RunOptions {
                    workers,
                    output_dir,
                    seed,
                    quiet,
                },
            )?;
            if !outcome.rows.is_empty() {
                print!("{}", render_table(&outcome.summary));
            }
            println!("wrote {}", outcome.output_dir.display());
            if outcome.failed > 0 {
                eprintln!("{} rows failed", outcome.failed);
            }
            Ok(outcome.exit_code())
        }
        Command::Summarize { results, json } => {
            let s = summarize(&read_results(&results)?);
            if json {
                println!("{}", serde_json::to_string_pretty(&s).map_err(|e| CliError::Io(e.to_string()))?);
            } else {
                print!("{}", render_table(&s));
            }
            Ok(0)
        }
        Command::ValidateData { data_dir } => validate_data(data_dir).map(|_| 0),
    }
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
