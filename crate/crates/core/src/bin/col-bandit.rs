use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use col_bandit::experiment::{self, RunOptions};

/// Adaptive MaxSim reranking experiments.
#[derive(Parser)]
#[command(name = "col-bandit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured method(s) and write per-query results and a frontier table.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's `seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        workers: Option<usize>,
        /// Include full reveal traces in the results file.
        #[arg(long)]
        trace: bool,
    },
    /// Generate synthetic matrices or embeddings.
    Gen {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `synth.spec.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check data files, manifests and candidate artifacts.
    Verify { path: PathBuf },
}

const MAX_LISTED: usize = 10;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("COL_BANDIT_LOG", "warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run {
            config,
            seed,
            workers,
            trace,
        } => experiment::cmd_run(&config, RunOptions { seed, workers, trace }).map(|rep| {
            println!(
                "wrote {} result lines to {} and {} frontier rows to {}",
                rep.records,
                rep.results_path.display(),
                rep.points.len(),
                rep.frontier_path.display()
            );
            true
        }),
        Command::Gen { config, seed } => experiment::cmd_gen(&config, seed).map(|rep| {
            println!("wrote {} files; manifest {}", rep.files, rep.manifest.display());
            true
        }),
        Command::Verify { path } => experiment::cmd_verify(&path).map(|rep| {
            for v in rep.violations.iter().take(MAX_LISTED) {
                println!("violation: {v}");
            }
            if rep.violations.len() > MAX_LISTED {
                println!("... and {} more", rep.violations.len() - MAX_LISTED);
            }
            println!(
                "{}: {} files, {} re-scored cells, {} violations",
                if rep.passed() { "PASS" } else { "FAIL" },
                rep.files_checked,
                rep.cells_checked,
                rep.violations.len()
            );
            rep.passed()
        }),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
