use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ergodiff::models;
use ergodiff::runner::{emit_report, exit_code, run_experiment, ExperimentConfig};

/// Monte Carlo experiments on ergodic diffusions and slow-fast systems.
///
/// Set ERGODIFF_THREADS to fix the worker count; results do not depend on it.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its CSV tables and report.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List model and slow-fast system labels.
    ListModels,
    /// Check a config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn init_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("ERGODIFF_THREADS") else {
        return Ok(());
    };
    let n: usize = v.parse().map_err(|_| format!("ERGODIFF_THREADS must be a positive integer, got {v:?}"))?;
    if n == 0 {
        return Err("ERGODIFF_THREADS must be at least 1".into());
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    match cli.command {
        Command::ListModels => {
            for m in models::MODEL_LABELS {
                println!("model   {m}");
            }
            for s in models::SYSTEM_LABELS {
                println!("system  {s}");
            }
            ExitCode::SUCCESS
        }
        Command::Validate { config } => match ExperimentConfig::load(&config) {
            Ok(cfg) => {
                println!("{}: valid {} experiment", config.display(), cfg.experiment.kind());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(1)
            }
        },
        Command::Run { config, seed, out } => {
            let result = ExperimentConfig::load(&config).and_then(|mut cfg| {
                if let Some(s) = seed {
                    cfg.seed = s;
                }
                if let Some(o) = out {
                    cfg.output_dir = o;
                }
                let report = run_experiment(&cfg)?;
                emit_report(&report, &cfg.output_dir)?;
                Ok(report)
            });
            match &result {
                Ok(r) => {
                    for c in &r.checks {
                        println!("{} {}: {} (bound {})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.value, c.bound);
                    }
                    println!("wrote {}", r.config.output_dir.display());
                }
                Err(e) => eprintln!("error: {e}"),
            }
            ExitCode::from(exit_code(&result) as u8)
        }
    }
}
