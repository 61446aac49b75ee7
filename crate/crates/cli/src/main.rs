use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mffilter::config::ExperimentConfig;
use mffilter::output::{self, OUTPUT_DIR_ENV};
use mffilter::{CliError, Experiment};
use mffilter_core::models::MODEL_NAMES;

#[derive(Debug, Parser)]
#[command(name = "mffilter", version, about = "Run mean-field quantum filtering experiments from TOML configs")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the experiment described by a config or a run manifest.
    Run {
        config: PathBuf,
        /// Override the config's seed.
        #[arg(long, value_parser = clap::value_parser!(u64).range(0..=i64::MAX as u64))]
        seed: Option<u64>,
        /// Output directory (overrides output_dir and $MFFILTER_OUTPUT_DIR).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List experiments, the keys they read and the model names.
    List,
    /// Check a config and print it with defaults filled in.
    Validate {
        config: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u64).range(0..=i64::MAX as u64))]
        seed: Option<u64>,
    },
}

fn load(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, CliError> {
    let config = ExperimentConfig::load(path)?;
    Ok(match seed {
        Some(s) => config.with_seed(s),
        None => config,
    })
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::List => {
            println!("experiments:");
            for e in Experiment::ALL {
                println!("  {:<20} {}", e.name(), e.description());
                println!("  {:<20} keys: {}", "", e.keys());
            }
            println!("models: {}", MODEL_NAMES.join(", "));
            Ok(())
        }
        Command::Validate { config, seed } => {
            let config = load(&config, seed)?;
            print!("{}", config.resolved_toml());
            eprintln!("config ok: {} with seed {}", config.experiment, config.seed);
            Ok(())
        }
        Command::Run { config, seed, out } => {
            let config = load(&config, seed)?;
            let env_dir = std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from);
            let dir = output::output_dir(out.as_deref(), &config, env_dir.as_deref());
            log::info!("running {} with seed {} into {}", config.experiment, config.seed, dir.display());
            let result = mffilter::run_to_dir(&config, &dir)?;
            for line in &result.lines {
                println!("{line}");
            }
            println!("wrote {} files and {} to {}", result.files.len(), output::MANIFEST_NAME, result.dir.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("{}", serde_json::json!({"error": "thread_pool", "reason": e.to_string()}));
            return ExitCode::from(1);
        }
    }
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
