//! Experiment runner for the controlled quantum filter library: config
//! parsing, the named experiments and their output files.

use std::path::PathBuf;

use thiserror::Error;

pub mod config;
pub mod experiments;
pub mod output;

pub use config::{ConfigError, ConfigFile, Experiment, ExperimentConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("experiment {experiment} failed: {reason}")]
    ExperimentFailed { experiment: String, reason: String },
    #[error("cannot write {path}: {source}")]
    Output { path: PathBuf, source: std::io::Error },
}

impl CliError {
    /// 2 for config errors, 1 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }

    /// One-line JSON description for stderr.
    pub fn to_json(&self) -> serde_json::Value {
        match self {
            CliError::Config(ConfigError::Io { path, source }) => serde_json::json!({
                "error": "config_unreadable",
                "path": path.display().to_string(),
                "reason": source.to_string(),
            }),
            CliError::Config(e) => serde_json::json!({
                "error": "config_invalid",
                "field": e.field(),
                "reason": e.reason(),
            }),
            CliError::ExperimentFailed { experiment, reason } => serde_json::json!({
                "error": "experiment_failed",
                "experiment": experiment,
                "reason": reason,
            }),
            CliError::Output { path, source } => serde_json::json!({
                "error": "experiment_failed",
                "reason": format!("cannot write {}: {source}", path.display()),
            }),
        }
    }
}

/// Runs a resolved config into `dir` and writes the manifest last.
pub fn run_to_dir(config: &ExperimentConfig, dir: &std::path::Path) -> Result<RunResult, CliError> {
    let mut out = output::RunOutput::create(dir, config)?;
    let lines = experiments::run(config, &mut out)?;
    let manifest = out.write_manifest(config)?;
    Ok(RunResult {
        dir: dir.to_path_buf(),
        files: out.files().to_vec(),
        manifest,
        lines,
    })
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub dir: PathBuf,
    pub files: Vec<String>,
    pub manifest: PathBuf,
    /// Human-readable summary lines.
    pub lines: Vec<String>,
}
