//! Run directories, output files and the rerunnable manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::CliError;

pub const MANIFEST_NAME: &str = "manifest.toml";
pub const OUTPUT_DIR_ENV: &str = "MFFILTER_OUTPUT_DIR";

/// --out, then the config's output_dir, then $MFFILTER_OUTPUT_DIR/<run>,
/// then ./runs/<run>, where <run> is `<experiment>_<seed>`.
pub fn output_dir(cli_out: Option<&Path>, config: &ExperimentConfig, env_dir: Option<&Path>) -> PathBuf {
    if let Some(p) = cli_out {
        return p.to_path_buf();
    }
    if let Some(p) = &config.resolved.output_dir {
        return p.clone();
    }
    let run = format!("{}_{}", config.experiment.name(), config.seed);
    match env_dir {
        Some(base) => base.join(run),
        None => Path::new("runs").join(run),
    }
}

/// Collects the files one run writes.
#[derive(Debug)]
pub struct RunOutput {
    dir: PathBuf,
    prefix: String,
    files: Vec<String>,
}

impl RunOutput {
    pub fn create(dir: &Path, config: &ExperimentConfig) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|source| CliError::Output {
            path: dir.to_path_buf(),
            source,
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            prefix: format!("{}_{}", config.experiment.name(), config.seed),
            files: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    /// `<experiment>_<seed>_<suffix>`
    pub fn name(&self, suffix: &str) -> String {
        format!("{}_{suffix}", self.prefix)
    }

    pub fn write(&mut self, suffix: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let name = self.name(suffix);
        let path = self.dir.join(&name);
        fs::write(&path, bytes).map_err(|source| CliError::Output { path: path.clone(), source })?;
        self.files.push(name);
        Ok(path)
    }

    /// Renders with `f` into memory, then writes.
    pub fn write_with<F>(&mut self, suffix: &str, f: F) -> Result<PathBuf, CliError>
    where
        F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    {
        let mut buf = Vec::new();
        f(&mut buf).map_err(|source| CliError::Output {
            path: self.dir.join(self.name(suffix)),
            source,
        })?;
        self.write(suffix, &buf)
    }

    /// Writes manifest.toml: run metadata plus the resolved config under
    /// `[config]`, so `mffilter run manifest.toml` repeats the run.
    pub fn write_manifest(&self, config: &ExperimentConfig) -> Result<PathBuf, CliError> {
        let text = manifest_text(config, &self.files, unix_now());
        let path = self.dir.join(MANIFEST_NAME);
        fs::write(&path, text).map_err(|source| CliError::Output { path: path.clone(), source })?;
        Ok(path)
    }
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub fn config_digest(config: &ExperimentConfig) -> String {
    hex::encode(Sha256::digest(config.resolved_toml().as_bytes()))
}

/// The timestamp sits alone on the `generated_unix` line; everything else
/// is a function of the config and the files written.
pub fn manifest_text(config: &ExperimentConfig, files: &[String], generated_unix: u64) -> String {
    let mut table = toml::Table::new();
    table.insert("generated_unix".into(), toml::Value::Integer(generated_unix as i64));
    table.insert("version".into(), env!("CARGO_PKG_VERSION").into());
    table.insert("experiment".into(), config.experiment.name().into());
    table.insert("seed".into(), toml::Value::Integer(config.seed as i64));
    table.insert("config_sha256".into(), config_digest(config).into());
    table.insert(
        "files".into(),
        toml::Value::Array(files.iter().map(|f| toml::Value::from(f.as_str())).collect()),
    );
    let resolved = toml::Value::try_from(&config.resolved).expect("config serializes");
    table.insert("config".into(), resolved);
    format!(
        "# rerun with: mffilter run {MANIFEST_NAME}\n{}",
        toml::to_string(&table).expect("manifest serializes")
    )
}
