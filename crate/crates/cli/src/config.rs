//! Experiment configuration files (TOML).
//!
//! A config is parsed into [`ConfigFile`], where every key is optional, and
//! then resolved against per-experiment defaults into an [`ExperimentConfig`].
//! The resolved file has every used key filled in and is what the manifest
//! records, so a manifest reruns the experiment exactly.

use std::fmt;
use std::path::{Path, PathBuf};

use mffilter_core::control::ControlLaw;
use mffilter_core::diagnostics::{ChaosMethod, MAX_CHAOS_PARTICLES};
use mffilter_core::kernel::{InteractionKernel, KernelEntry};
use mffilter_core::models::{BlochEquations, ModelParams, MAX_PARTICLES, MODEL_NAMES};
use mffilter_core::quantum::{pauli, BlochVector, ComplexMatrix, DensityMatrix};
use mffilter_core::sde::TimeGrid;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl ConfigError {
    pub fn invalid(field: impl Into<String>, reason: impl fmt::Display) -> Self {
        ConfigError::Invalid {
            field: field.into(),
            reason: reason.to_string(),
        }
    }

    /// Offending field, or the file path for read errors.
    pub fn field(&self) -> String {
        match self {
            ConfigError::Invalid { field, .. } => field.clone(),
            ConfigError::Io { path, .. } => path.display().to_string(),
        }
    }

    pub fn reason(&self) -> String {
        match self {
            ConfigError::Invalid { reason, .. } => reason.clone(),
            ConfigError::Io { source, .. } => source.to_string(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    Reduction,
    Stabilization,
    ChaosScaling,
    Lemma1Sweep,
    PicardVsParticles,
}

impl Experiment {
    pub const ALL: [Experiment; 5] = [
        Experiment::Reduction,
        Experiment::Stabilization,
        Experiment::ChaosScaling,
        Experiment::Lemma1Sweep,
        Experiment::PicardVsParticles,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Reduction => "reduction",
            Experiment::Stabilization => "stabilization",
            Experiment::ChaosScaling => "chaos-scaling",
            Experiment::Lemma1Sweep => "lemma1-sweep",
            Experiment::PicardVsParticles => "picard-vs-particles",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.name() == name)
    }

    pub fn description(self) -> &'static str {
        match self {
            Experiment::Reduction => "uncontrolled filter samples; z trajectories, mean curve and Born-rule reduction statistics",
            Experiment::Stabilization => "feedback-controlled samples; fidelity to the target per trajectory and on average",
            Experiment::ChaosScaling => "joint N-particle filter against mean-field references; E[alpha_N(t)] and log-log slope in N",
            Experiment::Lemma1Sweep => "randomized check of the trace inequality over (A, B, L) triples per dimension",
            Experiment::PicardVsParticles => "mean-field law from Picard iteration against the interacting-particle method",
        }
    }

    /// Sections and keys the experiment reads, for `list`.
    pub fn keys(self) -> &'static str {
        match self {
            Experiment::Reduction => "seed; grid.{horizon,dt}; model.{name,efficiency,kernel,...}; initial; ensemble.{samples,record_trajectories,threshold}",
            Experiment::Stabilization => "seed; grid; model; initial; control.{type,target,c1,c2}; ensemble.{samples,record_trajectories}",
            Experiment::ChaosScaling => "seed; grid; model (efficiency 1); initial (pure); control; chaos.{ns,paths,method,mean_particles}",
            Experiment::Lemma1Sweep => "seed; lemma.{dims,n_triples}",
            Experiment::PicardVsParticles => "seed; grid; model; initial; control; picard.{n_paths,max_iter,tol,particles}",
        }
    }

    fn uses_paths(self) -> bool {
        !matches!(self, Experiment::Lemma1Sweep)
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A matrix given by preset name or as rows of [re, im] pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Preset(String),
    Entries(Vec<Vec<[f64; 2]>>),
}

pub const MATRIX_PRESETS: [&str; 7] = ["sigma_x", "sigma_y", "sigma_z", "identity", "zero", "lowering", "raising"];

impl MatrixSpec {
    pub fn preset(name: &str) -> Self {
        MatrixSpec::Preset(name.to_string())
    }

    pub fn resolve(&self, field: &str) -> Result<ComplexMatrix, ConfigError> {
        match self {
            MatrixSpec::Preset(name) => match name.as_str() {
                "sigma_x" => Ok(pauli::sigma_x()),
                "sigma_y" => Ok(pauli::sigma_y()),
                "sigma_z" => Ok(pauli::sigma_z()),
                "identity" => Ok(ComplexMatrix::identity(2)),
                "zero" => Ok(ComplexMatrix::zeros(2)),
                "lowering" => Ok(pauli::lowering()),
                "raising" => Ok(pauli::raising()),
                other => Err(ConfigError::invalid(
                    field,
                    format!("unknown matrix preset {other:?}; expected one of {}", MATRIX_PRESETS.join(", ")),
                )),
            },
            MatrixSpec::Entries(rows) => {
                let d = rows.len();
                if d == 0 {
                    return Err(ConfigError::invalid(field, "matrix has no rows"));
                }
                if d > 64 {
                    return Err(ConfigError::invalid(field, format!("dimension {d} exceeds 64")));
                }
                let mut entries = Vec::with_capacity(d * d);
                for (i, row) in rows.iter().enumerate() {
                    if row.len() != d {
                        return Err(ConfigError::invalid(field, format!("row {} has {} entries, expected {d}", i + 1, row.len())));
                    }
                    for &[re, im] in row {
                        if !(re.is_finite() && im.is_finite()) {
                            return Err(ConfigError::invalid(field, "entries must be finite"));
                        }
                        entries.push(Complex64::new(re, im));
                    }
                }
                ComplexMatrix::from_vec(d, entries).map_err(|e| ConfigError::invalid(field, e))
            }
        }
    }
}

/// Interaction kernel by preset name or as [l, l', k, k', re, im] rows with
/// 1-based indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KernelSpec {
    Preset(String),
    Entries {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        local_dim: Option<usize>,
        entries: Vec<[f64; 6]>,
    },
}

pub const KERNEL_PRESETS: [&str; 3] = ["photon-exchange", "zero", "none"];

impl KernelSpec {
    pub fn preset(name: &str) -> Self {
        KernelSpec::Preset(name.to_string())
    }

    pub fn is_none(&self) -> bool {
        matches!(self, KernelSpec::Preset(p) if p == "none")
    }

    pub fn resolve(&self, field: &str, dim: usize) -> Result<Option<InteractionKernel>, ConfigError> {
        match self {
            KernelSpec::Preset(name) => match name.as_str() {
                "none" => Ok(None),
                "zero" => Ok(Some(InteractionKernel::zero(dim))),
                "photon-exchange" if dim == 2 => Ok(Some(InteractionKernel::photon_exchange())),
                "photon-exchange" => Err(ConfigError::invalid(field, format!("photon-exchange needs qubits, model dimension is {dim}"))),
                other => Err(ConfigError::invalid(
                    field,
                    format!("unknown kernel preset {other:?}; expected one of {}", KERNEL_PRESETS.join(", ")),
                )),
            },
            KernelSpec::Entries { local_dim, entries } => {
                let d = local_dim.unwrap_or(dim);
                if d != dim {
                    return Err(ConfigError::invalid(field, format!("local_dim {d} differs from the model dimension {dim}")));
                }
                let mut parsed = Vec::with_capacity(entries.len());
                for (n, row) in entries.iter().enumerate() {
                    let mut idx = [0usize; 4];
                    for (slot, &v) in idx.iter_mut().zip(&row[..4]) {
                        if !(v.fract() == 0.0 && (1.0..=64.0).contains(&v)) {
                            return Err(ConfigError::invalid(field, format!("entry {}: index {v} is not a positive integer", n + 1)));
                        }
                        *slot = v as usize;
                    }
                    parsed.push(KernelEntry::new(idx, row[4], row[5]));
                }
                InteractionKernel::from_entries(d, &parsed)
                    .map(Some)
                    .map_err(|e| ConfigError::invalid(field, e))
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub horizon: Option<f64>,
    pub dt: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub name: Option<String>,
    pub efficiency: Option<f64>,
    pub hamiltonian: Option<MatrixSpec>,
    pub control_hamiltonian: Option<MatrixSpec>,
    pub measurement: Option<MatrixSpec>,
    pub kernel: Option<KernelSpec>,
    /// `derived` or `displayed`; meanfield-bloch only.
    pub bloch_equations: Option<String>,
    /// nparticle and nqubit only.
    pub n_particles: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub bloch: Option<[f64; 3]>,
    pub matrix: Option<MatrixSpec>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSection {
    /// `zero`, `constant` or `stabilize`.
    #[serde(rename = "type")]
    pub kind: Option<String>,
    pub value: Option<f64>,
    /// `rho_e` or `rho_g`.
    pub target: Option<String>,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    pub samples: Option<usize>,
    /// How many per-trajectory CSVs to write.
    pub record_trajectories: Option<usize>,
    /// |z_T| above which a path counts as reduced.
    pub threshold: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChaosSection {
    pub ns: Option<Vec<usize>>,
    pub paths: Option<usize>,
    /// `wavefunction` or `density-matrix`.
    pub method: Option<String>,
    pub mean_particles: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PicardSection {
    pub n_paths: Option<usize>,
    pub max_iter: Option<usize>,
    pub tol: Option<f64>,
    /// Ensemble size of the interacting-particle comparison run.
    pub particles: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LemmaSection {
    pub dims: Option<Vec<usize>>,
    pub n_triples: Option<usize>,
}

/// A config file as written, every key optional.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub experiment: Option<String>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub record_every: Option<usize>,
    pub grid: Option<GridSection>,
    pub model: Option<ModelSection>,
    pub initial: Option<InitialSection>,
    pub control: Option<ControlSection>,
    pub ensemble: Option<EnsembleSection>,
    pub chaos: Option<ChaosSection>,
    pub picard: Option<PicardSection>,
    pub lemma: Option<LemmaSection>,
}

impl ConfigFile {
    /// Parses a config, or the `[config]` table of a run manifest.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = toml::from_str(text).map_err(|e| ConfigError::invalid("(syntax)", e.message()))?;
        let table = match table.get("config") {
            Some(toml::Value::Table(inner)) if table.contains_key("config_sha256") => inner.clone(),
            _ => table,
        };
        serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
            let path = e.path().to_string();
            let field = if path == "." { "(root)".to_string() } else { path };
            ConfigError::invalid(field, e.into_inner().message().trim())
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Parses one matrix value, e.g. `"sigma_x"` or `[[[1, 0], [0, 0]], [[0, 0], [1, 0]]]`.
pub fn parse_matrix_spec(text: &str) -> Result<ComplexMatrix, ConfigError> {
    #[derive(Deserialize)]
    struct Wrap {
        m: MatrixSpec,
    }
    let w: Wrap = toml::from_str(&format!("m = {text}")).map_err(|e| ConfigError::invalid("m", e.message()))?;
    w.m.resolve("m")
}

/// Parses a kernel value, e.g. `"photon-exchange"` or
/// `{ entries = [[1, 2, 2, 1, 1.0, 0.0], [2, 1, 1, 2, 1.0, 0.0]] }`.
pub fn parse_kernel_spec(text: &str, dim: usize) -> Result<Option<InteractionKernel>, ConfigError> {
    #[derive(Deserialize)]
    struct Wrap {
        kernel: KernelSpec,
    }
    let w: Wrap = toml::from_str(&format!("kernel = {text}")).map_err(|e| ConfigError::invalid("kernel", e.message()))?;
    w.kernel.resolve("kernel", dim)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Single,
    NParticle,
    MeanField,
    MeanFieldBloch,
    LindbladMean,
    NQubit,
}

impl ModelKind {
    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "single" => ModelKind::Single,
            "nparticle" => ModelKind::NParticle,
            "meanfield" => ModelKind::MeanField,
            "meanfield-bloch" => ModelKind::MeanFieldBloch,
            "lindblad-mean" => ModelKind::LindbladMean,
            "nqubit" => ModelKind::NQubit,
            _ => return None,
        })
    }

    fn fixed_operators(self) -> bool {
        matches!(self, ModelKind::MeanFieldBloch | ModelKind::NQubit)
    }

    fn is_joint(self) -> bool {
        matches!(self, ModelKind::NParticle | ModelKind::NQubit)
    }
}

/// Resolved model choice with its validated parameters.
#[derive(Clone, Debug)]
pub struct ModelSetup {
    pub kind: ModelKind,
    pub params: ModelParams,
    pub bloch_equations: BlochEquations,
    pub n_particles: usize,
}

#[derive(Clone, Debug)]
pub struct PathsSetup {
    pub samples: usize,
    pub record_trajectories: usize,
    pub threshold: f64,
    /// Stabilization target; fidelity is reported against it.
    pub target: Option<DensityMatrix>,
}

#[derive(Clone, Debug)]
pub struct ChaosSetup {
    pub ns: Vec<usize>,
    pub paths: usize,
    pub method: ChaosMethod,
    pub mean_particles: usize,
}

#[derive(Clone, Debug)]
pub struct PicardSetup {
    pub n_paths: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub particles: usize,
}

#[derive(Clone, Debug)]
pub struct LemmaSetup {
    pub dims: Vec<usize>,
    pub n_triples: usize,
}

#[derive(Clone, Debug)]
pub enum Plan {
    Paths(PathsSetup),
    Chaos(ChaosSetup),
    Picard(PicardSetup),
    Lemma(LemmaSetup),
}

/// A validated config with its runtime objects.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    /// Every key the run reads, with defaults filled in.
    pub resolved: ConfigFile,
    pub experiment: Experiment,
    pub seed: u64,
    pub record_every: usize,
    pub grid: Option<TimeGrid>,
    pub model: Option<ModelSetup>,
    pub initial: Option<DensityMatrix>,
    pub control: ControlLaw,
    pub plan: Plan,
}

const DEFAULT_DT: f64 = 1e-3;
const DEFAULT_PATH_HORIZON: f64 = 10.0;
const DEFAULT_SHORT_HORIZON: f64 = 1.0;
const DEFAULT_SAMPLES: usize = 100;
const DEFAULT_RECORDED: usize = 100;
const DEFAULT_THRESHOLD: f64 = 0.95;

fn stabilization_start() -> [f64; 3] {
    [0.25, -0.25, 0.0]
}

fn tilted_start() -> [f64; 3] {
    [0.6, 0.0, 0.8]
}

fn reject<T>(value: &Option<T>, field: &str, experiment: Experiment) -> Result<(), ConfigError> {
    if value.is_some() {
        return Err(ConfigError::invalid(field, format!("not used by the {experiment} experiment")));
    }
    Ok(())
}

fn positive(value: f64, field: &str) -> Result<f64, ConfigError> {
    if !(value.is_finite() && value > 0.0) {
        return Err(ConfigError::invalid(field, format!("must be a positive number, got {value}")));
    }
    Ok(value)
}

fn at_least_one(value: usize, field: &str) -> Result<usize, ConfigError> {
    if value == 0 {
        return Err(ConfigError::invalid(field, "must be at least 1"));
    }
    Ok(value)
}

impl ExperimentConfig {
    pub fn from_file(file: ConfigFile) -> Result<Self, ConfigError> {
        let name = file.experiment.clone().ok_or_else(|| ConfigError::invalid("experiment", "missing"))?;
        let experiment = Experiment::from_name(&name).ok_or_else(|| {
            let names: Vec<_> = Experiment::ALL.iter().map(|e| e.name()).collect();
            ConfigError::invalid("experiment", format!("unknown experiment {name:?}; expected one of {}", names.join(", ")))
        })?;
        let seed = file
            .seed
            .ok_or_else(|| ConfigError::invalid("seed", "missing; every run needs an explicit seed"))?;
        let record_every = at_least_one(file.record_every.unwrap_or(10), "record_every")?;
        let mut resolved = ConfigFile {
            experiment: Some(name),
            seed: Some(seed),
            output_dir: file.output_dir.clone(),
            record_every: Some(record_every),
            ..ConfigFile::default()
        };

        if !experiment.uses_paths() {
            reject(&file.grid, "grid", experiment)?;
            reject(&file.model, "model", experiment)?;
            reject(&file.initial, "initial", experiment)?;
            reject(&file.control, "control", experiment)?;
            reject(&file.ensemble, "ensemble", experiment)?;
            reject(&file.chaos, "chaos", experiment)?;
            reject(&file.picard, "picard", experiment)?;
            let section = file.lemma.clone().unwrap_or_default();
            let dims = section.dims.unwrap_or_else(|| vec![2, 3, 4]);
            if dims.is_empty() {
                return Err(ConfigError::invalid("lemma.dims", "needs at least one dimension"));
            }
            if let Some(&d) = dims.iter().find(|&&d| !(1..=16).contains(&d)) {
                return Err(ConfigError::invalid("lemma.dims", format!("dimension {d} outside 1..=16")));
            }
            let n_triples = at_least_one(section.n_triples.unwrap_or(100_000), "lemma.n_triples")?;
            resolved.lemma = Some(LemmaSection {
                dims: Some(dims.clone()),
                n_triples: Some(n_triples),
            });
            return Ok(Self {
                resolved,
                experiment,
                seed,
                record_every,
                grid: None,
                model: None,
                initial: None,
                control: ControlLaw::Zero,
                plan: Plan::Lemma(LemmaSetup { dims, n_triples }),
            });
        }
        reject(&file.lemma, "lemma", experiment)?;

        let grid_section = file.grid.clone().unwrap_or_default();
        let default_horizon = match experiment {
            Experiment::Reduction | Experiment::Stabilization => DEFAULT_PATH_HORIZON,
            _ => DEFAULT_SHORT_HORIZON,
        };
        let horizon = grid_section.horizon.unwrap_or(default_horizon);
        if !(horizon.is_finite() && horizon >= 0.0) {
            return Err(ConfigError::invalid("grid.horizon", format!("must be a non-negative number, got {horizon}")));
        }
        let dt = positive(grid_section.dt.unwrap_or(DEFAULT_DT), "grid.dt")?;
        let grid = TimeGrid::new(horizon, dt).map_err(|e| ConfigError::invalid("grid", e))?;
        resolved.grid = Some(GridSection {
            horizon: Some(horizon),
            dt: Some(dt),
        });

        let model = resolve_model(&file, experiment, &mut resolved)?;
        let initial = resolve_initial(&file, experiment, &model, &mut resolved)?;
        let (control, target) = resolve_control(&file, experiment, &mut resolved)?;

        let plan = match experiment {
            Experiment::Reduction | Experiment::Stabilization => {
                reject(&file.chaos, "chaos", experiment)?;
                reject(&file.picard, "picard", experiment)?;
                if model.kind == ModelKind::LindbladMean {
                    return Err(ConfigError::invalid("model.name", "lindblad-mean has no sample paths; use picard-vs-particles"));
                }
                if experiment == Experiment::Stabilization && model.params.dim() != 2 {
                    return Err(ConfigError::invalid("model", "stabilization targets qubit states"));
                }
                let section = file.ensemble.clone().unwrap_or_default();
                let samples = at_least_one(section.samples.unwrap_or(DEFAULT_SAMPLES), "ensemble.samples")?;
                let record_trajectories = section.record_trajectories.unwrap_or(samples.min(DEFAULT_RECORDED));
                if record_trajectories > samples {
                    return Err(ConfigError::invalid(
                        "ensemble.record_trajectories",
                        format!("exceeds ensemble.samples = {samples}"),
                    ));
                }
                let threshold = section.threshold.unwrap_or(DEFAULT_THRESHOLD);
                if !(0.0..1.0).contains(&threshold) {
                    return Err(ConfigError::invalid("ensemble.threshold", format!("must lie in [0, 1), got {threshold}")));
                }
                resolved.ensemble = Some(EnsembleSection {
                    samples: Some(samples),
                    record_trajectories: Some(record_trajectories),
                    threshold: (experiment == Experiment::Reduction).then_some(threshold),
                });
                Plan::Paths(PathsSetup {
                    samples,
                    record_trajectories,
                    threshold,
                    target,
                })
            }
            Experiment::ChaosScaling => {
                reject(&file.ensemble, "ensemble", experiment)?;
                reject(&file.picard, "picard", experiment)?;
                if model.params.efficiency() != 1.0 {
                    return Err(ConfigError::invalid("model.efficiency", "chaos-scaling needs perfect detection (1.0)"));
                }
                let section = file.chaos.clone().unwrap_or_default();
                let ns = section.ns.unwrap_or_else(|| vec![2, 4, 8]);
                if ns.is_empty() {
                    return Err(ConfigError::invalid("chaos.ns", "needs at least one particle count"));
                }
                if let Some(&n) = ns.iter().find(|&&n| n == 0 || n > MAX_CHAOS_PARTICLES) {
                    return Err(ConfigError::invalid("chaos.ns", format!("{n} outside 1..={MAX_CHAOS_PARTICLES}")));
                }
                let paths = at_least_one(section.paths.unwrap_or(500), "chaos.paths")?;
                let method_name = section.method.unwrap_or_else(|| "wavefunction".into());
                let method = match method_name.as_str() {
                    "wavefunction" => ChaosMethod::Wavefunction,
                    "density-matrix" => ChaosMethod::DensityMatrix,
                    other => {
                        return Err(ConfigError::invalid(
                            "chaos.method",
                            format!("unknown method {other:?}; expected wavefunction or density-matrix"),
                        ))
                    }
                };
                if method == ChaosMethod::Wavefunction && initial.purity() < 1.0 - 1e-9 {
                    return Err(ConfigError::invalid("initial", "the wavefunction method needs a pure initial state"));
                }
                let mean_particles = at_least_one(section.mean_particles.unwrap_or(2000), "chaos.mean_particles")?;
                resolved.chaos = Some(ChaosSection {
                    ns: Some(ns.clone()),
                    paths: Some(paths),
                    method: Some(method_name),
                    mean_particles: Some(mean_particles),
                });
                Plan::Chaos(ChaosSetup {
                    ns,
                    paths,
                    method,
                    mean_particles,
                })
            }
            Experiment::PicardVsParticles => {
                reject(&file.ensemble, "ensemble", experiment)?;
                reject(&file.chaos, "chaos", experiment)?;
                if !matches!(model.kind, ModelKind::MeanField | ModelKind::MeanFieldBloch) {
                    return Err(ConfigError::invalid("model.name", "picard-vs-particles needs meanfield or meanfield-bloch"));
                }
                let section = file.picard.clone().unwrap_or_default();
                let n_paths = at_least_one(section.n_paths.unwrap_or(2000), "picard.n_paths")?;
                let max_iter = at_least_one(section.max_iter.unwrap_or(20), "picard.max_iter")?;
                let tol = positive(section.tol.unwrap_or(5e-3), "picard.tol")?;
                let particles = at_least_one(section.particles.unwrap_or(10_000), "picard.particles")?;
                resolved.picard = Some(PicardSection {
                    n_paths: Some(n_paths),
                    max_iter: Some(max_iter),
                    tol: Some(tol),
                    particles: Some(particles),
                });
                Plan::Picard(PicardSetup {
                    n_paths,
                    max_iter,
                    tol,
                    particles,
                })
            }
            Experiment::Lemma1Sweep => unreachable!("handled above"),
        };

        Ok(Self {
            resolved,
            experiment,
            seed,
            record_every,
            grid: Some(grid),
            model: Some(model),
            initial: Some(initial),
            control,
            plan,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_file(ConfigFile::load(path)?)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Self::from_file(ConfigFile::parse(text)?)
    }

    /// Replaces the seed, keeping the resolved record in step.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.resolved.seed = Some(seed);
        self
    }

    pub fn with_output_dir(mut self, dir: PathBuf) -> Self {
        self.resolved.output_dir = Some(dir);
        self
    }

    /// The resolved config as TOML.
    pub fn resolved_toml(&self) -> String {
        self.resolved.to_toml()
    }
}

fn resolve_model(file: &ConfigFile, experiment: Experiment, resolved: &mut ConfigFile) -> Result<ModelSetup, ConfigError> {
    let section = file.model.clone().unwrap_or_default();
    let default_name = match experiment {
        Experiment::ChaosScaling => "nqubit",
        _ => "meanfield",
    };
    let name = section.name.clone().unwrap_or_else(|| default_name.to_string());
    let kind = ModelKind::from_name(&name)
        .ok_or_else(|| ConfigError::invalid("model.name", format!("unknown model {name:?}; expected one of {}", MODEL_NAMES.join(", "))))?;
    if experiment == Experiment::ChaosScaling && !kind.is_joint() {
        return Err(ConfigError::invalid("model.name", "chaos-scaling runs the joint filter: nparticle or nqubit"));
    }
    let efficiency = section.efficiency.unwrap_or(1.0);
    if !(efficiency > 0.0 && efficiency <= 1.0) {
        return Err(ConfigError::invalid("model.efficiency", format!("must lie in (0, 1], got {efficiency}")));
    }

    if kind.fixed_operators() {
        for (value, field) in [
            (&section.hamiltonian, "model.hamiltonian"),
            (&section.control_hamiltonian, "model.control_hamiltonian"),
            (&section.measurement, "model.measurement"),
        ] {
            if value.is_some() {
                return Err(ConfigError::invalid(field, format!("{name} fixes H = L = sigma_z and Hhat = sigma_x")));
            }
        }
    }
    let hamiltonian = section.hamiltonian.clone().unwrap_or_else(|| MatrixSpec::preset("sigma_z"));
    let control_hamiltonian = section.control_hamiltonian.clone().unwrap_or_else(|| MatrixSpec::preset("sigma_x"));
    let measurement = section.measurement.clone().unwrap_or_else(|| MatrixSpec::preset("sigma_z"));
    let h = hamiltonian.resolve("model.hamiltonian")?;
    let hhat = control_hamiltonian.resolve("model.control_hamiltonian")?;
    let l = measurement.resolve("model.measurement")?;
    let dim = h.dim();

    let default_kernel = match kind {
        ModelKind::Single => "none",
        _ => "photon-exchange",
    };
    let kernel_spec = section.kernel.clone().unwrap_or_else(|| KernelSpec::preset(default_kernel));
    let kernel = kernel_spec.resolve("model.kernel", dim)?;
    match kind {
        ModelKind::Single if kernel.is_some() => {
            return Err(ConfigError::invalid(
                "model.kernel",
                "the single-particle filter has no interaction; use \"none\"",
            ));
        }
        ModelKind::MeanFieldBloch if !matches!(&kernel_spec, KernelSpec::Preset(p) if KERNEL_PRESETS.contains(&p.as_str())) => {
            return Err(ConfigError::invalid("model.kernel", "meanfield-bloch supports photon-exchange, zero or none"));
        }
        ModelKind::NQubit if !matches!(&kernel_spec, KernelSpec::Preset(p) if p == "photon-exchange") => {
            return Err(ConfigError::invalid("model.kernel", "nqubit uses the photon-exchange kernel"));
        }
        _ => {}
    }

    let bloch_name = section.bloch_equations.clone();
    let bloch_equations = match (kind, bloch_name.as_deref()) {
        (ModelKind::MeanFieldBloch, None | Some("derived")) => BlochEquations::Derived,
        (ModelKind::MeanFieldBloch, Some("displayed")) => BlochEquations::Displayed,
        (ModelKind::MeanFieldBloch, Some(other)) => {
            return Err(ConfigError::invalid(
                "model.bloch_equations",
                format!("unknown form {other:?}; expected derived or displayed"),
            ))
        }
        (_, Some(_)) => return Err(ConfigError::invalid("model.bloch_equations", "only meanfield-bloch reads this key")),
        (_, None) => BlochEquations::Derived,
    };

    let n_particles = match kind {
        ModelKind::NParticle | ModelKind::NQubit => {
            if experiment == Experiment::ChaosScaling {
                if section.n_particles.is_some() {
                    return Err(ConfigError::invalid("model.n_particles", "chaos-scaling takes particle counts from chaos.ns"));
                }
                0
            } else {
                let n = section.n_particles.unwrap_or(2);
                if n == 0 || n > MAX_PARTICLES {
                    return Err(ConfigError::invalid("model.n_particles", format!("{n} outside 1..={MAX_PARTICLES}")));
                }
                n
            }
        }
        _ => {
            if section.n_particles.is_some() {
                return Err(ConfigError::invalid("model.n_particles", "only nparticle and nqubit read this key"));
            }
            1
        }
    };

    let params = ModelParams::new(h, hhat, l, efficiency, kernel).map_err(|e| ConfigError::invalid("model", e))?;
    if kind == ModelKind::MeanFieldBloch && params.dim() != 2 {
        return Err(ConfigError::invalid("model", "meanfield-bloch is a qubit model"));
    }

    resolved.model = Some(ModelSection {
        name: Some(name),
        efficiency: Some(efficiency),
        hamiltonian: (!kind.fixed_operators()).then_some(hamiltonian),
        control_hamiltonian: (!kind.fixed_operators()).then_some(control_hamiltonian),
        measurement: (!kind.fixed_operators()).then_some(measurement),
        kernel: Some(kernel_spec),
        bloch_equations: (kind == ModelKind::MeanFieldBloch).then(|| {
            match bloch_equations {
                BlochEquations::Derived => "derived",
                BlochEquations::Displayed => "displayed",
            }
            .to_string()
        }),
        n_particles: (kind.is_joint() && experiment != Experiment::ChaosScaling).then_some(n_particles),
    });
    Ok(ModelSetup {
        kind,
        params,
        bloch_equations,
        n_particles,
    })
}

fn resolve_initial(file: &ConfigFile, experiment: Experiment, model: &ModelSetup, resolved: &mut ConfigFile) -> Result<DensityMatrix, ConfigError> {
    let section = file.initial.clone().unwrap_or_default();
    let default_bloch = match experiment {
        Experiment::Stabilization => stabilization_start(),
        _ => tilted_start(),
    };
    let (state, record) = match (section.bloch, &section.matrix) {
        (Some(_), Some(_)) => return Err(ConfigError::invalid("initial", "give either bloch or matrix, not both")),
        (None, Some(spec)) => {
            let m = spec.resolve("initial.matrix")?;
            let rho = DensityMatrix::new(m).map_err(|e| ConfigError::invalid("initial.matrix", e))?;
            (
                rho,
                InitialSection {
                    bloch: None,
                    matrix: Some(spec.clone()),
                },
            )
        }
        (bloch, None) => {
            if model.params.dim() != 2 {
                return Err(ConfigError::invalid("initial.matrix", format!("required for dimension {}", model.params.dim())));
            }
            let [x, y, z] = bloch.unwrap_or(default_bloch);
            let rho = BlochVector::new(x, y, z).compose().map_err(|e| ConfigError::invalid("initial.bloch", e))?;
            (
                rho,
                InitialSection {
                    bloch: Some([x, y, z]),
                    matrix: None,
                },
            )
        }
    };
    if state.dim() != model.params.dim() {
        return Err(ConfigError::invalid(
            "initial",
            format!("state dimension {} differs from the model's {}", state.dim(), model.params.dim()),
        ));
    }
    resolved.initial = Some(record);
    Ok(state)
}

fn resolve_control(file: &ConfigFile, experiment: Experiment, resolved: &mut ConfigFile) -> Result<(ControlLaw, Option<DensityMatrix>), ConfigError> {
    let section = file.control.clone().unwrap_or_default();
    let default_kind = if experiment == Experiment::Stabilization { "stabilize" } else { "zero" };
    let kind = section.kind.clone().unwrap_or_else(|| default_kind.to_string());
    let target_of = |name: &str| match name {
        "rho_e" => Ok(DensityMatrix::excited()),
        "rho_g" => Ok(DensityMatrix::ground()),
        other => Err(ConfigError::invalid(
            "control.target",
            format!("unknown target {other:?}; expected rho_e or rho_g"),
        )),
    };
    let (law, record, target) = match kind.as_str() {
        "zero" => {
            for (v, f) in [(&section.value, "control.value"), (&section.c1, "control.c1"), (&section.c2, "control.c2")] {
                if v.is_some() {
                    return Err(ConfigError::invalid(f, "not read by the zero law"));
                }
            }
            if section.target.is_some() {
                return Err(ConfigError::invalid("control.target", "not read by the zero law"));
            }
            (
                ControlLaw::Zero,
                ControlSection {
                    kind: Some(kind.clone()),
                    ..ControlSection::default()
                },
                None,
            )
        }
        "constant" => {
            let value = section
                .value
                .ok_or_else(|| ConfigError::invalid("control.value", "missing for the constant law"))?;
            if !value.is_finite() {
                return Err(ConfigError::invalid("control.value", "must be finite"));
            }
            (
                ControlLaw::Constant(value),
                ControlSection {
                    kind: Some(kind.clone()),
                    value: Some(value),
                    ..ControlSection::default()
                },
                None,
            )
        }
        "stabilize" => {
            if section.value.is_some() {
                return Err(ConfigError::invalid("control.value", "not read by the stabilizing law"));
            }
            let target_name = section.target.clone().unwrap_or_else(|| "rho_e".into());
            let target = target_of(&target_name)?;
            let c1 = section.c1.unwrap_or(7.6);
            let c2 = section.c2.unwrap_or(5.0);
            let law = ControlLaw::stabilizing(target.clone(), c1, c2).map_err(|e| {
                let field = if !(c1.is_finite() && c1 >= 0.0) { "control.c1" } else { "control.c2" };
                ConfigError::invalid(field, e)
            })?;
            (
                law,
                ControlSection {
                    kind: Some(kind.clone()),
                    value: None,
                    target: Some(target_name),
                    c1: Some(c1),
                    c2: Some(c2),
                },
                Some(target),
            )
        }
        other => {
            return Err(ConfigError::invalid(
                "control.type",
                format!("unknown law {other:?}; expected zero, constant or stabilize"),
            ))
        }
    };
    if experiment == Experiment::Stabilization && target.is_none() {
        return Err(ConfigError::invalid("control.type", "stabilization needs the stabilize law"));
    }
    resolved.control = Some(record);
    Ok((law, target))
}
