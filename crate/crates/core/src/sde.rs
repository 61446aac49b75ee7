//! Euler-Maruyama integration of Ito SDEs on density matrices and Bloch
//! vectors, with reproducible per-channel noise and trajectory recording.

use std::io::{self, Write};

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::meanfield::MeanFlow;
use crate::models::ModelError;
use crate::quantum::{project_state, BlochVector, ComplexMatrix, DensityMatrix, QuantumError, ONE};

pub const DEFAULT_RECORD_EVERY: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdeError {
    #[error("invalid time grid: horizon {horizon}, dt {dt}")]
    InvalidGrid { horizon: f64, dt: f64 },
    #[error("model has {model} noise channels but the plan provides {noise}")]
    ChannelMismatch { model: usize, noise: usize },
    #[error("detector efficiency {0} outside (0, 1]")]
    EfficiencyOutOfRange(f64),
    #[error("record_every must be positive")]
    ZeroRecordInterval,
    #[error("non-finite state at step {step}")]
    NonFinite { step: usize },
    #[error("projection failed at step {step}: {source}")]
    ProjectionFailed { step: usize, source: QuantumError },
    #[error("model evaluation failed at step {step}: {source}")]
    Model { step: usize, source: ModelError },
    #[error("model is mean-coupled but no mean source was given")]
    MissingMeanSource,
    #[error("mean flow has {found} points, grid needs {needed}")]
    MeanFlowLength { needed: usize, found: usize },
}

/// Uniform grid on [0, horizon].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    dt: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, dt: f64) -> Result<Self, SdeError> {
        let invalid = SdeError::InvalidGrid { horizon, dt };
        if !(dt.is_finite() && dt > 0.0 && horizon.is_finite() && horizon >= 0.0) {
            return Err(invalid);
        }
        let n = (horizon / dt).round();
        if (n * dt - horizon).abs() > 1e-12 * horizon.max(1.0) || n > u32::MAX as f64 {
            return Err(invalid);
        }
        Ok(Self {
            horizon,
            dt,
            n_steps: n as usize,
        })
    }

    pub fn from_steps(dt: f64, n_steps: usize) -> Result<Self, SdeError> {
        Self::new(dt * n_steps as f64, dt)
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.dt
    }

    #[inline]
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    #[inline]
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Number of grid points, n_steps + 1.
    #[inline]
    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.dt
    }

    /// Grid index closest to t, if t lies on the grid.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let k = (t / self.dt).round();
        if k < 0.0 || k as usize > self.n_steps || (k * self.dt - t).abs() > 1e-9 * self.dt.max(1.0) {
            return None;
        }
        Some(k as usize)
    }
}

/// Independent Gaussian increments indexed by (seed, channel, step).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NoisePlan {
    seed: u64,
    n_channels: usize,
}

impl NoisePlan {
    pub fn new(seed: u64, n_channels: usize) -> Self {
        Self { seed, n_channels }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    /// Stream id of channel `k` of sample path `path`.
    #[inline]
    pub fn channel_id(&self, path: u64, k: usize) -> u64 {
        path * self.n_channels as u64 + k as u64
    }

    pub fn stream(&self, channel_id: u64) -> NoiseStream {
        NoiseStream::new(self.seed, channel_id)
    }

    /// Random access to one increment; equals the sequential stream value.
    pub fn increment(&self, channel_id: u64, step: usize, dt: f64) -> f64 {
        let mut s = self.stream(channel_id);
        s.seek(step);
        s.next_increment(dt)
    }
}

/// Sequential reader over one channel. Every step consumes exactly two
/// 64-bit words, so the position of step k is fixed at word 4k.
#[derive(Clone, Debug)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(seed: u64, channel_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(channel_id);
        Self { rng }
    }

    pub fn seek(&mut self, step: usize) {
        self.rng.set_word_pos(step as u128 * 4);
    }

    /// Box-Muller on two words.
    pub fn next_normal(&mut self) -> f64 {
        let a = self.rng.next_u64();
        let b = self.rng.next_u64();
        let u1 = ((a >> 11) as f64 + 1.0) * (1.0 / (1u64 << 53) as f64);
        let u2 = (b >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    #[inline]
    pub fn next_increment(&mut self, dt: f64) -> f64 {
        dt.sqrt() * self.next_normal()
    }
}

/// Vector-space operations the integrator needs from a state type.
pub trait SdeState: Clone + Send + Sync + std::fmt::Debug {
    fn zeros_like(&self) -> Self;
    /// self += a * x
    fn axpy(&mut self, a: f64, x: &Self);
    fn scale(&mut self, a: f64);
    fn is_finite(&self) -> bool;
    /// Frobenius distance between the represented density matrices.
    fn distance(&self, other: &Self) -> f64;
    /// |tr - 1| of the represented matrix.
    fn trace_defect(&self) -> f64;
    fn components(&self) -> Vec<f64>;
    fn component_names(&self) -> Vec<String>;
}

impl SdeState for ComplexMatrix {
    fn zeros_like(&self) -> Self {
        ComplexMatrix::zeros(self.dim())
    }

    fn axpy(&mut self, a: f64, x: &Self) {
        self.axpy_real(a, x);
    }

    fn scale(&mut self, a: f64) {
        for z in self.as_mut_slice() {
            *z *= a;
        }
    }

    fn is_finite(&self) -> bool {
        ComplexMatrix::is_finite(self)
    }

    fn distance(&self, other: &Self) -> f64 {
        (self - other).frobenius_norm()
    }

    fn trace_defect(&self) -> f64 {
        (self.trace() - ONE).norm()
    }

    /// Bloch coordinates for qubits, otherwise the real diagonal followed by
    /// the upper triangle as (re, im) pairs.
    fn components(&self) -> Vec<f64> {
        if self.dim() == 2 {
            return BlochVector::from_matrix_unchecked(self).as_array().to_vec();
        }
        let d = self.dim();
        let mut out: Vec<f64> = (0..d).map(|i| self[(i, i)].re).collect();
        for i in 0..d {
            for j in i + 1..d {
                out.push(self[(i, j)].re);
                out.push(self[(i, j)].im);
            }
        }
        out
    }

    fn component_names(&self) -> Vec<String> {
        if self.dim() == 2 {
            return vec!["x".into(), "y".into(), "z".into()];
        }
        let d = self.dim();
        let mut out: Vec<String> = (0..d).map(|i| format!("p{i}")).collect();
        for i in 0..d {
            for j in i + 1..d {
                out.push(format!("re{i}{j}"));
                out.push(format!("im{i}{j}"));
            }
        }
        out
    }
}

impl SdeState for BlochVector {
    fn zeros_like(&self) -> Self {
        BlochVector::default()
    }

    fn axpy(&mut self, a: f64, v: &Self) {
        self.x += a * v.x;
        self.y += a * v.y;
        self.z += a * v.z;
    }

    fn scale(&mut self, a: f64) {
        self.x *= a;
        self.y *= a;
        self.z *= a;
    }

    fn is_finite(&self) -> bool {
        BlochVector::is_finite(self)
    }

    fn distance(&self, other: &Self) -> f64 {
        let d = BlochVector::new(self.x - other.x, self.y - other.y, self.z - other.z);
        d.norm() / std::f64::consts::SQRT_2
    }

    fn trace_defect(&self) -> f64 {
        0.0
    }

    fn components(&self) -> Vec<f64> {
        self.as_array().to_vec()
    }

    fn component_names(&self) -> Vec<String> {
        vec!["x".into(), "y".into(), "z".into()]
    }
}

/// Inputs the model needs besides the state itself.
#[derive(Clone, Copy, Debug)]
pub struct StepEnv<'a, S> {
    pub step: usize,
    pub controls: &'a [f64],
    pub mean: Option<&'a S>,
}

#[derive(Clone, Debug)]
pub struct Coefficients<S> {
    pub drift: S,
    pub diffusion: Vec<S>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Diagnostics {
    /// |tr - 1| before projection.
    pub trace_error: f64,
    pub min_eigenvalue: f64,
    pub purity: f64,
}

/// Drift and diffusion of an Ito SDE plus its state-space projection.
pub trait SdeModel: Send + Sync {
    type State: SdeState;

    fn name(&self) -> &'static str;

    fn n_channels(&self) -> usize;

    /// Whether the drift reads the mean-field flow.
    fn mean_coupled(&self) -> bool {
        false
    }

    /// Control values for the current state, one per controlled subsystem.
    fn controls(&self, state: &Self::State) -> Result<Vec<f64>, ModelError>;

    fn coefficients(&self, state: &Self::State, env: &StepEnv<'_, Self::State>) -> Result<Coefficients<Self::State>, ModelError>;

    /// Unprojected Euler update. Models may override this with a fused
    /// computation that never materializes the diffusion list.
    fn euler_raw(&self, state: &Self::State, env: &StepEnv<'_, Self::State>, dw: &[f64], dt: f64) -> Result<Self::State, ModelError> {
        let coeffs = self.coefficients(state, env)?;
        Ok(euler_update(state, &coeffs, dw, dt))
    }

    /// The drift of channel k's observation, dY = dW + signal dt.
    fn signal(&self, state: &Self::State, channel: usize) -> f64;

    /// Maps a raw Euler update back onto the state space. `step` is the
    /// index of the state being produced.
    fn project(&self, raw: Self::State, step: usize) -> Result<Self::State, QuantumError>;

    /// The state as written to a trajectory record. Models that project
    /// lazily between steps return the fully projected state here.
    fn recorded(&self, state: &Self::State) -> Result<Self::State, QuantumError> {
        Ok(state.clone())
    }

    /// Minimum eigenvalue and purity of a projected state.
    fn inspect(&self, state: &Self::State) -> (f64, f64);

    fn components(&self, state: &Self::State) -> Vec<f64> {
        state.components()
    }

    fn component_names(&self, state: &Self::State) -> Vec<String> {
        state.component_names()
    }
}

/// dY = dW + sqrt(eta) tr((L + L^dag) rho) dt
pub fn observation_increment(rho: &DensityMatrix, l: &ComplexMatrix, eta: f64, dw: f64, dt: f64) -> Result<f64, SdeError> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(SdeError::EfficiencyOutOfRange(eta));
    }
    let signal = 2.0 * rho.as_matrix().trace_product(l).re;
    Ok(dw + eta.sqrt() * signal * dt)
}

/// state + drift dt + sum_k diffusion_k dW_k, without projection.
pub fn euler_update<S: SdeState>(state: &S, coeffs: &Coefficients<S>, dw: &[f64], dt: f64) -> S {
    let mut next = state.clone();
    next.axpy(dt, &coeffs.drift);
    for (g, &w) in coeffs.diffusion.iter().zip(dw) {
        next.axpy(w, g);
    }
    next
}

/// One projected Euler-Maruyama step of `model`.
pub fn euler_step<M: SdeModel>(model: &M, state: &M::State, env: &StepEnv<'_, M::State>, dw: &[f64], dt: f64) -> Result<(M::State, f64), SdeError> {
    let step = env.step;
    let raw = model.euler_raw(state, env, dw, dt).map_err(|source| SdeError::Model { step, source })?;
    if !raw.is_finite() {
        return Err(SdeError::NonFinite { step });
    }
    let defect = raw.trace_defect();
    let next = model.project(raw, step + 1).map_err(|source| SdeError::ProjectionFailed { step, source })?;
    Ok((next, defect))
}

/// Euler step for explicitly given coefficient functions on density matrices.
pub fn euler_step_with<F, G>(rho: &ComplexMatrix, drift: F, diffusions: &[G], dw: &[f64], dt: f64) -> Result<DensityMatrix, SdeError>
where
    F: Fn(&ComplexMatrix) -> ComplexMatrix,
    G: Fn(&ComplexMatrix) -> ComplexMatrix,
{
    let coeffs = Coefficients {
        drift: drift(rho),
        diffusion: diffusions.iter().map(|g| g(rho)).collect(),
    };
    let raw = euler_update(rho, &coeffs, dw, dt);
    if !raw.is_finite() {
        return Err(SdeError::NonFinite { step: 0 });
    }
    project_state(&raw)
        .map(|p| p.state)
        .map_err(|source| SdeError::ProjectionFailed { step: 0, source })
}

/// Where a mean-coupled model reads m_t from.
#[derive(Debug)]
pub enum MeanSource<'a, S> {
    None,
    /// A frozen flow with one entry per grid point.
    Flow(&'a MeanFlow<S>),
    /// m_t = the particle's own state.
    SelfCoupled,
}

impl<S> Clone for MeanSource<'_, S> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<S> Copy for MeanSource<'_, S> {}

/// What an integration observer sees at each grid point.
#[derive(Debug)]
pub struct StepView<'a, S> {
    pub step: usize,
    pub state: &'a S,
    pub controls: &'a [f64],
    /// Increments of the step that produced this state; zero at step 0.
    pub dw: &'a [f64],
    pub dy: &'a [f64],
    pub trace_error: f64,
}

/// Integrates one sample path, calling `observe` at every grid point.
pub fn integrate<M, F>(
    model: &M,
    x0: &M::State,
    grid: &TimeGrid,
    noise: &NoisePlan,
    path: u64,
    mean: MeanSource<'_, M::State>,
    mut observe: F,
) -> Result<M::State, SdeError>
where
    M: SdeModel,
    F: FnMut(&StepView<'_, M::State>),
{
    let n_ch = model.n_channels();
    if n_ch != noise.n_channels() {
        return Err(SdeError::ChannelMismatch {
            model: n_ch,
            noise: noise.n_channels(),
        });
    }
    if model.mean_coupled() {
        match mean {
            MeanSource::None => return Err(SdeError::MissingMeanSource),
            MeanSource::Flow(f) if f.means().len() < grid.len() => {
                return Err(SdeError::MeanFlowLength {
                    needed: grid.len(),
                    found: f.means().len(),
                })
            }
            _ => {}
        }
    }
    let mut streams: Vec<NoiseStream> = (0..n_ch).map(|k| noise.stream(noise.channel_id(path, k))).collect();
    let dt = grid.dt();
    let mut state = x0.clone();
    let mut dw = vec![0.0; n_ch];
    let mut dy = vec![0.0; n_ch];
    let mut trace_error = state.trace_defect();
    for step in 0..=grid.n_steps() {
        let controls = model.controls(&state).map_err(|source| SdeError::Model { step, source })?;
        observe(&StepView {
            step,
            state: &state,
            controls: &controls,
            dw: &dw,
            dy: &dy,
            trace_error,
        });
        if step == grid.n_steps() {
            break;
        }
        for (k, s) in streams.iter_mut().enumerate() {
            dw[k] = s.next_increment(dt);
            dy[k] = dw[k] + model.signal(&state, k) * dt;
        }
        let mean_ref = match mean {
            MeanSource::None => None,
            MeanSource::Flow(f) => Some(&f.means()[step]),
            MeanSource::SelfCoupled => Some(&state),
        };
        let env = StepEnv {
            step,
            controls: &controls,
            mean: mean_ref,
        };
        let (next, defect) = euler_step(model, &state, &env, &dw, dt)?;
        state = next;
        trace_error = defect;
    }
    Ok(state)
}

/// Recorded sample path. Increments are summed over each recording interval.
#[derive(Clone, Debug)]
pub struct TrajectoryRecord<S> {
    pub component_names: Vec<String>,
    pub n_channels: usize,
    pub steps: Vec<usize>,
    pub times: Vec<f64>,
    pub states: Vec<S>,
    pub components: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    pub dw: Vec<Vec<f64>>,
    pub dy: Vec<Vec<f64>>,
    pub diagnostics: Vec<Diagnostics>,
}

impl<S> TrajectoryRecord<S> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> Option<&S> {
        self.states.last()
    }

    pub fn component(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.component_names.iter().position(|n| n == name)?;
        Some(self.components.iter().map(|c| c[idx]).collect())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let n_controls = self.controls.first().map_or(0, Vec::len);
        let mut header = vec!["time".to_string()];
        header.extend(self.component_names.iter().cloned());
        header.extend(indexed("u", n_controls));
        header.extend(indexed("dW", self.n_channels));
        header.extend(indexed("dY", self.n_channels));
        header.extend(["trace_error", "min_eigenvalue", "purity"].map(String::from));
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.len() {
            let mut row = vec![self.times[i]];
            row.extend(&self.components[i]);
            row.extend(&self.controls[i]);
            row.extend(&self.dw[i]);
            row.extend(&self.dy[i]);
            let d = self.diagnostics[i];
            row.extend([d.trace_error, d.min_eigenvalue, d.purity]);
            writeln!(w, "{}", join_floats(&row))?;
        }
        Ok(())
    }
}

fn indexed(prefix: &str, n: usize) -> Vec<String> {
    if n == 1 {
        vec![prefix.to_string()]
    } else {
        (1..=n).map(|k| format!("{prefix}_{k}")).collect()
    }
}

/// Full-precision, locale-free float formatting used by every CSV writer.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn join_floats(values: &[f64]) -> String {
    values.iter().map(|&v| format_float(v)).collect::<Vec<_>>().join(",")
}

/// Runs one path and records every `record_every`-th grid point plus the last.
pub fn run_trajectory<M: SdeModel>(
    model: &M,
    x0: &M::State,
    grid: &TimeGrid,
    noise: &NoisePlan,
    path: u64,
    mean: MeanSource<'_, M::State>,
    record_every: usize,
) -> Result<TrajectoryRecord<M::State>, SdeError> {
    if record_every == 0 {
        return Err(SdeError::ZeroRecordInterval);
    }
    let n_ch = model.n_channels();
    let mut rec = TrajectoryRecord {
        component_names: model.component_names(x0),
        n_channels: n_ch,
        steps: Vec::new(),
        times: Vec::new(),
        states: Vec::new(),
        components: Vec::new(),
        controls: Vec::new(),
        dw: Vec::new(),
        dy: Vec::new(),
        diagnostics: Vec::new(),
    };
    let mut acc_w = vec![0.0; n_ch];
    let mut acc_y = vec![0.0; n_ch];
    let last = grid.n_steps();
    let mut failure = None;
    integrate(model, x0, grid, noise, path, mean, |v| {
        for k in 0..n_ch {
            acc_w[k] += v.dw[k];
            acc_y[k] += v.dy[k];
        }
        if failure.is_some() {
            return;
        }
        if v.step % record_every == 0 || v.step == last {
            let state = match model.recorded(v.state) {
                Ok(s) => s,
                Err(source) => {
                    failure = Some(SdeError::ProjectionFailed { step: v.step, source });
                    return;
                }
            };
            let (min_eigenvalue, purity) = model.inspect(&state);
            rec.steps.push(v.step);
            rec.times.push(grid.time(v.step));
            rec.components.push(model.components(&state));
            rec.states.push(state);
            rec.controls.push(v.controls.to_vec());
            rec.dw.push(std::mem::replace(&mut acc_w, vec![0.0; n_ch]));
            rec.dy.push(std::mem::replace(&mut acc_y, vec![0.0; n_ch]));
            rec.diagnostics.push(Diagnostics {
                trace_error: v.trace_error,
                min_eigenvalue,
                purity,
            });
        }
    })?;
    match failure {
        Some(e) => Err(e),
        None => Ok(rec),
    }
}

/// Final states of paths `0..n_paths`, in path order.
pub fn final_states<M: SdeModel>(
    model: &M,
    x0: &M::State,
    grid: &TimeGrid,
    noise: &NoisePlan,
    n_paths: usize,
    mean: MeanSource<'_, M::State>,
) -> Result<Vec<M::State>, SdeError> {
    (0..n_paths as u64)
        .into_par_iter()
        .map(|p| integrate(model, x0, grid, noise, p, mean, |_| {}))
        .collect()
}
