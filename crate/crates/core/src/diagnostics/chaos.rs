use std::io::{self, Write};

use rayon::prelude::*;

use crate::control::ControlLaw;
use crate::kernel::InteractionKernel;
use crate::meanfield::{solve_particles, MeanFlow, ParticleOptions};
use crate::models::{BelavkinFilter, BelavkinNParticle, LindbladMean, ModelParams, PureNParticle};
use crate::quantum::{ComplexMatrix, DensityMatrix};
use crate::sde::{euler_step, join_floats, NoisePlan, SdeError, SdeModel, StepEnv, TimeGrid};

use super::{alpha_from_marginal, DiagnosticsError};

/// Largest N accepted for qubits.
pub const MAX_CHAOS_PARTICLES: usize = 8;

const Z95: f64 = 1.959_963_984_540_054;
const SEED_MIX: u64 = 0x9E37_79B9_7F4A_7C15;

/// How the joint N-particle state is propagated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ChaosMethod {
    /// Amplitude vector of length d^N; needs a pure initial state.
    #[default]
    Wavefunction,
    /// Full d^N x d^N density matrix.
    DensityMatrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChaosOptions {
    pub ns: Vec<usize>,
    pub n_paths: usize,
    pub seed: u64,
    pub method: ChaosMethod,
    pub record_every: usize,
    /// Particles used to estimate m_t when the control law reads the state.
    pub mean_particles: usize,
}

impl ChaosOptions {
    pub fn new(ns: Vec<usize>, n_paths: usize, seed: u64) -> Self {
        Self {
            ns,
            n_paths,
            seed,
            method: ChaosMethod::Wavefunction,
            record_every: 10,
            mean_particles: 2000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChaosReport {
    pub n_particles: usize,
    pub times: Vec<f64>,
    /// E[alpha_N(t)], averaged over paths and particles.
    pub mean_alpha: Vec<f64>,
    pub std_error: Vec<f64>,
    pub alpha0: f64,
    /// Smallest real c with E[alpha_N(t)] <= e^{ct} (alpha_N(0) + 1/sqrt(N)) on the
    /// grid; negative when the mean stays below 1/sqrt(N). NaN if alpha is never positive.
    pub envelope_c: f64,
}

impl ChaosReport {
    pub fn final_alpha(&self) -> (f64, f64) {
        (
            self.mean_alpha.last().copied().unwrap_or(f64::NAN),
            self.std_error.last().copied().unwrap_or(f64::NAN),
        )
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "time,n_particles,mean_alpha,std_error")?;
        for ((t, a), s) in self.times.iter().zip(&self.mean_alpha).zip(&self.std_error) {
            writeln!(w, "{},{},{}", join_floats(&[*t]), self.n_particles, join_floats(&[*a, *s]))?;
        }
        Ok(())
    }
}

/// Weighted least squares of log E[alpha_N(T)] on log N, weights from the
/// delta-method variance (se / alpha)^2 treated as known.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalingFit {
    pub slope: f64,
    pub slope_se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub intercept: f64,
    pub envelope_c: f64,
}

impl ScalingFit {
    pub fn negative_at_95(&self) -> bool {
        self.ci_high < 0.0
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "slope,slope_se,ci_low,ci_high,intercept,envelope_c")?;
        writeln!(
            w,
            "{}",
            join_floats(&[self.slope, self.slope_se, self.ci_low, self.ci_high, self.intercept, self.envelope_c])
        )
    }
}

#[derive(Clone, Debug)]
pub struct ChaosOutcome {
    pub reports: Vec<ChaosReport>,
    pub fit: Option<ScalingFit>,
    pub mean_flow: MeanFlow<ComplexMatrix>,
}

pub fn fit_scaling(reports: &[ChaosReport]) -> Result<ScalingFit, DiagnosticsError> {
    if reports.len() < 2 {
        return Err(DiagnosticsError::InvalidInput("scaling fit needs at least two values of N".into()));
    }
    let mut pts = Vec::with_capacity(reports.len());
    for r in reports {
        let (a, se) = r.final_alpha();
        if !(a > 0.0) {
            return Err(DiagnosticsError::InvalidInput(format!(
                "E[alpha] = {a} at N = {} has no logarithm",
                r.n_particles
            )));
        }
        let var = (se / a).powi(2).max(1e-300);
        pts.push(((r.n_particles as f64).ln(), a.ln(), 1.0 / var));
    }
    let sw: f64 = pts.iter().map(|p| p.2).sum();
    let xm = pts.iter().map(|p| p.2 * p.0).sum::<f64>() / sw;
    let ym = pts.iter().map(|p| p.2 * p.1).sum::<f64>() / sw;
    let sxx: f64 = pts.iter().map(|p| p.2 * (p.0 - xm).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| p.2 * (p.0 - xm) * (p.1 - ym)).sum();
    if !(sxx > 0.0) {
        return Err(DiagnosticsError::InvalidInput("all N coincide".into()));
    }
    let slope = sxy / sxx;
    let slope_se = (1.0 / sxx).sqrt();
    Ok(ScalingFit {
        slope,
        slope_se,
        ci_low: slope - Z95 * slope_se,
        ci_high: slope + Z95 * slope_se,
        intercept: ym - slope * xm,
        envelope_c: reports.iter().map(|r| r.envelope_c).fold(f64::NAN, f64::max),
    })
}

fn envelope_c(times: &[f64], alpha: &[f64], alpha0: f64, n: usize) -> f64 {
    let base = alpha0.max(0.0) + 1.0 / (n as f64).sqrt();
    times
        .iter()
        .zip(alpha)
        .filter(|(t, a)| **t > 0.0 && **a > 0.0)
        .map(|(t, a)| (a / base).ln() / t)
        .fold(f64::NAN, f64::max)
}

fn recorded(step: usize, grid: &TimeGrid, every: usize) -> bool {
    step % every == 0 || step == grid.n_steps()
}

struct Coupled<'a> {
    reference: &'a BelavkinFilter,
    gamma0: &'a ComplexMatrix,
    flow: &'a MeanFlow<ComplexMatrix>,
    grid: &'a TimeGrid,
    plan: NoisePlan,
    record_every: usize,
}

impl Coupled<'_> {
    /// One path of the joint filter with N reference mean-field filters,
    /// reference j driven by channel j's increments. Returns the particle
    /// average of alpha at every recorded step.
    fn path<M, F>(&self, joint: &M, x0: &M::State, marginal: F, path: u64) -> Result<Vec<f64>, SdeError>
    where
        M: SdeModel,
        F: Fn(&M::State, usize) -> ComplexMatrix,
    {
        let n = joint.n_channels();
        let dt = self.grid.dt();
        let mut streams: Vec<_> = (0..n).map(|k| self.plan.stream(self.plan.channel_id(path, k))).collect();
        let mut state = x0.clone();
        let mut gammas = vec![self.gamma0.clone(); n];
        let mut dw = vec![0.0; n];
        let mut out = Vec::new();
        for step in 0..=self.grid.n_steps() {
            if recorded(step, self.grid, self.record_every) {
                let a: f64 = (0..n).map(|j| alpha_from_marginal(&marginal(&state, j), &gammas[j])).sum();
                out.push(a / n as f64);
            }
            if step == self.grid.n_steps() {
                break;
            }
            for (k, s) in streams.iter_mut().enumerate() {
                dw[k] = s.next_increment(dt);
            }
            let controls = joint.controls(&state).map_err(|source| SdeError::Model { step, source })?;
            let env = StepEnv {
                step,
                controls: &controls,
                mean: None,
            };
            state = euler_step(joint, &state, &env, &dw, dt)?.0;
            let m = &self.flow.means()[step];
            for (j, g) in gammas.iter_mut().enumerate() {
                let u = self.reference.controls(g).map_err(|source| SdeError::Model { step, source })?;
                let env = StepEnv {
                    step,
                    controls: &u,
                    mean: Some(m),
                };
                *g = euler_step(self.reference, g, &env, &dw[j..=j], dt)?.0;
            }
        }
        Ok(out)
    }
}

fn mean_and_se(per_path: &[Vec<f64>], n_times: usize) -> (Vec<f64>, Vec<f64>) {
    let n = per_path.len() as f64;
    let mut mean = vec![0.0; n_times];
    let mut sq = vec![0.0; n_times];
    for p in per_path {
        for (k, v) in p.iter().enumerate() {
            mean[k] += v;
            sq[k] += v * v;
        }
    }
    let se = mean
        .iter_mut()
        .zip(&sq)
        .map(|(m, s)| {
            *m /= n;
            if n > 1.0 {
                ((s / n - *m * *m).max(0.0) * n / (n - 1.0) / n).sqrt()
            } else {
                0.0
            }
        })
        .collect();
    (mean, se)
}

/// E[alpha_N(t)] for each N, with the joint filter and its mean-field
/// references sharing noise channel by channel.
///
/// m_t comes from the deterministic mean equation when the control law is
/// zero and from an interacting-particle run otherwise.
pub fn chaos_experiment(
    rho0: &DensityMatrix,
    params: &ModelParams,
    control: &ControlLaw,
    grid: &TimeGrid,
    opts: &ChaosOptions,
) -> Result<ChaosOutcome, DiagnosticsError> {
    if params.efficiency() != 1.0 {
        return Err(DiagnosticsError::EtaNotOne(params.efficiency()));
    }
    if opts.ns.is_empty() || opts.n_paths == 0 {
        return Err(DiagnosticsError::EmptyInput);
    }
    if let Some(&n) = opts.ns.iter().find(|&&n| n > MAX_CHAOS_PARTICLES || n == 0) {
        if n == 0 {
            return Err(DiagnosticsError::InvalidInput("N must be at least 1".into()));
        }
        return Err(DiagnosticsError::TooManyParticles { n, max: MAX_CHAOS_PARTICLES });
    }
    if opts.record_every == 0 {
        return Err(DiagnosticsError::InvalidInput("record_every must be positive".into()));
    }
    if rho0.dim() != params.dim() {
        return Err(DiagnosticsError::DimensionMismatch {
            expected: params.dim(),
            found: rho0.dim(),
        });
    }
    if opts.method == ChaosMethod::Wavefunction && rho0.purity() < 1.0 - 1e-10 {
        return Err(DiagnosticsError::InvalidInput(format!(
            "wavefunction method needs a pure initial state, purity is {}",
            rho0.purity()
        )));
    }
    let params = match params.kernel() {
        Some(_) => params.clone(),
        None => params.clone().with_kernel(Some(InteractionKernel::zero(params.dim())))?,
    };
    let reference = BelavkinFilter::mean_field(params.clone(), control.clone());
    let flow = if control.is_zero() {
        LindbladMean::new(&params).integrate_rk4(rho0.as_matrix(), grid)?
    } else {
        let run = solve_particles(
            &reference,
            rho0.as_matrix(),
            grid,
            &ParticleOptions::new(opts.mean_particles, opts.seed ^ SEED_MIX),
        )?;
        run.flow
    };
    let times: Vec<f64> = (0..=grid.n_steps())
        .filter(|&s| recorded(s, grid, opts.record_every))
        .map(|s| grid.time(s))
        .collect();

    let mut reports = Vec::with_capacity(opts.ns.len());
    for &n in &opts.ns {
        let coupled = Coupled {
            reference: &reference,
            gamma0: rho0.as_matrix(),
            flow: &flow,
            grid,
            plan: NoisePlan::new(opts.seed ^ (n as u64).wrapping_mul(SEED_MIX), n),
            record_every: opts.record_every,
        };
        let density = BelavkinNParticle::new(params.clone(), n, control.clone())?;
        let per_path: Vec<Vec<f64>> = match opts.method {
            ChaosMethod::Wavefunction => {
                let joint = PureNParticle::new(density)?;
                let psi0 = joint.product_state_from_density(rho0)?;
                let marg = |s: &_, j| joint.marginal(s, j).expect("slot in range");
                (0..opts.n_paths as u64)
                    .into_par_iter()
                    .map(|p| coupled.path(&joint, &psi0, marg, p))
                    .collect::<Result<_, _>>()?
            }
            ChaosMethod::DensityMatrix => {
                let x0 = density.initial_state(rho0)?;
                let marg = |s: &_, j| density.marginal(s, j).expect("slot in range");
                (0..opts.n_paths as u64)
                    .into_par_iter()
                    .map(|p| coupled.path(&density, &x0, marg, p))
                    .collect::<Result<_, _>>()?
            }
        };
        let (mean_alpha, std_error) = mean_and_se(&per_path, times.len());
        let alpha0 = mean_alpha[0];
        reports.push(ChaosReport {
            n_particles: n,
            envelope_c: envelope_c(&times, &mean_alpha, alpha0, n),
            times: times.clone(),
            mean_alpha,
            std_error,
            alpha0,
        });
    }
    let fit = fit_scaling(&reports).ok();
    Ok(ChaosOutcome { reports, fit, mean_flow: flow })
}
