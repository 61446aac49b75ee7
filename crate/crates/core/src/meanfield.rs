//! Solvers for the mean-field law m_t = E[gamma_t]: interacting particles
//! stepped in lockstep, and fixed-point iteration on frozen mean flows.

use std::io::{self, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::sde::{
    euler_step, integrate, join_floats, Diagnostics, MeanSource, NoisePlan, NoiseStream, SdeError, SdeModel, SdeState, StepEnv, TimeGrid, TrajectoryRecord,
    DEFAULT_RECORD_EVERY,
};

pub const DEFAULT_PICARD_PATHS: usize = 2000;
pub const DEFAULT_PICARD_MAX_ITER: usize = 20;
pub const DEFAULT_PICARD_TOL: f64 = 5e-3;

/// Paths per reduction chunk. Fixed so sums do not depend on thread count.
const CHUNK: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeanFieldError {
    #[error("need at least one particle or path")]
    Empty,
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("flows live on different grids")]
    GridMismatch,
    #[error("the two input flows coincide")]
    ZeroDistance,
    #[error("no convergence after {} iterations; last distances {distances:?}", distances.len())]
    NoConvergence { distances: Vec<f64> },
    #[error("particle stepped at {step} against mean version {seen}")]
    LockstepViolated { step: usize, seen: usize },
    #[error(transparent)]
    Sde(#[from] SdeError),
}

/// One mean per grid point, optionally with per-component standard errors.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanFlow<S> {
    grid: TimeGrid,
    means: Vec<S>,
    std_errors: Option<Vec<Vec<f64>>>,
}

impl<S> MeanFlow<S> {
    pub fn new(grid: TimeGrid, means: Vec<S>) -> Self {
        Self { grid, means, std_errors: None }
    }

    pub fn with_std_errors(mut self, std_errors: Vec<Vec<f64>>) -> Self {
        self.std_errors = Some(std_errors);
        self
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn means(&self) -> &[S] {
        &self.means
    }

    pub fn std_errors(&self) -> Option<&[Vec<f64>]> {
        self.std_errors.as_deref()
    }

    pub fn at_time(&self, t: f64) -> Option<&S> {
        self.grid.index_of(t).and_then(|k| self.means.get(k))
    }
}

impl<S: SdeState> MeanFlow<S> {
    /// The flow that stays at `x0`.
    pub fn constant(grid: TimeGrid, x0: &S) -> Self {
        Self::new(grid, vec![x0.clone(); grid.len()])
    }

    /// sup_t ||self_t - other_t||_F
    pub fn sup_distance(&self, other: &Self) -> Result<f64, MeanFieldError> {
        if self.grid != other.grid || self.means.len() != other.means.len() {
            return Err(MeanFieldError::GridMismatch);
        }
        Ok(self.means.iter().zip(&other.means).map(|(a, b)| a.distance(b)).fold(0.0, f64::max))
    }

    /// Columns: time, mean components, then `se_*` columns when present.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let names = self.means.first().map(SdeState::component_names).unwrap_or_default();
        let mut header = vec!["time".to_string()];
        header.extend(names.iter().cloned());
        if self.std_errors.is_some() {
            header.extend(names.iter().map(|n| format!("se_{n}")));
        }
        writeln!(w, "{}", header.join(","))?;
        for (k, m) in self.means.iter().enumerate() {
            let mut row = vec![self.grid.time(k)];
            row.extend(m.components());
            if let Some(se) = &self.std_errors {
                row.extend(&se[k]);
            }
            writeln!(w, "{}", join_floats(&row))?;
        }
        Ok(())
    }
}

/// Running sums of states and component squares at one grid point.
#[derive(Clone, Debug)]
struct Moments<S> {
    sum: S,
    comp_sum: Vec<f64>,
    comp_sq: Vec<f64>,
    count: usize,
}

impl<S: SdeState> Moments<S> {
    fn new(like: &S) -> Self {
        let n = like.components().len();
        Self {
            sum: like.zeros_like(),
            comp_sum: vec![0.0; n],
            comp_sq: vec![0.0; n],
            count: 0,
        }
    }

    fn add(&mut self, s: &S) {
        self.sum.axpy(1.0, s);
        for (i, c) in s.components().into_iter().enumerate() {
            self.comp_sum[i] += c;
            self.comp_sq[i] += c * c;
        }
        self.count += 1;
    }

    fn merge(&mut self, other: &Self) {
        self.sum.axpy(1.0, &other.sum);
        for i in 0..self.comp_sum.len() {
            self.comp_sum[i] += other.comp_sum[i];
            self.comp_sq[i] += other.comp_sq[i];
        }
        self.count += other.count;
    }

    fn mean(&self) -> S {
        let mut m = self.sum.clone();
        m.scale(1.0 / self.count as f64);
        m
    }

    /// Standard error of each component mean.
    fn std_errors(&self) -> Vec<f64> {
        let n = self.count as f64;
        if self.count < 2 {
            return vec![0.0; self.comp_sum.len()];
        }
        self.comp_sum
            .iter()
            .zip(&self.comp_sq)
            .map(|(&s, &q)| {
                let mean = s / n;
                let var = ((q - n * mean * mean) / (n - 1.0)).max(0.0);
                (var / n).sqrt()
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct ParticleOptions {
    pub n_particles: usize,
    pub seed: u64,
    /// Noise path id of each particle; defaults to 0..n_particles.
    pub path_ids: Option<Vec<u64>>,
    /// Full trajectories kept for the first this-many particles.
    pub record_first: usize,
    pub record_every: usize,
}

impl ParticleOptions {
    pub fn new(n_particles: usize, seed: u64) -> Self {
        Self {
            n_particles,
            seed,
            path_ids: None,
            record_first: 0,
            record_every: DEFAULT_RECORD_EVERY,
        }
    }

    pub fn recording(mut self, first: usize, every: usize) -> Self {
        self.record_first = first;
        self.record_every = every;
        self
    }

    pub fn with_path_ids(mut self, ids: Vec<u64>) -> Self {
        self.n_particles = ids.len();
        self.path_ids = Some(ids);
        self
    }
}

#[derive(Clone, Debug)]
pub struct ParticleRun<S> {
    /// Empirical mean at every grid point, with standard errors.
    pub flow: MeanFlow<S>,
    /// Final particle states in input order.
    pub final_states: Vec<S>,
    pub records: Vec<TrajectoryRecord<S>>,
    /// Number of particle steps verified against the current mean version.
    pub lockstep_checks: u64,
}

struct Particle<S> {
    input_index: usize,
    state: S,
    streams: Vec<NoiseStream>,
    controls: Vec<f64>,
    dw: Vec<f64>,
    dy: Vec<f64>,
    trace_error: f64,
    seen_version: usize,
}

/// Interacting-particle approximation: the empirical mean of the current
/// states replaces m_t in every particle's drift.
///
/// Particles are summed in ascending path-id order, so relabeling which
/// particle carries which noise path leaves the flow bit-identical.
pub fn solve_particles<M: SdeModel>(model: &M, x0: &M::State, grid: &TimeGrid, opts: &ParticleOptions) -> Result<ParticleRun<M::State>, MeanFieldError> {
    let ids: Vec<u64> = opts.path_ids.clone().unwrap_or_else(|| (0..opts.n_particles as u64).collect());
    if ids.is_empty() {
        return Err(MeanFieldError::Empty);
    }
    if opts.record_every == 0 {
        return Err(SdeError::ZeroRecordInterval.into());
    }
    let n_ch = model.n_channels();
    let plan = NoisePlan::new(opts.seed, n_ch);
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by_key(|&i| ids[i]);
    let mut particles: Vec<Particle<M::State>> = order
        .iter()
        .map(|&i| Particle {
            input_index: i,
            state: x0.clone(),
            streams: (0..n_ch).map(|k| plan.stream(plan.channel_id(ids[i], k))).collect(),
            controls: Vec::new(),
            dw: vec![0.0; n_ch],
            dy: vec![0.0; n_ch],
            trace_error: x0.trace_defect(),
            seen_version: 0,
        })
        .collect();

    let n_rec = opts.record_first.min(ids.len());
    let mut records: Vec<TrajectoryRecord<M::State>> = (0..n_rec)
        .map(|_| TrajectoryRecord {
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
        })
        .collect();
    let mut acc_w = vec![vec![0.0; n_ch]; n_rec];
    let mut acc_y = vec![vec![0.0; n_ch]; n_rec];

    let dt = grid.dt();
    let mut means = Vec::with_capacity(grid.len());
    let mut std_errors = Vec::with_capacity(grid.len());
    let mut lockstep_checks = 0u64;
    for step in 0..=grid.n_steps() {
        let mut moments = Moments::new(x0);
        for p in &particles {
            moments.add(&p.state);
        }
        let mean = moments.mean();
        means.push(mean.clone());
        std_errors.push(moments.std_errors());
        let version = step;

        particles.par_iter_mut().try_for_each(|p| -> Result<(), SdeError> {
            p.controls = model.controls(&p.state).map_err(|source| SdeError::Model { step, source })?;
            Ok(())
        })?;

        for p in particles.iter().filter(|p| p.input_index < n_rec) {
            let r = p.input_index;
            for k in 0..n_ch {
                acc_w[r][k] += p.dw[k];
                acc_y[r][k] += p.dy[k];
            }
            if step % opts.record_every == 0 || step == grid.n_steps() {
                let state = model.recorded(&p.state).map_err(|source| SdeError::ProjectionFailed { step, source })?;
                let (min_eigenvalue, purity) = model.inspect(&state);
                let rec = &mut records[r];
                rec.steps.push(step);
                rec.times.push(grid.time(step));
                rec.components.push(model.components(&state));
                rec.states.push(state);
                rec.controls.push(p.controls.clone());
                rec.dw.push(std::mem::replace(&mut acc_w[r], vec![0.0; n_ch]));
                rec.dy.push(std::mem::replace(&mut acc_y[r], vec![0.0; n_ch]));
                rec.diagnostics.push(Diagnostics {
                    trace_error: p.trace_error,
                    min_eigenvalue,
                    purity,
                });
            }
        }
        if step == grid.n_steps() {
            break;
        }

        particles.par_iter_mut().try_for_each(|p| -> Result<(), SdeError> {
            p.seen_version = version;
            for (k, s) in p.streams.iter_mut().enumerate() {
                p.dw[k] = s.next_increment(dt);
                p.dy[k] = p.dw[k] + model.signal(&p.state, k) * dt;
            }
            let env = StepEnv {
                step,
                controls: &p.controls,
                mean: Some(&mean),
            };
            let (next, defect) = euler_step(model, &p.state, &env, &p.dw, dt)?;
            p.state = next;
            p.trace_error = defect;
            Ok(())
        })?;
        for p in &particles {
            if p.seen_version != step {
                return Err(MeanFieldError::LockstepViolated { step, seen: p.seen_version });
            }
            lockstep_checks += 1;
        }
    }

    let mut final_states = vec![x0.clone(); ids.len()];
    for p in particles {
        final_states[p.input_index] = p.state;
    }
    Ok(ParticleRun {
        flow: MeanFlow::new(*grid, means).with_std_errors(std_errors),
        final_states,
        records,
        lockstep_checks,
    })
}

/// Monte Carlo estimate of the map xi -> (E[gamma_t^xi])_t, where gamma^xi is
/// the filter driven by the frozen flow xi. Path p always uses noise path p.
pub fn mean_map<M: SdeModel>(model: &M, x0: &M::State, flow: &MeanFlow<M::State>, n_paths: usize, seed: u64) -> Result<MeanFlow<M::State>, MeanFieldError> {
    if n_paths == 0 {
        return Err(MeanFieldError::Empty);
    }
    let grid = *flow.grid();
    let plan = NoisePlan::new(seed, model.n_channels());
    let chunks: Vec<(usize, usize)> = (0..n_paths).step_by(CHUNK).map(|start| (start, (start + CHUNK).min(n_paths))).collect();
    let partial: Vec<Vec<Moments<M::State>>> = chunks
        .par_iter()
        .map(|&(start, end)| -> Result<_, SdeError> {
            let mut acc = vec![Moments::new(x0); grid.len()];
            for p in start..end {
                integrate(model, x0, &grid, &plan, p as u64, MeanSource::Flow(flow), |v| acc[v.step].add(v.state))?;
            }
            Ok(acc)
        })
        .collect::<Result<_, _>>()?;
    let mut total = vec![Moments::new(x0); grid.len()];
    for chunk in &partial {
        for (t, m) in total.iter_mut().zip(chunk) {
            t.merge(m);
        }
    }
    let means = total.iter().map(Moments::mean).collect();
    let se = total.iter().map(Moments::std_errors).collect();
    Ok(MeanFlow::new(grid, means).with_std_errors(se))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PicardOptions {
    pub n_paths: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl PicardOptions {
    pub fn new(seed: u64) -> Self {
        Self {
            n_paths: DEFAULT_PICARD_PATHS,
            max_iter: DEFAULT_PICARD_MAX_ITER,
            tol: DEFAULT_PICARD_TOL,
            seed,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PicardResult<S> {
    /// Last iterate, with the standard errors of its Monte Carlo estimate.
    pub flow: MeanFlow<S>,
    /// sup_t distance between consecutive iterates, one per iteration.
    pub distances: Vec<f64>,
    pub converged: bool,
}

impl<S> PicardResult<S> {
    pub fn require_convergence(self) -> Result<Self, MeanFieldError> {
        if self.converged {
            Ok(self)
        } else {
            Err(MeanFieldError::NoConvergence { distances: self.distances })
        }
    }

    /// Columns: iteration, sup_distance.
    pub fn write_log_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "iteration,sup_distance")?;
        for (k, d) in self.distances.iter().enumerate() {
            writeln!(w, "{},{}", k + 1, crate::sde::format_float(*d))?;
        }
        Ok(())
    }
}

/// Fixed-point iteration xi <- mean_map(xi) from the constant flow x0, with
/// common random numbers across iterations. A non-converged result still
/// carries the last iterate; see `require_convergence`.
pub fn picard_solve<M: SdeModel>(model: &M, x0: &M::State, grid: &TimeGrid, opts: &PicardOptions) -> Result<PicardResult<M::State>, MeanFieldError> {
    if opts.n_paths == 0 {
        return Err(MeanFieldError::Empty);
    }
    if !(opts.tol > 0.0) {
        return Err(MeanFieldError::InvalidTolerance(opts.tol));
    }
    let mut flow = MeanFlow::constant(*grid, x0);
    let mut distances = Vec::new();
    for _ in 0..opts.max_iter.max(1) {
        let next = mean_map(model, x0, &flow, opts.n_paths, opts.seed)?;
        let d = next.sup_distance(&flow)?;
        distances.push(d);
        flow = next;
        if d <= opts.tol {
            return Ok(PicardResult {
                flow,
                distances,
                converged: true,
            });
        }
    }
    Ok(PicardResult {
        flow,
        distances,
        converged: false,
    })
}

/// sup||Xi(a) - Xi(b)|| / sup||a - b|| with common random numbers.
pub fn contraction_probe<M: SdeModel>(
    model: &M,
    x0: &M::State,
    a: &MeanFlow<M::State>,
    b: &MeanFlow<M::State>,
    n_paths: usize,
    seed: u64,
) -> Result<f64, MeanFieldError> {
    let din = a.sup_distance(b)?;
    if din == 0.0 {
        return Err(MeanFieldError::ZeroDistance);
    }
    let ia = mean_map(model, x0, a, n_paths, seed)?;
    let ib = mean_map(model, x0, b, n_paths, seed)?;
    Ok(ia.sup_distance(&ib)? / din)
}
