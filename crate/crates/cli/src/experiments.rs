//! The five named experiments and the files each one writes.

use std::io::Write;

use mffilter_core::diagnostics::{chaos_experiment, lemma1_sweep, reduction_from_endpoints, write_counterexamples, ChaosOptions, ReductionReport};
use mffilter_core::meanfield::{picard_solve, solve_particles, MeanFlow, ParticleOptions, PicardOptions};
use mffilter_core::models::{nqubit_system, BelavkinFilter, BelavkinNParticle, LindbladMean, QubitMeanFieldBloch};
use mffilter_core::quantum::BlochVector;
use mffilter_core::sde::{format_float, integrate, join_floats, run_trajectory, MeanSource, NoisePlan, SdeModel, SdeState, TimeGrid};
use rayon::prelude::*;

use crate::config::{ChaosSetup, ExperimentConfig, LemmaSetup, ModelKind, PathsSetup, PicardSetup, Plan};
use crate::output::RunOutput;
use crate::CliError;

/// Paths per parallel work item. Fixed so sums do not depend on thread count.
const CHUNK: usize = 64;

/// Seed offset of the particle run compared against Picard iteration.
const PARTICLE_SEED_MIX: u64 = 0xD1B5_4A32_D192_ED03;

/// Runs the configured experiment, writing into `out`. Returns one-line
/// summaries for the terminal.
pub fn run(config: &ExperimentConfig, out: &mut RunOutput) -> Result<Vec<String>, CliError> {
    match &config.plan {
        Plan::Paths(setup) if setup.target.is_some() => stabilization(config, setup, out),
        Plan::Paths(setup) => reduction(config, setup, out),
        Plan::Chaos(setup) => chaos(config, setup, out),
        Plan::Picard(setup) => picard(config, setup, out),
        Plan::Lemma(setup) => lemma(config, setup, out),
    }
}

fn failed(config: &ExperimentConfig, reason: impl std::fmt::Display) -> CliError {
    CliError::ExperimentFailed {
        experiment: config.experiment.name().to_string(),
        reason: reason.to_string(),
    }
}

/// offset + coeffs . components, appended to the model's components.
#[derive(Clone, Debug)]
struct Linear {
    name: String,
    offset: f64,
    coeffs: Vec<f64>,
}

impl Linear {
    fn apply(&self, c: &[f64]) -> f64 {
        self.offset + self.coeffs.iter().zip(c).map(|(a, b)| a * b).sum::<f64>()
    }
}

fn augment(mut c: Vec<f64>, extra: Option<&Linear>) -> Vec<f64> {
    if let Some(l) = extra {
        let v = l.apply(&c);
        c.push(v);
    }
    c
}

/// One recorded sample path.
struct Trace {
    csv: Vec<u8>,
    rows: Vec<Vec<f64>>,
}

/// Moments over all samples at the recorded times plus the endpoints.
struct Ensemble {
    names: Vec<String>,
    times: Vec<f64>,
    mean: Vec<Vec<f64>>,
    se: Vec<Vec<f64>>,
    initial: Vec<f64>,
    finals: Vec<Vec<f64>>,
    traces: Vec<Trace>,
}

impl Ensemble {
    fn column(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    fn z_columns(&self) -> Vec<usize> {
        self.names
            .iter()
            .enumerate()
            .filter(|(_, n)| *n == "z" || n.strip_prefix("z_").is_some_and(|j| j.parse::<usize>().is_ok()))
            .map(|(i, _)| i)
            .collect()
    }

    fn write_mean_csv(&self, w: &mut Vec<u8>) -> std::io::Result<()> {
        let mut header = vec!["time".to_string()];
        header.extend(self.names.iter().cloned());
        header.extend(self.names.iter().map(|n| format!("se_{n}")));
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.times.len() {
            let mut row = vec![self.times[i]];
            row.extend(&self.mean[i]);
            row.extend(&self.se[i]);
            writeln!(w, "{}", join_floats(&row))?;
        }
        Ok(())
    }
}

fn recorded_steps(grid: &TimeGrid, every: usize) -> Vec<usize> {
    let last = grid.n_steps();
    (0..=last).filter(|s| s % every == 0 || *s == last).collect()
}

struct ChunkSums {
    sum: Vec<Vec<f64>>,
    sq: Vec<Vec<f64>>,
    finals: Vec<Vec<f64>>,
    traces: Vec<Trace>,
}

/// Independent sample paths; path p uses noise path p.
fn independent<M: SdeModel>(
    model: &M,
    x0: &M::State,
    grid: &TimeGrid,
    seed: u64,
    setup: &PathsSetup,
    every: usize,
    extra: Option<&Linear>,
) -> Result<Ensemble, String> {
    let plan = NoisePlan::new(seed, model.n_channels());
    let steps = recorded_steps(grid, every);
    let last = grid.n_steps();
    let x0r = model.recorded(x0).map_err(|e| e.to_string())?;
    let initial = augment(model.components(&x0r), extra);
    let ncol = initial.len();
    let mut names = model.component_names(x0);
    if let Some(l) = extra {
        names.push(l.name.clone());
    }
    let chunks: Vec<(usize, usize)> = (0..setup.samples).step_by(CHUNK).map(|s| (s, (s + CHUNK).min(setup.samples))).collect();
    let parts: Vec<ChunkSums> = chunks
        .par_iter()
        .map(|&(start, end)| -> Result<ChunkSums, String> {
            let mut acc = ChunkSums {
                sum: vec![vec![0.0; ncol]; steps.len()],
                sq: vec![vec![0.0; ncol]; steps.len()],
                finals: Vec::with_capacity(end - start),
                traces: Vec::new(),
            };
            let add = |acc: &mut ChunkSums, i: usize, c: &[f64]| {
                for (k, &v) in c.iter().enumerate() {
                    acc.sum[i][k] += v;
                    acc.sq[i][k] += v * v;
                }
            };
            for p in start..end {
                if p < setup.record_trajectories {
                    let rec = run_trajectory(model, x0, grid, &plan, p as u64, MeanSource::None, every).map_err(|e| e.to_string())?;
                    let rows: Vec<Vec<f64>> = rec.components.iter().map(|c| augment(c.clone(), extra)).collect();
                    for (i, c) in rows.iter().enumerate() {
                        add(&mut acc, i, c);
                    }
                    acc.finals.push(rows.last().cloned().unwrap_or_default());
                    let mut csv = Vec::new();
                    rec.write_csv(&mut csv).map_err(|e| e.to_string())?;
                    acc.traces.push(Trace { csv, rows });
                } else {
                    let mut i = 0;
                    let mut failure = None;
                    integrate(model, x0, grid, &plan, p as u64, MeanSource::None, |v| {
                        if failure.is_some() || !(v.step % every == 0 || v.step == last) {
                            return;
                        }
                        match model.recorded(v.state) {
                            Ok(s) => {
                                let c = augment(model.components(&s), extra);
                                add(&mut acc, i, &c);
                                if v.step == last {
                                    acc.finals.push(c);
                                }
                            }
                            Err(e) => failure = Some(format!("projection failed at step {}: {e}", v.step)),
                        }
                        i += 1;
                    })
                    .map_err(|e| e.to_string())?;
                    if let Some(f) = failure {
                        return Err(f);
                    }
                }
            }
            Ok(acc)
        })
        .collect::<Result<_, _>>()?;

    let n = setup.samples as f64;
    let mut sum = vec![vec![0.0; ncol]; steps.len()];
    let mut sq = vec![vec![0.0; ncol]; steps.len()];
    let mut finals = Vec::with_capacity(setup.samples);
    let mut traces = Vec::new();
    for part in parts {
        for i in 0..steps.len() {
            for k in 0..ncol {
                sum[i][k] += part.sum[i][k];
                sq[i][k] += part.sq[i][k];
            }
        }
        finals.extend(part.finals);
        traces.extend(part.traces);
    }
    let mean: Vec<Vec<f64>> = sum.iter().map(|s| s.iter().map(|v| v / n).collect()).collect();
    let se = mean
        .iter()
        .zip(&sq)
        .map(|(m, q)| {
            m.iter()
                .zip(q)
                .map(|(&m, &q)| {
                    if setup.samples < 2 {
                        return 0.0;
                    }
                    let var = ((q - n * m * m) / (n - 1.0)).max(0.0);
                    (var / n).sqrt()
                })
                .collect()
        })
        .collect();
    Ok(Ensemble {
        names,
        times: steps.iter().map(|&s| grid.time(s)).collect(),
        mean,
        se,
        initial,
        finals,
        traces,
    })
}

/// Interacting particles coupled through their empirical mean.
fn coupled<M: SdeModel>(
    model: &M,
    x0: &M::State,
    grid: &TimeGrid,
    seed: u64,
    setup: &PathsSetup,
    every: usize,
    extra: Option<&Linear>,
) -> Result<Ensemble, String> {
    let opts = ParticleOptions::new(setup.samples, seed).recording(setup.record_trajectories, every);
    let run = solve_particles(model, x0, grid, &opts).map_err(|e| e.to_string())?;
    let steps = recorded_steps(grid, every);
    let x0r = model.recorded(x0).map_err(|e| e.to_string())?;
    let mut names = model.component_names(x0);
    if let Some(l) = extra {
        names.push(l.name.clone());
    }
    let std_errors = run.flow.std_errors().ok_or("particle run carries no standard errors")?;
    let mut mean = Vec::with_capacity(steps.len());
    let mut se = Vec::with_capacity(steps.len());
    for &s in &steps {
        mean.push(augment(run.flow.means()[s].components(), extra));
        let mut e = std_errors[s].clone();
        if let Some(l) = extra {
            // Exact when the functional reads a single coordinate.
            let v: f64 = l.coeffs.iter().zip(&e).map(|(c, s)| c * c * s * s).sum();
            e.push(v.sqrt());
        }
        se.push(e);
    }
    let finals = run
        .final_states
        .iter()
        .map(|s| model.recorded(s).map(|r| augment(model.components(&r), extra)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let traces = run
        .records
        .iter()
        .map(|rec| {
            let mut csv = Vec::new();
            rec.write_csv(&mut csv).map_err(|e| e.to_string())?;
            let rows = rec.components.iter().map(|c| augment(c.clone(), extra)).collect();
            Ok(Trace { csv, rows })
        })
        .collect::<Result<Vec<_>, String>>()?;
    Ok(Ensemble {
        names,
        times: steps.iter().map(|&s| grid.time(s)).collect(),
        mean,
        se,
        initial: augment(model.components(&x0r), extra),
        finals,
        traces,
    })
}

fn bloch_coupling(config: &ExperimentConfig) -> bool {
    let m = config.model.as_ref().expect("paths experiments carry a model");
    m.params.kernel().is_some_and(|k| !k.is_zero())
}

fn ensemble(config: &ExperimentConfig, setup: &PathsSetup, extra: Option<&Linear>) -> Result<Ensemble, CliError> {
    let m = config.model.as_ref().expect("paths experiments carry a model");
    let grid = config.grid.as_ref().expect("paths experiments carry a grid");
    let initial = config.initial.as_ref().expect("paths experiments carry an initial state");
    let control = config.control.clone();
    let (seed, every) = (config.seed, config.record_every);
    let result = match m.kind {
        ModelKind::Single => {
            let model = BelavkinFilter::single(m.params.clone(), control);
            independent(&model, initial.as_matrix(), grid, seed, setup, every, extra)
        }
        ModelKind::MeanField => {
            let model = BelavkinFilter::mean_field(m.params.clone(), control);
            coupled(&model, initial.as_matrix(), grid, seed, setup, every, extra)
        }
        ModelKind::MeanFieldBloch => {
            let is_coupled = bloch_coupling(config);
            let model = QubitMeanFieldBloch::new(m.params.efficiency(), control, m.bloch_equations, is_coupled).map_err(|e| failed(config, e))?;
            let x0 = BlochVector::decompose(initial).map_err(|e| failed(config, e))?;
            if is_coupled {
                coupled(&model, &x0, grid, seed, setup, every, extra)
            } else {
                independent(&model, &x0, grid, seed, setup, every, extra)
            }
        }
        ModelKind::NParticle | ModelKind::NQubit => {
            let model = if m.kind == ModelKind::NQubit {
                nqubit_system(m.n_particles, m.params.efficiency(), control)
            } else {
                BelavkinNParticle::new(m.params.clone(), m.n_particles, control)
            }
            .map_err(|e| failed(config, e))?;
            let x0 = model.initial_state(initial).map_err(|e| failed(config, e))?;
            independent(&model, &x0, grid, seed, setup, every, extra)
        }
        ModelKind::LindbladMean => Err("lindblad-mean has no sample paths".to_string()),
    };
    result.map_err(|e| failed(config, e))
}

fn write_traces(ens: &Ensemble, out: &mut RunOutput) -> Result<(), CliError> {
    for (i, t) in ens.traces.iter().enumerate() {
        out.write(&format!("{i}.csv"), &t.csv)?;
    }
    Ok(())
}

fn reduction(config: &ExperimentConfig, setup: &PathsSetup, out: &mut RunOutput) -> Result<Vec<String>, CliError> {
    let ens = ensemble(config, setup, None)?;
    write_traces(&ens, out)?;
    out.write_with("mean.csv", |w| ens.write_mean_csv(w))?;
    let zs = ens.z_columns();
    if zs.is_empty() {
        return Err(failed(config, "model has no z coordinate; reduction statistics need qubits"));
    }
    let mut initial_z = Vec::new();
    let mut final_z = Vec::new();
    for f in &ens.finals {
        for &k in &zs {
            initial_z.push(ens.initial[k]);
            final_z.push(f[k]);
        }
    }
    let report = reduction_from_endpoints(&initial_z, &final_z, setup.threshold).map_err(|e| failed(config, e))?;
    out.write_with("summary.csv", |w| {
        writeln!(w, "{}", ReductionReport::csv_header())?;
        writeln!(w, "{}", report.csv_row())
    })?;
    Ok(vec![
        format!("samples: {} ({} z values)", ens.finals.len(), final_z.len()),
        format!(
            "fraction z_T > 0: {:.4}  Born prediction: {:.4} +/- {:.4}",
            report.fraction_up,
            report.born_prediction,
            report.born_sigma()
        ),
        format!("fraction |z_T| > {}: {:.4}", setup.threshold, report.fraction_reduced),
    ])
}

fn stabilization(config: &ExperimentConfig, setup: &PathsSetup, out: &mut RunOutput) -> Result<Vec<String>, CliError> {
    let target = setup.target.as_ref().expect("stabilization has a target");
    let m = config.model.as_ref().expect("paths experiments carry a model");
    // For a pure target, F(rho, target) = tr(rho target) = (1 + r . r_target) / 2.
    let tv = BlochVector::decompose(target).map_err(|e| failed(config, e))?;
    let per_particle = m.n_particles.max(1);
    let mut coeffs = Vec::new();
    for _ in 0..per_particle {
        coeffs.extend(tv.as_array().map(|c| c / (2.0 * per_particle as f64)));
    }
    let extra = Linear {
        name: "fidelity".into(),
        offset: 0.5,
        coeffs,
    };
    let ens = ensemble(config, setup, Some(&extra))?;
    write_traces(&ens, out)?;
    out.write_with("mean.csv", |w| ens.write_mean_csv(w))?;
    let f = ens.column("fidelity").expect("fidelity column appended");
    out.write_with("fidelity.csv", |w| {
        let mut header = vec!["time".to_string(), "mean_fidelity".into(), "std_error".into()];
        header.extend((0..ens.traces.len()).map(|i| format!("fidelity_{i}")));
        writeln!(w, "{}", header.join(","))?;
        for i in 0..ens.times.len() {
            let mut row = vec![ens.times[i], ens.mean[i][f], ens.se[i][f]];
            row.extend(ens.traces.iter().map(|t| t.rows[i][f]));
            writeln!(w, "{}", join_floats(&row))?;
        }
        Ok(())
    })?;
    let curve: Vec<f64> = ens.mean.iter().map(|r| r[f]).collect();
    let final_f = *curve.last().expect("grid has a point");
    let final_se = ens.se.last().expect("grid has a point")[f];
    let window = last_fraction(&ens.times, 0.2);
    let (lo, hi) = curve[window..]
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    out.write_with("summary.csv", |w| {
        writeln!(w, "n_samples,final_mean_fidelity,std_error,last_window_min,last_window_max")?;
        writeln!(w, "{},{}", ens.finals.len(), join_floats(&[final_f, final_se, lo, hi]))
    })?;
    Ok(vec![
        format!("samples: {}", ens.finals.len()),
        format!("mean fidelity at T: {final_f:.4} +/- {final_se:.4}"),
        format!("mean fidelity over the last 20% of the horizon: [{lo:.4}, {hi:.4}]"),
    ])
}

/// Index of the first recorded time in the last `frac` of the horizon.
fn last_fraction(times: &[f64], frac: f64) -> usize {
    let t_end = times.last().copied().unwrap_or(0.0);
    times.iter().position(|&t| t >= (1.0 - frac) * t_end - 1e-12).unwrap_or(0)
}

fn chaos(config: &ExperimentConfig, setup: &ChaosSetup, out: &mut RunOutput) -> Result<Vec<String>, CliError> {
    let m = config.model.as_ref().expect("chaos carries a model");
    let grid = config.grid.as_ref().expect("chaos carries a grid");
    let initial = config.initial.as_ref().expect("chaos carries an initial state");
    let mut opts = ChaosOptions::new(setup.ns.clone(), setup.paths, config.seed);
    opts.method = setup.method;
    opts.record_every = config.record_every;
    opts.mean_particles = setup.mean_particles;
    let outcome = chaos_experiment(initial, &m.params, &config.control, grid, &opts).map_err(|e| failed(config, e))?;
    let mut lines = Vec::new();
    for r in &outcome.reports {
        out.write_with(&format!("n{}.csv", r.n_particles), |w| r.write_csv(w))?;
        let (a, se) = r.final_alpha();
        lines.push(format!(
            "N = {}: E[alpha(T)] = {a:.5} +/- {se:.5}, envelope c = {:.4}",
            r.n_particles, r.envelope_c
        ));
    }
    out.write_with("summary.csv", |w| {
        writeln!(w, "n_particles,alpha0,final_alpha,std_error,envelope_c")?;
        for r in &outcome.reports {
            let (a, se) = r.final_alpha();
            writeln!(w, "{},{}", r.n_particles, join_floats(&[r.alpha0, a, se, r.envelope_c]))?;
        }
        Ok(())
    })?;
    out.write_with("mean_flow.csv", |w| outcome.mean_flow.write_csv(w))?;
    if let Some(fit) = &outcome.fit {
        out.write_with("fit.csv", |w| fit.write_csv(w))?;
        lines.push(format!(
            "slope of log E[alpha(T)] in log N: {:.4} (95% CI [{:.4}, {:.4}])",
            fit.slope, fit.ci_low, fit.ci_high
        ));
    }
    Ok(lines)
}

fn lemma(config: &ExperimentConfig, setup: &LemmaSetup, out: &mut RunOutput) -> Result<Vec<String>, CliError> {
    let sweeps = setup
        .dims
        .iter()
        .map(|&d| lemma1_sweep(d, setup.n_triples, config.seed))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| failed(config, e))?;
    out.write_with("summary.csv", |w| {
        writeln!(w, "dim,n_triples,violations,hard_violations,near_equality,max_ratio")?;
        for s in &sweeps {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                s.dim,
                s.n_triples,
                s.violations.len(),
                s.hard_violations(),
                s.near_equality,
                format_float(s.max_ratio)
            )?;
        }
        Ok(())
    })?;
    if sweeps.iter().any(|s| !s.violations.is_empty()) {
        out.write_with("counterexamples.txt", |w| {
            for s in &sweeps {
                write_counterexamples(&mut *w, s)?;
            }
            Ok(())
        })?;
    }
    Ok(sweeps
        .iter()
        .map(|s| {
            format!(
                "d = {}: {} triples, {} violations ({} near-equality cases), max lhs/rhs = {:.6}",
                s.dim,
                s.n_triples,
                s.violations.len(),
                s.near_equality,
                s.max_ratio
            )
        })
        .collect())
}

/// Weight of each component's variance in the squared Frobenius distance.
fn frobenius_weight(name: &str) -> f64 {
    match name {
        "x" | "y" | "z" => 0.5,
        n if n.starts_with("re") || n.starts_with("im") => 2.0,
        _ => 1.0,
    }
}

struct PicardRun {
    converged: bool,
    iterations: usize,
    last_distance: f64,
    max_distance: f64,
    max_excess: f64,
}

fn picard_compare<M: SdeModel>(
    config: &ExperimentConfig,
    model: &M,
    x0: &M::State,
    grid: &TimeGrid,
    setup: &PicardSetup,
    ode: Option<Vec<M::State>>,
    out: &mut RunOutput,
) -> Result<PicardRun, CliError> {
    let opts = PicardOptions {
        n_paths: setup.n_paths,
        max_iter: setup.max_iter,
        tol: setup.tol,
        seed: config.seed,
    };
    let fixed = picard_solve(model, x0, grid, &opts).map_err(|e| failed(config, e))?;
    let particle_opts = ParticleOptions::new(setup.particles, config.seed ^ PARTICLE_SEED_MIX);
    let particles = solve_particles(model, x0, grid, &particle_opts).map_err(|e| failed(config, e))?;
    out.write_with("picard.csv", |w| fixed.flow.write_csv(w))?;
    out.write_with("picard_log.csv", |w| fixed.write_log_csv(w))?;
    out.write_with("particles.csv", |w| particles.flow.write_csv(w))?;
    if let Some(ode) = &ode {
        out.write_with("lindblad.csv", |w| MeanFlow::new(*grid, ode.clone()).write_csv(w))?;
    }

    let weights: Vec<f64> = x0.component_names().iter().map(|n| frobenius_weight(n)).collect();
    let se_p = fixed.flow.std_errors().ok_or_else(|| failed(config, "Picard flow has no standard errors"))?;
    let se_q = particles
        .flow
        .std_errors()
        .ok_or_else(|| failed(config, "particle flow has no standard errors"))?;
    let mut max_distance = 0.0f64;
    let mut max_excess = f64::NEG_INFINITY;
    let mut rows = Vec::new();
    for s in recorded_steps(grid, config.record_every) {
        let a = &fixed.flow.means()[s];
        let b = &particles.flow.means()[s];
        let d = a.distance(b);
        let se: f64 = weights
            .iter()
            .zip(se_p[s].iter().zip(&se_q[s]))
            .map(|(w, (p, q))| w * (p * p + q * q))
            .sum::<f64>()
            .sqrt();
        let allowance = 2.0 * setup.tol + 3.0 * se;
        max_distance = max_distance.max(d);
        max_excess = max_excess.max(d - allowance);
        let mut row = vec![grid.time(s), d, allowance];
        if let Some(ode) = &ode {
            row.push(a.distance(&ode[s]));
            row.push(b.distance(&ode[s]));
        }
        rows.push(row);
    }
    out.write_with("comparison.csv", |w| {
        let mut header = "time,picard_vs_particles,allowance".to_string();
        if ode.is_some() {
            header.push_str(",picard_vs_lindblad,particles_vs_lindblad");
        }
        writeln!(w, "{header}")?;
        for r in &rows {
            writeln!(w, "{}", join_floats(r))?;
        }
        Ok(())
    })?;
    Ok(PicardRun {
        converged: fixed.converged,
        iterations: fixed.distances.len(),
        last_distance: fixed.distances.last().copied().unwrap_or(f64::NAN),
        max_distance,
        max_excess,
    })
}

fn picard(config: &ExperimentConfig, setup: &PicardSetup, out: &mut RunOutput) -> Result<Vec<String>, CliError> {
    let m = config.model.as_ref().expect("picard carries a model");
    let grid = config.grid.as_ref().expect("picard carries a grid");
    let initial = config.initial.as_ref().expect("picard carries an initial state");
    // The mean obeys the closed Lindblad equation only without control.
    let ode = if config.control.is_zero() {
        Some(
            LindbladMean::new(&m.params)
                .integrate_rk4(initial.as_matrix(), grid)
                .map_err(|e| failed(config, e))?,
        )
    } else {
        None
    };
    let result = match m.kind {
        ModelKind::MeanField => {
            let model = BelavkinFilter::mean_field(m.params.clone(), config.control.clone());
            let ode = ode.map(|f| f.means().to_vec());
            picard_compare(config, &model, initial.as_matrix(), grid, setup, ode, out)?
        }
        ModelKind::MeanFieldBloch => {
            let model = QubitMeanFieldBloch::new(m.params.efficiency(), config.control.clone(), m.bloch_equations, bloch_coupling(config))
                .map_err(|e| failed(config, e))?;
            let x0 = BlochVector::decompose(initial).map_err(|e| failed(config, e))?;
            let ode = ode.map(|f| f.means().iter().map(BlochVector::from_matrix_unchecked).collect());
            picard_compare(config, &model, &x0, grid, setup, ode, out)?
        }
        _ => return Err(failed(config, "picard-vs-particles needs a mean-field model")),
    };
    out.write_with("summary.csv", |w| {
        writeln!(w, "converged,iterations,last_distance,max_distance,max_excess,n_paths,particles")?;
        writeln!(
            w,
            "{},{},{},{},{}",
            result.converged,
            result.iterations,
            join_floats(&[result.last_distance, result.max_distance, result.max_excess]),
            setup.n_paths,
            setup.particles
        )
    })?;
    let lines = vec![
        format!(
            "Picard: {} after {} iterations (last sup distance {:.3e})",
            if result.converged { "converged" } else { "not converged" },
            result.iterations,
            result.last_distance
        ),
        format!(
            "Picard vs {} particles: max distance {:.3e}, max excess over allowance {:.3e}",
            setup.particles, result.max_distance, result.max_excess
        ),
    ];
    if !result.converged {
        return Err(failed(
            config,
            format!(
                "Picard iteration did not reach tol {} in {} iterations; outputs kept",
                setup.tol, setup.max_iter
            ),
        ));
    }
    Ok(lines)
}
