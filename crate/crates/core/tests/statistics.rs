use mffilter_core::control::ControlLaw;
use mffilter_core::diagnostics::purity_track;
use mffilter_core::kernel::InteractionKernel;
use mffilter_core::meanfield::{contraction_probe, mean_map, picard_solve, solve_particles, MeanFlow, ParticleOptions, PicardOptions};
use mffilter_core::models::{BelavkinFilter, BelavkinNParticle, BlochEquations, LindbladMean, ModelParams, QubitMeanFieldBloch};
use mffilter_core::quantum::{pauli, validate_density, BlochVector, ComplexMatrix, DensityMatrix, Tolerances};
use mffilter_core::sde::{final_states, run_trajectory, MeanSource, NoisePlan, SdeState, TimeGrid};

fn tilted() -> ComplexMatrix {
    BlochVector::new(0.6, 0.0, 0.8).to_matrix()
}

fn meanfield(kernel: InteractionKernel) -> BelavkinFilter {
    BelavkinFilter::mean_field(ModelParams::qubit(1.0, Some(kernel)).unwrap(), ControlLaw::Zero)
}

fn bloch(m: &ComplexMatrix) -> [f64; 3] {
    BlochVector::from_matrix_unchecked(m).as_array()
}

/// Largest componentwise |mean - reference| in units of the standard error.
fn max_z_score(flow: &MeanFlow<ComplexMatrix>, reference: &MeanFlow<ComplexMatrix>, t: f64) -> f64 {
    let k = flow.grid().index_of(t).unwrap();
    let got = bloch(&flow.means()[k]);
    let want = bloch(&reference.means()[k]);
    let se = &flow.std_errors().unwrap()[k];
    (0..3).map(|i| (got[i] - want[i]).abs() / se[i].max(1e-12)).fold(0.0, f64::max)
}

#[test]
fn single_filter_mean_follows_the_lindblad_equation() {
    let params = ModelParams::qubit(1.0, None).unwrap();
    let model = BelavkinFilter::single(params.clone(), ControlLaw::Zero);
    let grid = TimeGrid::new(1.0, 1e-3).unwrap();
    let ode = LindbladMean::new(&params).integrate_rk4(&tilted(), &grid).unwrap();
    let mc = mean_map(&model, &tilted(), &MeanFlow::constant(grid, &tilted()), 10_000, 3).unwrap();
    for t in [0.5, 1.0] {
        let z = max_z_score(&mc, &ode, t);
        assert!(z < 3.0, "t = {t}: {z:.2} standard errors");
    }
}

#[test]
fn particle_error_shrinks_with_ensemble_size() {
    let model = meanfield(InteractionKernel::photon_exchange());
    let grid = TimeGrid::new(1.0, 1e-3).unwrap();
    let params = ModelParams::qubit(1.0, Some(InteractionKernel::photon_exchange())).unwrap();
    let ode = LindbladMean::new(&params).integrate_rk4(&tilted(), &grid).unwrap();
    let exact = ode.means().last().unwrap();
    let errors: Vec<f64> = [100, 1_000, 10_000]
        .iter()
        .map(|&n| {
            let run = solve_particles(&model, &tilted(), &grid, &ParticleOptions::new(n, 21)).unwrap();
            assert_eq!(run.lockstep_checks, (n * grid.n_steps()) as u64);
            run.flow.means().last().unwrap().distance(exact)
        })
        .collect();
    println!("particle errors at t = 1: {errors:?}");
    assert!(errors[0] > errors[1] && errors[1] > errors[2]);
}

fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

#[test]
fn decoupled_marginals_are_exchangeable_copies_of_the_single_filter() {
    let params = ModelParams::qubit(1.0, Some(InteractionKernel::zero(2))).unwrap();
    let model = BelavkinNParticle::new(params.clone(), 2, ControlLaw::Zero).unwrap();
    let rho0 = DensityMatrix::new(tilted()).unwrap();
    let x0 = model.initial_state(&rho0).unwrap();
    let grid = TimeGrid::new(1.0, 1e-3).unwrap();
    let n = 1000;
    let finals = final_states(&model, &x0, &grid, &NoisePlan::new(8, 2), n, MeanSource::None).unwrap();
    let z = |j: usize| -> Vec<f64> { finals.iter().map(|s| bloch(&model.marginal(s, j).unwrap())[2]).collect() };
    let (z0, z1) = (z(0), z(1));
    let d = ks_statistic(&z0, &z1);
    // Two-sample critical value at the 1% level.
    let critical = 1.628 * (2.0 / n as f64).sqrt();
    assert!(d < critical, "KS statistic {d:.4} over {critical:.4}");

    let single = BelavkinFilter::single(params.with_kernel(None).unwrap(), ControlLaw::Zero);
    let singles = final_states(&single, &tilted(), &grid, &NoisePlan::new(9, 1), n, MeanSource::None).unwrap();
    let zs: Vec<f64> = singles.iter().map(|s| bloch(s)[2]).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let var = |v: &[f64]| {
        let m = mean(v);
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
    };
    let se = ((var(&z0) + var(&zs)) / n as f64).sqrt();
    assert!((mean(&z0) - mean(&zs)).abs() < 3.0 * se);
    assert!((var(&z0) - var(&zs)).abs() < 0.1 * var(&zs).max(1e-3) + 0.02);
}

#[test]
fn uncoupled_z_is_a_martingale() {
    let model = QubitMeanFieldBloch::new(1.0, ControlLaw::Zero, BlochEquations::Displayed, false).unwrap();
    let x0 = BlochVector::new(0.3, -0.2, 0.4);
    let grid = TimeGrid::new(1.0, 1e-3).unwrap();
    let n = 10_000;
    let finals = final_states(&model, &x0, &grid, &NoisePlan::new(4, 1), n, MeanSource::None).unwrap();
    let z: Vec<f64> = finals.iter().map(|v| v.z).collect();
    let mean = z.iter().sum::<f64>() / n as f64;
    let var = z.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    assert!((mean - x0.z).abs() < 3.0 * se, "mean z {mean} vs {} (se {se})", x0.z);
}

#[test]
fn euler_error_on_the_mean_equation_is_first_order() {
    let params = ModelParams::qubit(1.0, Some(InteractionKernel::photon_exchange())).unwrap();
    let ode = LindbladMean::new(&params);
    let h = 1e-2;
    let end = |dt: f64| -> ComplexMatrix {
        let grid = TimeGrid::new(1.0, dt).unwrap();
        let rec = run_trajectory(&ode, &tilted(), &grid, &NoisePlan::new(0, 0), 0, MeanSource::None, grid.n_steps()).unwrap();
        rec.final_state().unwrap().clone()
    };
    let reference = end(h / 8.0);
    let errors: Vec<f64> = [h, h / 2.0, h / 4.0].iter().map(|&dt| end(dt).distance(&reference)).collect();
    // Against an h/8 reference a first-order error C dt leaves C (dt - h/8).
    let r1 = errors[0] / errors[1];
    let r2 = errors[1] / errors[2];
    assert!((r1 - 7.0 / 3.0).abs() < 0.25, "ratio {r1}");
    assert!((r2 - 3.0).abs() < 0.35, "ratio {r2}");
}

#[test]
fn recorded_states_are_valid_and_trace_drift_is_small() {
    let dt = 1e-3;
    let grid = TimeGrid::new(2.0, dt).unwrap();
    let law = ControlLaw::stabilizing(DensityMatrix::excited(), 7.6, 5.0).unwrap();
    let tol = Tolerances::uniform(1e-6);
    let check = |states: &[ComplexMatrix], drift: &[f64]| {
        for s in states {
            validate_density(s.clone(), tol).unwrap();
        }
        let worst = drift.iter().copied().fold(0.0, f64::max);
        assert!(worst <= 10.0 * dt, "trace drift {worst:e}");
    };
    for eta in [1.0, 0.4] {
        let single = BelavkinFilter::single(ModelParams::qubit(eta, None).unwrap(), law.clone());
        let rec = run_trajectory(&single, &tilted(), &grid, &NoisePlan::new(1, 1), 0, MeanSource::None, 1).unwrap();
        check(&rec.states, &rec.diagnostics.iter().map(|d| d.trace_error).collect::<Vec<_>>());

        let mf = BelavkinFilter::mean_field(ModelParams::qubit(eta, Some(InteractionKernel::photon_exchange())).unwrap(), law.clone());
        let rec = run_trajectory(&mf, &tilted(), &grid, &NoisePlan::new(2, 1), 0, MeanSource::SelfCoupled, 1).unwrap();
        check(&rec.states, &rec.diagnostics.iter().map(|d| d.trace_error).collect::<Vec<_>>());

        let np = BelavkinNParticle::new(ModelParams::qubit(eta, Some(InteractionKernel::photon_exchange())).unwrap(), 3, law.clone()).unwrap();
        let x0 = np.initial_state(&DensityMatrix::new(tilted()).unwrap()).unwrap();
        let rec = run_trajectory(&np, &x0, &grid, &NoisePlan::new(3, 3), 0, MeanSource::None, 1).unwrap();
        check(&rec.states, &rec.diagnostics.iter().map(|d| d.trace_error).collect::<Vec<_>>());
    }
}

#[test]
fn identical_seeds_give_identical_csv_bytes() {
    let model = meanfield(InteractionKernel::photon_exchange());
    let grid = TimeGrid::new(0.5, 1e-3).unwrap();
    let bytes = || {
        let opts = ParticleOptions::new(64, 77).recording(3, 10);
        let run = solve_particles(&model, &tilted(), &grid, &opts).unwrap();
        let mut out = Vec::new();
        run.flow.write_csv(&mut out).unwrap();
        for rec in &run.records {
            rec.write_csv(&mut out).unwrap();
        }
        out
    };
    let first = bytes();
    assert!(!first.is_empty());
    assert_eq!(first, bytes());
}

#[test]
fn zero_step_record_holds_only_the_initial_state() {
    let model = BelavkinFilter::single(ModelParams::qubit(1.0, None).unwrap(), ControlLaw::Zero);
    let grid = TimeGrid::new(0.0, 1e-3).unwrap();
    let rec = run_trajectory(&model, &tilted(), &grid, &NoisePlan::new(0, 1), 0, MeanSource::None, 10).unwrap();
    assert_eq!(rec.len(), 1);
    assert_eq!(rec.states[0], tilted());
    assert_eq!(rec.dw, vec![vec![0.0]]);
}

#[test]
fn picard_fixed_point_is_self_consistent() {
    let model = meanfield(InteractionKernel::photon_exchange());
    let grid = TimeGrid::new(0.5, 1e-3).unwrap();
    let opts = PicardOptions::new(5);
    let result = picard_solve(&model, &tilted(), &grid, &opts).unwrap().require_convergence().unwrap();
    println!("picard distances: {:?}", result.distances);
    let again = mean_map(&model, &tilted(), &result.flow, opts.n_paths, 1005).unwrap();
    let moved = again.sup_distance(&result.flow).unwrap();
    let se = result.flow.std_errors().unwrap().iter().flatten().copied().fold(0.0, f64::max);
    // Frobenius distance of two independent estimates, three standard errors per Bloch component.
    let mc = 3.0 * (2.0f64 * 3.0 / 2.0).sqrt() * se;
    assert!(moved <= 2.0 * opts.tol + mc, "moved {moved:e}, allowance {:e}", 2.0 * opts.tol + mc);
}

#[test]
fn contraction_ratio_on_a_short_horizon() {
    let model = meanfield(InteractionKernel::photon_exchange());
    let grid = TimeGrid::new(0.25, 1e-3).unwrap();
    let a = MeanFlow::constant(grid, &tilted());
    let b = MeanFlow::constant(grid, &BlochVector::new(-0.3, 0.5, -0.2).to_matrix());
    let ratio = contraction_probe(&model, &tilted(), &a, &b, 500, 13).unwrap();
    println!("contraction ratio at T = 0.25: {ratio:.4}");
    assert!(ratio.is_finite() && ratio >= 0.0);
}

// Euler steps from a pure state land on a mixed state whenever dW^2 < dt and
// on a clipped pure state otherwise, so the pathwise purity deficit performs
// a reflected walk of size sqrt(dt) rather than staying within O(dt).
#[test]
fn purity_deficit_scales_with_the_square_root_of_the_step() {
    let law = ControlLaw::stabilizing(DensityMatrix::excited(), 7.6, 5.0).unwrap();
    let pure = BlochVector::new(0.6, 0.0, 0.8).to_matrix();
    let perfect = BelavkinFilter::single(ModelParams::qubit(1.0, None).unwrap(), law);
    let worst = |dt: f64| {
        let grid = TimeGrid::new(1.0, dt).unwrap();
        (0..20)
            .map(|seed| {
                let rec = run_trajectory(&perfect, &pure, &grid, &NoisePlan::new(seed, 1), 0, MeanSource::None, 1).unwrap();
                1.0 - purity_track(&rec).min
            })
            .fold(0.0, f64::max)
    };
    let coarse = worst(1e-3);
    let fine = worst(1e-5);
    println!("worst purity deficit: {coarse:.4} at dt = 1e-3, {fine:.5} at dt = 1e-5");
    assert!(coarse > 10.0 * 1e-3);
    assert!(fine < coarse / 4.0);
    assert!(coarse <= 5.0 * 1e-3f64.sqrt());
}

#[test]
fn imperfect_detection_mixes_and_an_unmeasured_centre_stays_put() {
    let dt = 1e-3;
    let grid = TimeGrid::new(2.0, dt).unwrap();
    let law = ControlLaw::stabilizing(DensityMatrix::excited(), 7.6, 5.0).unwrap();
    let pure = BlochVector::new(0.6, 0.0, 0.8).to_matrix();

    let lossy = BelavkinFilter::single(ModelParams::qubit(0.5, None).unwrap(), law);
    let rec = run_trajectory(&lossy, &pure, &grid, &NoisePlan::new(6, 1), 0, MeanSource::None, 1).unwrap();
    let track = purity_track(&rec);
    println!("purity with half efficiency: min {:.4}, last {:.4}", track.min, track.last);
    assert!(track.min < 1.0 - 10.0 * dt);

    let unmeasured = ModelParams::new(pauli::sigma_z(), pauli::sigma_x(), ComplexMatrix::zeros(2), 1.0, None).unwrap();
    let still = BelavkinFilter::single(unmeasured, ControlLaw::Zero);
    let mixed = DensityMatrix::maximally_mixed(2).into_matrix();
    let rec = run_trajectory(&still, &mixed, &grid, &NoisePlan::new(6, 1), 0, MeanSource::None, 100).unwrap();
    assert!(purity_track(&rec).purity.iter().all(|&p| (p - 0.5).abs() < 1e-12));
}
