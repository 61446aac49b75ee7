//! Deviation from the mean-field law, the trace inequality checker, chaos
//! scaling fits, state-reduction statistics and purity tracking.

mod chaos;
mod lemma;

use thiserror::Error;

use crate::meanfield::MeanFieldError;
use crate::models::ModelError;
use crate::quantum::{ComplexMatrix, DensityMatrix, NState, QuantumError, ONE};
use crate::sde::{SdeError, TrajectoryRecord};

pub use chaos::{chaos_experiment, fit_scaling, ChaosMethod, ChaosOptions, ChaosOutcome, ChaosReport, ScalingFit, MAX_CHAOS_PARTICLES};
pub use lemma::{lemma1_check, lemma1_sweep, write_counterexamples, Counterexample, LemmaCheck, LemmaSweep, LEMMA_TOL};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("operator is not Hermitian: ||L - L^dag||_F = {defect:.3e}")]
    NotHermitian { defect: f64 },
    #[error("chaos experiment requires efficiency 1, got {0}")]
    EtaNotOne(f64),
    #[error("{n} particles exceed the supported maximum of {max}")]
    TooManyParticles { n: usize, max: usize },
    #[error("no input to summarize")]
    EmptyInput,
    #[error("records carry no component named {0}")]
    MissingComponent(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Quantum(#[from] QuantumError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sde(#[from] SdeError),
    #[error(transparent)]
    MeanField(#[from] MeanFieldError),
}

fn check_local(gamma: &DensityMatrix, local_dim: usize) -> Result<(), DiagnosticsError> {
    if gamma.dim() != local_dim {
        return Err(DiagnosticsError::DimensionMismatch {
            expected: local_dim,
            found: gamma.dim(),
        });
    }
    Ok(())
}

/// 1 - tr(gamma rho^j) with rho^j the marginal of particle j.
pub fn alpha_deviation(state: &NState, gamma: &DensityMatrix, particle: usize) -> Result<f64, DiagnosticsError> {
    check_local(gamma, state.local_dim())?;
    let marginal = state.partial_trace(particle)?;
    Ok(alpha_from_marginal(marginal.as_matrix(), gamma.as_matrix()))
}

/// 1 - tr((I (x) .. gamma_j .. (x) I) rho), without forming the marginal.
pub fn alpha_deviation_embedded(state: &NState, gamma: &DensityMatrix, particle: usize) -> Result<f64, DiagnosticsError> {
    check_local(gamma, state.local_dim())?;
    let layout = state.layout();
    if particle >= layout.n_particles() {
        return Err(QuantumError::IndexOutOfRange {
            index: particle,
            count: layout.n_particles(),
        }
        .into());
    }
    let rho = state.density().as_matrix();
    let mut out = ComplexMatrix::zeros(layout.dim());
    layout.left_acc(gamma.as_matrix(), particle, ONE, rho, &mut out);
    Ok(1.0 - out.trace().re)
}

pub fn alpha_from_marginal(marginal: &ComplexMatrix, gamma: &ComplexMatrix) -> f64 {
    1.0 - marginal.trace_product(gamma).re
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReductionReport {
    pub n_paths: usize,
    pub threshold: f64,
    /// Fraction with |z_T| > threshold.
    pub fraction_reduced: f64,
    /// Fraction with z_T > 0.
    pub fraction_up: f64,
    /// Mean initial z.
    pub z0: f64,
    /// (1 + z0) / 2
    pub born_prediction: f64,
}

impl ReductionReport {
    /// Binomial standard deviation of fraction_up under the Born prediction.
    pub fn born_sigma(&self) -> f64 {
        let p = self.born_prediction;
        (p * (1.0 - p) / self.n_paths as f64).sqrt()
    }

    /// Is fraction_up within k binomial standard deviations of the prediction.
    pub fn born_within(&self, k: f64) -> bool {
        (self.fraction_up - self.born_prediction).abs() <= k * self.born_sigma()
    }

    pub fn csv_header() -> &'static str {
        "n_paths,threshold,fraction_reduced,fraction_up,z0,born_prediction,born_sigma"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{}",
            self.n_paths,
            crate::sde::join_floats(&[
                self.threshold,
                self.fraction_reduced,
                self.fraction_up,
                self.z0,
                self.born_prediction,
                self.born_sigma(),
            ])
        )
    }
}

/// Statistics of final z values against their initial values.
pub fn reduction_from_endpoints(initial_z: &[f64], final_z: &[f64], threshold: f64) -> Result<ReductionReport, DiagnosticsError> {
    if final_z.is_empty() || initial_z.len() != final_z.len() {
        return Err(DiagnosticsError::EmptyInput);
    }
    let n = final_z.len() as f64;
    let reduced = final_z.iter().filter(|z| z.abs() > threshold).count() as f64;
    let up = final_z.iter().filter(|&&z| z > 0.0).count() as f64;
    let z0 = initial_z.iter().sum::<f64>() / n;
    Ok(ReductionReport {
        n_paths: final_z.len(),
        threshold,
        fraction_reduced: reduced / n,
        fraction_up: up / n,
        z0,
        born_prediction: (1.0 + z0) / 2.0,
    })
}

/// Reads the "z" component of each record's first and last entries.
pub fn reduction_stats<S>(records: &[TrajectoryRecord<S>], threshold: f64) -> Result<ReductionReport, DiagnosticsError> {
    if records.is_empty() {
        return Err(DiagnosticsError::EmptyInput);
    }
    let mut first = Vec::with_capacity(records.len());
    let mut last = Vec::with_capacity(records.len());
    for r in records {
        let z = r.component("z").ok_or_else(|| DiagnosticsError::MissingComponent("z".into()))?;
        match (z.first(), z.last()) {
            (Some(&a), Some(&b)) => {
                first.push(a);
                last.push(b);
            }
            _ => return Err(DiagnosticsError::EmptyInput),
        }
    }
    reduction_from_endpoints(&first, &last, threshold)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PurityTrack {
    pub times: Vec<f64>,
    pub purity: Vec<f64>,
    pub min: f64,
    pub last: f64,
}

pub fn purity_track<S>(record: &TrajectoryRecord<S>) -> PurityTrack {
    let purity: Vec<f64> = record.diagnostics.iter().map(|d| d.purity).collect();
    PurityTrack {
        times: record.times.clone(),
        min: purity.iter().copied().fold(f64::INFINITY, f64::min),
        last: purity.last().copied().unwrap_or(f64::NAN),
        purity,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::{random, BlochVector, TensorLayout};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn alpha_trivial_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = random::random_pure(2, &mut rng);
        let s = NState::product(&g, 3).unwrap();
        for j in 0..3 {
            assert!(alpha_deviation(&s, &g, j).unwrap().abs() < 1e-14);
        }
        let rho0 = random::random_density(2, &mut rng);
        let s = NState::product(&rho0, 3).unwrap();
        let expect = 1.0 - g.as_matrix().trace_product(rho0.as_matrix()).re;
        assert!((alpha_deviation(&s, &g, 1).unwrap() - expect).abs() < 1e-14);
        let half = DensityMatrix::maximally_mixed(2);
        assert!((alpha_deviation(&s, &half, 2).unwrap() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn alpha_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for k in 0..100 {
            let n = 1 + k % 6;
            let layout = TensorLayout::new(n, 2).unwrap();
            let rho = random::random_density(layout.dim(), &mut rng);
            let s = NState::new(n, 2, rho).unwrap();
            let g = random::random_density(2, &mut rng);
            let j = k % n;
            let a = alpha_deviation(&s, &g, j).unwrap();
            let b = alpha_deviation_embedded(&s, &g, j).unwrap();
            assert!((a - b).abs() < 1e-11, "{a} vs {b}");
        }
    }

    #[test]
    fn alpha_dimension_mismatch() {
        let s = NState::product(&DensityMatrix::ground(), 2).unwrap();
        let g = DensityMatrix::maximally_mixed(3);
        assert!(matches!(alpha_deviation(&s, &g, 0), Err(DiagnosticsError::DimensionMismatch { .. })));
        assert!(matches!(alpha_deviation_embedded(&s, &g, 0), Err(DiagnosticsError::DimensionMismatch { .. })));
        assert!(alpha_deviation_embedded(&s, &DensityMatrix::ground(), 2).is_err());
    }

    #[test]
    fn reduction_fractions() {
        let r = reduction_from_endpoints(&[0.0; 4], &[1.0; 4], 0.99).unwrap();
        assert_eq!(r.fraction_up, 1.0);
        assert_eq!(r.fraction_reduced, 1.0);
        assert_eq!(r.born_prediction, 0.5);
        let r = reduction_from_endpoints(&[0.5; 4], &[1.0, -1.0, 0.995, -0.2], 0.99).unwrap();
        assert_eq!(r.fraction_up, 0.5);
        assert_eq!(r.fraction_reduced, 0.75);
        assert_eq!(r.born_prediction, 0.75);
        assert!(matches!(reduction_from_endpoints(&[], &[], 0.9), Err(DiagnosticsError::EmptyInput)));
        assert!(matches!(reduction_stats::<BlochVector>(&[], 0.9), Err(DiagnosticsError::EmptyInput)));
    }
}
