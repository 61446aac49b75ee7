//! Feedback laws u: S_d -> [-U, U].

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::quantum::{pauli, random, BlochVector, ComplexMatrix, DensityMatrix, I};

/// Imaginary residue above which a control value signals a corrupted state.
pub const NON_REAL_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("control value has imaginary part {imaginary:.3e}; state is not Hermitian")]
    NonRealControl { imaginary: f64 },
    #[error("feedback target must be a qubit state, got dimension {0}")]
    TargetNotQubit(usize),
    #[error("state dimension {found} does not match the law's dimension {expected}")]
    WrongDimension { expected: usize, found: usize },
    #[error("gain {name} = {value} must be finite and non-negative")]
    InvalidGain { name: &'static str, value: f64 },
    #[error("Lipschitz estimation needs at least 2 samples")]
    TooFewSamples,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ControlLaw {
    Zero,
    Constant(f64),
    Stabilizing(StabilizingLaw),
}

/// u(g) = -c1 i tr([sx, g] target) + c2 (1 - tr(g target)), clamped to c1 + c2.
#[derive(Clone, Debug, PartialEq)]
pub struct StabilizingLaw {
    target: DensityMatrix,
    c1: f64,
    c2: f64,
    // tr([sx, g] T) = tr(g [T, sx])
    commutator: ComplexMatrix,
}

impl StabilizingLaw {
    pub fn new(target: DensityMatrix, c1: f64, c2: f64) -> Result<Self, ControlError> {
        if target.dim() != 2 {
            return Err(ControlError::TargetNotQubit(target.dim()));
        }
        for (name, value) in [("c1", c1), ("c2", c2)] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(ControlError::InvalidGain { name, value });
            }
        }
        let commutator = target.as_matrix().commutator(&pauli::sigma_x());
        Ok(Self { target, c1, c2, commutator })
    }

    pub fn target(&self) -> &DensityMatrix {
        &self.target
    }

    pub fn gains(&self) -> (f64, f64) {
        (self.c1, self.c2)
    }

    pub fn bound(&self) -> f64 {
        self.c1 + self.c2
    }

    /// c1 ||[T, sx]||_F + c2 ||T||_F: both terms are linear functionals of the state.
    pub fn lipschitz(&self) -> f64 {
        self.c1 * self.commutator.frobenius_norm() + self.c2 * self.target.as_matrix().frobenius_norm()
    }

    /// Value before clamping, with the imaginary residue.
    pub fn raw(&self, state: &ComplexMatrix) -> Result<Complex64, ControlError> {
        if state.dim() != 2 {
            return Err(ControlError::WrongDimension {
                expected: 2,
                found: state.dim(),
            });
        }
        let comm = state.trace_product(&self.commutator);
        let overlap = state.trace_product(self.target.as_matrix());
        Ok(-I * comm * self.c1 + (Complex64::new(1.0, 0.0) - overlap) * self.c2)
    }
}

impl ControlLaw {
    pub fn stabilizing(target: DensityMatrix, c1: f64, c2: f64) -> Result<Self, ControlError> {
        StabilizingLaw::new(target, c1, c2).map(ControlLaw::Stabilizing)
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, ControlLaw::Zero) || matches!(self, ControlLaw::Constant(c) if *c == 0.0)
    }

    /// Does the law read the state at all.
    pub fn is_feedback(&self) -> bool {
        matches!(self, ControlLaw::Stabilizing(_))
    }

    /// Clamp bound U.
    pub fn bound(&self) -> f64 {
        match self {
            ControlLaw::Zero => 0.0,
            ControlLaw::Constant(c) => c.abs(),
            ControlLaw::Stabilizing(s) => s.bound(),
        }
    }

    /// Declared Lipschitz constant with respect to the Frobenius norm.
    pub fn lipschitz(&self) -> f64 {
        match self {
            ControlLaw::Zero | ControlLaw::Constant(_) => 0.0,
            ControlLaw::Stabilizing(s) => s.lipschitz(),
        }
    }

    /// Real control value clamped to [-U, U].
    pub fn evaluate(&self, state: &ComplexMatrix) -> Result<f64, ControlError> {
        match self {
            ControlLaw::Zero => Ok(0.0),
            ControlLaw::Constant(c) => Ok(*c),
            ControlLaw::Stabilizing(s) => {
                let raw = s.raw(state)?;
                if raw.im.abs() > NON_REAL_TOL || !raw.im.is_finite() {
                    return Err(ControlError::NonRealControl { imaginary: raw.im });
                }
                let bound = s.bound();
                Ok(raw.re.clamp(-bound, bound))
            }
        }
    }

    /// Same law on Bloch coordinates.
    pub fn evaluate_bloch(&self, v: &BlochVector) -> Result<f64, ControlError> {
        match self {
            ControlLaw::Zero => Ok(0.0),
            ControlLaw::Constant(c) => Ok(*c),
            ControlLaw::Stabilizing(_) => self.evaluate(&v.to_matrix()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LipschitzEstimate {
    /// Largest observed |u(a) - u(b)| / ||a - b||_F.
    pub estimate: f64,
    pub declared: f64,
    pub exceeds_declared: bool,
}

/// Empirical lower bound on the Lipschitz constant over random qubit pairs.
pub fn verify_lipschitz(law: &ControlLaw, n_samples: usize, seed: u64) -> Result<LipschitzEstimate, ControlError> {
    if n_samples < 2 {
        return Err(ControlError::TooFewSamples);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let states: Vec<DensityMatrix> = (0..n_samples)
        .map(|k| {
            if k % 2 == 0 {
                random::random_pure(2, &mut rng)
            } else {
                random::random_density(2, &mut rng)
            }
        })
        .collect();
    let values = states.iter().map(|s| law.evaluate(s.as_matrix())).collect::<Result<Vec<_>, _>>()?;
    let mut estimate: f64 = 0.0;
    for i in 0..n_samples {
        for j in i + 1..n_samples.min(i + 64) {
            let dist = (states[i].as_matrix() - states[j].as_matrix()).frobenius_norm();
            if dist > 1e-12 {
                estimate = estimate.max((values[i] - values[j]).abs() / dist);
            }
        }
    }
    let declared = law.lipschitz();
    let exceeds_declared = estimate > declared * (1.0 + 1e-9);
    if exceeds_declared {
        log::warn!("empirical Lipschitz estimate {estimate} exceeds declared {declared}");
    }
    Ok(LipschitzEstimate {
        estimate,
        declared,
        exceeds_declared,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rho_e_law() -> ControlLaw {
        ControlLaw::stabilizing(DensityMatrix::excited(), 7.6, 5.0).unwrap()
    }

    #[test]
    fn zero_law_is_zero() {
        for s in [DensityMatrix::excited(), DensityMatrix::maximally_mixed(2), DensityMatrix::ground()] {
            assert_eq!(ControlLaw::Zero.evaluate(s.as_matrix()).unwrap(), 0.0);
        }
    }

    #[test]
    fn target_is_closed_loop_equilibrium() {
        let law = rho_e_law();
        assert!(law.evaluate(DensityMatrix::excited().as_matrix()).unwrap().abs() < 1e-15);
        let g = ControlLaw::stabilizing(DensityMatrix::ground(), 7.6, 5.0).unwrap();
        assert!(g.evaluate(DensityMatrix::ground().as_matrix()).unwrap().abs() < 1e-15);
    }

    #[test]
    fn ground_state_gets_c2() {
        let u = rho_e_law().evaluate(DensityMatrix::ground().as_matrix()).unwrap();
        assert!((u - 5.0).abs() < 1e-14);
    }

    #[test]
    fn bound_and_declared_constant() {
        let law = rho_e_law();
        assert!((law.bound() - 12.6).abs() < 1e-15);
        assert!((law.lipschitz() - (7.6 * 2f64.sqrt() + 5.0)).abs() < 1e-12);
    }

    #[test]
    fn non_hermitian_state_is_rejected() {
        let mut m = DensityMatrix::maximally_mixed(2).into_matrix();
        m[(0, 1)] = Complex64::new(0.2, 0.0);
        m[(1, 0)] = Complex64::new(-0.2, 0.0);
        assert!(matches!(rho_e_law().evaluate(&m), Err(ControlError::NonRealControl { .. })));
    }

    #[test]
    fn constructor_errors() {
        assert!(matches!(
            ControlLaw::stabilizing(DensityMatrix::maximally_mixed(3), 1.0, 1.0),
            Err(ControlError::TargetNotQubit(3))
        ));
        assert!(matches!(
            ControlLaw::stabilizing(DensityMatrix::excited(), f64::NAN, 1.0),
            Err(ControlError::InvalidGain { name: "c1", .. })
        ));
    }

    #[test]
    fn lipschitz_estimates() {
        assert_eq!(verify_lipschitz(&ControlLaw::Zero, 100, 1).unwrap().estimate, 0.0);
        assert_eq!(verify_lipschitz(&ControlLaw::Constant(3.0), 100, 1).unwrap().estimate, 0.0);
        let est = verify_lipschitz(&rho_e_law(), 400, 2).unwrap();
        assert!(est.estimate <= 7.6 * 2f64.sqrt() + 5.0 * 2f64.sqrt());
        assert!(!est.exceeds_declared);
        assert!(est.estimate > 5.0);
        assert!(matches!(verify_lipschitz(&ControlLaw::Zero, 1, 0), Err(ControlError::TooFewSamples)));
    }
}
