//! Concrete filtering models consumed by the integrator.

mod belavkin;
mod bloch;
mod lindblad;
mod nparticle;
mod wavefunction;

use thiserror::Error;

use crate::control::ControlError;
use crate::kernel::{InteractionKernel, KernelError};
use crate::quantum::{pauli, ComplexMatrix, QuantumError};

pub use belavkin::BelavkinFilter;
pub use bloch::{BlochEquations, QubitMeanFieldBloch};
pub use lindblad::LindbladMean;
pub use nparticle::{nqubit_system, BelavkinNParticle, MAX_PARTICLES};
pub use wavefunction::{PureNParticle, StateVector};

/// Model names accepted in experiment configs.
pub const MODEL_NAMES: [&str; 6] = ["single", "nparticle", "meanfield", "meanfield-bloch", "lindblad-mean", "nqubit"];

const PARAM_HERMITICITY_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid parameter {field}: {reason}")]
    InvalidParams { field: &'static str, reason: String },
    #[error("detector efficiency {0} outside (0, 1]")]
    EfficiencyOutOfRange(f64),
    #[error("mean-coupled model evaluated without a mean source")]
    MissingMeanSource,
    #[error("{0} interacting particles need an interaction kernel")]
    MissingKernel(usize),
    #[error("{n} particles exceed the supported maximum of {max}")]
    TooManyParticles { n: usize, max: usize },
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Quantum(#[from] QuantumError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Free Hamiltonian, controlled Hamiltonian, measurement operator, detector
/// efficiency and optional pair interaction of one subsystem.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    hamiltonian: ComplexMatrix,
    control_hamiltonian: ComplexMatrix,
    measurement: ComplexMatrix,
    efficiency: f64,
    kernel: Option<InteractionKernel>,
}

impl ModelParams {
    pub fn new(
        hamiltonian: ComplexMatrix,
        control_hamiltonian: ComplexMatrix,
        measurement: ComplexMatrix,
        efficiency: f64,
        kernel: Option<InteractionKernel>,
    ) -> Result<Self, ModelError> {
        let d = hamiltonian.dim();
        for (field, m) in [("H", &hamiltonian), ("Hhat", &control_hamiltonian), ("L", &measurement)] {
            if m.dim() != d {
                return Err(ModelError::InvalidParams {
                    field,
                    reason: format!("dimension {} differs from H's {d}", m.dim()),
                });
            }
            if !m.is_finite() {
                return Err(ModelError::InvalidParams {
                    field,
                    reason: "non-finite entries".into(),
                });
            }
        }
        for (field, m) in [("H", &hamiltonian), ("Hhat", &control_hamiltonian)] {
            let defect = m.hermiticity_defect();
            if defect > PARAM_HERMITICITY_TOL {
                return Err(ModelError::InvalidParams {
                    field,
                    reason: format!("not Hermitian (defect {defect:.3e})"),
                });
            }
        }
        if !(efficiency > 0.0 && efficiency <= 1.0) {
            return Err(ModelError::EfficiencyOutOfRange(efficiency));
        }
        if let Some(k) = &kernel {
            if k.local_dim() != d {
                return Err(ModelError::InvalidParams {
                    field: "kernel",
                    reason: format!("local dimension {} differs from {d}", k.local_dim()),
                });
            }
        }
        Ok(Self {
            hamiltonian,
            control_hamiltonian,
            measurement,
            efficiency,
            kernel,
        })
    }

    /// H = L = sz, Hhat = sx.
    pub fn qubit(efficiency: f64, kernel: Option<InteractionKernel>) -> Result<Self, ModelError> {
        Self::new(pauli::sigma_z(), pauli::sigma_x(), pauli::sigma_z(), efficiency, kernel)
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.dim()
    }

    pub fn hamiltonian(&self) -> &ComplexMatrix {
        &self.hamiltonian
    }

    pub fn control_hamiltonian(&self) -> &ComplexMatrix {
        &self.control_hamiltonian
    }

    pub fn measurement(&self) -> &ComplexMatrix {
        &self.measurement
    }

    pub fn efficiency(&self) -> f64 {
        self.efficiency
    }

    pub fn kernel(&self) -> Option<&InteractionKernel> {
        self.kernel.as_ref()
    }

    pub fn with_kernel(mut self, kernel: Option<InteractionKernel>) -> Result<Self, ModelError> {
        if let Some(k) = &kernel {
            if k.local_dim() != self.dim() {
                return Err(ModelError::InvalidParams {
                    field: "kernel",
                    reason: format!("local dimension {} differs from {}", k.local_dim(), self.dim()),
                });
            }
        }
        self.kernel = kernel;
        Ok(self)
    }

    pub fn with_efficiency(mut self, efficiency: f64) -> Result<Self, ModelError> {
        if !(efficiency > 0.0 && efficiency <= 1.0) {
            return Err(ModelError::EfficiencyOutOfRange(efficiency));
        }
        self.efficiency = efficiency;
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_validation() {
        assert!(ModelParams::qubit(1.0, None).is_ok());
        assert!(matches!(ModelParams::qubit(0.0, None), Err(ModelError::EfficiencyOutOfRange(_))));
        assert!(matches!(ModelParams::qubit(1.5, None), Err(ModelError::EfficiencyOutOfRange(_))));
        let bad = pauli::sigma_y().scale(crate::quantum::I);
        assert!(matches!(
            ModelParams::new(bad, pauli::sigma_x(), pauli::sigma_z(), 1.0, None),
            Err(ModelError::InvalidParams { field: "H", .. })
        ));
        assert!(matches!(
            ModelParams::new(pauli::sigma_z(), ComplexMatrix::identity(3), pauli::sigma_z(), 1.0, None),
            Err(ModelError::InvalidParams { field: "Hhat", .. })
        ));
        assert!(matches!(
            ModelParams::qubit(1.0, Some(InteractionKernel::zero(3))),
            Err(ModelError::InvalidParams { field: "kernel", .. })
        ));
    }
}
