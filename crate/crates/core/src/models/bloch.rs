use crate::control::ControlLaw;
use crate::quantum::{BlochVector, QuantumError};
use crate::sde::{Coefficients, SdeModel, StepEnv};

use super::ModelError;

/// Which Bloch-coordinate form of the qubit mean-field filter to integrate.
///
/// Both use H = L = sz, Hhat = sx and the photon-exchange coupling.
/// `Derived` is the Pauli expansion of the matrix mean-field filter with the
/// kernel contraction summed directly. `Displayed` is an alternative written
/// form kept for comparison; it differs in its rates and in several signs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum BlochEquations {
    #[default]
    Derived,
    Displayed,
}

/// Mean-field qubit filter in Bloch coordinates.
#[derive(Clone, Debug)]
pub struct QubitMeanFieldBloch {
    efficiency: f64,
    control: ControlLaw,
    equations: BlochEquations,
    coupled: bool,
}

impl QubitMeanFieldBloch {
    pub fn new(efficiency: f64, control: ControlLaw, equations: BlochEquations, coupled: bool) -> Result<Self, ModelError> {
        if !(efficiency > 0.0 && efficiency <= 1.0) {
            return Err(ModelError::EfficiencyOutOfRange(efficiency));
        }
        Ok(Self {
            efficiency,
            control,
            equations,
            coupled,
        })
    }

    pub fn equations(&self) -> BlochEquations {
        self.equations
    }

    pub fn control(&self) -> &ControlLaw {
        &self.control
    }

    /// Drift and diffusion for control `u` and mean coordinates (E[x], E[y]).
    pub fn vector_fields(&self, v: &BlochVector, u: f64, ex: f64, ey: f64) -> (BlochVector, BlochVector) {
        let BlochVector { x, y, z } = *v;
        let s = self.efficiency.sqrt();
        match self.equations {
            BlochEquations::Derived => (
                BlochVector::new(
                    -2.0 * y - 2.0 * x + z * ey,
                    2.0 * x - 2.0 * y - 2.0 * u * z - z * ex,
                    2.0 * u * y + y * ex - x * ey,
                ),
                BlochVector::new(-2.0 * s * x * z, -2.0 * s * y * z, 2.0 * s * (1.0 - z * z)),
            ),
            BlochEquations::Displayed => (
                BlochVector::new(-y - x + z * ey, x - y + u * z - z * ex, -u * x + y * ex + x * ey),
                BlochVector::new(-s * x * z, s * y * z, s * (1.0 - z * z)),
            ),
        }
    }
}

impl SdeModel for QubitMeanFieldBloch {
    type State = BlochVector;

    fn name(&self) -> &'static str {
        "meanfield-bloch"
    }

    fn n_channels(&self) -> usize {
        1
    }

    fn mean_coupled(&self) -> bool {
        self.coupled
    }

    fn controls(&self, state: &BlochVector) -> Result<Vec<f64>, ModelError> {
        Ok(vec![self.control.evaluate_bloch(state)?])
    }

    fn coefficients(&self, state: &BlochVector, env: &StepEnv<'_, BlochVector>) -> Result<Coefficients<BlochVector>, ModelError> {
        let u = env.controls.first().copied().unwrap_or(0.0);
        let (ex, ey) = if self.coupled {
            let m = env.mean.ok_or(ModelError::MissingMeanSource)?;
            (m.x, m.y)
        } else {
            (0.0, 0.0)
        };
        let (drift, diffusion) = self.vector_fields(state, u, ex, ey);
        Ok(Coefficients {
            drift,
            diffusion: vec![diffusion],
        })
    }

    fn signal(&self, state: &BlochVector, _channel: usize) -> f64 {
        2.0 * self.efficiency.sqrt() * state.z
    }

    /// Pulls vectors outside the ball back to the sphere, the Bloch image
    /// of clipping the negative eigenvalue.
    fn project(&self, raw: BlochVector, _step: usize) -> Result<BlochVector, QuantumError> {
        let r = raw.norm();
        if !r.is_finite() {
            return Err(QuantumError::NonFinite);
        }
        if r > 1.0 {
            Ok(BlochVector::new(raw.x / r, raw.y / r, raw.z / r))
        } else {
            Ok(raw)
        }
    }

    fn inspect(&self, state: &BlochVector) -> (f64, f64) {
        let r = state.norm();
        (0.5 * (1.0 - r), 0.5 * (1.0 + r * r))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(eq: BlochEquations, eta: f64) -> QubitMeanFieldBloch {
        QubitMeanFieldBloch::new(eta, ControlLaw::Zero, eq, true).unwrap()
    }

    #[test]
    fn origin_diffuses_along_z() {
        for (eq, rate) in [(BlochEquations::Displayed, 1.0), (BlochEquations::Derived, 2.0)] {
            let (drift, diff) = model(eq, 0.64).vector_fields(&BlochVector::default(), 0.0, 0.0, 0.0);
            assert_eq!(drift, BlochVector::default());
            assert_eq!(diff, BlochVector::new(0.0, 0.0, rate * 0.8));
        }
    }

    #[test]
    fn poles_are_equilibria() {
        for eq in [BlochEquations::Displayed, BlochEquations::Derived] {
            for z in [1.0, -1.0] {
                let (drift, diff) = model(eq, 1.0).vector_fields(&BlochVector::new(0.0, 0.0, z), 0.0, 0.0, 0.0);
                assert_eq!(drift.norm(), 0.0);
                assert_eq!(diff.norm(), 0.0);
            }
        }
    }

    #[test]
    fn stabilized_target_is_fixed() {
        let law = ControlLaw::stabilizing(crate::quantum::DensityMatrix::excited(), 7.6, 5.0).unwrap();
        let target = BlochVector::new(0.0, 0.0, -1.0);
        let u = law.evaluate_bloch(&target).unwrap();
        assert!(u.abs() < 1e-15);
        for eq in [BlochEquations::Displayed, BlochEquations::Derived] {
            let m = QubitMeanFieldBloch::new(1.0, law.clone(), eq, true).unwrap();
            let (drift, diff) = m.vector_fields(&target, u, 0.0, 0.0);
            assert!(drift.norm() < 1e-15 && diff.norm() < 1e-15);
        }
    }

    #[test]
    fn projection_normalizes_outside_ball() {
        let m = model(BlochEquations::Derived, 1.0);
        let p = m.project(BlochVector::new(0.0, 0.0, 1.002), 1).unwrap();
        assert_eq!(p, BlochVector::new(0.0, 0.0, 1.0));
        let inside = BlochVector::new(0.1, 0.2, 0.3);
        assert_eq!(m.project(inside, 1).unwrap(), inside);
    }

    #[test]
    fn coupled_model_needs_mean() {
        let m = model(BlochEquations::Derived, 1.0);
        let env = StepEnv {
            step: 0,
            controls: &[0.0],
            mean: None,
        };
        assert!(matches!(m.coefficients(&BlochVector::default(), &env), Err(ModelError::MissingMeanSource)));
    }
}
