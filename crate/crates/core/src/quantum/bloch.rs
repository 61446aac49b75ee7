use num_complex::Complex64;

use super::density::{DensityMatrix, BLOCH_TOL};
use super::matrix::ComplexMatrix;
use super::QuantumError;

/// Pauli-basis coordinates of a qubit state, rho = (I + x sx + y sy + z sz) / 2.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BlochVector {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl BlochVector {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Coordinates of a 2x2 density matrix.
    pub fn decompose(rho: &DensityMatrix) -> Result<Self, QuantumError> {
        if rho.dim() != 2 {
            return Err(QuantumError::WrongDimension { expected: 2, found: rho.dim() });
        }
        Ok(Self::from_matrix_unchecked(rho.as_matrix()))
    }

    /// tr(sigma_k m) for any 2x2 matrix; no validity checks.
    pub fn from_matrix_unchecked(m: &ComplexMatrix) -> Self {
        let off = m[(0, 1)] + m[(1, 0)];
        let off_anti = m[(1, 0)] - m[(0, 1)];
        Self {
            x: off.re,
            // tr(sigma_y m) = i (m01 - m10)
            y: off_anti.im,
            z: (m[(0, 0)] - m[(1, 1)]).re,
        }
    }

    pub fn compose(&self) -> Result<DensityMatrix, QuantumError> {
        let norm = self.norm();
        if !norm.is_finite() {
            return Err(QuantumError::NonFinite);
        }
        if norm > 1.0 + BLOCH_TOL {
            return Err(QuantumError::BlochNormExceeded { norm });
        }
        Ok(DensityMatrix::new_unchecked(self.to_matrix()))
    }

    /// (I + r.sigma) / 2 regardless of the norm.
    pub fn to_matrix(&self) -> ComplexMatrix {
        ComplexMatrix::from_rows([
            [Complex64::new(0.5 * (1.0 + self.z), 0.0), Complex64::new(0.5 * self.x, -0.5 * self.y)],
            [Complex64::new(0.5 * self.x, 0.5 * self.y), Complex64::new(0.5 * (1.0 - self.z), 0.0)],
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ground_state_points_up() {
        let v = BlochVector::decompose(&DensityMatrix::ground()).unwrap();
        assert_eq!(v, BlochVector::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn maximally_mixed_is_origin() {
        let v = BlochVector::decompose(&DensityMatrix::maximally_mixed(2)).unwrap();
        assert!(v.norm() < 1e-15);
    }

    #[test]
    fn stabilization_initial_state_round_trips() {
        let v = BlochVector::new(0.25, -0.25, 0.0);
        let rho = v.compose().unwrap();
        assert!((rho.as_matrix()[(0, 1)] - Complex64::new(0.125, 0.125)).norm() < 1e-15);
        let back = BlochVector::decompose(&rho).unwrap();
        assert!((back.x - 0.25).abs() < 1e-15 && (back.y + 0.25).abs() < 1e-15 && back.z.abs() < 1e-15);
    }

    #[test]
    fn errors() {
        assert!(matches!(BlochVector::new(1.0, 1.0, 0.0).compose(), Err(QuantumError::BlochNormExceeded { .. })));
        assert!(matches!(
            BlochVector::decompose(&DensityMatrix::maximally_mixed(3)),
            Err(QuantumError::WrongDimension { expected: 2, found: 3 })
        ));
    }
}
