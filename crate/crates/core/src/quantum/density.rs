use num_complex::Complex64;

use super::matrix::{eigh, eigvalsh, ComplexMatrix, ONE};
use super::QuantumError;

pub const HERMITICITY_TOL: f64 = 1e-9;
pub const TRACE_TOL: f64 = 1e-9;
pub const PSD_TOL: f64 = 1e-9;
pub const BLOCH_TOL: f64 = 1e-9;

/// Trace below which a clipped state is considered degenerate.
const DEGENERATE_TRACE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub hermiticity: f64,
    pub trace: f64,
    pub psd: f64,
}

impl Tolerances {
    pub const fn uniform(tol: f64) -> Self {
        Self {
            hermiticity: tol,
            trace: tol,
            psd: tol,
        }
    }
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            hermiticity: HERMITICITY_TOL,
            trace: TRACE_TOL,
            psd: PSD_TOL,
        }
    }
}

/// A Hermitian, positive semidefinite, unit-trace matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix(ComplexMatrix);

/// Checks the three density-matrix invariants and wraps the matrix.
pub fn validate_density(m: ComplexMatrix, tol: Tolerances) -> Result<DensityMatrix, QuantumError> {
    if !m.is_finite() {
        return Err(QuantumError::NonFinite);
    }
    let defect = m.hermiticity_defect();
    if defect > tol.hermiticity {
        return Err(QuantumError::NotHermitian { defect });
    }
    let deviation = (m.trace() - ONE).norm();
    if deviation > tol.trace {
        return Err(QuantumError::NotTraceOne { deviation });
    }
    let min_eigenvalue = eigvalsh(&m)[0];
    if !(min_eigenvalue >= -tol.psd) {
        return Err(QuantumError::NotPsd { min_eigenvalue });
    }
    Ok(DensityMatrix(m))
}

impl DensityMatrix {
    pub fn new(m: ComplexMatrix) -> Result<Self, QuantumError> {
        validate_density(m, Tolerances::default())
    }

    /// Wraps without checking. Callers must guarantee the invariants.
    pub(crate) fn new_unchecked(m: ComplexMatrix) -> Self {
        Self(m)
    }

    /// |psi><psi| / <psi|psi>
    pub fn pure(psi: &[Complex64]) -> Result<Self, QuantumError> {
        let norm_sqr: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        if psi.is_empty() {
            return Err(QuantumError::EmptyDimension);
        }
        if !(norm_sqr.is_finite() && norm_sqr > 0.0) {
            return Err(QuantumError::NonFinite);
        }
        Ok(Self(ComplexMatrix::outer(psi).scale_real(1.0 / norm_sqr)))
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self(ComplexMatrix::identity(dim).scale_real(1.0 / dim as f64))
    }

    /// diag(1, 0): the +1 eigenstate of sigma_z.
    pub fn ground() -> Self {
        Self(ComplexMatrix::from_real_diagonal(&[1.0, 0.0]))
    }

    /// diag(0, 1): the -1 eigenstate of sigma_z.
    pub fn excited() -> Self {
        Self(ComplexMatrix::from_real_diagonal(&[0.0, 1.0]))
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    #[inline]
    pub fn as_matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.0
    }

    /// tr(rho^2)
    pub fn purity(&self) -> f64 {
        self.0.trace_product(&self.0).re
    }

    pub fn min_eigenvalue(&self) -> f64 {
        eigvalsh(&self.0)[0]
    }

    pub fn fidelity(&self, other: &DensityMatrix) -> Result<f64, QuantumError> {
        fidelity(self, other)
    }

    /// Arithmetic mean of equally sized states.
    pub fn mean(states: &[DensityMatrix]) -> Option<DensityMatrix> {
        let first = states.first()?;
        let mut acc = ComplexMatrix::zeros(first.dim());
        for s in states {
            acc += s.as_matrix();
        }
        Some(Self(acc.scale_real(1.0 / states.len() as f64)))
    }
}

/// Uhlmann fidelity (tr sqrt(sqrt(rho) sigma sqrt(rho)))^2, clipped to [0, 1].
///
/// Square roots go through the Hermitian eigendecomposition with negative
/// eigenvalues clipped to zero, so slightly non-PSD numerical states are
/// tolerated.
pub fn fidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64, QuantumError> {
    if rho.dim() != sigma.dim() {
        return Err(QuantumError::DimensionMismatch {
            left: rho.dim(),
            right: sigma.dim(),
        });
    }
    let sqrt_rho = rho.as_matrix().hermitian_map(|x| x.max(0.0).sqrt());
    let inner = sqrt_rho.matmul(sigma.as_matrix()).matmul(&sqrt_rho);
    let root_trace: f64 = eigvalsh(&inner).iter().map(|&x| x.max(0.0).sqrt()).sum();
    Ok((root_trace * root_trace).clamp(0.0, 1.0))
}

/// Result of mapping an arbitrary matrix back onto the state space.
#[derive(Clone, Debug)]
pub struct Projected {
    pub state: DensityMatrix,
    /// Frobenius distance between the input and the projected state.
    pub distance: f64,
}

/// Hermitize, clip negative eigenvalues to zero and renormalize the trace.
pub fn project_state(m: &ComplexMatrix) -> Result<Projected, QuantumError> {
    if !m.is_finite() {
        return Err(QuantumError::NonFinite);
    }
    let mut herm = m.hermitian_part();
    // Clip-and-renormalize ignores positive scale; shrink huge inputs so squares stay finite.
    let scale = herm.as_slice().iter().fold(0.0f64, |acc, z| acc.max(z.re.abs()).max(z.im.abs()));
    if scale > 1e100 {
        herm = herm.scale_real(1.0 / scale);
    }
    let projected = if herm.dim() == 2 {
        project2(&herm)?
    } else {
        let (vals, vecs) = eigh(&herm);
        let trace: f64 = vals.iter().map(|&v| v.max(0.0)).sum();
        if trace < DEGENERATE_TRACE {
            return Err(QuantumError::DegenerateState { trace });
        }
        if vals[0] >= 0.0 {
            herm.scale_real(1.0 / trace)
        } else {
            let n = herm.dim();
            let mut out = ComplexMatrix::zeros(n);
            for (k, &lam) in vals.iter().enumerate() {
                if lam <= 0.0 {
                    continue;
                }
                let w = lam / trace;
                for i in 0..n {
                    let vi = vecs[(i, k)] * w;
                    for j in 0..n {
                        out[(i, j)] += vi * vecs[(j, k)].conj();
                    }
                }
            }
            out
        }
    };
    if !projected.is_finite() {
        return Err(QuantumError::NonFinite);
    }
    let distance = (&projected - m).frobenius_norm();
    Ok(Projected {
        state: DensityMatrix(projected),
        distance,
    })
}

/// Closed form for 2x2 Hermitian input written as (t I + v.sigma) / 2.
fn project2(h: &ComplexMatrix) -> Result<ComplexMatrix, QuantumError> {
    let a = h[(0, 0)].re;
    let c = h[(1, 1)].re;
    let b = h[(0, 1)];
    let t = a + c;
    let (vx, vy, vz) = (2.0 * b.re, -2.0 * b.im, a - c);
    let r = (vx * vx + vy * vy + vz * vz).sqrt();
    let lo = 0.5 * (t - r);
    let hi = 0.5 * (t + r);
    if lo >= 0.0 {
        if t < DEGENERATE_TRACE {
            return Err(QuantumError::DegenerateState { trace: t });
        }
        return Ok(h.scale_real(1.0 / t));
    }
    if hi < DEGENERATE_TRACE {
        return Err(QuantumError::DegenerateState { trace: hi.max(0.0) });
    }
    // Only the upper eigenvalue survives: a pure state along v.
    let (x, y, z) = (vx / r, vy / r, vz / r);
    Ok(ComplexMatrix::from_rows([
        [Complex64::new(0.5 * (1.0 + z), 0.0), Complex64::new(0.5 * x, -0.5 * y)],
        [Complex64::new(0.5 * x, 0.5 * y), Complex64::new(0.5 * (1.0 - z), 0.0)],
    ]))
}

impl From<DensityMatrix> for ComplexMatrix {
    fn from(d: DensityMatrix) -> Self {
        d.0
    }
}
