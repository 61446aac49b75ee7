//! Pairwise interaction kernels A(l, l'; k, k') on X^4.
//!
//! The kernel is the matrix of a two-particle operator O on H (x) H with
//! <l l'| O |k k'> = A(l, l'; k, k'). Indices are 0-based in code; the
//! textual entry format and error messages use 1-based labels.

use num_complex::Complex64;
use thiserror::Error;

use crate::quantum::{ComplexMatrix, DensityMatrix, ONE, ZERO};

const KERNEL_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("kernel with local dimension {local_dim} needs {} entries, got {found}", local_dim.pow(4))]
    EntryCount { local_dim: usize, found: usize },
    #[error("local dimension must be between 1 and 8, got {0}")]
    BadLocalDim(usize),
    #[error("kernel entry is not finite at {0:?}")]
    NonFinite([usize; 4]),
    #[error("symmetry A(l,l';k,k') = A(l',l;k',k) violated at {indices:?} (difference {difference:.3e})")]
    SymmetryViolated { indices: [usize; 4], difference: f64 },
    #[error("self-adjointness A = conj(A) violated at {indices:?} (imaginary part {imaginary:.3e})")]
    SelfAdjointnessViolated { indices: [usize; 4], imaginary: f64 },
    #[error("kernel index {index} outside 1..={local_dim}")]
    IndexOutOfRange { index: usize, local_dim: usize },
    #[error("kernel entry {0:?} given twice")]
    DuplicateEntry([usize; 4]),
    #[error("dimension mismatch: kernel acts on dimension {kernel}, state has {state}")]
    DimensionMismatch { kernel: usize, state: usize },
    #[error("empirical mean of an empty ensemble")]
    EmptyEnsemble,
}

/// One entry of a sparse kernel listing, 1-based as in (l, l', k, k', re, im).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelEntry {
    pub l: usize,
    pub l_prime: usize,
    pub k: usize,
    pub k_prime: usize,
    pub value: Complex64,
}

impl KernelEntry {
    pub fn new(indices: [usize; 4], re: f64, im: f64) -> Self {
        Self {
            l: indices[0],
            l_prime: indices[1],
            k: indices[2],
            k_prime: indices[3],
            value: Complex64::new(re, im),
        }
    }
}

/// A validated interaction kernel satisfying pair-swap symmetry and the
/// entrywise reality condition A = conj(A).
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionKernel {
    local_dim: usize,
    values: Vec<Complex64>,
}

impl InteractionKernel {
    /// Validates a dense tensor laid out as ((l d + l') d + k) d + k'.
    pub fn validate(local_dim: usize, values: Vec<Complex64>) -> Result<Self, KernelError> {
        if local_dim == 0 || local_dim > 8 {
            return Err(KernelError::BadLocalDim(local_dim));
        }
        if values.len() != local_dim.pow(4) {
            return Err(KernelError::EntryCount {
                local_dim,
                found: values.len(),
            });
        }
        let kernel = Self { local_dim, values };
        let d = local_dim;
        for l in 0..d {
            for lp in 0..d {
                for k in 0..d {
                    for kp in 0..d {
                        let label = [l + 1, lp + 1, k + 1, kp + 1];
                        let a = kernel.get(l, lp, k, kp);
                        if !(a.re.is_finite() && a.im.is_finite()) {
                            return Err(KernelError::NonFinite(label));
                        }
                        let difference = (a - kernel.get(lp, l, kp, k)).norm();
                        if difference > KERNEL_TOL {
                            return Err(KernelError::SymmetryViolated { indices: label, difference });
                        }
                        // Conjugate of the same index tuple, as the condition is stated.
                        if a.im.abs() > KERNEL_TOL {
                            return Err(KernelError::SelfAdjointnessViolated {
                                indices: label,
                                imaginary: a.im,
                            });
                        }
                    }
                }
            }
        }
        Ok(kernel)
    }

    pub fn from_entries(local_dim: usize, entries: &[KernelEntry]) -> Result<Self, KernelError> {
        if local_dim == 0 || local_dim > 8 {
            return Err(KernelError::BadLocalDim(local_dim));
        }
        let mut values = vec![ZERO; local_dim.pow(4)];
        let mut seen = vec![false; values.len()];
        for e in entries {
            let idx = [e.l, e.l_prime, e.k, e.k_prime];
            for &i in &idx {
                if i == 0 || i > local_dim {
                    return Err(KernelError::IndexOutOfRange { index: i, local_dim });
                }
            }
            let flat = Self::flat(local_dim, idx[0] - 1, idx[1] - 1, idx[2] - 1, idx[3] - 1);
            if seen[flat] {
                return Err(KernelError::DuplicateEntry(idx));
            }
            seen[flat] = true;
            values[flat] = e.value;
        }
        Self::validate(local_dim, values)
    }

    pub fn zero(local_dim: usize) -> Self {
        Self {
            local_dim,
            values: vec![ZERO; local_dim.pow(4)],
        }
    }

    /// Single-photon exchange between two qubits: A(2,1;1,2) = A(1,2;2,1) = 1.
    ///
    /// As a 4x4 operator this swaps |01> and |10> and annihilates |00>, |11>.
    pub fn photon_exchange() -> Self {
        let mut values = vec![ZERO; 16];
        values[Self::flat(2, 1, 0, 0, 1)] = ONE;
        values[Self::flat(2, 0, 1, 1, 0)] = ONE;
        Self { local_dim: 2, values }
    }

    #[inline]
    fn flat(d: usize, l: usize, lp: usize, k: usize, kp: usize) -> usize {
        ((l * d + lp) * d + k) * d + kp
    }

    #[inline]
    pub fn local_dim(&self) -> usize {
        self.local_dim
    }

    /// A(l, l'; k, k'), 0-based.
    #[inline]
    pub fn get(&self, l: usize, lp: usize, k: usize, kp: usize) -> Complex64 {
        self.values[Self::flat(self.local_dim, l, lp, k, kp)]
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == ZERO)
    }

    /// Nonzero entries in the 1-based listing format.
    pub fn entries(&self) -> Vec<KernelEntry> {
        let d = self.local_dim;
        let mut out = Vec::new();
        for l in 0..d {
            for lp in 0..d {
                for k in 0..d {
                    for kp in 0..d {
                        let v = self.get(l, lp, k, kp);
                        if v != ZERO {
                            out.push(KernelEntry::new([l + 1, lp + 1, k + 1, kp + 1], v.re, v.im));
                        }
                    }
                }
            }
        }
        out
    }

    /// The d^2 x d^2 matrix with rows (l, l') and columns (k, k').
    pub fn pair_operator(&self) -> ComplexMatrix {
        let d = self.local_dim;
        let d2 = d * d;
        let mut m = ComplexMatrix::zeros(d2);
        for l in 0..d {
            for lp in 0..d {
                for k in 0..d {
                    for kp in 0..d {
                        m[(l * d + lp, k * d + kp)] = self.get(l, lp, k, kp);
                    }
                }
            }
        }
        m
    }

    /// Frobenius norm of the pair operator.
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    /// A^m(l, l') = sum_{k,k'} A(l, l'; k, k') conj(m(k, k')).
    pub fn contract(&self, m: &ComplexMatrix) -> Result<ComplexMatrix, KernelError> {
        let d = self.local_dim;
        if m.dim() != d {
            return Err(KernelError::DimensionMismatch { kernel: d, state: m.dim() });
        }
        let mut out = ComplexMatrix::zeros(d);
        for l in 0..d {
            for lp in 0..d {
                let mut acc = ZERO;
                for k in 0..d {
                    for kp in 0..d {
                        let a = self.get(l, lp, k, kp);
                        if a != ZERO {
                            acc += a * m[(k, kp)].conj();
                        }
                    }
                }
                out[(l, lp)] = acc;
            }
        }
        Ok(out)
    }

    /// Contraction against the empirical mean of an ensemble.
    pub fn mean_field_term(&self, states: &[DensityMatrix]) -> Result<ComplexMatrix, KernelError> {
        let mean = DensityMatrix::mean(states).ok_or(KernelError::EmptyEnsemble)?;
        self.contract(mean.as_matrix())
    }

    /// Splits the pair operator as sum_r P_r (x) Q_r with P_r = |l><k|.
    ///
    /// Only nonzero Q_r are returned. Used to apply sum_{i<j} A_ij through
    /// single-slot operations.
    pub fn product_terms(&self) -> Vec<(ComplexMatrix, ComplexMatrix)> {
        let d = self.local_dim;
        let mut terms = Vec::new();
        for l in 0..d {
            for k in 0..d {
                let mut q = ComplexMatrix::zeros(d);
                let mut any = false;
                for lp in 0..d {
                    for kp in 0..d {
                        let a = self.get(l, lp, k, kp);
                        if a != ZERO {
                            q[(lp, kp)] = a;
                            any = true;
                        }
                    }
                }
                if any {
                    let mut p = ComplexMatrix::zeros(d);
                    p[(l, k)] = ONE;
                    terms.push((p, q));
                }
            }
        }
        terms
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::{pauli, BlochVector};

    #[test]
    fn zero_and_photon_exchange_validate() {
        assert!(InteractionKernel::validate(2, vec![ZERO; 16]).is_ok());
        let pe = InteractionKernel::photon_exchange();
        assert!(InteractionKernel::validate(2, pe.values.clone()).is_ok());
        assert!(pe.pair_operator().hermiticity_defect() < 1e-15);
    }

    #[test]
    fn broken_pair_swap_is_rejected() {
        let err = InteractionKernel::from_entries(2, &[KernelEntry::new([1, 2, 1, 1], 1.0, 0.0)]).unwrap_err();
        assert!(matches!(err, KernelError::SymmetryViolated { .. }));
    }

    #[test]
    fn complex_entries_violate_printed_self_adjointness() {
        let entries = [KernelEntry::new([1, 2, 2, 1], 0.0, 1.0), KernelEntry::new([2, 1, 1, 2], 0.0, 1.0)];
        assert!(matches!(
            InteractionKernel::from_entries(2, &entries),
            Err(KernelError::SelfAdjointnessViolated { .. })
        ));
    }

    #[test]
    fn entry_listing_errors() {
        assert!(matches!(
            InteractionKernel::from_entries(2, &[KernelEntry::new([0, 1, 1, 1], 1.0, 0.0)]),
            Err(KernelError::IndexOutOfRange { index: 0, .. })
        ));
        let dup = [KernelEntry::new([1, 1, 1, 1], 1.0, 0.0), KernelEntry::new([1, 1, 1, 1], 2.0, 0.0)];
        assert!(matches!(InteractionKernel::from_entries(2, &dup), Err(KernelError::DuplicateEntry(_))));
        assert!(matches!(InteractionKernel::validate(2, vec![ZERO; 15]), Err(KernelError::EntryCount { .. })));
    }

    #[test]
    fn photon_exchange_matches_ladder_operators() {
        // a^dag (x) a + a (x) a^dag with a = |0><1|: swaps |01> and |10>.
        let a = pauli::lowering();
        let ad = pauli::raising();
        let expect = &ad.kron(&a) + &a.kron(&ad);
        assert!((&InteractionKernel::photon_exchange().pair_operator() - &expect).frobenius_norm() < 1e-15);
    }

    #[test]
    fn zero_kernel_contracts_to_zero() {
        let k = InteractionKernel::zero(2);
        let out = k.contract(DensityMatrix::ground().as_matrix()).unwrap();
        assert_eq!(out.frobenius_norm(), 0.0);
    }

    #[test]
    fn photon_exchange_contract_of_mixed_state_vanishes() {
        let k = InteractionKernel::photon_exchange();
        let out = k.contract(DensityMatrix::maximally_mixed(2).as_matrix()).unwrap();
        assert!(out.frobenius_norm() < 1e-15);
    }

    #[test]
    fn photon_exchange_contract_is_half_the_displayed_pauli_matrix() {
        // Direct summation gives (Ex sx + Ey sy)/2; the Pauli-basis display
        // omits the 1/2. Both are recorded here so the factor stays visible.
        let (ex, ey, ez) = (0.3, -0.4, 0.5);
        let m = BlochVector::new(ex, ey, ez).compose().unwrap();
        let out = InteractionKernel::photon_exchange().contract(m.as_matrix()).unwrap();
        let displayed = ComplexMatrix::from_rows([[ZERO, Complex64::new(ex, -ey)], [Complex64::new(ex, ey), ZERO]]);
        assert!((&out - &displayed.scale_real(0.5)).frobenius_norm() < 1e-15);
    }

    #[test]
    fn mean_field_term_examples() {
        let k = InteractionKernel::photon_exchange();
        let rho = BlochVector::new(0.2, 0.1, -0.4).compose().unwrap();
        let single = k.mean_field_term(std::slice::from_ref(&rho)).unwrap();
        let direct = k.contract(rho.as_matrix()).unwrap();
        assert!((&single - &direct).frobenius_norm() < 1e-15);
        let copies = vec![rho.clone(); 7];
        assert!((&k.mean_field_term(&copies).unwrap() - &direct).frobenius_norm() < 1e-15);
        assert!(matches!(k.mean_field_term(&[]), Err(KernelError::EmptyEnsemble)));
        assert!(matches!(k.contract(&ComplexMatrix::identity(3)), Err(KernelError::DimensionMismatch { .. })));
    }

    #[test]
    fn product_terms_rebuild_the_pair_operator() {
        for kernel in [InteractionKernel::photon_exchange(), InteractionKernel::zero(2)] {
            let mut acc = ComplexMatrix::zeros(4);
            for (p, q) in kernel.product_terms() {
                acc += &p.kron(&q);
            }
            assert!((&acc - &kernel.pair_operator()).frobenius_norm() < 1e-15);
        }
    }
}
