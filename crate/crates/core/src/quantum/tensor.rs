//! Operators acting on one or two factors of H^{(x)n}, applied by index
//! striding instead of building d^n x d^n Kronecker products.
//!
//! Particle slots are 0-based and slot 0 is the slowest-varying index: a
//! basis state |i_0 i_1 ... i_{n-1}> sits at row sum_p i_p d^{n-1-p}.

use num_complex::Complex64;

use super::density::DensityMatrix;
use super::matrix::{ComplexMatrix, ONE, ZERO};
use super::QuantumError;

/// Largest joint dimension accepted (4096 rows, 256 MiB per matrix).
const MAX_JOINT_DIM: usize = 1 << 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TensorLayout {
    n_particles: usize,
    local_dim: usize,
    dim: usize,
}

impl TensorLayout {
    pub fn new(n_particles: usize, local_dim: usize) -> Result<Self, QuantumError> {
        if n_particles == 0 || local_dim == 0 {
            return Err(QuantumError::EmptyDimension);
        }
        let mut dim: usize = 1;
        for _ in 0..n_particles {
            dim = dim
                .checked_mul(local_dim)
                .filter(|&d| d <= MAX_JOINT_DIM)
                .ok_or(QuantumError::TooLarge { n_particles, local_dim })?;
        }
        Ok(Self { n_particles, local_dim, dim })
    }

    #[inline]
    pub fn n_particles(&self) -> usize {
        self.n_particles
    }

    #[inline]
    pub fn local_dim(&self) -> usize {
        self.local_dim
    }

    /// d^n
    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Distance between consecutive values of the digit at `slot`.
    #[inline]
    pub fn stride(&self, slot: usize) -> usize {
        self.local_dim.pow((self.n_particles - 1 - slot) as u32)
    }

    fn check_slot(&self, slot: usize) -> Result<(), QuantumError> {
        if slot >= self.n_particles {
            return Err(QuantumError::IndexOutOfRange {
                index: slot,
                count: self.n_particles,
            });
        }
        Ok(())
    }

    fn check_state(&self, rho: &ComplexMatrix) -> Result<(), QuantumError> {
        if rho.dim() != self.dim {
            return Err(QuantumError::WrongDimension {
                expected: self.dim,
                found: rho.dim(),
            });
        }
        Ok(())
    }

    pub fn embed_local(&self, op: &ComplexMatrix, slot: usize) -> Result<LocalAction, QuantumError> {
        self.check_slot(slot)?;
        if op.dim() != self.local_dim {
            return Err(QuantumError::WrongDimension {
                expected: self.local_dim,
                found: op.dim(),
            });
        }
        Ok(LocalAction {
            layout: *self,
            op: op.clone(),
            slot,
        })
    }

    pub fn embed_pair(&self, op: &ComplexMatrix, first: usize, second: usize) -> Result<PairAction, QuantumError> {
        self.check_slot(first)?;
        self.check_slot(second)?;
        if first == second {
            return Err(QuantumError::DuplicateIndex { index: first });
        }
        let d2 = self.local_dim * self.local_dim;
        if op.dim() != d2 {
            return Err(QuantumError::WrongDimension { expected: d2, found: op.dim() });
        }
        Ok(PairAction {
            layout: *self,
            op: op.clone(),
            first,
            second,
        })
    }

    /// rho0 (x) ... (x) rho0
    pub fn product_state(&self, factor: &DensityMatrix) -> Result<NState, QuantumError> {
        if factor.dim() != self.local_dim {
            return Err(QuantumError::WrongDimension {
                expected: self.local_dim,
                found: factor.dim(),
            });
        }
        let mut acc = factor.as_matrix().clone();
        for _ in 1..self.n_particles {
            acc = acc.kron(factor.as_matrix());
        }
        Ok(NState {
            layout: *self,
            rho: DensityMatrix::new_unchecked(acc),
        })
    }

    /// out += coeff * B_slot rho
    pub fn left_acc(&self, op: &ComplexMatrix, slot: usize, coeff: Complex64, rho: &ComplexMatrix, out: &mut ComplexMatrix) {
        let d = self.local_dim;
        let n = self.dim;
        let s = self.stride(slot);
        let block = d * s;
        let src = rho.as_slice();
        let dst = out.as_mut_slice();
        for hi in (0..n).step_by(block) {
            for lo in 0..s {
                let base = hi + lo;
                for a in 0..d {
                    let row_out = (base + a * s) * n;
                    for k in 0..d {
                        let w = op[(a, k)];
                        if w == ZERO {
                            continue;
                        }
                        let w = w * coeff;
                        let row_in = (base + k * s) * n;
                        let (o, i) = (&mut dst[row_out..row_out + n], &src[row_in..row_in + n]);
                        for (x, &y) in o.iter_mut().zip(i) {
                            *x += w * y;
                        }
                    }
                }
            }
        }
    }

    /// out += coeff * rho B_slot
    pub fn right_acc(&self, op: &ComplexMatrix, slot: usize, coeff: Complex64, rho: &ComplexMatrix, out: &mut ComplexMatrix) {
        let d = self.local_dim;
        let n = self.dim;
        let s = self.stride(slot);
        let block = d * s;
        let weights: Vec<(usize, usize, Complex64)> = (0..d)
            .flat_map(|a| (0..d).map(move |k| (a, k)))
            .filter_map(|(a, k)| {
                let w = op[(k, a)];
                (w != ZERO).then_some((a, k, w * coeff))
            })
            .collect();
        let src = rho.as_slice();
        let dst = out.as_mut_slice();
        for r in 0..n {
            let i_row = &src[r * n..(r + 1) * n];
            let o_row = &mut dst[r * n..(r + 1) * n];
            for hi in (0..n).step_by(block) {
                for lo in 0..s {
                    let base = hi + lo;
                    for &(a, k, w) in &weights {
                        o_row[base + a * s] += w * i_row[base + k * s];
                    }
                }
            }
        }
    }

    /// out += coeff * B_slot rho B_slot^dag in one pass over rho.
    pub fn sandwich_acc(&self, op: &ComplexMatrix, slot: usize, coeff: Complex64, rho: &ComplexMatrix, out: &mut ComplexMatrix) {
        let d = self.local_dim;
        let n = self.dim;
        let s = self.stride(slot);
        let block = d * s;
        // (row B^dag)[base + b s] = sum_l row[base + l s] conj(B[b, l])
        let right: Vec<(usize, usize, Complex64)> = (0..d)
            .flat_map(|b| (0..d).map(move |l| (b, l)))
            .filter_map(|(b, l)| {
                let w = op[(b, l)].conj();
                (w != ZERO).then_some((b, l, w))
            })
            .collect();
        let src = rho.as_slice();
        let dst = out.as_mut_slice();
        for hi in (0..n).step_by(block) {
            for lo in 0..s {
                let base = hi + lo;
                for a in 0..d {
                    let row_out = (base + a * s) * n;
                    for k in 0..d {
                        let w = op[(a, k)];
                        if w == ZERO {
                            continue;
                        }
                        let w = w * coeff;
                        let row_in = (base + k * s) * n;
                        let (o, i) = (&mut dst[row_out..row_out + n], &src[row_in..row_in + n]);
                        for hi2 in (0..n).step_by(block) {
                            for lo2 in 0..s {
                                let base2 = hi2 + lo2;
                                for &(b, l, v) in &right {
                                    o[base2 + b * s] += w * v * i[base2 + l * s];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Marginal of slot `keep`, summing over every other factor.
    pub fn partial_trace_raw(&self, rho: &ComplexMatrix, keep: usize) -> Result<ComplexMatrix, QuantumError> {
        self.check_slot(keep)?;
        self.check_state(rho)?;
        let d = self.local_dim;
        let s = self.stride(keep);
        let block = d * s;
        let mut out = ComplexMatrix::zeros(d);
        for hi in (0..self.dim).step_by(block) {
            for lo in 0..s {
                let base = hi + lo;
                for a in 0..d {
                    for b in 0..d {
                        out[(a, b)] += rho[(base + a * s, base + b * s)];
                    }
                }
            }
        }
        Ok(out)
    }
}

impl TensorLayout {
    /// psi0 (x) ... (x) psi0 as a joint amplitude vector.
    pub fn product_vector(&self, factor: &[Complex64]) -> Result<Vec<Complex64>, QuantumError> {
        if factor.len() != self.local_dim {
            return Err(QuantumError::WrongDimension {
                expected: self.local_dim,
                found: factor.len(),
            });
        }
        let mut out = vec![ONE];
        for _ in 0..self.n_particles {
            out = out.iter().flat_map(|&a| factor.iter().map(move |&b| a * b)).collect();
        }
        Ok(out)
    }

    /// out += coeff * B_slot psi
    pub fn vector_acc(&self, op: &ComplexMatrix, slot: usize, coeff: Complex64, psi: &[Complex64], out: &mut [Complex64]) {
        let d = self.local_dim;
        let s = self.stride(slot);
        let block = d * s;
        for hi in (0..self.dim).step_by(block) {
            for a in 0..d {
                for k in 0..d {
                    let w = op[(a, k)];
                    if w == ZERO {
                        continue;
                    }
                    let w = w * coeff;
                    let (o, i) = (hi + a * s, hi + k * s);
                    for lo in 0..s {
                        out[o + lo] += w * psi[i + lo];
                    }
                }
            }
        }
    }

    /// Marginal of slot `keep` for the pure state |psi><psi|.
    pub fn vector_marginal(&self, psi: &[Complex64], keep: usize) -> Result<ComplexMatrix, QuantumError> {
        self.check_slot(keep)?;
        if psi.len() != self.dim {
            return Err(QuantumError::WrongDimension {
                expected: self.dim,
                found: psi.len(),
            });
        }
        let d = self.local_dim;
        let s = self.stride(keep);
        let block = d * s;
        let mut out = ComplexMatrix::zeros(d);
        for hi in (0..self.dim).step_by(block) {
            for a in 0..d {
                for b in 0..d {
                    let mut acc = ZERO;
                    for lo in 0..s {
                        acc += psi[hi + a * s + lo] * psi[hi + b * s + lo].conj();
                    }
                    out[(a, b)] += acc;
                }
            }
        }
        Ok(out)
    }
}

/// B acting on one slot of the joint space.
#[derive(Clone, Debug)]
pub struct LocalAction {
    layout: TensorLayout,
    op: ComplexMatrix,
    slot: usize,
}

impl LocalAction {
    /// B_j rho
    pub fn left(&self, rho: &ComplexMatrix) -> Result<ComplexMatrix, QuantumError> {
        self.layout.check_state(rho)?;
        let mut out = ComplexMatrix::zeros(rho.dim());
        self.layout.left_acc(&self.op, self.slot, ONE, rho, &mut out);
        Ok(out)
    }

    /// rho B_j
    pub fn right(&self, rho: &ComplexMatrix) -> Result<ComplexMatrix, QuantumError> {
        self.layout.check_state(rho)?;
        let mut out = ComplexMatrix::zeros(rho.dim());
        self.layout.right_acc(&self.op, self.slot, ONE, rho, &mut out);
        Ok(out)
    }

    /// B_j rho B_j^dag
    pub fn sandwich(&self, rho: &ComplexMatrix) -> Result<ComplexMatrix, QuantumError> {
        let left = self.left(rho)?;
        let mut out = ComplexMatrix::zeros(rho.dim());
        self.layout.right_acc(&self.op.adjoint(), self.slot, ONE, &left, &mut out);
        Ok(out)
    }
}

/// O acting on the ordered slot pair (first, second); the first tensor
/// factor of O lands on `first`.
#[derive(Clone, Debug)]
pub struct PairAction {
    layout: TensorLayout,
    op: ComplexMatrix,
    first: usize,
    second: usize,
}

impl PairAction {
    fn digits(&self, idx: usize) -> (usize, usize) {
        let d = self.layout.local_dim;
        let s1 = self.layout.stride(self.first);
        let s2 = self.layout.stride(self.second);
        ((idx / s1) % d, (idx / s2) % d)
    }

    fn nonzero(&self) -> Vec<(usize, usize, usize, usize, Complex64)> {
        let d = self.layout.local_dim;
        let mut out = Vec::new();
        for a in 0..d {
            for b in 0..d {
                for a2 in 0..d {
                    for b2 in 0..d {
                        let w = self.op[(a * d + b, a2 * d + b2)];
                        if w != ZERO {
                            out.push((a, b, a2, b2, w));
                        }
                    }
                }
            }
        }
        out
    }

    /// O_jk rho
    pub fn left(&self, rho: &ComplexMatrix) -> Result<ComplexMatrix, QuantumError> {
        self.layout.check_state(rho)?;
        let n = self.layout.dim;
        let s1 = self.layout.stride(self.first);
        let s2 = self.layout.stride(self.second);
        let entries = self.nonzero();
        let mut out = ComplexMatrix::zeros(n);
        let src = rho.as_slice();
        let dst = out.as_mut_slice();
        for r in 0..n {
            let (a, b) = self.digits(r);
            let base = r - a * s1 - b * s2;
            for &(ea, eb, a2, b2, w) in &entries {
                if ea != a || eb != b {
                    continue;
                }
                let row_in = (base + a2 * s1 + b2 * s2) * n;
                for c in 0..n {
                    dst[r * n + c] += w * src[row_in + c];
                }
            }
        }
        Ok(out)
    }

    /// rho O_jk
    pub fn right(&self, rho: &ComplexMatrix) -> Result<ComplexMatrix, QuantumError> {
        self.layout.check_state(rho)?;
        let n = self.layout.dim;
        let s1 = self.layout.stride(self.first);
        let s2 = self.layout.stride(self.second);
        let entries = self.nonzero();
        let mut out = ComplexMatrix::zeros(n);
        for c in 0..n {
            let (a, b) = self.digits(c);
            let base = c - a * s1 - b * s2;
            // (rho O)[r, c] = sum rho[r, c'] O[c', c]
            for &(a2, b2, ea, eb, w) in &entries {
                if ea != a || eb != b {
                    continue;
                }
                let col_in = base + a2 * s1 + b2 * s2;
                for r in 0..n {
                    out[(r, c)] += rho[(r, col_in)] * w;
                }
            }
        }
        Ok(out)
    }

    /// O_jk rho O_jk^dag
    pub fn sandwich(&self, rho: &ComplexMatrix) -> Result<ComplexMatrix, QuantumError> {
        let left = self.left(rho)?;
        let adj = PairAction {
            op: self.op.adjoint(),
            ..self.clone()
        };
        adj.right(&left)
    }
}

/// Joint density matrix of n particles with local dimension d.
#[derive(Clone, Debug)]
pub struct NState {
    layout: TensorLayout,
    rho: DensityMatrix,
}

impl NState {
    pub fn new(n_particles: usize, local_dim: usize, rho: DensityMatrix) -> Result<Self, QuantumError> {
        let layout = TensorLayout::new(n_particles, local_dim)?;
        layout.check_state(rho.as_matrix())?;
        Ok(Self { layout, rho })
    }

    pub fn product(factor: &DensityMatrix, n_particles: usize) -> Result<Self, QuantumError> {
        TensorLayout::new(n_particles, factor.dim())?.product_state(factor)
    }

    pub fn layout(&self) -> TensorLayout {
        self.layout
    }

    pub fn n_particles(&self) -> usize {
        self.layout.n_particles
    }

    pub fn local_dim(&self) -> usize {
        self.layout.local_dim
    }

    pub fn density(&self) -> &DensityMatrix {
        &self.rho
    }

    pub fn partial_trace(&self, keep: usize) -> Result<DensityMatrix, QuantumError> {
        let m = self.layout.partial_trace_raw(self.rho.as_matrix(), keep)?;
        Ok(DensityMatrix::new_unchecked(m))
    }
}
