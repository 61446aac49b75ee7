//! Dense square complex matrices.
//!
//! Storage is row-major. Matrices up to 2x2 live inline, which keeps the
//! single-qubit hot loops free of heap traffic.

use std::fmt;
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use smallvec::SmallVec;

use super::QuantumError;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(PartialEq)]
pub struct ComplexMatrix {
    dim: usize,
    data: SmallVec<[Complex64; 4]>,
}

impl Clone for ComplexMatrix {
    fn clone(&self) -> Self {
        Self {
            dim: self.dim,
            data: SmallVec::from_slice(&self.data),
        }
    }
}

impl ComplexMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: SmallVec::from_elem(ZERO, dim * dim),
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = ONE;
        }
        m
    }

    /// Builds a matrix from row-major entries.
    pub fn from_vec(dim: usize, entries: Vec<Complex64>) -> Result<Self, QuantumError> {
        if dim == 0 {
            return Err(QuantumError::EmptyDimension);
        }
        if entries.len() != dim * dim {
            return Err(QuantumError::EntryCount { dim, found: entries.len() });
        }
        Ok(Self {
            dim,
            data: SmallVec::from_vec(entries),
        })
    }

    pub fn from_rows<const D: usize>(rows: [[Complex64; D]; D]) -> Self {
        let mut data = SmallVec::with_capacity(D * D);
        for row in rows {
            data.extend_from_slice(&row);
        }
        Self { dim: D, data }
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = Complex64::new(v, 0.0);
        }
        m
    }

    /// |psi><psi|
    pub fn outer(psi: &[Complex64]) -> Self {
        let dim = psi.len();
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                m[(i, j)] = psi[i] * psi[j].conj();
            }
        }
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[Complex64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|z| *z = ZERO);
    }

    pub fn adjoint(&self) -> Self {
        let n = self.dim;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out.data[j * n + i] = self.data[i * n + j].conj();
            }
        }
        out
    }

    /// Adds `self^dag` to `self` in place, i.e. `self <- self + self^dag`.
    pub fn add_own_adjoint(&mut self) {
        self.fold_adjoint(1.0);
    }

    /// `self <- (self + self^dag) / 2` in place.
    pub fn hermitize(&mut self) {
        self.fold_adjoint(0.5);
    }

    /// `self <- scale (self + self^dag)`, walking tiles so both triangles stay in cache.
    fn fold_adjoint(&mut self, scale: f64) {
        const TILE: usize = 32;
        let n = self.dim;
        let data = &mut self.data;
        for ib in (0..n).step_by(TILE) {
            for jb in (ib..n).step_by(TILE) {
                for i in ib..(ib + TILE).min(n) {
                    let j0 = if ib == jb { i } else { jb };
                    for j in j0..(jb + TILE).min(n) {
                        if i == j {
                            let d = data[i * n + i];
                            data[i * n + i] = Complex64::new(2.0 * scale * d.re, 0.0);
                            continue;
                        }
                        let s = (data[i * n + j] + data[j * n + i].conj()) * scale;
                        data[i * n + j] = s;
                        data[j * n + i] = s.conj();
                    }
                }
            }
        }
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.dim).map(|i| self.data[i * self.dim + i]).sum()
    }

    /// tr(self * other) without forming the product.
    pub fn trace_product(&self, other: &ComplexMatrix) -> Complex64 {
        debug_assert_eq!(self.dim, other.dim);
        let n = self.dim;
        let mut acc = ZERO;
        for i in 0..n {
            for k in 0..n {
                acc += self.data[i * n + k] * other.data[k * n + i];
            }
        }
        acc
    }

    pub fn matmul(&self, other: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.dim, other.dim, "matmul dimension mismatch");
        let n = self.dim;
        if n == 2 {
            let (a, b) = (&self.data[..4], &other.data[..4]);
            return Self {
                dim: 2,
                data: SmallVec::from_buf([
                    a[0] * b[0] + a[1] * b[2],
                    a[0] * b[1] + a[1] * b[3],
                    a[2] * b[0] + a[3] * b[2],
                    a[2] * b[1] + a[3] * b[3],
                ]),
            };
        }
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == ZERO {
                    continue;
                }
                let orow = &other.data[k * n..(k + 1) * n];
                let dst = &mut out.data[i * n..(i + 1) * n];
                for (d, &b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        out
    }

    /// [A, B] = AB - BA
    pub fn commutator(&self, other: &ComplexMatrix) -> ComplexMatrix {
        &self.matmul(other) - &other.matmul(self)
    }

    /// {A, B} = AB + BA
    pub fn anticommutator(&self, other: &ComplexMatrix) -> ComplexMatrix {
        &self.matmul(other) + &other.matmul(self)
    }

    /// self += a * x
    pub fn axpy(&mut self, a: Complex64, x: &ComplexMatrix) {
        debug_assert_eq!(self.dim, x.dim);
        for (d, &s) in self.data.iter_mut().zip(x.data.iter()) {
            *d += a * s;
        }
    }

    /// self += a * x for real a.
    pub fn axpy_real(&mut self, a: f64, x: &ComplexMatrix) {
        debug_assert_eq!(self.dim, x.dim);
        for (d, &s) in self.data.iter_mut().zip(x.data.iter()) {
            *d += s * a;
        }
    }

    pub fn scale(&self, a: Complex64) -> ComplexMatrix {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|z| *z *= a);
        out
    }

    pub fn scale_real(&self, a: f64) -> ComplexMatrix {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|z| *z *= a);
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// ||self - self^dag||_F
    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.dim;
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += (self.data[i * n + j] - self.data[j * n + i].conj()).norm_sqr();
            }
        }
        acc.sqrt()
    }

    /// (m + m^dag) / 2
    pub fn hermitian_part(&self) -> ComplexMatrix {
        let mut out = self.clone();
        out.hermitize();
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Kronecker product self (x) other; self indexes the slow factor.
    pub fn kron(&self, other: &ComplexMatrix) -> ComplexMatrix {
        let (n, m) = (self.dim, other.dim);
        let dim = n * m;
        let mut out = Self::zeros(dim);
        for i in 0..n {
            for j in 0..n {
                let a = self.data[i * n + j];
                if a == ZERO {
                    continue;
                }
                for k in 0..m {
                    for l in 0..m {
                        out.data[(i * m + k) * dim + j * m + l] = a * other.data[k * m + l];
                    }
                }
            }
        }
        out
    }

    /// Largest singular value, via the Hermitian eigenproblem of `m^dag m`.
    pub fn operator_norm(&self) -> f64 {
        let gram = self.adjoint().matmul(self);
        let (vals, _) = eigh(&gram);
        vals.last().copied().unwrap_or(0.0).max(0.0).sqrt()
    }

    /// Applies `f` to the spectrum of a Hermitian matrix.
    pub fn hermitian_map(&self, f: impl Fn(f64) -> f64) -> ComplexMatrix {
        let (vals, vecs) = eigh(self);
        let n = self.dim;
        let mut out = Self::zeros(n);
        for (k, &lam) in vals.iter().enumerate() {
            let w = f(lam);
            if w == 0.0 {
                continue;
            }
            for i in 0..n {
                let vi = vecs[(i, k)] * w;
                for j in 0..n {
                    out.data[i * n + j] += vi * vecs[(j, k)].conj();
                }
            }
        }
        out
    }

    pub(crate) fn to_nalgebra(&self) -> DMatrix<Complex64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.data)
    }
}

/// Eigendecomposition of a Hermitian matrix.
///
/// Returns eigenvalues in ascending order and the matching eigenvectors as
/// the columns of the second value. Only the Hermitian part of `m` is used.
pub fn eigh(m: &ComplexMatrix) -> (Vec<f64>, ComplexMatrix) {
    match m.dim {
        1 => (vec![m.data[0].re], ComplexMatrix::identity(1)),
        2 => eigh2(m),
        _ => {
            let eig = SymmetricEigen::new(m.hermitian_part().to_nalgebra());
            let n = m.dim;
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
            let vals = order.iter().map(|&k| eig.eigenvalues[k]).collect();
            let mut vecs = ComplexMatrix::zeros(n);
            for (col, &k) in order.iter().enumerate() {
                for i in 0..n {
                    vecs[(i, col)] = eig.eigenvectors[(i, k)];
                }
            }
            (vals, vecs)
        }
    }
}

/// Eigenvalues only; ascending.
pub fn eigvalsh(m: &ComplexMatrix) -> Vec<f64> {
    match m.dim {
        1 => vec![m.data[0].re],
        2 => {
            let (lo, hi) = eigvals2(m);
            vec![lo, hi]
        }
        _ => {
            let mut v: Vec<f64> = m.hermitian_part().to_nalgebra().symmetric_eigenvalues().iter().copied().collect();
            v.sort_by(f64::total_cmp);
            v
        }
    }
}

fn eigvals2(m: &ComplexMatrix) -> (f64, f64) {
    let a = m.data[0].re;
    let c = m.data[3].re;
    let b = (m.data[1] + m.data[2].conj()) * 0.5;
    let mean = 0.5 * (a + c);
    let r = (0.25 * (a - c) * (a - c) + b.norm_sqr()).sqrt();
    (mean - r, mean + r)
}

fn eigh2(m: &ComplexMatrix) -> (Vec<f64>, ComplexMatrix) {
    let a = m.data[0].re;
    let c = m.data[3].re;
    let b = (m.data[1] + m.data[2].conj()) * 0.5;
    let (lo, hi) = eigvals2(m);
    if b.norm() <= f64::EPSILON * (a.abs() + c.abs()).max(f64::MIN_POSITIVE) {
        let vecs = if a <= c {
            ComplexMatrix::identity(2)
        } else {
            ComplexMatrix::from_rows([[ZERO, ONE], [ONE, ZERO]])
        };
        return (vec![a.min(c), a.max(c)], vecs);
    }
    // Pick the row of (M - lambda) whose null vector is well conditioned.
    let null_vec = |lam: f64| -> [Complex64; 2] {
        let v1 = [b, Complex64::new(lam - a, 0.0)];
        let v2 = [Complex64::new(lam - c, 0.0), b.conj()];
        let n1 = v1[0].norm_sqr() + v1[1].norm_sqr();
        let n2 = v2[0].norm_sqr() + v2[1].norm_sqr();
        let (v, n) = if n1 >= n2 { (v1, n1) } else { (v2, n2) };
        let s = 1.0 / n.sqrt();
        [v[0] * s, v[1] * s]
    };
    let vl = null_vec(lo);
    let vh = null_vec(hi);
    let vecs = ComplexMatrix::from_rows([[vl[0], vh[0]], [vl[1], vh[1]]]);
    (vec![lo, hi], vecs)
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = Complex64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.data[i * self.dim + j]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.data[i * self.dim + j]
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        let mut out = self.clone();
        out += rhs;
        out
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        let mut out = self.clone();
        out -= rhs;
        out
    }
}

impl AddAssign<&ComplexMatrix> for ComplexMatrix {
    fn add_assign(&mut self, rhs: &ComplexMatrix) {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch");
        for (d, &s) in self.data.iter_mut().zip(rhs.data.iter()) {
            *d += s;
        }
    }
}

impl SubAssign<&ComplexMatrix> for ComplexMatrix {
    fn sub_assign(&mut self, rhs: &ComplexMatrix) {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch");
        for (d, &s) in self.data.iter_mut().zip(rhs.data.iter()) {
            *d -= s;
        }
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        self.matmul(rhs)
    }
}

impl Mul<f64> for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: f64) -> ComplexMatrix {
        self.scale_real(rhs)
    }
}

impl Mul<Complex64> for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: Complex64) -> ComplexMatrix {
        self.scale(rhs)
    }
}

impl Neg for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn neg(self) -> ComplexMatrix {
        self.scale_real(-1.0)
    }
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix({}x{}) [", self.dim, self.dim)?;
        for i in 0..self.dim {
            write!(f, "  ")?;
            for z in self.row(i) {
                write!(f, "{:+.6}{:+.6}i  ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

/// Pauli matrices and related single-qubit operators.
pub mod pauli {
    use super::{ComplexMatrix, I, ONE, ZERO};

    pub fn sigma_x() -> ComplexMatrix {
        ComplexMatrix::from_rows([[ZERO, ONE], [ONE, ZERO]])
    }

    pub fn sigma_y() -> ComplexMatrix {
        ComplexMatrix::from_rows([[ZERO, -I], [I, ZERO]])
    }

    pub fn sigma_z() -> ComplexMatrix {
        ComplexMatrix::from_rows([[ONE, ZERO], [ZERO, -ONE]])
    }

    /// Lowering operator |0><1| (maps the second basis state onto the first).
    pub fn lowering() -> ComplexMatrix {
        ComplexMatrix::from_rows([[ZERO, ONE], [ZERO, ZERO]])
    }

    /// Raising operator |1><0|.
    pub fn raising() -> ComplexMatrix {
        ComplexMatrix::from_rows([[ZERO, ZERO], [ONE, ZERO]])
    }
}

#[cfg(test)]
mod tests {
    use super::pauli::*;
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn pauli_algebra() {
        let (x, y, z) = (sigma_x(), sigma_y(), sigma_z());
        // [x, y] = 2 i z
        let comm = x.commutator(&y);
        assert!((&comm - &z.scale(c(0.0, 2.0))).frobenius_norm() < 1e-15);
        // {x, x} = 2 I
        let anti = x.anticommutator(&x);
        assert!((&anti - &ComplexMatrix::identity(2).scale_real(2.0)).frobenius_norm() < 1e-15);
        assert_eq!(z.trace(), ZERO);
    }

    #[test]
    fn kron_places_first_factor_slowest() {
        let k = sigma_z().kron(&ComplexMatrix::identity(2));
        let diag: Vec<f64> = (0..4).map(|i| k[(i, i)].re).collect();
        assert_eq!(diag, vec![1.0, 1.0, -1.0, -1.0]);
    }

    #[test]
    fn eigh2_matches_general_path() {
        let m = ComplexMatrix::from_rows([[c(0.3, 0.0), c(0.1, -0.2)], [c(0.1, 0.2), c(-0.7, 0.0)]]);
        let (vals, vecs) = eigh(&m);
        let nal = m.to_nalgebra().symmetric_eigenvalues();
        let mut expect: Vec<f64> = nal.iter().copied().collect();
        expect.sort_by(f64::total_cmp);
        for (a, b) in vals.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-14);
        }
        for k in 0..2 {
            let v = [vecs[(0, k)], vecs[(1, k)]];
            for i in 0..2 {
                let mv = m[(i, 0)] * v[0] + m[(i, 1)] * v[1];
                assert!((mv - v[i] * vals[k]).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn eigh_reconstructs_larger_matrices() {
        let mut m = ComplexMatrix::zeros(3);
        let entries = [
            [c(1.0, 0.0), c(0.2, 0.1), c(-0.3, 0.4)],
            [c(0.2, -0.1), c(0.5, 0.0), c(0.0, 0.7)],
            [c(-0.3, -0.4), c(0.0, -0.7), c(-0.2, 0.0)],
        ];
        for i in 0..3 {
            for j in 0..3 {
                m[(i, j)] = entries[i][j];
            }
        }
        let back = m.hermitian_map(|x| x);
        assert!((&back - &m).frobenius_norm() < 1e-13);
    }

    #[test]
    fn add_own_adjoint_is_hermitian() {
        let mut m = ComplexMatrix::from_rows([[c(1.0, 2.0), c(3.0, -1.0)], [c(0.5, 0.5), c(-2.0, 1.0)]]);
        let expected = &m + &m.adjoint();
        m.add_own_adjoint();
        assert!((&m - &expected).frobenius_norm() < 1e-15);
    }

    #[test]
    fn tiled_hermitize_matches_definition() {
        for n in [1, 5, 33, 70] {
            let m = ComplexMatrix::from_vec(n, (0..n * n).map(|k| c((k as f64 * 0.37).sin(), (k as f64 * 0.11).cos())).collect()).unwrap();
            let expected = (&m + &m.adjoint()).scale_real(0.5);
            let mut h = m.clone();
            h.hermitize();
            assert!((&h - &expected).frobenius_norm() < 1e-14, "n = {n}");
            let mut a = m.clone();
            a.add_own_adjoint();
            assert!((&a - &expected.scale_real(2.0)).frobenius_norm() < 1e-13, "n = {n}");
        }
    }

    #[test]
    fn operator_norm_of_pauli_is_one() {
        assert!((sigma_y().operator_norm() - 1.0).abs() < 1e-14);
        assert!((sigma_x().scale_real(3.0).operator_norm() - 3.0).abs() < 1e-14);
    }

    #[test]
    fn from_vec_rejects_wrong_count() {
        assert!(matches!(
            ComplexMatrix::from_vec(2, vec![ZERO; 3]),
            Err(QuantumError::EntryCount { dim: 2, found: 3 })
        ));
    }
}
