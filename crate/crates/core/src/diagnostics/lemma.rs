use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::quantum::{random, ComplexMatrix, DensityMatrix};
use crate::sde::format_float;

use super::DiagnosticsError;

/// Slack allowed on lhs <= rhs.
pub const LEMMA_TOL: f64 = 1e-10;
const HERMITIAN_TOL: f64 = 1e-12;
/// Cases with rhs below this are re-checked with slack scaled down to roundoff.
const NEAR_EQUALITY_RHS: f64 = 1e-6;
const TIGHT_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LemmaCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// lhs = |tr(LALB) - tr(B(LA + AL)) tr(BL + AL) / 2 + tr(BA) tr(BL) tr(AL)|,
/// rhs = 18 ||L||^2 tr((I - A) B) with the spectral norm.
pub fn lemma1_check(a: &DensityMatrix, b: &DensityMatrix, l: &ComplexMatrix) -> Result<LemmaCheck, DiagnosticsError> {
    let d = l.dim();
    for m in [a.dim(), b.dim()] {
        if m != d {
            return Err(DiagnosticsError::DimensionMismatch { expected: d, found: m });
        }
    }
    let defect = l.hermiticity_defect();
    if !(defect <= HERMITIAN_TOL) {
        return Err(DiagnosticsError::NotHermitian { defect });
    }
    let (a, b) = (a.as_matrix(), b.as_matrix());
    let la = l.matmul(a);
    let al = a.matmul(l);
    let t1 = la.matmul(l).trace_product(b);
    let t2 = b.trace_product(&la) + b.trace_product(&al);
    let bl = b.trace_product(l);
    let al_tr = a.trace_product(l);
    let ba = b.trace_product(a);
    let lhs = (t1 - t2 * (bl + al_tr) * 0.5 + ba * bl * al_tr).norm();
    let norm = l.operator_norm();
    let rhs = 18.0 * norm * norm * (b.trace() - ba).re;
    Ok(LemmaCheck {
        lhs,
        rhs,
        holds: lhs <= rhs + LEMMA_TOL,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Counterexample {
    pub index: usize,
    pub a: ComplexMatrix,
    pub b: ComplexMatrix,
    pub l: ComplexMatrix,
    pub lhs: f64,
    pub rhs: f64,
    /// Failed only the roundoff-level re-check of a near-equality case.
    pub tight_only: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LemmaSweep {
    pub dim: usize,
    pub n_triples: usize,
    pub violations: Vec<Counterexample>,
    /// Cases with rhs < 1e-6.
    pub near_equality: usize,
    /// Largest lhs / rhs over cases with rhs > 0.
    pub max_ratio: f64,
}

impl LemmaSweep {
    /// Violations of lhs <= rhs + LEMMA_TOL.
    pub fn hard_violations(&self) -> usize {
        self.violations.iter().filter(|c| !c.tight_only).count()
    }
}

// A with random rank; B cycles through an independent state, a mixture
// (1 - t) A + t E with t down to 1e-8, and B = A.
fn sample(dim: usize, seed: u64, index: usize) -> (DensityMatrix, DensityMatrix, ComplexMatrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let a = random::random_density_with_rank(dim, rng.gen_range(1..=dim), &mut rng);
    let b = match index % 4 {
        0 | 1 => random::random_density_with_rank(dim, rng.gen_range(1..=dim), &mut rng),
        2 => {
            let e = random::random_density(dim, &mut rng);
            let t = 10f64.powf(rng.gen_range(-8.0..0.0));
            let mut m = a.as_matrix().scale_real(1.0 - t);
            m.axpy_real(t, e.as_matrix());
            DensityMatrix::new_unchecked(m)
        }
        _ => a.clone(),
    };
    let l = random::random_hermitian(dim, 0.1, 10.0, &mut rng);
    (a, b, l)
}

/// Checks `n_triples` random triples in dimension `dim`. Item i draws from
/// its own substream, so results do not depend on the thread count.
pub fn lemma1_sweep(dim: usize, n_triples: usize, seed: u64) -> Result<LemmaSweep, DiagnosticsError> {
    if dim == 0 || n_triples == 0 {
        return Err(DiagnosticsError::EmptyInput);
    }
    let results = (0..n_triples)
        .into_par_iter()
        .map(|i| {
            let (a, b, l) = sample(dim, seed, i);
            let c = lemma1_check(&a, &b, &l)?;
            let near = c.rhs < NEAR_EQUALITY_RHS;
            let norm = l.operator_norm();
            let tight_ok = !near || c.lhs <= c.rhs + TIGHT_TOL * norm * norm;
            let ratio = if c.rhs > 0.0 { c.lhs / c.rhs } else { 0.0 };
            let bad = (!c.holds || !tight_ok).then(|| Counterexample {
                index: i,
                a: a.into_matrix(),
                b: b.into_matrix(),
                l,
                lhs: c.lhs,
                rhs: c.rhs,
                tight_only: c.holds,
            });
            Ok((near, ratio, bad))
        })
        .collect::<Result<Vec<_>, DiagnosticsError>>()?;
    let mut sweep = LemmaSweep {
        dim,
        n_triples,
        violations: Vec::new(),
        near_equality: 0,
        max_ratio: 0.0,
    };
    for (near, ratio, bad) in results {
        sweep.near_equality += near as usize;
        if ratio.is_finite() {
            sweep.max_ratio = sweep.max_ratio.max(ratio);
        }
        sweep.violations.extend(bad);
    }
    Ok(sweep)
}

fn write_matrix<W: Write>(w: &mut W, name: &str, m: &ComplexMatrix) -> io::Result<()> {
    writeln!(w, "{name}:")?;
    for i in 0..m.dim() {
        let row: Vec<String> = (0..m.dim())
            .map(|j| format!("[{}, {}]", format_float(m[(i, j)].re), format_float(m[(i, j)].im)))
            .collect();
        writeln!(w, "  [{}]", row.join(", "))?;
    }
    Ok(())
}

/// Plain-text dump with full-precision [re, im] entries.
pub fn write_counterexamples<W: Write>(mut w: W, sweep: &LemmaSweep) -> io::Result<()> {
    writeln!(w, "dim = {}", sweep.dim)?;
    writeln!(w, "triples = {}", sweep.n_triples)?;
    writeln!(w, "violations = {}", sweep.violations.len())?;
    for c in &sweep.violations {
        writeln!(w)?;
        writeln!(w, "index = {}", c.index)?;
        writeln!(w, "lhs = {}", format_float(c.lhs))?;
        writeln!(w, "rhs = {}", format_float(c.rhs))?;
        writeln!(w, "tight_only = {}", c.tight_only)?;
        write_matrix(&mut w, "A", &c.a)?;
        write_matrix(&mut w, "B", &c.b)?;
        write_matrix(&mut w, "L", &c.l)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::pauli;

    #[test]
    fn mixed_identity_case() {
        for d in 2..5 {
            let m = DensityMatrix::maximally_mixed(d);
            let c = lemma1_check(&m, &m, &ComplexMatrix::identity(d)).unwrap();
            assert!(c.lhs < 1e-15);
            assert!((c.rhs - 18.0 * (1.0 - 1.0 / d as f64)).abs() < 1e-13);
            assert!(c.holds);
        }
    }

    #[test]
    fn equal_pure_states_give_equality() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for d in 2..5 {
            let p = random::random_pure(d, &mut rng);
            let l = random::random_hermitian(d, 0.1, 10.0, &mut rng);
            let c = lemma1_check(&p, &p, &l).unwrap();
            assert!(c.lhs < 1e-12 && c.rhs.abs() < 1e-12, "{c:?}");
            assert!(c.holds);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = DensityMatrix::maximally_mixed(2);
        let c = pauli::sigma_y().scale(crate::quantum::I);
        assert!(matches!(lemma1_check(&m, &m, &c), Err(DiagnosticsError::NotHermitian { .. })));
        assert!(matches!(
            lemma1_check(&m, &DensityMatrix::maximally_mixed(3), &pauli::sigma_z()),
            Err(DiagnosticsError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn small_sweep_is_clean_and_reproducible() {
        let a = lemma1_sweep(3, 2000, 9).unwrap();
        assert_eq!(a.violations.len(), 0);
        assert!(a.near_equality > 0);
        assert_eq!(a, lemma1_sweep(3, 2000, 9).unwrap());
        let mut buf = Vec::new();
        write_counterexamples(&mut buf, &a).unwrap();
        assert!(String::from_utf8(buf).unwrap().contains("violations = 0"));
    }

    #[test]
    fn dump_has_full_precision_entries() {
        let sweep = LemmaSweep {
            dim: 2,
            n_triples: 1,
            violations: vec![Counterexample {
                index: 0,
                a: pauli::sigma_x(),
                b: pauli::sigma_x(),
                l: pauli::sigma_x(),
                lhs: 1.0 / 3.0,
                rhs: 0.0,
                tight_only: false,
            }],
            near_equality: 1,
            max_ratio: 0.0,
        };
        let mut buf = Vec::new();
        write_counterexamples(&mut buf, &sweep).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lhs: f64 = text.lines().find_map(|l| l.strip_prefix("lhs = ")).unwrap().parse().unwrap();
        assert_eq!(lhs, 1.0 / 3.0);
    }
}
