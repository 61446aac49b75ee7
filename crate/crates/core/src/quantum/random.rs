//! Reproducible random states and observables for property sweeps.
//!
//! States are drawn from the Hilbert-Schmidt measure, G G^dag / tr(G G^dag)
//! with G a complex Ginibre matrix.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use super::density::DensityMatrix;
use super::matrix::ComplexMatrix;

fn ginibre<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Vec<Complex64> {
    (0..rows * cols)
        .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect()
}

/// Hilbert-Schmidt random state of full rank.
pub fn random_density<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DensityMatrix {
    random_density_with_rank(dim, dim, rng)
}

/// G G^dag / tr with G of shape dim x rank.
pub fn random_density_with_rank<R: Rng + ?Sized>(dim: usize, rank: usize, rng: &mut R) -> DensityMatrix {
    let g = ginibre(dim, rank, rng);
    let mut m = ComplexMatrix::zeros(dim);
    for i in 0..dim {
        for j in 0..dim {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..rank {
                acc += g[i * rank + k] * g[j * rank + k].conj();
            }
            m[(i, j)] = acc;
        }
    }
    let tr = m.trace().re;
    DensityMatrix::new_unchecked(m.scale_real(1.0 / tr).hermitian_part())
}

/// Haar-random pure state.
pub fn random_pure<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DensityMatrix {
    random_density_with_rank(dim, 1, rng)
}

/// (G + G^dag)/2 rescaled so its spectral norm is uniform in [min_norm, max_norm].
pub fn random_hermitian<R: Rng + ?Sized>(dim: usize, min_norm: f64, max_norm: f64, rng: &mut R) -> ComplexMatrix {
    let g = ComplexMatrix::from_vec(dim, ginibre(dim, dim, rng)).expect("square ginibre");
    let h = g.hermitian_part();
    let norm = h.operator_norm();
    let target = rng.gen_range(min_norm..=max_norm);
    h.scale_real(target / norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::{validate_density, Tolerances};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn samples_are_valid_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for d in 1..5 {
            for _ in 0..50 {
                let s = random_density(d, &mut rng);
                assert!(validate_density(s.into_matrix(), Tolerances::uniform(1e-12)).is_ok());
                let p = random_pure(d, &mut rng);
                assert!((p.purity() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hermitian_norm_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let h = random_hermitian(3, 0.1, 10.0, &mut rng);
            let n = h.operator_norm();
            assert!((0.1 - 1e-12..=10.0 + 1e-12).contains(&n));
            assert!(h.hermiticity_defect() < 1e-12);
        }
    }
}
