#![no_main]

use libfuzzer_sys::fuzz_target;
use mffilter_core::quantum::{project_state, validate_density, ComplexMatrix, Tolerances};
use num_complex::Complex64;

// First byte picks the dimension, then pairs of little-endian f64 give the entries.
fuzz_target!(|data: &[u8]| {
    let Some((&first, rest)) = data.split_first() else {
        return;
    };
    let dim = 1 + (first % 4) as usize;
    let floats: Vec<f64> = rest.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    if floats.len() < 2 * dim * dim {
        return;
    }
    let entries = floats.chunks_exact(2).take(dim * dim).map(|p| Complex64::new(p[0], p[1])).collect();
    let m = ComplexMatrix::from_vec(dim, entries).unwrap();
    let tol = Tolerances::uniform(1e-6);
    if let Ok(rho) = validate_density(m.clone(), tol) {
        assert!(rho.as_matrix().hermiticity_defect() <= 1e-6);
        assert!((rho.as_matrix().trace().re - 1.0).abs() <= 1e-6);
    }
    if let Ok(p) = project_state(&m) {
        let rho = p.state.as_matrix();
        assert!((rho.trace().re - 1.0).abs() < 1e-9);
        assert!(rho.hermiticity_defect() < 1e-9);
    }
});
