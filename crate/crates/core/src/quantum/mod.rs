//! Complex linear algebra for density matrices: validation, Pauli algebra,
//! local operator embedding on tensor-product states, partial traces,
//! fidelity and purity.

mod bloch;
mod density;
mod matrix;
pub mod random;
mod tensor;

use thiserror::Error;

pub use bloch::BlochVector;
pub use density::{fidelity, project_state, validate_density, DensityMatrix, Projected, Tolerances, BLOCH_TOL, HERMITICITY_TOL, PSD_TOL, TRACE_TOL};
pub use matrix::{eigh, eigvalsh, pauli, ComplexMatrix, I, ONE, ZERO};
pub use tensor::{LocalAction, NState, PairAction, TensorLayout};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantumError {
    #[error("matrix dimension must be positive")]
    EmptyDimension,
    #[error("a {dim}x{dim} matrix needs {} entries, got {found}", dim * dim)]
    EntryCount { dim: usize, found: usize },
    #[error("matrix contains NaN or infinite entries")]
    NonFinite,
    #[error("not Hermitian: ||m - m^dag||_F = {defect:.3e}")]
    NotHermitian { defect: f64 },
    #[error("trace is not one: |tr(m) - 1| = {deviation:.3e}")]
    NotTraceOne { deviation: f64 },
    #[error("not positive semidefinite: smallest eigenvalue {min_eigenvalue:.3e}")]
    NotPsd { min_eigenvalue: f64 },
    #[error("expected dimension {expected}, got {found}")]
    WrongDimension { expected: usize, found: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("Bloch vector norm {norm} exceeds 1")]
    BlochNormExceeded { norm: f64 },
    #[error("particle index {index} out of range for {count} particles")]
    IndexOutOfRange { index: usize, count: usize },
    #[error("pair operator needs two distinct particles, got {index} twice")]
    DuplicateIndex { index: usize },
    #[error("state degenerate after projection: trace {trace:.3e}")]
    DegenerateState { trace: f64 },
    #[error("{local_dim}^{n_particles} does not fit in memory")]
    TooLarge { n_particles: usize, local_dim: usize },
}
