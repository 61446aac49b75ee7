//! Simulation of controlled quantum filters: single-particle, interacting
//! N-particle and mean-field Belavkin equations, their mean-field solvers,
//! feedback laws and propagation-of-chaos diagnostics.

pub mod control;
pub mod diagnostics;
pub mod kernel;
pub mod meanfield;
pub mod models;
pub mod quantum;
pub mod sde;
