use crate::kernel::InteractionKernel;
use crate::meanfield::MeanFlow;
use crate::quantum::{eigvalsh, project_state, ComplexMatrix, QuantumError};
use crate::sde::{Coefficients, SdeModel, StepEnv, TimeGrid};

use super::belavkin::lindblad_drift;
use super::{ModelError, ModelParams};

/// Deterministic equation for the mean of the uncontrolled mean-field filter,
/// dm/dt = -i[H + A^m, m] + L m L^dag - {L^dag L, m}/2.
#[derive(Clone, Debug)]
pub struct LindbladMean {
    hamiltonian: ComplexMatrix,
    measurement: ComplexMatrix,
    l_dag: ComplexMatrix,
    ldl: ComplexMatrix,
    kernel: Option<InteractionKernel>,
}

impl LindbladMean {
    /// The controlled Hamiltonian and the efficiency play no role here.
    pub fn new(params: &ModelParams) -> Self {
        let l = params.measurement().clone();
        let l_dag = l.adjoint();
        let ldl = l_dag.matmul(&l);
        Self {
            hamiltonian: params.hamiltonian().clone(),
            measurement: l,
            l_dag,
            ldl,
            kernel: params.kernel().cloned(),
        }
    }

    pub fn rhs(&self, m: &ComplexMatrix) -> Result<ComplexMatrix, ModelError> {
        let mut h = self.hamiltonian.clone();
        if let Some(k) = &self.kernel {
            h += &k.contract(m)?;
        }
        Ok(lindblad_drift(&h, &self.measurement, &self.l_dag, &self.ldl, m))
    }

    /// Classical fourth-order Runge-Kutta on the grid, one mean per grid point.
    pub fn integrate_rk4(&self, m0: &ComplexMatrix, grid: &TimeGrid) -> Result<MeanFlow<ComplexMatrix>, ModelError> {
        let dt = grid.dt();
        let mut means = Vec::with_capacity(grid.len());
        let mut m = m0.clone();
        means.push(m.clone());
        for _ in 0..grid.n_steps() {
            let k1 = self.rhs(&m)?;
            let mut tmp = m.clone();
            tmp.axpy_real(0.5 * dt, &k1);
            let k2 = self.rhs(&tmp)?;
            let mut tmp = m.clone();
            tmp.axpy_real(0.5 * dt, &k2);
            let k3 = self.rhs(&tmp)?;
            let mut tmp = m.clone();
            tmp.axpy_real(dt, &k3);
            let k4 = self.rhs(&tmp)?;
            m.axpy_real(dt / 6.0, &k1);
            m.axpy_real(dt / 3.0, &k2);
            m.axpy_real(dt / 3.0, &k3);
            m.axpy_real(dt / 6.0, &k4);
            means.push(m.clone());
        }
        Ok(MeanFlow::new(*grid, means))
    }
}

/// Zero-channel model so the Euler integrator can be checked against RK4.
impl SdeModel for LindbladMean {
    type State = ComplexMatrix;

    fn name(&self) -> &'static str {
        "lindblad-mean"
    }

    fn n_channels(&self) -> usize {
        0
    }

    fn controls(&self, _state: &ComplexMatrix) -> Result<Vec<f64>, ModelError> {
        Ok(Vec::new())
    }

    fn coefficients(&self, state: &ComplexMatrix, _env: &StepEnv<'_, ComplexMatrix>) -> Result<Coefficients<ComplexMatrix>, ModelError> {
        Ok(Coefficients {
            drift: self.rhs(state)?,
            diffusion: Vec::new(),
        })
    }

    fn signal(&self, _state: &ComplexMatrix, _channel: usize) -> f64 {
        0.0
    }

    fn project(&self, raw: ComplexMatrix, _step: usize) -> Result<ComplexMatrix, QuantumError> {
        Ok(project_state(&raw)?.state.into_matrix())
    }

    fn inspect(&self, state: &ComplexMatrix) -> (f64, f64) {
        (eigvalsh(state)[0], state.trace_product(state).re)
    }
}
