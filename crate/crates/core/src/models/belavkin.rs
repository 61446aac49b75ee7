use crate::control::ControlLaw;
use crate::quantum::{eigvalsh, project_state, ComplexMatrix, QuantumError, I};
use crate::sde::{Coefficients, SdeModel, StepEnv};

use super::{ModelError, ModelParams};

/// -i[H, rho] + L rho L^dag - {L^dag L, rho}/2
pub(crate) fn lindblad_drift(h: &ComplexMatrix, l: &ComplexMatrix, l_dag: &ComplexMatrix, ldl: &ComplexMatrix, rho: &ComplexMatrix) -> ComplexMatrix {
    let mut out = h.commutator(rho).scale(-I);
    out += &l.matmul(rho).matmul(l_dag);
    out.axpy_real(-0.5, &ldl.anticommutator(rho));
    out
}

/// sqrt(eta) (L rho + rho L^dag - tr((L + L^dag) rho) rho)
pub(crate) fn measurement_diffusion(l: &ComplexMatrix, l_dag: &ComplexMatrix, sqrt_eta: f64, rho: &ComplexMatrix) -> ComplexMatrix {
    let lr = l.matmul(rho);
    let rl = rho.matmul(l_dag);
    let expect = (lr.trace() + rl.trace()).re;
    let mut out = &lr + &rl;
    out.axpy_real(-expect, rho);
    out.scale_real(sqrt_eta)
}

/// Controlled single-particle filter, optionally driven by a mean-field term
/// A^m in the Hamiltonian.
#[derive(Clone, Debug)]
pub struct BelavkinFilter {
    params: ModelParams,
    control: ControlLaw,
    mean_field: bool,
    l_dag: ComplexMatrix,
    ldl: ComplexMatrix,
    sqrt_eta: f64,
}

impl BelavkinFilter {
    fn build(params: ModelParams, control: ControlLaw, mean_field: bool) -> Self {
        let l_dag = params.measurement().adjoint();
        let ldl = l_dag.matmul(params.measurement());
        let sqrt_eta = params.efficiency().sqrt();
        Self {
            params,
            control,
            mean_field,
            l_dag,
            ldl,
            sqrt_eta,
        }
    }

    /// The filter of a single monitored system. Any kernel in `params` is ignored.
    pub fn single(params: ModelParams, control: ControlLaw) -> Self {
        Self::build(params, control, false)
    }

    /// The mean-field filter; the step environment must supply m_t.
    pub fn mean_field(params: ModelParams, control: ControlLaw) -> Self {
        Self::build(params, control, true)
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn control(&self) -> &ControlLaw {
        &self.control
    }

    /// H + u Hhat, plus A^m when mean-coupled.
    pub fn total_hamiltonian(&self, u: f64, mean: Option<&ComplexMatrix>) -> Result<ComplexMatrix, ModelError> {
        let mut h = self.params.hamiltonian().clone();
        if u != 0.0 {
            h.axpy_real(u, self.params.control_hamiltonian());
        }
        if self.mean_field {
            let m = mean.ok_or(ModelError::MissingMeanSource)?;
            if let Some(k) = self.params.kernel() {
                h += &k.contract(m)?;
            }
        }
        Ok(h)
    }

    pub fn drift(&self, rho: &ComplexMatrix, u: f64, mean: Option<&ComplexMatrix>) -> Result<ComplexMatrix, ModelError> {
        let h = self.total_hamiltonian(u, mean)?;
        Ok(lindblad_drift(&h, self.params.measurement(), &self.l_dag, &self.ldl, rho))
    }

    pub fn diffusion(&self, rho: &ComplexMatrix) -> ComplexMatrix {
        measurement_diffusion(self.params.measurement(), &self.l_dag, self.sqrt_eta, rho)
    }
}

impl SdeModel for BelavkinFilter {
    type State = ComplexMatrix;

    fn name(&self) -> &'static str {
        if self.mean_field {
            "meanfield"
        } else {
            "single"
        }
    }

    fn n_channels(&self) -> usize {
        1
    }

    fn mean_coupled(&self) -> bool {
        self.mean_field
    }

    fn controls(&self, state: &ComplexMatrix) -> Result<Vec<f64>, ModelError> {
        Ok(vec![self.control.evaluate(state)?])
    }

    fn coefficients(&self, state: &ComplexMatrix, env: &StepEnv<'_, ComplexMatrix>) -> Result<Coefficients<ComplexMatrix>, ModelError> {
        let u = env.controls.first().copied().unwrap_or(0.0);
        Ok(Coefficients {
            drift: self.drift(state, u, env.mean)?,
            diffusion: vec![self.diffusion(state)],
        })
    }

    /// Drift and diffusion summed entrywise, without the coefficient list.
    fn euler_raw(&self, rho: &ComplexMatrix, env: &StepEnv<'_, ComplexMatrix>, dw: &[f64], dt: f64) -> Result<ComplexMatrix, ModelError> {
        let u = env.controls.first().copied().unwrap_or(0.0);
        let h = self.total_hamiltonian(u, env.mean)?;
        let l = self.params.measurement();
        let hr = h.matmul(rho);
        let rh = rho.matmul(&h);
        let lr = l.matmul(rho);
        let rl = rho.matmul(&self.l_dag);
        let lrl = lr.matmul(&self.l_dag);
        let ldlr = self.ldl.matmul(rho);
        let rldl = rho.matmul(&self.ldl);
        let expect = (lr.trace() + rl.trace()).re;
        let w = self.sqrt_eta * dw.first().copied().unwrap_or(0.0);
        let mut out = rho.clone();
        let src = rho.as_slice();
        for (k, o) in out.as_mut_slice().iter_mut().enumerate() {
            let drift = -I * (hr.as_slice()[k] - rh.as_slice()[k]) + lrl.as_slice()[k] - (ldlr.as_slice()[k] + rldl.as_slice()[k]) * 0.5;
            let diffusion = lr.as_slice()[k] + rl.as_slice()[k] - src[k] * expect;
            *o += drift * dt + diffusion * w;
        }
        Ok(out)
    }

    fn signal(&self, state: &ComplexMatrix, _channel: usize) -> f64 {
        let l = self.params.measurement();
        self.sqrt_eta * (state.trace_product(l) + state.trace_product(&self.l_dag)).re
    }

    fn project(&self, raw: ComplexMatrix, _step: usize) -> Result<ComplexMatrix, QuantumError> {
        Ok(project_state(&raw)?.state.into_matrix())
    }

    fn inspect(&self, state: &ComplexMatrix) -> (f64, f64) {
        (eigvalsh(state)[0], state.trace_product(state).re)
    }
}
