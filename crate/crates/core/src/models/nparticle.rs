use num_complex::Complex64;

use crate::control::ControlLaw;
use crate::kernel::InteractionKernel;
use crate::quantum::{eigvalsh, project_state, BlochVector, ComplexMatrix, DensityMatrix, QuantumError, TensorLayout, I, ONE};
use crate::sde::{Coefficients, SdeModel, StepEnv};

use super::{ModelError, ModelParams};

pub const MAX_PARTICLES: usize = 10;

/// Minimum spacing of the full spectral projection; other steps only
/// Hermitize and renormalize the trace.
pub const DEFAULT_FULL_PROJECTION_EVERY: usize = 10;

/// The eigen-projection costs O(dim^3), so its spacing grows with dim to
/// keep the amortized cost per step O(dim^2).
pub fn default_projection_spacing(dim: usize) -> usize {
    DEFAULT_FULL_PROJECTION_EVERY.max(dim / 4)
}

/// Joint filter of n identical monitored particles with pair interaction
/// sum_{i<j} A_ij / n. Each particle has its own measurement channel and is
/// controlled through its own marginal.
///
/// Pair terms are applied as (1/2) sum_r (S_P S_Q - sum_i (P Q)_i) with
/// S_X = sum_i X_i and A = sum_r P_r (x) Q_r, which needs O(n) slot passes
/// instead of O(n^2).
#[derive(Clone, Debug)]
pub struct BelavkinNParticle {
    pub(super) layout: TensorLayout,
    pub(super) params: ModelParams,
    pub(super) control: ControlLaw,
    pub(super) sqrt_eta: f64,
    pub(super) l_dag: ComplexMatrix,
    // -i (H - (1/2n) sum_r P_r Q_r) - L^dag L / 2
    pub(super) base_generator: ComplexMatrix,
    // -i Hhat
    pub(super) control_generator: ComplexMatrix,
    pub(super) terms: Vec<(ComplexMatrix, ComplexMatrix)>,
    full_projection_every: usize,
}

impl BelavkinNParticle {
    pub fn new(params: ModelParams, n_particles: usize, control: ControlLaw) -> Result<Self, ModelError> {
        if n_particles > MAX_PARTICLES {
            return Err(ModelError::TooManyParticles {
                n: n_particles,
                max: MAX_PARTICLES,
            });
        }
        if n_particles == 0 {
            return Err(ModelError::InvalidParams {
                field: "n_particles",
                reason: "must be at least 1".into(),
            });
        }
        if n_particles >= 2 && params.kernel().is_none() {
            return Err(ModelError::MissingKernel(n_particles));
        }
        if let Some(k) = params.kernel() {
            let defect = k.pair_operator().hermiticity_defect();
            if defect > 1e-12 {
                return Err(ModelError::InvalidParams {
                    field: "kernel",
                    reason: format!("pair operator is not Hermitian (defect {defect:.3e})"),
                });
            }
        }
        let layout = TensorLayout::new(n_particles, params.dim())?;
        let terms = match params.kernel() {
            Some(k) if n_particles >= 2 && !k.is_zero() => k.product_terms(),
            _ => Vec::new(),
        };
        let l = params.measurement();
        let l_dag = l.adjoint();
        let mut effective_h = params.hamiltonian().clone();
        for (p, q) in &terms {
            effective_h.axpy_real(-0.5 / n_particles as f64, &p.matmul(q));
        }
        let mut base_generator = effective_h.scale(-I);
        base_generator.axpy_real(-0.5, &l_dag.matmul(l));
        Ok(Self {
            layout,
            sqrt_eta: params.efficiency().sqrt(),
            l_dag,
            base_generator,
            control_generator: params.control_hamiltonian().scale(-I),
            terms,
            params,
            control,
            full_projection_every: default_projection_spacing(layout.dim()),
        })
    }

    /// Spacing of full eigen-projections; 0 disables them. Recorded states are
    /// always fully projected.
    pub fn with_full_projection_every(mut self, every: usize) -> Self {
        self.full_projection_every = every;
        self
    }

    pub fn layout(&self) -> &TensorLayout {
        &self.layout
    }

    pub fn n_particles(&self) -> usize {
        self.layout.n_particles()
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn control(&self) -> &ControlLaw {
        &self.control
    }

    /// rho0 (x) ... (x) rho0
    pub fn initial_state(&self, rho0: &DensityMatrix) -> Result<ComplexMatrix, ModelError> {
        Ok(self.layout.product_state(rho0)?.density().as_matrix().clone())
    }

    pub fn marginal(&self, state: &ComplexMatrix, particle: usize) -> Result<ComplexMatrix, ModelError> {
        Ok(self.layout.partial_trace_raw(state, particle)?)
    }

    fn light_projection(raw: ComplexMatrix) -> Result<ComplexMatrix, QuantumError> {
        let mut h = raw;
        h.hermitize();
        let trace = h.trace().re;
        if !(trace > 1e-6) {
            return Err(QuantumError::DegenerateState { trace });
        }
        let inv = 1.0 / trace;
        for z in h.as_mut_slice() {
            *z *= inv;
        }
        Ok(h)
    }
}

/// The photon-exchange n-qubit system: H_j = L_j = sz, Hhat_j = sx.
pub fn nqubit_system(n_particles: usize, efficiency: f64, control: ControlLaw) -> Result<BelavkinNParticle, ModelError> {
    if n_particles > MAX_PARTICLES {
        return Err(ModelError::TooManyParticles {
            n: n_particles,
            max: MAX_PARTICLES,
        });
    }
    let params = ModelParams::qubit(efficiency, Some(InteractionKernel::photon_exchange()))?;
    BelavkinNParticle::new(params, n_particles, control)
}

impl SdeModel for BelavkinNParticle {
    type State = ComplexMatrix;

    fn name(&self) -> &'static str {
        "nparticle"
    }

    fn n_channels(&self) -> usize {
        self.layout.n_particles()
    }

    fn controls(&self, state: &ComplexMatrix) -> Result<Vec<f64>, ModelError> {
        let n = self.layout.n_particles();
        match &self.control {
            ControlLaw::Zero => Ok(vec![0.0; n]),
            ControlLaw::Constant(c) => Ok(vec![*c; n]),
            law => (0..n).map(|j| Ok(law.evaluate(&self.layout.partial_trace_raw(state, j)?)?)).collect(),
        }
    }

    fn coefficients(&self, rho: &ComplexMatrix, env: &StepEnv<'_, ComplexMatrix>) -> Result<Coefficients<ComplexMatrix>, ModelError> {
        let lay = &self.layout;
        let n = lay.n_particles();
        let dim = lay.dim();
        if rho.dim() != dim {
            return Err(QuantumError::WrongDimension {
                expected: dim,
                found: rho.dim(),
            }
            .into());
        }
        // Y = sum_j K_j rho - (i / 2n) sum_r S_P S_Q rho; drift = Y + Y^dag + sum_j L_j rho L_j^dag.
        let mut drift = ComplexMatrix::zeros(dim);
        for j in 0..n {
            let u = env.controls.get(j).copied().unwrap_or(0.0);
            if u == 0.0 {
                lay.left_acc(&self.base_generator, j, ONE, rho, &mut drift);
            } else {
                let mut k = self.base_generator.clone();
                k.axpy_real(u, &self.control_generator);
                lay.left_acc(&k, j, ONE, rho, &mut drift);
            }
        }
        if !self.terms.is_empty() {
            let coeff = -I * (0.5 / n as f64);
            let mut t = ComplexMatrix::zeros(dim);
            for (p, q) in &self.terms {
                t.fill_zero();
                for j in 0..n {
                    lay.left_acc(q, j, ONE, rho, &mut t);
                }
                for j in 0..n {
                    lay.left_acc(p, j, coeff, &t, &mut drift);
                }
            }
        }
        drift.add_own_adjoint();

        let l = self.params.measurement();
        let mut diffusion = Vec::with_capacity(n);
        let mut z = ComplexMatrix::zeros(dim);
        for j in 0..n {
            z.fill_zero();
            lay.left_acc(l, j, ONE, rho, &mut z);
            lay.right_acc(&self.l_dag, j, ONE, &z, &mut drift);
            let expect = 2.0 * z.trace().re;
            let mut g = z.clone();
            g.add_own_adjoint();
            g.axpy_real(-expect, rho);
            for v in g.as_mut_slice() {
                *v *= self.sqrt_eta;
            }
            diffusion.push(g);
        }
        Ok(Coefficients { drift, diffusion })
    }

    /// rho + X + X^dag + dt sum_j L_j rho L_j^dag - sqrt(eta) sum_j dW_j tr((L_j + L_j^dag) rho) rho
    /// with X = sum_j (dt K_j + sqrt(eta) dW_j L_j) rho - (i dt / 2n) sum_r S_P S_Q rho.
    fn euler_raw(&self, rho: &ComplexMatrix, env: &StepEnv<'_, ComplexMatrix>, dw: &[f64], dt: f64) -> Result<ComplexMatrix, ModelError> {
        let lay = &self.layout;
        let n = lay.n_particles();
        let dim = lay.dim();
        if rho.dim() != dim {
            return Err(QuantumError::WrongDimension {
                expected: dim,
                found: rho.dim(),
            }
            .into());
        }
        let l = self.params.measurement();
        let mut x = ComplexMatrix::zeros(dim);
        for j in 0..n {
            let u = env.controls.get(j).copied().unwrap_or(0.0);
            let mut k = self.base_generator.scale_real(dt);
            if u != 0.0 {
                k.axpy_real(u * dt, &self.control_generator);
            }
            k.axpy_real(self.sqrt_eta * dw[j], l);
            lay.left_acc(&k, j, ONE, rho, &mut x);
        }
        if !self.terms.is_empty() {
            let coeff = -I * (0.5 * dt / n as f64);
            let mut t = ComplexMatrix::zeros(dim);
            for (p, q) in &self.terms {
                t.fill_zero();
                for j in 0..n {
                    lay.left_acc(q, j, ONE, rho, &mut t);
                }
                for j in 0..n {
                    lay.left_acc(p, j, coeff, &t, &mut x);
                }
            }
        }
        x.add_own_adjoint();
        let mut shift = 0.0;
        for j in 0..n {
            lay.sandwich_acc(l, j, Complex64::new(dt, 0.0), rho, &mut x);
            let m = lay.partial_trace_raw(rho, j)?;
            shift += self.sqrt_eta * dw[j] * 2.0 * m.trace_product(l).re;
        }
        x.axpy_real(1.0 - shift, rho);
        Ok(x)
    }

    fn signal(&self, state: &ComplexMatrix, channel: usize) -> f64 {
        match self.layout.partial_trace_raw(state, channel) {
            Ok(m) => self.sqrt_eta * (m.trace_product(self.params.measurement()) + m.trace_product(&self.l_dag)).re,
            Err(_) => f64::NAN,
        }
    }

    fn project(&self, raw: ComplexMatrix, step: usize) -> Result<ComplexMatrix, QuantumError> {
        if self.full_projection_every > 0 && step % self.full_projection_every == 0 {
            Ok(project_state(&raw)?.state.into_matrix())
        } else {
            Self::light_projection(raw)
        }
    }

    fn recorded(&self, state: &ComplexMatrix) -> Result<ComplexMatrix, QuantumError> {
        if self.full_projection_every == 1 {
            return Ok(state.clone());
        }
        Ok(project_state(state)?.state.into_matrix())
    }

    fn inspect(&self, state: &ComplexMatrix) -> (f64, f64) {
        (eigvalsh(state)[0], state.trace_product(state).re)
    }

    /// Marginal coordinates of every particle.
    fn components(&self, state: &ComplexMatrix) -> Vec<f64> {
        let mut out = Vec::new();
        for j in 0..self.layout.n_particles() {
            let m = self.layout.partial_trace_raw(state, j).expect("slot in range");
            if self.layout.local_dim() == 2 {
                out.extend(BlochVector::from_matrix_unchecked(&m).as_array());
            } else {
                out.extend((0..m.dim()).map(|i| m[(i, i)].re));
            }
        }
        out
    }

    fn component_names(&self, _state: &ComplexMatrix) -> Vec<String> {
        let d = self.layout.local_dim();
        let mut out = Vec::new();
        for j in 1..=self.layout.n_particles() {
            if d == 2 {
                out.extend(["x", "y", "z"].map(|c| format!("{c}_{j}")));
            } else {
                out.extend((0..d).map(|i| format!("p{i}_{j}")));
            }
        }
        out
    }
}
