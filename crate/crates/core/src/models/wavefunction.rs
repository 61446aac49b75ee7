use num_complex::Complex64;

use crate::control::ControlLaw;
use crate::quantum::{BlochVector, ComplexMatrix, DensityMatrix, QuantumError, TensorLayout, I, ONE, ZERO};
use crate::sde::{Coefficients, SdeModel, SdeState, StepEnv};

use super::{BelavkinNParticle, ModelError};

/// Joint amplitude vector of n particles.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector(pub Vec<Complex64>);

impl StateVector {
    pub fn norm_sqr(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn inner(&self, other: &Self) -> Complex64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a.conj() * b).sum()
    }

    /// |psi><psi|
    pub fn to_density(&self) -> ComplexMatrix {
        let n = self.0.len();
        let mut m = ComplexMatrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = self.0[i] * self.0[j].conj();
            }
        }
        m
    }
}

impl SdeState for StateVector {
    fn zeros_like(&self) -> Self {
        StateVector(vec![ZERO; self.0.len()])
    }

    fn axpy(&mut self, a: f64, x: &Self) {
        for (y, v) in self.0.iter_mut().zip(&x.0) {
            *y += v * a;
        }
    }

    fn scale(&mut self, a: f64) {
        for y in &mut self.0 {
            *y *= a;
        }
    }

    fn is_finite(&self) -> bool {
        self.0.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    // || |a><a| - |b><b| ||_F^2 = |a|^4 + |b|^4 - 2 |<a,b>|^2
    fn distance(&self, other: &Self) -> f64 {
        let (a, b) = (self.norm_sqr(), other.norm_sqr());
        (a * a + b * b - 2.0 * self.inner(other).norm_sqr()).max(0.0).sqrt()
    }

    fn trace_defect(&self) -> f64 {
        (self.norm_sqr() - 1.0).abs()
    }

    fn components(&self) -> Vec<f64> {
        self.0.iter().flat_map(|z| [z.re, z.im]).collect()
    }

    fn component_names(&self) -> Vec<String> {
        (0..self.0.len()).flat_map(|i| [format!("re{i}"), format!("im{i}")]).collect()
    }
}

/// The n-particle filter at unit efficiency, where a pure joint state stays
/// pure. Evolves psi by the normalized stochastic Schroedinger equation
///
/// dpsi = [K + sum_j (l_j L_j - l_j^2 / 2)] psi dt + sum_j (L_j - l_j) psi dW_j,
/// l_j = Re <L_j>,
///
/// whose |psi><psi| obeys the same filter equation as [`BelavkinNParticle`]
/// at a cost of O(n d^n) per step.
#[derive(Clone, Debug)]
pub struct PureNParticle {
    inner: BelavkinNParticle,
}

impl PureNParticle {
    pub fn new(inner: BelavkinNParticle) -> Result<Self, ModelError> {
        let eta = inner.params.efficiency();
        if eta != 1.0 {
            return Err(ModelError::InvalidParams {
                field: "efficiency",
                reason: format!("pure-state evolution needs efficiency 1, got {eta}"),
            });
        }
        Ok(Self { inner })
    }

    pub fn density_model(&self) -> &BelavkinNParticle {
        &self.inner
    }

    pub fn layout(&self) -> &TensorLayout {
        &self.inner.layout
    }

    pub fn n_particles(&self) -> usize {
        self.inner.layout.n_particles()
    }

    /// psi0 (x) ... (x) psi0 from a local amplitude vector.
    pub fn product_state(&self, local: &[Complex64]) -> Result<StateVector, ModelError> {
        let norm: f64 = local.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(QuantumError::DegenerateState { trace: norm * norm }.into());
        }
        let unit: Vec<Complex64> = local.iter().map(|z| z / norm).collect();
        Ok(StateVector(self.inner.layout.product_vector(&unit)?))
    }

    /// Product of the leading eigenvector of rho0; exact when rho0 is pure.
    pub fn product_state_from_density(&self, rho0: &DensityMatrix) -> Result<StateVector, ModelError> {
        let (vals, vecs) = crate::quantum::eigh(rho0.as_matrix());
        let top = vals.len() - 1;
        let local: Vec<Complex64> = (0..vecs.dim()).map(|i| vecs[(i, top)]).collect();
        self.product_state(&local)
    }

    pub fn marginal(&self, psi: &StateVector, particle: usize) -> Result<ComplexMatrix, ModelError> {
        Ok(self.inner.layout.vector_marginal(&psi.0, particle)?)
    }

    fn check(&self, psi: &StateVector) -> Result<(), ModelError> {
        let dim = self.inner.layout.dim();
        if psi.0.len() != dim {
            return Err(QuantumError::WrongDimension {
                expected: dim,
                found: psi.0.len(),
            }
            .into());
        }
        Ok(())
    }

    /// Re <psi| L_j |psi> for every particle.
    fn expectations(&self, psi: &StateVector) -> Vec<f64> {
        let lay = &self.inner.layout;
        let l = self.inner.params.measurement();
        let mut buf = vec![ZERO; psi.0.len()];
        (0..lay.n_particles())
            .map(|j| {
                buf.iter_mut().for_each(|z| *z = ZERO);
                lay.vector_acc(l, j, ONE, &psi.0, &mut buf);
                psi.0.iter().zip(&buf).map(|(a, b)| a.conj() * b).sum::<Complex64>().re
            })
            .collect()
    }

    fn add_pair_terms(&self, psi: &[Complex64], coeff: Complex64, out: &mut [Complex64]) {
        let lay = &self.inner.layout;
        let n = lay.n_particles();
        let mut t = vec![ZERO; psi.len()];
        for (p, q) in &self.inner.terms {
            t.iter_mut().for_each(|z| *z = ZERO);
            for j in 0..n {
                lay.vector_acc(q, j, ONE, psi, &mut t);
            }
            for j in 0..n {
                lay.vector_acc(p, j, coeff, &t, out);
            }
        }
    }

    fn generator(&self, u: f64) -> ComplexMatrix {
        let mut k = self.inner.base_generator.clone();
        if u != 0.0 {
            k.axpy_real(u, &self.inner.control_generator);
        }
        k
    }
}

impl SdeModel for PureNParticle {
    type State = StateVector;

    fn name(&self) -> &'static str {
        "nparticle-pure"
    }

    fn n_channels(&self) -> usize {
        self.n_particles()
    }

    fn controls(&self, psi: &StateVector) -> Result<Vec<f64>, ModelError> {
        let n = self.n_particles();
        match &self.inner.control {
            ControlLaw::Zero => Ok(vec![0.0; n]),
            ControlLaw::Constant(c) => Ok(vec![*c; n]),
            law => (0..n).map(|j| Ok(law.evaluate(&self.marginal(psi, j)?)?)).collect(),
        }
    }

    fn coefficients(&self, psi: &StateVector, env: &StepEnv<'_, StateVector>) -> Result<Coefficients<StateVector>, ModelError> {
        self.check(psi)?;
        let lay = &self.inner.layout;
        let l = self.inner.params.measurement();
        let ell = self.expectations(psi);
        let mut drift = psi.zeros_like();
        let mut scalar = 0.0;
        for (j, &e) in ell.iter().enumerate() {
            let u = env.controls.get(j).copied().unwrap_or(0.0);
            let mut k = self.generator(u);
            k.axpy_real(e, l);
            lay.vector_acc(&k, j, ONE, &psi.0, &mut drift.0);
            scalar -= 0.5 * e * e;
        }
        self.add_pair_terms(&psi.0, -I * (0.5 / lay.n_particles() as f64), &mut drift.0);
        drift.axpy(scalar, psi);
        let diffusion = ell
            .iter()
            .enumerate()
            .map(|(j, &e)| {
                let mut g = psi.zeros_like();
                lay.vector_acc(l, j, ONE, &psi.0, &mut g.0);
                g.axpy(-e, psi);
                g
            })
            .collect();
        Ok(Coefficients { drift, diffusion })
    }

    fn euler_raw(&self, psi: &StateVector, env: &StepEnv<'_, StateVector>, dw: &[f64], dt: f64) -> Result<StateVector, ModelError> {
        self.check(psi)?;
        let lay = &self.inner.layout;
        let l = self.inner.params.measurement();
        let ell = self.expectations(psi);
        let mut next = psi.zeros_like();
        let mut scalar = 1.0;
        for (j, &e) in ell.iter().enumerate() {
            let u = env.controls.get(j).copied().unwrap_or(0.0);
            let mut k = self.generator(u).scale_real(dt);
            k.axpy_real(e * dt + dw[j], l);
            lay.vector_acc(&k, j, ONE, &psi.0, &mut next.0);
            scalar -= 0.5 * e * e * dt + e * dw[j];
        }
        self.add_pair_terms(&psi.0, -I * (0.5 * dt / lay.n_particles() as f64), &mut next.0);
        next.axpy(scalar, psi);
        Ok(next)
    }

    fn signal(&self, psi: &StateVector, channel: usize) -> f64 {
        match self.marginal(psi, channel) {
            Ok(m) => {
                let l = self.inner.params.measurement();
                (m.trace_product(l) + m.trace_product(&self.inner.l_dag)).re
            }
            Err(_) => f64::NAN,
        }
    }

    fn project(&self, mut raw: StateVector, _step: usize) -> Result<StateVector, QuantumError> {
        let norm = raw.norm_sqr();
        if !(norm > 1e-12) {
            return Err(QuantumError::DegenerateState { trace: norm });
        }
        raw.scale(1.0 / norm.sqrt());
        Ok(raw)
    }

    fn inspect(&self, psi: &StateVector) -> (f64, f64) {
        let min_eig = if psi.0.len() > 1 { 0.0 } else { psi.norm_sqr() };
        (min_eig, psi.norm_sqr().powi(2))
    }

    fn components(&self, psi: &StateVector) -> Vec<f64> {
        let mut out = Vec::new();
        for j in 0..self.n_particles() {
            let m = self.marginal(psi, j).expect("slot in range");
            if self.layout().local_dim() == 2 {
                out.extend(BlochVector::from_matrix_unchecked(&m).as_array());
            } else {
                out.extend((0..m.dim()).map(|i| m[(i, i)].re));
            }
        }
        out
    }

    fn component_names(&self, psi: &StateVector) -> Vec<String> {
        let dummy = self.inner.layout.product_state(&DensityMatrix::maximally_mixed(self.layout().local_dim()));
        match dummy {
            Ok(s) => self.inner.component_names(s.density().as_matrix()),
            Err(_) => psi.component_names(),
        }
    }
}
