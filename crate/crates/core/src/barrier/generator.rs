//! Infinitesimal generator of a scalar field along a control-affine SDE:
//! `𝒜B(x,u) = ∇B·(f + g u) + ½ Σᵢⱼ (σσᵀ)ᵢⱼ ∂ᵢ∂ⱼB`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::fields::{Derivation, ScalarField};
use crate::error::{Error, Result};
use crate::jet::{Jet, Scalar};
use crate::sde::SdeModel;

/// `𝒜B(x,u) = c0 + c1·u`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratorAffine {
    pub c0: f64,
    pub c1: DVector<f64>,
}

impl GeneratorAffine {
    pub fn eval(&self, u: &DVector<f64>) -> f64 {
        self.c0 + self.c1.dot(u)
    }
}

/// Generator of `b` at `x`, split into its control-free and control parts.
pub fn generator(model: &SdeModel, b: &dyn ScalarField, x: &[f64]) -> Result<GeneratorAffine> {
    if b.dim() != model.n() || x.len() != model.n() {
        return Err(Error::Dimension {
            what: "generator state",
            expected: model.n(),
            got: x.len().min(b.dim()),
        });
    }
    let grad = b.gradient(x);
    let hess = b.hessian(x);
    if grad.iter().chain(hess.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Evaluation {
            what: "gradient/Hessian",
            x: x.to_vec(),
        });
    }
    Ok(generator_from_derivatives(model, x, &grad, &hess))
}

/// Same as [`generator`] with precomputed derivatives.
pub fn generator_from_derivatives(
    model: &SdeModel,
    x: &[f64],
    grad: &DVector<f64>,
    hess: &DMatrix<f64>,
) -> GeneratorAffine {
    let f = model.drift(x);
    let g = model.control_matrix(x);
    let sigma = model.diffusion(x);
    let cov = &sigma * sigma.transpose();
    let c0 = grad.dot(&f) + 0.5 * cov.component_mul(hess).sum();
    let c1 = g.transpose() * grad;
    GeneratorAffine { c0, c1 }
}

/// Control-free part of the generator as a jet of the given order, computed
/// from an expansion of the parent field two orders higher.
pub fn drift_generator_jet(model: &SdeModel, parent: &Jet, x: &[f64], order: usize) -> Jet {
    debug_assert!(parent.order() >= order + 2);
    let n = model.n();
    let d = model.d();
    let vars = Jet::variables(x, order);
    let f = model.drift_jet(&vars);
    let sigma = model.diffusion_jet(&vars);

    let first: Vec<Jet> = (0..n).map(|i| parent.partial(i)).collect();
    let mut acc = vars[0].constant_like(0.0);
    for i in 0..n {
        acc = acc + first[i].truncate(order) * &f[i];
    }
    for i in 0..n {
        let second_i = first[i].truncate(order + 1);
        for j in 0..n {
            // (σσᵀ)ᵢⱼ
            let mut cov = vars[0].constant_like(0.0);
            for k in 0..d {
                cov = cov + &sigma[i * d + k] * &sigma[j * d + k];
            }
            if cov.coeffs().iter().all(|c| *c == 0.0) {
                continue;
            }
            acc = acc + second_i.partial(j) * cov * 0.5;
        }
    }
    acc.truncate(order)
}

/// `b_{j+1} = 𝒜 b_j` with the control term dropped, valid where the parent
/// has no control authority.
#[derive(Clone)]
pub struct GeneratorField {
    parent: Arc<dyn ScalarField>,
    model: SdeModel,
}

impl GeneratorField {
    pub fn new(parent: Arc<dyn ScalarField>, model: SdeModel) -> Self {
        Self { parent, model }
    }

    pub fn parent(&self) -> &Arc<dyn ScalarField> {
        &self.parent
    }
}

impl ScalarField for GeneratorField {
    fn dim(&self) -> usize {
        self.parent.dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        match generator(&self.model, self.parent.as_ref(), x) {
            Ok(g) => g.c0,
            Err(_) => f64::NAN,
        }
    }

    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        match self.taylor(x, 1) {
            Ok(j) => DVector::from_vec(j.gradient()),
            Err(_) => DVector::from_element(self.dim(), f64::NAN),
        }
    }

    fn raw_hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.dim();
        match self.taylor(x, 2) {
            Ok(j) => DMatrix::from_row_slice(n, n, &j.hessian()),
            Err(_) => DMatrix::from_element(n, n, f64::NAN),
        }
    }

    fn taylor(&self, x: &[f64], order: usize) -> Result<Jet> {
        let parent = self.parent.taylor(x, order + 2)?;
        Ok(drift_generator_jet(&self.model, &parent, x, order))
    }

    fn derivation(&self) -> Derivation {
        self.parent.derivation()
    }
}
