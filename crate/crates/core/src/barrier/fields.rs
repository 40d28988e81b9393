//! Twice-differentiable scalar fields and the three ways of differentiating
//! them.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jet::{layout, Jet, Scalar};

/// How a field's derivatives are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Derivation {
    #[serde(rename = "analytic")]
    Analytic,
    #[serde(rename = "dual-number-automatic")]
    Dual,
    #[serde(rename = "finite-difference")]
    FiniteDifference,
}

/// A scalar expression written once for every [`Scalar`] type.
pub trait ScalarExpr: Send + Sync {
    fn eval<S: Scalar>(&self, x: &[S]) -> S;
}

/// Object-safe scalar field with derivatives.
pub trait ScalarField: Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> f64;

    fn gradient(&self, x: &[f64]) -> DVector<f64>;

    /// Hessian as computed, possibly slightly asymmetric.
    fn raw_hessian(&self, x: &[f64]) -> DMatrix<f64>;

    /// Taylor expansion around `x` to the given order. Fields that only know
    /// their first two derivatives fail for `order > 2`.
    fn taylor(&self, x: &[f64], order: usize) -> Result<Jet>;

    fn derivation(&self) -> Derivation;

    /// Symmetrized Hessian.
    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        self.hessian_with_asymmetry(x).0
    }

    /// Symmetrized Hessian and the largest `|H_ij - H_ji|` before
    /// symmetrization.
    fn hessian_with_asymmetry(&self, x: &[f64]) -> (DMatrix<f64>, f64) {
        let h = self.raw_hessian(x);
        let asym = (&h - h.transpose()).amax();
        ((&h + h.transpose()) * 0.5, asym)
    }
}

/// Field differentiated by evaluating its expression on jets.
#[derive(Debug, Clone)]
pub struct DualField<E> {
    dim: usize,
    expr: E,
}

impl<E: ScalarExpr> DualField<E> {
    pub fn new(dim: usize, expr: E) -> Self {
        Self { dim, expr }
    }

    pub fn expr(&self) -> &E {
        &self.expr
    }
}

impl<E: ScalarExpr> ScalarField for DualField<E> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.expr.eval(x)
    }

    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        let j = self.expr.eval(&Jet::variables(x, 1));
        DVector::from_vec(j.gradient())
    }

    fn raw_hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let j = self.expr.eval(&Jet::variables(x, 2));
        DMatrix::from_row_slice(self.dim, self.dim, &j.hessian())
    }

    fn taylor(&self, x: &[f64], order: usize) -> Result<Jet> {
        Ok(self.expr.eval(&Jet::variables(x, order)))
    }

    fn derivation(&self) -> Derivation {
        Derivation::Dual
    }
}

type ValueFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type GradFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;
type HessFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

/// Field with hand-supplied value, gradient and row-major Hessian.
#[derive(Clone)]
pub struct AnalyticField {
    dim: usize,
    value: Arc<ValueFn>,
    gradient: Arc<GradFn>,
    hessian: Arc<HessFn>,
}

impl AnalyticField {
    pub fn new(
        dim: usize,
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        hessian: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            value: Arc::new(value),
            gradient: Arc::new(gradient),
            hessian: Arc::new(hessian),
        }
    }
}

impl ScalarField for AnalyticField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_vec((self.gradient)(x))
    }

    fn raw_hessian(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &(self.hessian)(x))
    }

    fn taylor(&self, x: &[f64], order: usize) -> Result<Jet> {
        second_order_jet(self, x, order)
    }

    fn derivation(&self) -> Derivation {
        Derivation::Analytic
    }
}

/// Field differentiated by central differences of its value.
#[derive(Clone)]
pub struct FiniteDiffField {
    dim: usize,
    value: Arc<ValueFn>,
    step: f64,
}

impl FiniteDiffField {
    pub fn new(dim: usize, value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            dim,
            value: Arc::new(value),
            step: 1e-4,
        }
    }

    pub fn from_expr<E: ScalarExpr + 'static>(dim: usize, expr: E) -> Self {
        Self::new(dim, move |x: &[f64]| expr.eval(x))
    }

    /// Base step; scaled by `max(1, |x_i|)` per coordinate.
    pub fn with_step(mut self, step: f64) -> Self {
        self.step = step;
        self
    }

    fn h(&self, xi: f64) -> f64 {
        self.step * xi.abs().max(1.0)
    }
}

impl ScalarField for FiniteDiffField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        let mut xp = x.to_vec();
        DVector::from_iterator(
            self.dim,
            (0..self.dim).map(|i| {
                // Fourth-order stencil, as for the Hessian diagonal.
                let h = self.h(x[i]);
                let mut at = |d: f64| {
                    xp[i] = x[i] + d;
                    let v = (self.value)(&xp);
                    xp[i] = x[i];
                    v
                };
                (-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h)
            }),
        )
    }

    fn raw_hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.dim;
        let f0 = (self.value)(x);
        let mut xp = x.to_vec();
        let mut hess = DMatrix::zeros(n, n);
        for i in 0..n {
            let hi = self.h(x[i]);
            let mut at = |d: f64| {
                xp[i] = x[i] + d;
                let v = (self.value)(&xp);
                xp[i] = x[i];
                v
            };
            let (p1, m1, p2, m2) = (at(hi), at(-hi), at(2.0 * hi), at(-2.0 * hi));
            hess[(i, i)] = (-p2 + 16.0 * p1 - 30.0 * f0 + 16.0 * m1 - m2) / (12.0 * hi * hi);
            for j in (i + 1)..n {
                let hj = self.h(x[j]);
                let mut corner = |si: f64, sj: f64| {
                    xp[i] = x[i] + si * hi;
                    xp[j] = x[j] + sj * hj;
                    let v = (self.value)(&xp);
                    xp[i] = x[i];
                    xp[j] = x[j];
                    v
                };
                let v = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0) + corner(-1.0, -1.0))
                    / (4.0 * hi * hj);
                hess[(i, j)] = v;
                hess[(j, i)] = v;
            }
        }
        hess
    }

    fn taylor(&self, x: &[f64], order: usize) -> Result<Jet> {
        second_order_jet(self, x, order)
    }

    fn derivation(&self) -> Derivation {
        Derivation::FiniteDifference
    }
}

/// Builds a jet of order ≤ 2 from value, gradient and Hessian.
fn second_order_jet<F: ScalarField + ?Sized>(field: &F, x: &[f64], order: usize) -> Result<Jet> {
    if order > 2 {
        return Err(Error::Unsupported(format!(
            "{:?} fields provide at most second-order expansions (requested {order})",
            field.derivation()
        )));
    }
    let n = field.dim();
    let lay = layout(n, order);
    let mut j = Jet::constant(field.value(x), lay.clone());
    let mut coeffs = j.coeffs().to_vec();
    if order >= 1 {
        let g = field.gradient(x);
        for i in 0..n {
            let mut e = vec![0u8; n];
            e[i] = 1;
            coeffs[lay.index_of(&e).expect("order-1 monomial")] = g[i];
        }
    }
    if order == 2 {
        let h = field.hessian(x);
        for i in 0..n {
            for k in i..n {
                let mut e = vec![0u8; n];
                e[i] += 1;
                e[k] += 1;
                let c = if i == k { 0.5 * h[(i, i)] } else { h[(i, k)] };
                coeffs[lay.index_of(&e).expect("order-2 monomial")] = c;
            }
        }
    }
    j = Jet::from_parts(coeffs, lay);
    Ok(j)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Wave;
    impl ScalarExpr for Wave {
        fn eval<S: Scalar>(&self, x: &[S]) -> S {
            x[0].sin() * x[1].exp() + x[0].clone() * x[1].powi(2)
        }
    }

    #[test]
    fn dual_and_finite_difference_agree() {
        let dual = DualField::new(2, Wave);
        let fd = FiniteDiffField::from_expr(2, Wave);
        let x = [0.3, -0.4];
        let (gd, gf) = (dual.gradient(&x), fd.gradient(&x));
        assert!((gd - gf).amax() < 1e-8);
        let (hd, hf) = (dual.hessian(&x), fd.hessian(&x));
        assert!((hd - hf).amax() < 1e-5);
    }

    #[test]
    fn analytic_taylor_roundtrips() {
        let f = AnalyticField::new(
            2,
            |x| x[0] * x[0] + 3.0 * x[0] * x[1],
            |x| vec![2.0 * x[0] + 3.0 * x[1], 3.0 * x[0]],
            |_| vec![2.0, 3.0, 3.0, 0.0],
        );
        let j = f.taylor(&[1.0, 2.0], 2).unwrap();
        assert_eq!(j.primal(), 7.0);
        assert_eq!(j.gradient(), vec![8.0, 3.0]);
        assert_eq!(j.hessian(), vec![2.0, 3.0, 3.0, 0.0]);
        assert!(matches!(f.taylor(&[1.0, 2.0], 3), Err(Error::Unsupported(_))));
    }

    #[test]
    fn asymmetry_is_reported_and_removed() {
        let f = AnalyticField::new(2, |_| 0.0, |_| vec![0.0, 0.0], |_| vec![1.0, 2.0, 2.5, 1.0]);
        let (h, asym) = f.hessian_with_asymmetry(&[0.0, 0.0]);
        assert!((asym - 0.5).abs() < 1e-15);
        assert_eq!(h[(0, 1)], h[(1, 0)]);
    }
}
