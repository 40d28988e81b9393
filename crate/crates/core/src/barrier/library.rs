//! Barrier and Lyapunov functions for the benchmark systems, in dual,
//! analytic and finite-difference flavours.

use std::sync::Arc;

use super::fields::{AnalyticField, DualField, FiniteDiffField, ScalarExpr, ScalarField};
use crate::benchmarks::AccParams;
use crate::jet::Scalar;

/// Unit disk `h = 1 - x₁² - x₂²`.
#[derive(Debug, Clone, Copy)]
pub struct DiskBarrier;

impl ScalarExpr for DiskBarrier {
    fn eval<S: Scalar>(&self, x: &[S]) -> S {
        -(x[0].clone() * x[0].clone()) - x[1].clone() * x[1].clone() + 1.0
    }
}

/// Minimum-gap barrier `h = (z - D)⁵` on the ACC state `(v, z)`.
#[derive(Debug, Clone, Copy)]
pub struct GapBarrier {
    pub d_min: f64,
}

impl ScalarExpr for GapBarrier {
    fn eval<S: Scalar>(&self, x: &[S]) -> S {
        (x[1].clone() - self.d_min).powi(5)
    }
}

/// Speed-tracking Lyapunov function `V = (v - v_d)²`.
#[derive(Debug, Clone, Copy)]
pub struct SpeedLyapunov {
    pub v_d: f64,
}

impl ScalarExpr for SpeedLyapunov {
    fn eval<S: Scalar>(&self, x: &[S]) -> S {
        (x[0].clone() - self.v_d).powi(2)
    }
}

pub fn disk_barrier() -> Arc<dyn ScalarField> {
    Arc::new(DualField::new(2, DiskBarrier))
}

pub fn disk_barrier_analytic() -> Arc<dyn ScalarField> {
    Arc::new(AnalyticField::new(
        2,
        |x| 1.0 - x[0] * x[0] - x[1] * x[1],
        |x| vec![-2.0 * x[0], -2.0 * x[1]],
        |_| vec![-2.0, 0.0, 0.0, -2.0],
    ))
}

pub fn disk_barrier_fd() -> Arc<dyn ScalarField> {
    Arc::new(FiniteDiffField::from_expr(2, DiskBarrier))
}

pub fn gap_barrier(params: &AccParams) -> Arc<dyn ScalarField> {
    Arc::new(DualField::new(2, GapBarrier { d_min: params.d_min }))
}

pub fn gap_barrier_analytic(params: &AccParams) -> Arc<dyn ScalarField> {
    let d = params.d_min;
    Arc::new(AnalyticField::new(
        2,
        move |x| (x[1] - d).powi(5),
        move |x| vec![0.0, 5.0 * (x[1] - d).powi(4)],
        move |x| vec![0.0, 0.0, 0.0, 20.0 * (x[1] - d).powi(3)],
    ))
}

pub fn gap_barrier_fd(params: &AccParams) -> Arc<dyn ScalarField> {
    // Fine step: the fifth-order root at z = D is narrower than the default.
    Arc::new(FiniteDiffField::from_expr(2, GapBarrier { d_min: params.d_min }).with_step(1e-5))
}

pub fn speed_lyapunov(params: &AccParams) -> Arc<dyn ScalarField> {
    Arc::new(DualField::new(2, SpeedLyapunov { v_d: params.v_d }))
}

/// Hand-expanded generator expressions for the two benchmarks. They carry
/// coefficient slips relative to the machine-derived chain and are kept only
/// for comparison runs.
pub mod printed {
    use crate::benchmarks::AccParams;

    /// `𝒜h` for the unit-disk barrier, with cross term `x₁x₂` and
    /// noise term `σ₂² + σ₂²`.
    pub fn disk_generator(x: &[f64], u: f64, sigma: [f64; 2]) -> f64 {
        let (x1, x2) = (x[0], x[1]);
        1.2 * x1 * x1 + x1 * x2 - 2.0 * x1.powi(3) * x2 - 2.0 * x2 * x2 * u
            - (sigma[1] * sigma[1] + sigma[1] * sigma[1])
    }

    /// `b₁` for the gap barrier, without the Itô term.
    pub fn gap_b1(x: &[f64], p: &AccParams) -> f64 {
        let (v, z) = (x[0], x[1]);
        5.0 * (z - p.d_min).powi(4) * (p.v_f - v)
    }

    /// `b₂ = 𝒜b₁` for the gap barrier, hand-expanded.
    pub fn gap_b2(x: &[f64], u: f64, sigma: [f64; 2], p: &AccParams) -> f64 {
        let (v, z) = (x[0], x[1]);
        let e = z - p.d_min;
        5.0 * e.powi(4) / p.mass * p.rolling_resistance(&v) + 20.0 * e.powi(3) * (p.v_f - v).powi(2)
            - e.powi(4) / p.mass * u
            + 120.0 * e * (sigma[0] * sigma[0] + sigma[1] * sigma[1])
    }
}
