//! Ground-truth benchmark systems.
//!
//! * `example1`: planar nonlinear system `f = (-0.6x₁ - x₂, x₁³)`,
//!   `g = (0, x₂)ᵀ`, additive diagonal noise.
//! * `acc`: adaptive cruise control with state `(v, z)` (follower speed in
//!   m/s, gap in m), rolling resistance `F_r(v) = f₀ + f₁v + f₂v²`.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jet::Scalar;
use crate::sde::{diagonal_field, SdeModel, VectorExpr};

pub const BENCHMARK_NAMES: [&str; 2] = ["example1", "acc"];

#[derive(Debug, Clone, Copy)]
pub struct Example1Drift;

impl VectorExpr for Example1Drift {
    fn eval<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        let (x1, x2) = (x[0].clone(), x[1].clone());
        vec![x1.clone() * -0.6 - x2, x1.powi(3)]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Example1Control;

impl VectorExpr for Example1Control {
    fn eval<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        vec![x[0].constant_like(0.0), x[1].clone()]
    }
}

pub fn example1(sigma: [f64; 2]) -> SdeModel {
    SdeModel::new(
        "example1",
        (2, 1, 2),
        Arc::new(Example1Drift),
        Arc::new(Example1Control),
        Arc::new(diagonal_field(&sigma)),
    )
    .expect("example1 shapes are consistent")
}

/// Adaptive-cruise-control parameters. `v_f` is the lead vehicle speed,
/// `v_d` the desired follower speed, `d_min` the minimum gap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AccParams {
    pub f0: f64,
    pub f1: f64,
    pub f2: f64,
    pub mass: f64,
    pub v_f: f64,
    pub v_d: f64,
    pub d_min: f64,
}

impl Default for AccParams {
    fn default() -> Self {
        Self {
            f0: 0.1,
            f1: 5.0,
            f2: 0.25,
            mass: 1650.0,
            // 50 km/h: slower than v_d so tracking and keeping distance conflict.
            v_f: 13.89,
            v_d: 22.0,
            d_min: 10.0,
        }
    }
}

impl AccParams {
    pub fn rolling_resistance<S: Scalar>(&self, v: &S) -> S {
        v.clone() * v.clone() * self.f2 + v.clone() * self.f1 + self.f0
    }

    pub fn apply(&mut self, params: &BTreeMap<String, f64>) -> Result<()> {
        for (key, &value) in params {
            let slot = match key.as_str() {
                "f0" => &mut self.f0,
                "f1" => &mut self.f1,
                "f2" => &mut self.f2,
                "mass" | "M" => &mut self.mass,
                "v_f" => &mut self.v_f,
                "v_d" => &mut self.v_d,
                "d_min" | "D" => &mut self.d_min,
                other => {
                    return Err(Error::Config(format!(
                        "unknown acc parameter `{other}` (expected f0, f1, f2, mass, v_f, v_d, d_min)"
                    )))
                }
            };
            *slot = value;
        }
        if !(self.mass > 0.0) {
            return Err(Error::Config("acc mass must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AccDrift(pub AccParams);

impl VectorExpr for AccDrift {
    fn eval<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        let p = &self.0;
        let v = x[0].clone();
        vec![-(p.rolling_resistance(&v)) / p.mass, -v + p.v_f]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AccControl(pub AccParams);

impl VectorExpr for AccControl {
    fn eval<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        vec![x[0].constant_like(1.0 / self.0.mass), x[0].constant_like(0.0)]
    }
}

pub fn acc(sigma: [f64; 2], params: AccParams) -> SdeModel {
    SdeModel::new(
        "acc",
        (2, 1, 2),
        Arc::new(AccDrift(params)),
        Arc::new(AccControl(params)),
        Arc::new(diagonal_field(&sigma)),
    )
    .expect("acc shapes are consistent")
}

/// Looks up a benchmark by name. `params` overrides defaults (ACC only).
pub fn benchmark(name: &str, sigma: &[f64], params: &BTreeMap<String, f64>) -> Result<SdeModel> {
    if sigma.len() != 2 {
        return Err(Error::Dimension {
            what: "benchmark sigma",
            expected: 2,
            got: sigma.len(),
        });
    }
    if sigma.iter().any(|s| !s.is_finite()) {
        return Err(Error::Config("sigma entries must be finite".into()));
    }
    let sigma = [sigma[0], sigma[1]];
    match name {
        "example1" => {
            if let Some(key) = params.keys().next() {
                return Err(Error::Config(format!("example1 takes no parameters, got `{key}`")));
            }
            Ok(example1(sigma))
        }
        "acc" => {
            let mut p = AccParams::default();
            p.apply(params)?;
            Ok(acc(sigma, p))
        }
        other => Err(Error::Config(format!(
            "unknown benchmark `{other}`; valid names: {}",
            BENCHMARK_NAMES.join(", ")
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::em_step;
    use nalgebra::dvector;

    #[test]
    fn example1_drift_by_hand() {
        let m = benchmark("example1", &[0.2, 0.2], &BTreeMap::new()).unwrap();
        assert_eq!(m.drift(&[1.0, 1.0]).as_slice(), &[-1.6, 1.0]);
    }

    #[test]
    fn example1_noiseless_step() {
        let m = example1([0.0, 0.0]);
        let next = em_step(&m, &dvector![1.0, 0.0], &dvector![0.0], 0.01, &[0.0, 0.0]).unwrap();
        assert!((next[0] - 0.994).abs() < 1e-15);
        assert!((next[1] - 0.01).abs() < 1e-15);
    }

    #[test]
    fn acc_drift_by_hand() {
        let m = benchmark("acc", &[0.5, 0.5], &BTreeMap::new()).unwrap();
        let f = m.drift(&[10.0, 15.0]);
        assert!((f[0] - (-(0.1 + 50.0 + 25.0) / 1650.0)).abs() < 1e-15);
        assert!((f[1] - 3.89).abs() < 1e-12);
        let g = m.control_matrix(&[3.0, -7.0]);
        assert_eq!(g[(0, 0)], 1.0 / 1650.0);
        assert_eq!(g[(1, 0)], 0.0);
    }

    #[test]
    fn acc_param_overrides() {
        let params = BTreeMap::from([("v_f".to_string(), 20.0)]);
        let m = benchmark("acc", &[0.0, 0.0], &params).unwrap();
        assert!((m.drift(&[10.0, 15.0])[1] - 10.0).abs() < 1e-12);
        let bad = BTreeMap::from([("wind".to_string(), 1.0)]);
        assert!(benchmark("acc", &[0.0, 0.0], &bad).is_err());
    }

    #[test]
    fn unknown_benchmark_lists_names() {
        let err = benchmark("pendulum", &[0.1, 0.1], &BTreeMap::new()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("example1") && msg.contains("acc"));
    }
}
