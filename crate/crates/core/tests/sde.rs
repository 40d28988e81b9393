use std::sync::Arc;

use nalgebra::DVector;
use proptest::prelude::*;
use rayon::prelude::*;
use scbf_core::benchmarks::example1;
use scbf_core::jet::Scalar;
use scbf_core::noise::derive_seed;
use scbf_core::sde::{em_step, simulate, ConstantField, ConstantPolicy, FnPolicy, SdeModel, VectorExpr};

struct Linear(f64);

impl VectorExpr for Linear {
    fn eval<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        vec![x[0].clone() * self.0]
    }
}

/// `dx = -a·x dt + u dt + σ dW`.
fn ou(a: f64, sigma: f64) -> SdeModel {
    SdeModel::new(
        "ou",
        (1, 1, 1),
        Arc::new(Linear(-a)),
        Arc::new(ConstantField(vec![1.0])),
        Arc::new(ConstantField(vec![sigma])),
    )
    .unwrap()
}

fn one(v: f64) -> DVector<f64> {
    DVector::from_element(1, v)
}

#[test]
fn noiseless_decay_approaches_the_exponential() {
    let traj = simulate(&ou(1.0, 0.0), &one(1.0), &ConstantPolicy::zero(1), 0.01, 100, 0).unwrap();
    assert_eq!(traj.states.len(), 101);
    assert!((traj.final_state()[0] - (-1.0f64).exp()).abs() < 1e-2);
}

#[test]
fn single_step_equals_em_step() {
    let model = example1([0.2, 0.3]);
    let x0 = DVector::from_vec(vec![0.3, -0.4]);
    let traj = simulate(&model, &x0, &ConstantPolicy(one(0.5)), 0.01, 1, 77).unwrap();
    let mut noise = scbf_core::noise::NoiseStream::new(77, 2);
    let dw = noise.increment(0.01);
    let next = em_step(&model, &x0, &one(0.5), 0.01, &dw).unwrap();
    assert_eq!(traj.states[1], next);
}

#[test]
fn same_seed_is_bit_identical() {
    let model = example1([0.2, 0.2]);
    let x0 = DVector::from_vec(vec![-0.1, 0.7]);
    let pol = FnPolicy(|x: &DVector<f64>| one(-x[1]));
    let a = simulate(&model, &x0, &pol, 0.01, 300, 5).unwrap();
    let b = simulate(&model, &x0, &pol, 0.01, 300, 5).unwrap();
    let c = simulate(&model, &x0, &pol, 0.01, 300, 6).unwrap();
    let bits = |t: &scbf_core::sde::Trajectory| -> Vec<u64> { t.states.iter().flat_map(|s| s.iter().map(|v| v.to_bits())).collect() };
    assert_eq!(bits(&a), bits(&b));
    assert_ne!(bits(&a), bits(&c));
}

#[test]
fn ou_variance_matches_closed_form() {
    let (a, sigma, dt, n) = (1.5, 0.4, 0.01, 100);
    let model = ou(a, sigma);
    let runs = 20_000;
    let finals: Vec<f64> = (0..runs)
        .into_par_iter()
        .map(|i| {
            simulate(&model, &one(0.0), &ConstantPolicy::zero(1), dt, n, derive_seed(42, i as u64))
                .unwrap()
                .final_state()[0]
        })
        .collect();
    let mean = finals.iter().sum::<f64>() / runs as f64;
    let var = finals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (runs - 1) as f64;
    let t = dt * n as f64;
    let expected = sigma * sigma * (1.0 - (-2.0 * a * t).exp()) / (2.0 * a);
    assert!(((var - expected) / expected).abs() < 0.05, "{var} vs {expected}");
}

#[test]
fn noiseless_integration_is_first_order() {
    // Reference: x' = -x, x(1) = e^{-1}.
    let model = ou(1.0, 0.0);
    let err = |n: usize| {
        let traj = simulate(&model, &one(1.0), &ConstantPolicy::zero(1), 1.0 / n as f64, n, 0).unwrap();
        (traj.final_state()[0] - (-1.0f64).exp()).abs()
    };
    for n in [50, 100, 200] {
        let ratio = err(n) / err(2 * n);
        assert!((1.8..2.2).contains(&ratio), "n={n}: ratio {ratio}");
    }
}

#[test]
fn divergence_reports_the_step() {
    let model = ou(-1e200, 0.0);
    let err = simulate(&model, &one(1.0), &ConstantPolicy::zero(1), 1.0, 10, 0).unwrap_err();
    assert!(matches!(err, scbf_core::Error::Diverged { step: Some(_), .. }), "{err}");
}

proptest! {
    #[test]
    fn em_step_is_affine_in_u(
        x in prop::array::uniform2(-2.0f64..2.0),
        u1 in -5.0f64..5.0, u2 in -5.0f64..5.0,
        dw in prop::array::uniform2(-0.3f64..0.3),
    ) {
        let model = example1([0.2, 0.3]);
        let x = DVector::from_column_slice(&x);
        let step = |u: f64| em_step(&model, &x, &one(u), 0.01, &dw).unwrap();
        let lhs = step(u1) + step(u2) - step(0.0);
        let rhs = step(u1 + u2);
        prop_assert!((lhs - rhs).amax() <= 1e-14);
    }
}
