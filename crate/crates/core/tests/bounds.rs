use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;
use proptest::prelude::*;
use scbf_core::barrier::library;
use scbf_core::barrier::{
    build_chain, generator, sup_over_set, worst_case_bound, BoundInput, BoundKind, ChainOptions, DualField, Region,
    ScalarExpr, ScalarField,
};
use scbf_core::benchmarks::{acc, example1, AccParams};
use scbf_core::jet::Scalar;
use scbf_core::noise::NoiseStream;
use scbf_core::Error;

fn disk_chain() -> scbf_core::barrier::BarrierChain {
    let opts = ChainOptions::new(Region::boxed(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap());
    build_chain(&example1([0.2, 0.2]), library::disk_barrier(), 1, &opts).unwrap()
}

#[test]
fn example1_bounds_from_the_chain() {
    let chain = disk_chain();
    let c = chain.sup(0).unwrap();
    assert!((c - 1.0).abs() < 1e-9, "c = {c}");
    for (x0, expected) in [([-0.1, 0.7], 0.5), ([-0.1, 0.8], 0.35)] {
        let h0 = chain.values(&x0)[0];
        let b = worst_case_bound(BoundInput::Scbf { h0, c: 1.0 }).unwrap();
        assert_eq!(b.kind, BoundKind::Scbf);
        assert!((b.value - expected).abs() < 1e-12, "{x0:?}: {}", b.value);
        let b = worst_case_bound(BoundInput::Scbf { h0, c }).unwrap();
        assert!((b.value - expected).abs() < 1e-9);
    }
}

#[test]
fn bound_is_fast() {
    let start = Instant::now();
    let reps = 10_000;
    let mut acc = 0.0;
    for i in 0..reps {
        acc += worst_case_bound(BoundInput::Scbf {
            h0: 0.5 + 1e-9 * i as f64,
            c: 1.0,
        })
        .unwrap()
        .value;
    }
    let per_call = start.elapsed().as_secs_f64() / reps as f64;
    assert!(acc > 0.0);
    assert!(per_call < 1e-3, "{per_call} s per call");
}

#[test]
fn szcbf_boundary_cases() {
    let b = worst_case_bound(BoundInput::Szcbf { h0: 2.0, c: 2.0, k: 1.0, horizon: 0.5 }).unwrap();
    assert!((b.value - (-1.0f64).exp()).abs() < 1e-15);
    let b = worst_case_bound(BoundInput::Szcbf { h0: 2.0, c: 2.0, k: 1.0, horizon: 0.0 }).unwrap();
    assert_eq!(b.value, 1.0);
    assert!(matches!(
        worst_case_bound(BoundInput::HighOrder { levels: vec![(0.3, 1.0), (-0.1, 2.0)] }),
        Err(Error::InvalidInitialState { level: 1, .. })
    ));
}

#[test]
fn constant_field_supremum_is_exact() {
    struct Five;
    impl ScalarExpr for Five {
        fn eval<S: Scalar>(&self, x: &[S]) -> S {
            x[0].constant_like(5.0)
        }
    }
    let region = Region::boxed(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
    let s = sup_over_set(&DualField::new(2, Five), &region, 1000, 3).unwrap();
    assert_eq!(s.value, 5.0);
}

#[test]
fn disk_supremum_over_the_disk() {
    let h = library::disk_barrier();
    let region = Region::boxed(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap().with_member(h.clone());
    let s = sup_over_set(h.as_ref(), &region, 100_000, 9).unwrap();
    assert!((s.value - 1.0).abs() < 1e-3);
    assert!(!s.unbounded_suspect);
    assert!(s.n_samples > 70_000, "samples landing in the disk: {}", s.n_samples);
    let again = sup_over_set(h.as_ref(), &region, 100_000, 9).unwrap();
    assert_eq!(s, again);
}

#[test]
fn gap_barrier_is_flagged_unbounded() {
    let p = AccParams::default();
    let h = library::gap_barrier(&p);
    let region = Region::boxed(vec![5.0, 10.0], vec![25.0, 60.0]).unwrap().with_member(h.clone());
    let s = sup_over_set(h.as_ref(), &region, 10_000, 1).unwrap();
    assert!(s.unbounded_suspect);
    assert!((s.argmax[1] - 60.0).abs() < 0.5);
}

#[test]
fn acc_chain_levels_are_flagged() {
    let p = AccParams::default();
    let opts = ChainOptions::new(Region::boxed(vec![5.0, 10.0], vec![25.0, 60.0]).unwrap());
    let chain = build_chain(&acc([0.5, 0.5], p), library::gap_barrier(&p), 2, &opts).unwrap();
    let report = chain.report();
    assert_eq!(report.r, 2);
    assert!(report.levels.iter().any(|l| l.unbounded_suspect));
}

#[test]
fn relative_degree_violation_names_the_level() {
    let opts = ChainOptions::new(Region::boxed(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap());
    let err = build_chain(&example1([0.2, 0.2]), library::disk_barrier(), 2, &opts).unwrap_err();
    assert!(matches!(err, Error::RelativeDegree { level: 0, .. }), "{err}");
}

#[test]
fn supremum_dominates_every_probe() {
    let chain = disk_chain();
    let c = chain.sup(0).unwrap();
    let mut rng = NoiseStream::new(4, 0);
    for _ in 0..1000 {
        let x = [rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0)];
        let h = chain.values(&x)[0];
        if h >= 0.0 {
            assert!(h <= c);
        }
    }
}

#[test]
fn szcbf_constraint_set_tends_to_scbf() {
    let model = example1([0.2, 0.2]);
    let h: Arc<dyn ScalarField> = library::disk_barrier();
    let mut rng = NoiseStream::new(5, 0);
    let eps = 1e-3;
    for k in [1e-3, 1e-5, 1e-7] {
        let mut compared = 0;
        for _ in 0..2000 {
            let x = [rng.uniform_in(-0.9, 0.9), rng.uniform_in(-0.9, 0.9)];
            let hv = h.value(&x);
            if hv < 0.0 {
                continue;
            }
            let u = DVector::from_element(1, rng.uniform_in(-5.0, 5.0));
            let a = generator(&model, h.as_ref(), &x).unwrap().eval(&u);
            if a.abs() <= eps || k * hv >= eps {
                continue;
            }
            compared += 1;
            assert_eq!(a + k * hv >= 0.0, a >= 0.0, "k={k} x={x:?}");
        }
        assert!(compared > 500);
    }
}

proptest! {
    #[test]
    fn scbf_bound_is_monotone(h1 in 0.0f64..1.0, h2 in 0.0f64..1.0, c1 in 0.5f64..5.0, c2 in 0.5f64..5.0) {
        let (lo_h, hi_h) = (h1.min(h2), h1.max(h2));
        let (lo_c, hi_c) = (c1.min(c2), c1.max(c2));
        let b = |h0, c| worst_case_bound(BoundInput::Scbf { h0, c }).unwrap().value;
        prop_assert!(b(lo_h, lo_c) <= b(hi_h, lo_c));
        prop_assert!(b(lo_h, hi_c) <= b(lo_h, lo_c));
    }

    #[test]
    fn high_order_bound_is_a_product(levels in prop::collection::vec((0.0f64..2.0, 0.1f64..2.0), 1..4)) {
        let total = worst_case_bound(BoundInput::HighOrder { levels: levels.clone() }).unwrap().value;
        let mut product = 1.0;
        for &(b, c) in &levels {
            let single = worst_case_bound(BoundInput::Scbf { h0: b, c }).unwrap().value;
            prop_assert!(total <= single + 1e-15);
            product *= single;
        }
        prop_assert!((total - product).abs() <= 1e-15);
        prop_assert!((0.0..=1.0).contains(&total));
    }

    #[test]
    fn szcbf_bound_decays_with_horizon(h0 in 0.0f64..1.0, c in 1.0f64..3.0, t1 in 0.0f64..5.0, t2 in 0.0f64..5.0) {
        let b = |horizon| worst_case_bound(BoundInput::Szcbf { h0, c, k: 0.5, horizon }).unwrap().value;
        prop_assert!(b(t1.max(t2)) <= b(t1.min(t2)));
    }
}
