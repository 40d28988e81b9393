use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use scbf_core::benchmarks::{example1, Example1Control, Example1Drift};
use scbf_core::jet::Scalar;
use scbf_core::noise::{derive_seed, NoiseStream};
use scbf_core::sde::{diagonal_field, ConstantField, ConstantPolicy, SdeModel, VectorExpr};
use scbf_core::sysid::{
    collect_drift_data, collect_residuals, fit_blr, fit_drift, identify_drift, log_posterior, map_sigma,
    map_sigma_closed_form, sample_sigma_posterior, BasisSet, BlrPosterior, DriftFitOptions, DriftModel, DriftScheme,
    Normalization,
};

fn gaussian(n: usize, sigma: f64, seed: u64) -> Vec<f64> {
    let mut rng = NoiseStream::new(seed, 0);
    (0..n).map(|_| sigma * rng.standard_normal()).collect()
}

fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = NoiseStream::new(seed, 0);
    DMatrix::from_fn(rows, cols, |_, _| rng.uniform_in(-2.0, 2.0))
}

// ---------------------------------------------------------------- regression

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn blr_matches_dense_solve_and_shrinks(
        rows in 3usize..20, cols in 1usize..6, seed in any::<u64>(),
        tau in 0.1f64..10.0, s1 in 0.0f64..5.0, ds in 0.01f64..5.0,
    ) {
        let phi = random_matrix(rows, cols, seed);
        let y = DVector::from_vec(gaussian(rows, 1.0, seed ^ 1));
        let prior = DMatrix::identity(cols, cols) * tau;
        let gram = phi.transpose() * &phi;
        let eig = gram.clone().symmetric_eigen();
        let mut last: Option<DVector<f64>> = None;
        for s in [s1.max(1e-3), s1.max(1e-3) + ds, s1.max(1e-3) + 2.0 * ds] {
            let post = fit_blr(&phi, &y, &prior, s).unwrap();
            let a = &gram + DMatrix::identity(cols, cols) * (s / tau);
            let oracle = a.clone().lu().solve(&(phi.transpose() * &y)).unwrap();
            let scale = 1.0 + oracle.amax();
            prop_assert!((&post.mean - &oracle).amax() <= 1e-8 * scale);
            let cov_oracle = a.try_inverse().unwrap() * s;
            prop_assert!((&post.cov - &cov_oracle).amax() <= 1e-8 * (1.0 + cov_oracle.amax()));
            let proj = eig.eigenvectors.transpose() * &post.mean;
            if let Some(prev) = &last {
                for k in 0..cols {
                    prop_assert!(proj[k].abs() <= prev[k].abs() + 1e-12 * (1.0 + prev[k].abs()));
                }
            }
            last = Some(proj);
        }
    }

    #[test]
    fn posterior_covariance_is_symmetric_psd(
        rows in 1usize..15, cols in 1usize..6, seed in any::<u64>(), s in 0.0f64..3.0, tau in 0.1f64..10.0,
    ) {
        let phi = random_matrix(rows, cols, seed);
        let y = DVector::from_vec(gaussian(rows, 1.0, seed ^ 2));
        let post = fit_blr(&phi, &y, &(DMatrix::identity(cols, cols) * tau), s.max(1e-6)).unwrap();
        prop_assert_eq!(&post.cov, &post.cov.transpose());
        let min_eig = post.cov.clone().symmetric_eigen().eigenvalues.min();
        prop_assert!(min_eig >= -1e-12 * (1.0 + post.cov.amax()));
        prop_assert!(post.mean.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn noiseless_full_rank_fit_has_zero_covariance() {
    let phi = random_matrix(10, 4, 3);
    let theta = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
    let y = &phi * &theta;
    let post = fit_blr(&phi, &y, &DMatrix::identity(4, 4), 0.0).unwrap();
    assert!((&post.mean - &theta).amax() < 1e-8);
    assert_eq!(post.cov.amax(), 0.0);
}

#[test]
fn prediction_examples() {
    let basis = BasisSet::parse(1, &["1", "x1"]).unwrap();
    let post = |w: Vec<f64>| BlrPosterior {
        mean: DVector::from_vec(w),
        cov: DMatrix::zeros(2, 2),
        prior_cov: DMatrix::identity(2, 2),
        noise_var: 1.0,
    };
    let model = DriftModel {
        basis: basis.clone(),
        n: 1,
        p: 1,
        f: vec![post(vec![2.0, 3.0])],
        g: vec![post(vec![0.0, 0.0])],
        dataset_hash: String::new(),
    };
    let pred = model.predict(&[5.0]);
    assert_eq!(pred.f[0], 17.0);
    assert_eq!(pred.g[(0, 0)], 0.0);
    assert_eq!(pred.f_var[0], 0.0);
}

// --------------------------------------------------------------- elimination

/// `f`, `g` given as weights over a shared basis, rows = outputs.
struct InBasis {
    basis: BasisSet,
    weights: DMatrix<f64>,
}

impl VectorExpr for InBasis {
    fn eval<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        let phi = self.basis.eval(x);
        (0..self.weights.nrows())
            .map(|r| {
                let mut acc = x[0].constant_like(0.0);
                for (c, f) in phi.iter().enumerate() {
                    acc = acc + f.clone() * self.weights[(r, c)];
                }
                acc
            })
            .collect()
    }
}

fn in_basis_model(seed: u64, p: usize) -> (SdeModel, BasisSet) {
    let basis = BasisSet::total_degree(2, 2);
    let m = basis.len();
    let f = InBasis {
        basis: basis.clone(),
        weights: random_matrix(2, m, seed),
    };
    let g = InBasis {
        basis: basis.clone(),
        weights: random_matrix(2 * p, m, seed ^ 7),
    };
    let model = SdeModel::new(
        "in-basis",
        (2, p, 2),
        Arc::new(f),
        Arc::new(g),
        Arc::new(ConstantField(vec![0.0; 4])),
    )
    .unwrap();
    (model, basis)
}

fn probe_states(n: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = NoiseStream::new(seed, 0);
    (0..n)
        .map(|_| DVector::from_vec(vec![rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0)]))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn elimination_is_exact_on_noiseless_in_basis_models(
        seed in any::<u64>(),
        u1 in prop::array::uniform2(-3.0f64..3.0),
        gap in prop::array::uniform2(0.1f64..4.0),
        flip in any::<bool>(),
    ) {
        let (model, basis) = in_basis_model(seed, 2);
        let probes = probe_states(40, seed ^ 3);
        let sign = if flip { -1.0 } else { 1.0 };
        let u2 = [u1[0] + sign * gap[0], u1[1] - sign * gap[1]];
        let data = collect_drift_data(&model, &probes, &u1, &u2, 1, 0.01, seed).unwrap();
        let fitted = fit_drift(&data, &basis, &DriftFitOptions::uniform(2, 2, 10.0, 0.0)).unwrap();
        for x in probe_states(20, seed ^ 5) {
            let pred = fitted.predict(x.as_slice());
            let f = model.drift(x.as_slice());
            let g = model.control_matrix(x.as_slice());
            prop_assert!((&pred.f - &f).amax() <= 1e-6 * (1.0 + f.amax()), "f {} vs {}", pred.f, f);
            prop_assert!((&pred.g - &g).amax() <= 1e-6 * (1.0 + g.amax()), "g {} vs {}", pred.g, g);
        }
    }
}

#[test]
fn sequential_scheme_is_exact_without_noise() {
    let (model, basis) = in_basis_model(17, 1);
    let probes = probe_states(40, 4);
    let scheme = DriftScheme::Sequential { u_g: vec![0.1] };
    let (fitted, _) = identify_drift(&model, &probes, &scheme, 1, 0.01, &basis, &DriftFitOptions::uniform(2, 1, 10.0, 0.0), 9).unwrap();
    for x in probe_states(20, 8) {
        let pred = fitted.predict(x.as_slice());
        assert!((&pred.f - model.drift(x.as_slice())).amax() < 1e-6);
        assert!((&pred.g - model.control_matrix(x.as_slice())).amax() < 1e-6);
    }
}

#[test]
fn zero_drift_gives_zero_targets() {
    let model = SdeModel::new(
        "still",
        (2, 1, 2),
        Arc::new(ConstantField(vec![0.0, 0.0])),
        Arc::new(ConstantField(vec![1.0, 0.0])),
        Arc::new(ConstantField(vec![0.0; 4])),
    )
    .unwrap();
    let data = collect_drift_data(&model, &probe_states(10, 1), &[0.0], &[2.0], 3, 0.01, 0).unwrap();
    assert!(data.y_f.iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn example1_drift_mse_at_k100() {
    let model = example1([0.2, 0.2]);
    let probes = probe_states(500, 21);
    let scheme = DriftScheme::paired_scalar(0.0, 1.0);
    let opts = DriftFitOptions::from_sigma(&scheme, &[0.2, 0.2], 100, 0.01, 10.0);
    let (fitted, _) = identify_drift(&model, &probes, &scheme, 100, 0.01, &BasisSet::planar_cubic(), &opts, 3).unwrap();
    let eval = probe_states(100, 22);
    for ch in 0..2 {
        let mse: f64 = eval
            .iter()
            .map(|x| (fitted.predict(x.as_slice()).f[ch] - model.drift(x.as_slice())[ch]).powi(2))
            .sum::<f64>()
            / eval.len() as f64;
        assert!((1e-4..6e-3).contains(&mse), "f{}: {mse:e}", ch + 1);
    }
}

// ----------------------------------------------------------------- residuals

struct Shifted;

impl VectorExpr for Shifted {
    fn eval<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        Example1Drift.eval(x).into_iter().map(|v| v + 1.0).collect()
    }
}

fn starts(n: usize) -> Vec<DVector<f64>> {
    let mut rng = NoiseStream::new(77, 0);
    (0..n)
        .map(|_| DVector::from_vec(vec![rng.uniform_in(-0.5, 0.5), rng.uniform_in(-0.5, 0.5)]))
        .collect()
}

#[test]
fn perfect_noiseless_model_leaves_no_residual() {
    let model = example1([0.0, 0.0]);
    let data = collect_residuals(&model, &model, &ConstantPolicy::zero(1), &starts(10), 0.01, 50, 1, Normalization::Raw).unwrap();
    assert!(data.channels.iter().flatten().all(|v| v.abs() < 1e-15));
}

#[test]
fn raw_residual_scale_is_sigma_sqrt_dt() {
    let model = example1([0.2, 0.2]);
    let data = collect_residuals(&model, &model, &ConstantPolicy::zero(1), &starts(100), 0.01, 300, 2, Normalization::Raw).unwrap();
    for ch in &data.channels {
        assert!(ch.len() >= 30_000);
        let std = (ch.iter().map(|v| v * v).sum::<f64>() / ch.len() as f64).sqrt();
        assert!((std / 0.02 - 1.0).abs() < 0.05, "{std}");
    }
}

#[test]
fn biased_drift_shifts_the_residual_mean() {
    let truth = example1([0.2, 0.2]);
    let biased = SdeModel::new(
        "biased",
        (2, 1, 2),
        Arc::new(Shifted),
        Arc::new(Example1Control),
        Arc::new(diagonal_field(&[0.2, 0.2])),
    )
    .unwrap();
    let dt = 0.01;
    let data = collect_residuals(&truth, &biased, &ConstantPolicy::zero(1), &starts(100), dt, 300, 3, Normalization::Raw).unwrap();
    for ch in &data.channels {
        let mean = ch.iter().sum::<f64>() / ch.len() as f64;
        // Standard error 0.02/√30000 ≈ 1.2e-4.
        assert!((mean + dt).abs() < 6e-4, "{mean}");
    }
}

// ----------------------------------------------------------------- diffusion

/// Golden-section search for the maximum of the log-posterior in `ln σ`.
/// Function values flatten near the peak, so this only pins `σ` to about 1e-7.
fn golden_argmax(n: usize, s: f64, alpha: f64, beta: f64) -> f64 {
    let f = |t: f64| log_posterior(n, s, alpha, beta, t.exp());
    let (mut a, mut b) = ((1e-8f64).ln(), (1e4f64).ln());
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    while b - a > 1e-12 {
        if f(c) > f(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - r * (b - a);
        d = a + r * (b - a);
    }
    (0.5 * (a + b)).exp()
}

/// Bisection on the sign of the hand-differentiated score
/// `-(N+α)/σ + S/σ³ + β/σ²`, scaled by `σ³`.
fn score_root(n: usize, s: f64, alpha: f64, beta: f64) -> f64 {
    let g = |x: f64| -(n as f64 + alpha) * x * x + beta * x + s;
    let (mut lo, mut hi) = (1e-12f64, 1e4f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn closed_form_map_matches_numeric_maximization() {
    let mut rng = NoiseStream::new(8, 0);
    for i in 0..100 {
        let n = 1 + (rng.uniform() * 5000.0) as usize;
        let sigma = rng.uniform_in(0.01, 3.0);
        let alpha = rng.uniform_in(0.1, 5.0);
        let beta = rng.uniform_in(0.1, 5.0);
        let xs = gaussian(n, sigma, i);
        let s: f64 = xs.iter().map(|v| v * v).sum();
        let closed = map_sigma_closed_form(n, s, alpha, beta);
        let root = score_root(n, s, alpha, beta);
        assert!(((closed - root) / closed).abs() < 1e-8, "{closed} vs {root}");
        let golden = golden_argmax(n, s, alpha, beta);
        assert!(((closed - golden) / closed).abs() < 1e-6, "{closed} vs {golden}");
        let post = map_sigma(&xs, alpha, beta).unwrap();
        assert_eq!(post.sigma_hat, closed);
        assert!((post.grid_argmax() / closed).ln().abs() <= post.grid_ratio().ln(), "dataset {i}");
    }
}

#[test]
fn map_recovers_sigma_from_normalized_residuals() {
    let post = map_sigma(&gaussian(30_000, 0.2, 4), 1.0, 1.0).unwrap();
    assert!((0.19..=0.21).contains(&post.sigma_hat), "{}", post.sigma_hat);
    let total: f64 = post.masses.iter().sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn map_error_shrinks_like_inverse_sqrt_n() {
    let reps = 200;
    let sizes = [250usize, 500, 1000, 2000, 4000, 8000];
    let rmse: Vec<f64> = sizes
        .iter()
        .map(|&n| {
            let sq: f64 = (0..reps)
                .map(|r| {
                    let xs = gaussian(n, 0.5, derive_seed(n as u64, r));
                    (map_sigma(&xs, 1.0, 1.0).unwrap().sigma_hat - 0.5).powi(2)
                })
                .sum();
            (sq / reps as f64).sqrt()
        })
        .collect();
    let lx: Vec<f64> = sizes.iter().map(|&n| (n as f64).ln()).collect();
    let ly: Vec<f64> = rmse.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / lx.len() as f64;
    let my = ly.iter().sum::<f64>() / ly.len() as f64;
    let slope = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / lx.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    assert!((-0.65..=-0.35).contains(&slope), "slope {slope}, rmse {rmse:?}");
}

/// Upper 1% point of χ² by the Wilson–Hilferty approximation.
fn chi2_crit_99(df: f64) -> f64 {
    let z = 2.326_347_874;
    let k = 2.0 / (9.0 * df);
    df * (1.0 - k + z * k.sqrt()).powi(3)
}

#[test]
fn sampler_histogram_fits_grid_masses() {
    let post = map_sigma(&gaussian(200, 0.3, 5), 1.0, 1.0).unwrap();
    let n = 10_000;
    let samples = sample_sigma_posterior(&post, n, 6).unwrap();
    // Group consecutive cells into bins of about 2% expected mass.
    let bins = 50;
    let mut bin_of_cell = vec![0usize; post.masses.len()];
    let mut expected = vec![0.0; bins];
    let mut acc = 0.0;
    for (i, m) in post.masses.iter().enumerate() {
        let b = ((acc + 0.5 * m) * bins as f64).floor().min((bins - 1) as f64) as usize;
        bin_of_cell[i] = b;
        expected[b] += m;
        acc += m;
    }
    let step = post.grid_ratio().ln();
    let mut observed = vec![0usize; bins];
    for s in &samples {
        let cell = ((s / post.grid[0]).ln() / step).round().clamp(0.0, (post.grid.len() - 1) as f64) as usize;
        observed[bin_of_cell[cell]] += 1;
    }
    let chi2: f64 = expected
        .iter()
        .zip(&observed)
        .filter(|(e, _)| **e > 0.0)
        .map(|(e, &o)| {
            let e = e * n as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    let used = expected.iter().filter(|e| **e > 0.0).count() as f64;
    assert!(chi2 < chi2_crit_99(used - 1.0), "χ² = {chi2} over {used} bins");
}

#[test]
fn tight_posterior_samples_concentrate() {
    let post = map_sigma(&gaussian(200_000, 0.4, 9), 1.0, 1.0).unwrap();
    let s = sample_sigma_posterior(&post, 10_000, 1).unwrap();
    let mean = s.iter().sum::<f64>() / s.len() as f64;
    let std = (s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / s.len() as f64).sqrt();
    assert!(std < 0.02 * mean, "{std} vs {mean}");
    assert_eq!(s, sample_sigma_posterior(&post, 10_000, 1).unwrap());
}
