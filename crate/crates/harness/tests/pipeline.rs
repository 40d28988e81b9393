use std::path::{Path, PathBuf};

use nalgebra::DVector;
use scbf_core::barrier::library;
use scbf_core::benchmarks::example1;
use scbf_core::sde::ConstantPolicy;
use scbf_core::sysid::{BasisSet, BlrPosterior, DriftModel};
use scbf_harness::experiment::{build_policy, run_experiment, Seeds};
use scbf_harness::mse::run_mse_eval;
use scbf_harness::safety::{run_safety_trial_batch, wilson_interval};
use scbf_harness::{ExperimentConfig, HarnessError};

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

/// The Example-1 configuration shrunk to run in a second or two.
fn small_config(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::load(&config_path("example1.toml")).unwrap();
    cfg.output_dir = out.to_path_buf();
    cfg.simulation.n_trials = 40;
    cfg.barrier.n_sup_samples = 5_000;
    cfg.identification.k = 20;
    cfg.identification.probe_rollouts = 3;
    cfg.identification.residual_rollouts = 20;
    cfg.identification.pilot_steps = 500;
    cfg.identification.posterior_samples = 500;
    cfg
}

fn bundle_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_name() != "timing.json")
        .map(|e| {
            let mut bytes = std::fs::read(e.path()).unwrap();
            if e.file_name() == "config.toml" {
                // The resolved config records the output directory.
                let text = String::from_utf8(bytes).unwrap();
                bytes = text.lines().filter(|l| !l.starts_with("output_dir")).collect::<Vec<_>>().join("\n").into_bytes();
            }
            (e.file_name().to_string_lossy().into_owned(), bytes)
        })
        .collect();
    files.sort();
    files
}

#[test]
fn bundle_is_deterministic_apart_from_timing() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_experiment(&small_config(a.path())).unwrap();
    run_experiment(&small_config(b.path())).unwrap();
    let (fa, fb) = (bundle_files(a.path()), bundle_files(b.path()));
    let names: Vec<&str> = fa.iter().map(|(n, _)| n.as_str()).collect();
    for expected in ["summary.json", "safety.csv", "mse.csv", "drift_model.json", "diffusion_posterior.json", "posterior_histogram.csv"] {
        assert!(names.contains(&expected), "missing {expected} in {names:?}");
    }
    assert!(a.path().join("timing.json").exists());
    assert_eq!(fa.len(), fb.len());
    for ((na, ca), (_, cb)) in fa.iter().zip(&fb) {
        assert!(ca == cb, "{na} differs between identical runs");
    }
}

#[test]
fn different_seeds_give_different_bundles() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut cfg = small_config(b.path());
    cfg.seed += 1;
    let sa = run_experiment(&small_config(a.path())).unwrap();
    let sb = run_experiment(&cfg).unwrap();
    assert_ne!(sa.drift_dataset_hash, sb.drift_dataset_hash);
}

#[test]
fn report_renders_every_table() {
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&small_config(dir.path())).unwrap();
    let md = scbf_harness::report::render(dir.path()).unwrap();
    for heading in ["## Drift MSE", "## Diffusion", "## Safety ratio", "## Timing"] {
        assert!(md.contains(heading), "{heading} missing:\n{md}");
    }
    assert!(md.contains("scbf-learned-model") && md.contains("bayesian-scbf-published"));
}

#[test]
fn zero_trials_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.simulation.n_trials = 0;
    assert!(matches!(run_experiment(&cfg), Err(HarnessError::Config(_))));
    assert!(dir.path().join("error.json").exists());

    let model = example1([0.2, 0.2]);
    let h = library::disk_barrier();
    let err = run_safety_trial_batch("x", &model, &ConstantPolicy::zero(1), h.as_ref(), &[0.0, 0.0], 0.01, 1.0, 0, 1);
    assert!(matches!(err, Err(HarnessError::Config(_))));
}

#[test]
fn unsafe_initial_state_is_rejected() {
    let model = example1([0.2, 0.2]);
    let h = library::disk_barrier();
    let err = run_safety_trial_batch("x", &model, &ConstantPolicy::zero(1), h.as_ref(), &[1.0, 0.5], 0.01, 1.0, 10, 1);
    assert!(matches!(err, Err(HarnessError::Config(_))));
}

#[test]
fn noiseless_interior_start_is_always_safe() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.system.sigma = vec![0.0, 0.0];
    let truth = cfg.true_model().unwrap();
    let policy = build_policy(&cfg, &truth, false, Seeds::new(cfg.seed).chain).unwrap();
    let h = library::disk_barrier();
    let rep = run_safety_trial_batch("t", &truth, &policy, h.as_ref(), &[0.0, 0.2], 0.01, 3.0, 50, 9).unwrap();
    assert_eq!(rep.ratio, 1.0);
    assert_eq!(rep.n_safe, 50);
}

#[test]
fn trials_do_not_depend_on_batch_size_or_thread_count() {
    let model = example1([0.3, 0.3]);
    let h = library::disk_barrier();
    let policy = ConstantPolicy::zero(1);
    let run = |n| run_safety_trial_batch("t", &model, &policy, h.as_ref(), &[-0.1, 0.8], 0.01, 2.0, n, 77).unwrap();
    let small = run(30);
    let large = run(90);
    assert_eq!(small.trials[..], large.trials[..30]);
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| run(90));
    assert_eq!(single, large);
    assert!(large.n_safe < 90, "zero control should lose some trials");
}

#[test]
fn wilson_interval_examples() {
    let (lo, hi) = wilson_interval(90, 100);
    assert!((lo - 0.8256).abs() < 1e-4 && (hi - 0.9448).abs() < 1e-4, "{lo} {hi}");
    let (lo, hi) = wilson_interval(0, 50);
    assert_eq!(lo, 0.0);
    assert!(hi > 0.0 && hi < 0.1);
    let (lo, hi) = wilson_interval(50, 50);
    assert_eq!(hi, 1.0);
    assert!(lo > 0.9);
}

fn constant_weights(n: usize, p: usize, basis: &BasisSet, f: &[Vec<f64>], g: &[Vec<f64>]) -> DriftModel {
    let m = basis.len();
    let post = |w: &Vec<f64>| BlrPosterior {
        mean: DVector::from_column_slice(w),
        cov: nalgebra::DMatrix::zeros(m, m),
        prior_cov: nalgebra::DMatrix::identity(m, m),
        noise_var: 0.0,
    };
    DriftModel {
        basis: basis.clone(),
        n,
        p,
        f: f.iter().map(post).collect(),
        g: g.iter().map(post).collect(),
        dataset_hash: String::new(),
    }
}

#[test]
fn mse_examples() {
    // Example 1 in the cubic basis [1, x1, x2, x1², x2², x1x2, x1³, x2³].
    let basis = BasisSet::planar_cubic();
    let f = vec![vec![0.0, -0.6, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0], vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]];
    let g = vec![vec![0.0; 8], vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]];
    let truth = example1([0.2, 0.2]);
    let exact = constant_weights(2, 1, &basis, &f, &g);
    let rep = run_mse_eval(&exact, &truth, &[-1.0, -1.0], &[1.0, 1.0], 100, 3, 100).unwrap();
    assert!(rep.entries.iter().all(|e| e.mse < 1e-28), "{rep:?}");

    let mut shifted = f.clone();
    shifted[0][0] = 0.1;
    let off = constant_weights(2, 1, &basis, &shifted, &g);
    let rep = run_mse_eval(&off, &truth, &[-1.0, -1.0], &[1.0, 1.0], 100, 3, 100).unwrap();
    assert!((rep.get("f1").unwrap() - 0.01).abs() < 1e-15);
    assert!(rep.get("f2").unwrap() < 1e-28);
    assert_eq!(rep.entries.len(), 4);

    assert!(run_mse_eval(&exact, &truth, &[-1.0, -1.0], &[1.0, 1.0], 0, 3, 100).is_err());
}
