use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;
use scbf_core::barrier::{build_chain, BarrierChain, ChainOptions, ChainReport};
use scbf_core::controller::{ClfConfig, SafePolicy};
use scbf_core::noise::{derive_seed, NoiseStream};
use scbf_core::sde::{ConstantPolicy, SdeModel, TransitionSampler};
use scbf_core::sysid::{
    collect_residuals, histogram, identify_drift, map_sigma_all, pilot_sigma, sample_sigma_posterior,
    DiffusionPosterior, DriftDataset, DriftFitOptions, DriftModel, ResidualDataset,
};
use scbf_core::Error as CoreError;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::io::{write_atomic, write_json, write_with};
use crate::mse::{run_mse_eval, MseReport};
use crate::safety::{chain_bound, run_safety_trial_batch, SafetyReport};

/// Sub-seeds derived from the master seed, one per phase.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Seeds {
    pub master: u64,
    pub probes: u64,
    pub drift: u64,
    pub pilot: u64,
    pub residuals: u64,
    pub posterior: u64,
    pub mse: u64,
    pub chain: u64,
    pub trials_true: u64,
    pub trials_learned: u64,
}

impl Seeds {
    pub fn new(master: u64) -> Self {
        let s = |tag| derive_seed(master, tag);
        Self {
            master,
            probes: s(1),
            drift: s(2),
            pilot: s(3),
            residuals: s(4),
            posterior: s(5),
            mse: s(6),
            chain: s(7),
            trials_true: s(8),
            trials_learned: s(9),
        }
    }
}

/// Uniform starts in the probe box, each rolled out under zero control; every
/// visited state becomes a probe.
pub fn collect_probes(cfg: &ExperimentConfig, blackbox: &dyn TransitionSampler, seed: u64) -> Result<Vec<DVector<f64>>> {
    let id = &cfg.identification;
    let (lo, hi) = cfg.probe_box();
    let dt = cfg.simulation.dt;
    let zero = DVector::zeros(blackbox.control_dim());
    let mut probes = Vec::with_capacity(id.probe_rollouts * id.probe_steps);
    for r in 0..id.probe_rollouts {
        let mut noise = NoiseStream::new(derive_seed(seed, r as u64), blackbox.noise_dim());
        let mut x = DVector::from_iterator(lo.len(), lo.iter().zip(&hi).map(|(&l, &h)| noise.uniform_in(l, h)));
        for _ in 0..id.probe_steps {
            probes.push(x.clone());
            x = match blackbox.sample_next(&x, &zero, dt, &mut noise) {
                Ok(next) => next,
                Err(CoreError::Diverged { .. }) => break,
                Err(e) => return Err(e.into()),
            };
        }
    }
    Ok(probes)
}

#[derive(Debug, Clone)]
pub struct DriftPhase {
    pub model: DriftModel,
    pub dataset: DriftDataset,
    pub options: DriftFitOptions,
    /// Diffusion scale estimated from the pilot rollout, when used.
    pub pilot_sigma: Option<Vec<f64>>,
}

pub fn drift_phase(cfg: &ExperimentConfig, blackbox: &dyn TransitionSampler, seeds: &Seeds) -> Result<DriftPhase> {
    let id = &cfg.identification;
    let basis = cfg.basis()?;
    let probes = collect_probes(cfg, blackbox, seeds.probes)?;
    let (n, p) = (blackbox.state_dim(), blackbox.control_dim());
    let (options, pilot) = match id.noise_var {
        Some(v) => (DriftFitOptions::uniform(n, p, id.prior_var, v), None),
        None => {
            let (lo, hi) = cfg.probe_box();
            let centre = DVector::from_iterator(n, lo.iter().zip(&hi).map(|(l, h)| 0.5 * (l + h)));
            let u = DVector::from_column_slice(&residual_control(cfg, p));
            let sigma = pilot_sigma(blackbox, &centre, &u, cfg.simulation.dt, id.pilot_steps, seeds.pilot)?;
            (
                DriftFitOptions::from_sigma(&id.scheme, &sigma, id.k, cfg.simulation.dt, id.prior_var),
                Some(sigma),
            )
        }
    };
    let (model, dataset) = identify_drift(
        blackbox,
        &probes,
        &id.scheme,
        id.k,
        cfg.simulation.dt,
        &basis,
        &options,
        seeds.drift,
    )?;
    Ok(DriftPhase {
        model,
        dataset,
        options,
        pilot_sigma: pilot,
    })
}

fn residual_control(cfg: &ExperimentConfig, p: usize) -> Vec<f64> {
    cfg.identification.residual_control.clone().unwrap_or_else(|| vec![0.0; p])
}

/// Residual starts drawn uniformly from the probe box.
pub fn residual_starts(cfg: &ExperimentConfig, seed: u64) -> Vec<DVector<f64>> {
    let (lo, hi) = cfg.probe_box();
    let mut rng = NoiseStream::new(seed, 0);
    (0..cfg.identification.residual_rollouts)
        .map(|_| DVector::from_iterator(lo.len(), lo.iter().zip(&hi).map(|(&l, &h)| rng.uniform_in(l, h))))
        .collect()
}

#[derive(Debug, Clone)]
pub struct DiffusionPhase {
    pub residuals: ResidualDataset,
    pub posteriors: Vec<DiffusionPosterior>,
}

impl DiffusionPhase {
    pub fn sigma_hat(&self) -> Vec<f64> {
        self.posteriors.iter().map(|p| p.sigma_hat).collect()
    }
}

pub fn diffusion_phase(
    cfg: &ExperimentConfig,
    blackbox: &dyn TransitionSampler,
    drift: &DriftModel,
    seeds: &Seeds,
) -> Result<DiffusionPhase> {
    let id = &cfg.identification;
    let starts = residual_starts(cfg, derive_seed(seeds.residuals, 0));
    let policy = ConstantPolicy(DVector::from_column_slice(&residual_control(cfg, blackbox.control_dim())));
    let residuals = collect_residuals(
        blackbox,
        drift,
        &policy,
        &starts,
        cfg.simulation.dt,
        id.residual_steps,
        derive_seed(seeds.residuals, 1),
        id.normalization,
    )?;
    let posteriors = map_sigma_all(&residuals, id.alpha, id.beta)?;
    Ok(DiffusionPhase { residuals, posteriors })
}

/// Chain and safety filter for `model`. Learned models use the looser
/// relative-degree tolerance and skip supremum estimation.
pub fn build_policy(cfg: &ExperimentConfig, model: &SdeModel, learned: bool, seed: u64) -> Result<SafePolicy> {
    let mut opts = ChainOptions::new(cfg.region()?);
    opts.seed = seed;
    opts.n_probes = cfg.barrier.n_probes;
    opts.n_sup_samples = cfg.barrier.n_sup_samples;
    opts.relative_degree_tol = if learned {
        cfg.barrier.learned_relative_degree_tol
    } else {
        cfg.barrier.relative_degree_tol
    };
    opts.estimate_suprema = !learned;
    let chain = build_chain(model, cfg.barrier_field()?, cfg.barrier.relative_degree, &opts)?;
    let mut policy = SafePolicy::new(Arc::new(chain)).with_kind(cfg.controller.barrier);
    if let (Some(settings), Some(v)) = (&cfg.controller.clf, cfg.lyapunov_field()?) {
        policy = policy.with_clf(ClfConfig {
            v,
            gamma: settings.gamma,
            slack_weight: settings.slack_weight,
        });
    }
    if let Some(b) = &cfg.controller.bounds {
        policy = policy.with_bounds(DVector::from_column_slice(&b.lo), DVector::from_column_slice(&b.hi));
    }
    Ok(policy)
}

#[derive(Debug, Clone, Serialize)]
pub struct PhaseTiming {
    pub phase: String,
    pub seconds: f64,
}

#[derive(Debug, Default)]
struct Timer {
    phases: Vec<PhaseTiming>,
}

impl Timer {
    fn run<T>(&mut self, phase: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f().map_err(|e| HarnessError::in_phase(phase, e));
        self.phases.push(PhaseTiming {
            phase: phase.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
        out
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DiffusionSummary {
    pub channel: usize,
    pub sigma_true: f64,
    pub sigma_hat: f64,
    pub relative_error: f64,
    pub grid_argmax: f64,
    pub posterior_mean: f64,
    pub n_residuals: usize,
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentSummary {
    pub name: String,
    pub config_hash: String,
    pub seeds: Seeds,
    pub drift_dataset_hash: String,
    pub drift_model_hash: String,
    pub residual_model_hash: String,
    pub pilot_sigma: Option<Vec<f64>>,
    pub mse: MseReport,
    pub diffusion: Vec<DiffusionSummary>,
    pub truncated_residual_rollouts: usize,
    pub chain_true: ChainReport,
    pub safety: Vec<SafetyRow>,
}

/// One row of the safety table.
#[derive(Debug, Clone, Serialize)]
pub struct SafetyRow {
    pub x0: Vec<f64>,
    pub method: String,
    pub ratio: f64,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub n_trials: Option<usize>,
    pub source: &'static str,
}

/// Learning, evaluation and safety verification in one go; writes the bundle
/// under `cfg.output_dir`. On failure an `error.json` is written beside the
/// artifacts produced so far.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSummary> {
    let out = cfg.output_dir.clone();
    std::fs::create_dir_all(&out).map_err(|e| HarnessError::io(&out, e))?;
    let result = run_inner(cfg, &out);
    if let Err(e) = &result {
        let _ = write_json(&out.join("error.json"), &e.report());
    } else {
        let _ = std::fs::remove_file(out.join("error.json"));
    }
    result
}

fn run_inner(cfg: &ExperimentConfig, out: &Path) -> Result<ExperimentSummary> {
    cfg.validate()?;
    write_atomic(&out.join("config.toml"), cfg.resolved_toml().as_bytes())?;
    let seeds = Seeds::new(cfg.seed);
    let truth = cfg.true_model()?;
    let id = &cfg.identification;
    let mut timer = Timer::default();

    let drift = timer.run("drift-identification", || drift_phase(cfg, &truth, &seeds))?;
    write_with(&out.join("drift_dataset.csv"), |w| drift.dataset.write_csv(w))?;
    write_json(&out.join("drift_model.json"), &drift.model.to_json())?;

    let diffusion = timer.run("diffusion-identification", || diffusion_phase(cfg, &truth, &drift.model, &seeds))?;
    write_with(&out.join("residuals.csv"), |w| diffusion.residuals.write_csv(w))?;
    write_json(&out.join("diffusion_posterior.json"), &diffusion.posteriors)?;

    let samples = timer.run("posterior-sampling", || {
        diffusion
            .posteriors
            .iter()
            .enumerate()
            .map(|(c, post)| Ok(sample_sigma_posterior(post, id.posterior_samples, derive_seed(seeds.posterior, c as u64))?))
            .collect::<Result<Vec<_>>>()
    })?;
    write_posterior_samples(out, &samples, id.histogram_bins)?;

    let sigma_hat = diffusion.sigma_hat();
    let learned = drift.model.to_sde(&sigma_hat)?;
    let (lo, hi) = cfg.probe_box();
    let mse = run_mse_eval(&drift.model, &truth, &lo, &hi, id.mse_eval_points, seeds.mse, id.k)?;
    write_with(&out.join("mse.csv"), |w| {
        writeln!(w, "function,k,mse,std_error")?;
        for e in &mse.entries {
            writeln!(w, "{},{},{:.6e},{:.6e}", e.function, mse.k, e.mse, e.std_error)?;
        }
        Ok(())
    })?;

    let true_policy = timer.run("chain-true", || build_policy(cfg, &truth, false, seeds.chain))?;
    let learned_policy = timer.run("chain-learned", || build_policy(cfg, &learned, true, seeds.chain))?;
    let chain_true: &BarrierChain = true_policy.chain();
    write_json(&out.join("chain_true.json"), &chain_true.report())?;

    let h = cfg.barrier_field()?;
    let sim = &cfg.simulation;
    let mut reports: Vec<SafetyReport> = Vec::new();
    let mut rows = Vec::new();
    for (i, x0) in sim.initial_states.iter().enumerate() {
        let bound = chain_bound(chain_true, x0);
        for (label, policy, seed) in [
            ("scbf-true-model", &true_policy, seeds.trials_true),
            ("scbf-learned-model", &learned_policy, seeds.trials_learned),
        ] {
            let mut rep = timer.run(&format!("trials-{label}-{i}"), || {
                run_safety_trial_batch(label, &truth, policy, h.as_ref(), x0, sim.dt, sim.horizon, sim.n_trials, derive_seed(seed, i as u64))
            })?;
            match &bound {
                Ok(b) => rep.bound = Some(b.clone()),
                Err(note) => rep.bound_note = Some(note.clone()),
            }
            rows.push(SafetyRow {
                x0: x0.clone(),
                method: label.to_string(),
                ratio: rep.ratio,
                ci_low: Some(rep.ci_low),
                ci_high: Some(rep.ci_high),
                n_trials: Some(rep.n_trials),
                source: "simulated",
            });
            reports.push(rep);
        }
        if let Ok(b) = &bound {
            rows.push(SafetyRow {
                x0: x0.clone(),
                method: "worst-case-bound".into(),
                ratio: b.value,
                ci_low: None,
                ci_high: None,
                n_trials: None,
                source: "analytical",
            });
        }
        for lit in cfg.literature.iter().filter(|l| &l.x0 == x0) {
            rows.push(SafetyRow {
                x0: x0.clone(),
                method: lit.method.clone(),
                ratio: lit.ratio,
                ci_low: None,
                ci_high: None,
                n_trials: None,
                source: "literature",
            });
        }
    }
    write_json(&out.join("safety_report.json"), &reports)?;
    write_with(&out.join("safety.csv"), |w| {
        writeln!(w, "x0,method,ratio,ci_low,ci_high,n_trials,source")?;
        for r in &rows {
            let opt = |v: Option<f64>| v.map(|v| format!("{v:.4}")).unwrap_or_default();
            let x0: Vec<String> = r.x0.iter().map(|v| v.to_string()).collect();
            writeln!(
                w,
                "\"({})\",{},{:.4},{},{},{},{}",
                x0.join(", "),
                r.method,
                r.ratio,
                opt(r.ci_low),
                opt(r.ci_high),
                r.n_trials.map(|n| n.to_string()).unwrap_or_default(),
                r.source
            )?;
        }
        Ok(())
    })?;

    let diffusion_summary: Vec<DiffusionSummary> = diffusion
        .posteriors
        .iter()
        .enumerate()
        .map(|(c, post)| {
            let truth_c = cfg.system.sigma.get(c).copied().unwrap_or(f64::NAN);
            DiffusionSummary {
                channel: c + 1,
                sigma_true: truth_c,
                sigma_hat: post.sigma_hat,
                relative_error: (post.sigma_hat - truth_c) / truth_c,
                grid_argmax: post.grid_argmax(),
                posterior_mean: post.mean(),
                n_residuals: post.n,
                alpha: post.alpha,
                beta: post.beta,
            }
        })
        .collect();

    let learning_seconds: f64 = timer
        .phases
        .iter()
        .filter(|p| p.phase.ends_with("identification"))
        .map(|p| p.seconds)
        .sum();
    write_json(
        &out.join("timing.json"),
        &serde_json::json!({ "learning_seconds": learning_seconds, "phases": timer.phases }),
    )?;

    let summary = ExperimentSummary {
        name: cfg.name.clone(),
        config_hash: cfg.hash(),
        seeds,
        drift_dataset_hash: drift.model.dataset_hash.clone(),
        drift_model_hash: drift.model.fingerprint(),
        residual_model_hash: diffusion.residuals.model_hash.clone(),
        pilot_sigma: drift.pilot_sigma.clone(),
        mse,
        diffusion: diffusion_summary,
        truncated_residual_rollouts: diffusion.residuals.truncated.iter().filter(|t| t.is_some()).count(),
        chain_true: chain_true.report(),
        safety: rows,
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}


pub fn write_posterior_samples(out: &Path, samples: &[Vec<f64>], bins: usize) -> Result<()> {
    write_with(&out.join("posterior_samples.csv"), |w| {
        let header: Vec<String> = (1..=samples.len()).map(|c| format!("sigma{c}")).collect();
        writeln!(w, "{}", header.join(","))?;
        for i in 0..samples[0].len() {
            let row: Vec<String> = samples.iter().map(|s| format!("{:.10e}", s[i])).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    })?;
    write_with(&out.join("posterior_histogram.csv"), |w| {
        writeln!(w, "channel,bin_lo,bin_hi,count,density")?;
        for (c, s) in samples.iter().enumerate() {
            let lo = s.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let hi = if hi > lo { hi } else { lo + 1e-12 };
            for (a, b, count) in histogram(s, lo, hi, bins) {
                let density = count as f64 / (s.len() as f64 * (b - a));
                writeln!(w, "{},{:.10e},{:.10e},{},{:.10e}", c + 1, a, b, count, density)?;
            }
        }
        Ok(())
    })
}
