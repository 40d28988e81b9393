use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use scbf_core::noise::derive_seed;
use scbf_core::sde::{simulate, ConstantPolicy, Policy, SdeModel};
use scbf_core::sysid::{
    fit_drift, sample_sigma_posterior, DiffusionPosterior, DriftDataset, DriftFitOptions, DriftModel,
    FittedDriftJson,
};
use scbf_harness::experiment::{
    build_policy, collect_probes, diffusion_phase, run_experiment, write_posterior_samples, Seeds,
};
use scbf_harness::io::{read_json, write_json, write_with};
use scbf_harness::safety::{chain_bound, run_safety_trial_batch};
use scbf_harness::{ExperimentConfig, HarnessError, Result};

#[derive(Parser)]
#[command(name = "scbf", version, about = "Learn stochastic dynamics, filter controls through barrier QPs, verify safety")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyChoice {
    Zero,
    True,
    Learned,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one closed-loop trajectory and write it as CSV.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Option<Vec<f64>>,
        #[arg(long, value_enum, default_value = "true")]
        policy: PolicyChoice,
        /// Fitted drift model, for `--policy learned`.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Diffusion posterior JSON, for `--policy learned`.
        #[arg(long)]
        diffusion: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        /// Also write the per-step QP trace here.
        #[arg(long)]
        qp_trace: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Collect drift regression targets from the benchmark.
    CollectDrift {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the drift posterior to a collected dataset.
    FitDrift {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Collect residuals against a fitted drift and estimate the diffusion.
    FitDiffusion {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte Carlo safety verification at the configured initial states.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Use a learned model instead of the true one.
        #[arg(long, requires = "diffusion")]
        model: Option<PathBuf>,
        #[arg(long)]
        diffusion: Option<PathBuf>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full pipeline and write the report bundle.
    Experiment {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trials: Option<usize>,
        /// Output directory; overrides the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render the tables of a finished bundle as Markdown.
    Report {
        /// Bundle directory.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Ok(json) = serde_json::to_string(&e.report()) {
                eprintln!("{json}");
            }
            ExitCode::FAILURE
        }
    }
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn load_learned(model: &Path, diffusion: &Path) -> Result<(DriftModel, SdeModel)> {
    let json: FittedDriftJson = read_json(model)?;
    let drift = DriftModel::from_json(&json)?;
    let posts: Vec<DiffusionPosterior> = read_json(diffusion)?;
    let sigma: Vec<f64> = posts.iter().map(|p| p.sigma_hat).collect();
    let sde = drift.to_sde(&sigma)?;
    Ok((drift, sde))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate {
            common,
            x0,
            policy,
            model,
            diffusion,
            steps,
            qp_trace,
            out,
        } => {
            let cfg = load(&common)?;
            let truth = cfg.true_model()?;
            let x0 = x0
                .or_else(|| cfg.simulation.initial_states.first().cloned())
                .ok_or_else(|| HarnessError::Config("no --x0 given and no initial state configured".into()))?;
            let x0 = DVector::from_vec(x0);
            let seeds = Seeds::new(cfg.seed);
            let safe = match policy {
                PolicyChoice::Zero => None,
                PolicyChoice::True => Some(build_policy(&cfg, &truth, false, seeds.chain)?),
                PolicyChoice::Learned => {
                    let (Some(m), Some(d)) = (model, diffusion) else {
                        return Err(HarnessError::Config("--policy learned needs --model and --diffusion".into()));
                    };
                    let (_, sde) = load_learned(&m, &d)?;
                    Some(build_policy(&cfg, &sde, true, seeds.chain)?)
                }
            };
            let zero = ConstantPolicy::zero(truth.p());
            let pol: &dyn Policy = match &safe {
                Some(p) => p,
                None => &zero,
            };
            let n_steps = steps.unwrap_or_else(|| cfg.simulation.n_steps());
            let traj = simulate(&truth, &x0, pol, cfg.simulation.dt, n_steps, cfg.seed)?;
            write_with(&out, |w| traj.write_csv(w))?;
            if let (Some(path), Some(p)) = (qp_trace, &safe) {
                let mut buf = Vec::new();
                p.write_qp_trace(&traj, &mut buf)?;
                scbf_harness::io::write_atomic(&path, &buf)?;
            }
            println!("wrote {} steps to {}", traj.len(), out.display());
        }
        Command::CollectDrift { common, out } => {
            let cfg = load(&common)?;
            let truth = cfg.true_model()?;
            let seeds = Seeds::new(cfg.seed);
            let id = &cfg.identification;
            let probes = collect_probes(&cfg, &truth, seeds.probes)?;
            let data = match &id.scheme {
                scbf_core::sysid::DriftScheme::Paired { u1, u2 } => scbf_core::sysid::collect_drift_data(
                    &truth,
                    &probes,
                    u1,
                    u2,
                    id.k,
                    cfg.simulation.dt,
                    seeds.drift,
                )?,
                scbf_core::sysid::DriftScheme::Sequential { .. } => {
                    return Err(HarnessError::Config(
                        "the sequential scheme fits between its two stages; use `experiment`".into(),
                    ))
                }
            };
            write_with(&out, |w| data.write_csv(w))?;
            println!("wrote {} probes to {}", data.len(), out.display());
        }
        Command::FitDrift { common, data, out } => {
            let cfg = load(&common)?;
            let file = std::fs::File::open(&data).map_err(|e| HarnessError::io(&data, e))?;
            let dataset = DriftDataset::read_csv(std::io::BufReader::new(file))?;
            let id = &cfg.identification;
            let (n, p) = (dataset.n(), dataset.p());
            let opts = match id.noise_var {
                Some(v) => DriftFitOptions::uniform(n, p, id.prior_var, v),
                None => {
                    let truth = cfg.true_model()?;
                    let (lo, hi) = cfg.probe_box();
                    let centre = DVector::from_iterator(n, lo.iter().zip(&hi).map(|(l, h)| 0.5 * (l + h)));
                    let sigma = scbf_core::sysid::pilot_sigma(
                        &truth,
                        &centre,
                        &DVector::zeros(p),
                        dataset.dt,
                        id.pilot_steps,
                        Seeds::new(cfg.seed).pilot,
                    )?;
                    DriftFitOptions::from_sigma(&dataset.scheme, &sigma, dataset.k, dataset.dt, id.prior_var)
                }
            };
            let model = fit_drift(&dataset, &cfg.basis()?, &opts)?;
            write_json(&out, &model.to_json())?;
            println!("wrote fitted drift to {}", out.display());
        }
        Command::FitDiffusion { common, model, out } => {
            let cfg = load(&common)?;
            let truth = cfg.true_model()?;
            let json: FittedDriftJson = read_json(&model)?;
            let drift = DriftModel::from_json(&json)?;
            let seeds = Seeds::new(cfg.seed);
            let phase = diffusion_phase(&cfg, &truth, &drift, &seeds)?;
            write_with(&out.join("residuals.csv"), |w| phase.residuals.write_csv(w))?;
            write_json(&out.join("diffusion_posterior.json"), &phase.posteriors)?;
            let samples = phase
                .posteriors
                .iter()
                .enumerate()
                .map(|(c, p)| sample_sigma_posterior(p, cfg.identification.posterior_samples, derive_seed(seeds.posterior, c as u64)))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            write_posterior_samples(&out, &samples, cfg.identification.histogram_bins)?;
            for (c, p) in phase.posteriors.iter().enumerate() {
                println!("sigma{} = {:.6} (from {} residuals)", c + 1, p.sigma_hat, p.n);
            }
        }
        Command::Verify {
            common,
            model,
            diffusion,
            trials,
            out,
        } => {
            let mut cfg = load(&common)?;
            if let Some(t) = trials {
                cfg.simulation.n_trials = t;
            }
            cfg.validate()?;
            let truth = cfg.true_model()?;
            let seeds = Seeds::new(cfg.seed);
            let true_policy = build_policy(&cfg, &truth, false, seeds.chain)?;
            let (label, policy, seed) = match (model, diffusion) {
                (Some(m), Some(d)) => {
                    let (_, sde) = load_learned(&m, &d)?;
                    ("scbf-learned-model", build_policy(&cfg, &sde, true, seeds.chain)?, seeds.trials_learned)
                }
                _ => ("scbf-true-model", true_policy.clone(), seeds.trials_true),
            };
            let h = cfg.barrier_field()?;
            let sim = &cfg.simulation;
            let mut reports = Vec::new();
            for (i, x0) in sim.initial_states.iter().enumerate() {
                let mut rep = run_safety_trial_batch(
                    label,
                    &truth,
                    &policy,
                    h.as_ref(),
                    x0,
                    sim.dt,
                    sim.horizon,
                    sim.n_trials,
                    derive_seed(seed, i as u64),
                )?;
                match chain_bound(true_policy.chain(), x0) {
                    Ok(b) => rep.bound = Some(b),
                    Err(note) => rep.bound_note = Some(note),
                }
                println!(
                    "{label} x0={:?}: {}/{} safe, ratio {:.3} (95% CI {:.3}-{:.3}), bound {}",
                    x0,
                    rep.n_safe,
                    rep.n_trials,
                    rep.ratio,
                    rep.ci_low,
                    rep.ci_high,
                    rep.bound.as_ref().map(|b| format!("{:.3}", b.value)).unwrap_or_else(|| "n/a".into())
                );
                reports.push(rep);
            }
            write_json(&out, &reports)?;
        }
        Command::Experiment { common, trials, out } => {
            let mut cfg = load(&common)?;
            if let Some(t) = trials {
                cfg.simulation.n_trials = t;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            let summary = run_experiment(&cfg)?;
            print!("{}", scbf_harness::report::render(&cfg.output_dir)?);
            eprintln!("bundle written to {} (config {})", cfg.output_dir.display(), &summary.config_hash[..12]);
        }
        Command::Report { out } => {
            let text = scbf_harness::report::render(&out)?;
            scbf_harness::io::write_atomic(&out.join("report.md"), text.as_bytes())?;
            print!("{text}");
        }
    }
    Ok(())
}
