use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use scbf_core::barrier::{library, Region, ScalarField};
use scbf_core::benchmarks::{benchmark, AccParams};
use scbf_core::controller::BarrierKind;
use scbf_core::sde::SdeModel;
use scbf_core::sysid::{BasisSet, DriftScheme, Normalization};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// Full experiment description, loaded from TOML. Every omitted field takes
/// the default shown by [`ExperimentConfig::resolved_toml`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub system: SystemConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    pub barrier: BarrierConfig,
    #[serde(default)]
    pub identification: IdentificationConfig,
    #[serde(default)]
    pub controller: ControllerConfig,
    /// Published ratios for methods not run here, copied into reports.
    #[serde(default)]
    pub literature: Vec<LiteratureValue>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub benchmark: String,
    pub sigma: Vec<f64>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub dt: f64,
    pub horizon: f64,
    pub n_trials: usize,
    pub initial_states: Vec<Vec<f64>>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            horizon: 3.0,
            n_trials: 1000,
            initial_states: Vec::new(),
        }
    }
}

impl SimulationConfig {
    pub fn n_steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierConfig {
    /// `disk` or `gap`.
    pub function: String,
    #[serde(default = "one")]
    pub relative_degree: usize,
    /// Box used for probes, suprema and random evaluation points.
    pub region_lo: Vec<f64>,
    pub region_hi: Vec<f64>,
    #[serde(default = "default_sup_samples")]
    pub n_sup_samples: usize,
    #[serde(default = "default_probes")]
    pub n_probes: usize,
    #[serde(default = "default_rd_tol")]
    pub relative_degree_tol: f64,
    /// Looser check for chains on learned dynamics, whose structural zeros
    /// are only approximately zero.
    #[serde(default = "default_learned_rd_tol")]
    pub learned_relative_degree_tol: f64,
}

fn one() -> usize {
    1
}
fn default_sup_samples() -> usize {
    100_000
}
fn default_probes() -> usize {
    100
}
fn default_rd_tol() -> f64 {
    1e-9
}
fn default_learned_rd_tol() -> f64 {
    1e-4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentificationConfig {
    /// Replications per probe and control.
    pub k: usize,
    pub scheme: DriftScheme,
    pub probe_rollouts: usize,
    pub probe_steps: usize,
    /// Box for probe starts and evaluation points; defaults to the barrier box.
    pub probe_lo: Option<Vec<f64>>,
    pub probe_hi: Option<Vec<f64>>,
    pub basis: Vec<String>,
    /// `Σ₀ = prior_var · I`.
    pub prior_var: f64,
    /// Fixed target noise variance; when absent it is derived from a pilot
    /// rollout.
    pub noise_var: Option<f64>,
    pub pilot_steps: usize,
    pub alpha: f64,
    pub beta: f64,
    pub residual_rollouts: usize,
    pub residual_steps: usize,
    /// Constant control applied while collecting residuals.
    pub residual_control: Option<Vec<f64>>,
    pub normalization: Normalization,
    pub posterior_samples: usize,
    pub histogram_bins: usize,
    pub mse_eval_points: usize,
}

impl Default for IdentificationConfig {
    fn default() -> Self {
        Self {
            k: 100,
            scheme: DriftScheme::paired_scalar(0.0, 1.0),
            probe_rollouts: 10,
            probe_steps: 300,
            probe_lo: None,
            probe_hi: None,
            basis: BasisSet::planar_cubic().names(),
            prior_var: 10.0,
            noise_var: None,
            pilot_steps: 2000,
            alpha: 1.0,
            beta: 1.0,
            residual_rollouts: 100,
            residual_steps: 300,
            residual_control: None,
            normalization: Normalization::PerSqrtDt,
            posterior_samples: 10_000,
            histogram_bins: 60,
            mse_eval_points: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub barrier: BarrierKind,
    pub clf: Option<ClfSettings>,
    pub bounds: Option<BoundsConfig>,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            barrier: BarrierKind::Scbf,
            clf: None,
            bounds: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClfSettings {
    /// Only `speed` is available.
    #[serde(default = "default_lyapunov")]
    pub function: String,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_slack_weight")]
    pub slack_weight: f64,
}

fn default_lyapunov() -> String {
    "speed".into()
}
fn default_gamma() -> f64 {
    1.0
}
fn default_slack_weight() -> f64 {
    1e3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiteratureValue {
    pub method: String,
    pub x0: Vec<f64>,
    pub ratio: f64,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// The configuration with every default filled in.
    pub fn resolved_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of [`Self::resolved_toml`] with the output directory blanked,
    /// so relocating a run does not change its identity.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut anon = self.clone();
        anon.output_dir = PathBuf::new();
        Sha256::digest(anon.resolved_toml().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        let sim = &self.simulation;
        if !(sim.dt > 0.0) || !(sim.horizon >= sim.dt) {
            return bad(format!("need dt > 0 and horizon ≥ dt, got dt={} horizon={}", sim.dt, sim.horizon));
        }
        if sim.n_trials == 0 {
            return bad("n_trials must be positive".into());
        }
        let model = self.true_model()?;
        let n = model.n();
        if sim.initial_states.iter().any(|x| x.len() != n) {
            return bad(format!("initial states must have {n} entries"));
        }
        let b = &self.barrier;
        if b.region_lo.len() != n || b.region_hi.len() != n {
            return bad(format!("barrier region must have {n} entries per bound"));
        }
        if b.relative_degree == 0 {
            return bad("relative_degree must be at least 1".into());
        }
        self.barrier_field()?;
        let id = &self.identification;
        if id.k == 0 || id.probe_rollouts == 0 || id.probe_steps == 0 {
            return bad("k, probe_rollouts and probe_steps must be positive".into());
        }
        if !(id.alpha > 0.0) || !(id.beta > 0.0) {
            return bad("alpha and beta must be positive".into());
        }
        if !(id.prior_var > 0.0) {
            return bad("prior_var must be positive".into());
        }
        if id.residual_rollouts == 0 || id.residual_steps == 0 || id.posterior_samples == 0 {
            return bad("residual_rollouts, residual_steps and posterior_samples must be positive".into());
        }
        if id.mse_eval_points == 0 || id.histogram_bins == 0 {
            return bad("mse_eval_points and histogram_bins must be positive".into());
        }
        if id.noise_var.is_none() && id.pilot_steps < 3 {
            return bad("pilot_steps must be at least 3 when noise_var is not given".into());
        }
        self.basis()?;
        let (lo, hi) = self.probe_box();
        if lo.len() != n || hi.len() != n {
            return bad(format!("probe box must have {n} entries per bound"));
        }
        if let Some(c) = &self.controller.clf {
            if c.function != "speed" {
                return bad(format!("unknown Lyapunov function `{}`", c.function));
            }
            if self.system.benchmark != "acc" {
                return bad("the speed Lyapunov function needs the acc benchmark".into());
            }
        }
        if let Some(bounds) = &self.controller.bounds {
            if bounds.lo.len() != model.p() || bounds.hi.len() != model.p() {
                return bad(format!("control bounds must have {} entries", model.p()));
            }
        }
        Ok(())
    }

    pub fn true_model(&self) -> Result<SdeModel> {
        Ok(benchmark(&self.system.benchmark, &self.system.sigma, &self.system.params)?)
    }

    pub fn acc_params(&self) -> Result<AccParams> {
        let mut p = AccParams::default();
        p.apply(&self.system.params)?;
        Ok(p)
    }

    pub fn barrier_field(&self) -> Result<Arc<dyn ScalarField>> {
        match self.barrier.function.as_str() {
            "disk" => Ok(library::disk_barrier()),
            "gap" => Ok(library::gap_barrier(&self.acc_params()?)),
            other => Err(HarnessError::Config(format!("unknown barrier function `{other}` (disk, gap)"))),
        }
    }

    pub fn lyapunov_field(&self) -> Result<Option<Arc<dyn ScalarField>>> {
        match &self.controller.clf {
            None => Ok(None),
            Some(_) => Ok(Some(library::speed_lyapunov(&self.acc_params()?))),
        }
    }

    pub fn region(&self) -> Result<Region> {
        Ok(Region::boxed(self.barrier.region_lo.clone(), self.barrier.region_hi.clone())?)
    }

    pub fn probe_box(&self) -> (Vec<f64>, Vec<f64>) {
        let id = &self.identification;
        (
            id.probe_lo.clone().unwrap_or_else(|| self.barrier.region_lo.clone()),
            id.probe_hi.clone().unwrap_or_else(|| self.barrier.region_hi.clone()),
        )
    }

    pub fn basis(&self) -> Result<BasisSet> {
        let n = self.system.sigma.len().max(self.barrier.region_lo.len());
        Ok(BasisSet::parse(n, &self.identification.basis)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "t"
[system]
benchmark = "example1"
sigma = [0.2, 0.2]
[barrier]
function = "disk"
region_lo = [-1.0, -1.0]
region_hi = [1.0, 1.0]
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.simulation.n_steps(), 300);
        assert_eq!(cfg.identification.k, 100);
        let again = ExperimentConfig::from_toml_str(&cfg.resolved_toml()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.hash(), cfg.hash());
    }

    #[test]
    fn rejects_unknown_keys_and_zero_trials() {
        let extra = format!("{MINIMAL}\n[simulation]\nbogus = 1\n");
        assert!(ExperimentConfig::from_toml_str(&extra).is_err());
        let zero = format!("{MINIMAL}\n[simulation]\nn_trials = 0\n");
        assert!(matches!(ExperimentConfig::from_toml_str(&zero), Err(HarnessError::Config(_))));
    }
}
