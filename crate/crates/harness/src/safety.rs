use nalgebra::DVector;
use rayon::prelude::*;
use scbf_core::barrier::{worst_case_bound, BarrierChain, BoundInput, SafetyBound, ScalarField};
use scbf_core::noise::derive_seed;
use scbf_core::sde::{simulate_until, Policy, SdeModel};
use scbf_core::Error as CoreError;
use serde::Serialize;

use crate::error::{HarnessError, Result};

const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FlagCounts {
    pub uncontrollable: usize,
    pub infeasible: usize,
    pub level_exit: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialOutcome {
    pub seed: u64,
    pub safe: bool,
    pub exit_time: Option<f64>,
    /// Integration blew up; counted as unsafe.
    pub diverged: bool,
    pub flags: FlagCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SafetyReport {
    pub label: String,
    pub x0: Vec<f64>,
    pub dt: f64,
    pub horizon: f64,
    pub n_steps: usize,
    pub master_seed: u64,
    pub n_trials: usize,
    pub n_safe: usize,
    pub ratio: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub bound: Option<SafetyBound>,
    pub bound_note: Option<String>,
    pub trials: Vec<TrialOutcome>,
}

impl SafetyReport {
    /// `ratio ≥ bound − 2·SE`; `None` without a bound.
    pub fn respects_bound(&self) -> Option<bool> {
        self.bound.as_ref().map(|b| self.ratio >= b.value - 2.0 * self.std_error)
    }

    pub fn ci_contains(&self, p: f64) -> bool {
        self.ci_low <= p && p <= self.ci_high
    }
}

/// Wilson score interval at 95%.
pub fn wilson_interval(successes: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = successes as f64 / n;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = Z95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    // The endpoints at p = 0 and p = 1 are exact; keep rounding out of them.
    let lo = if successes == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if p == 1.0 { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

/// Runs `n_trials` independent closed-loop rollouts of `true_model` under
/// `policy` from `x0`. A trial is safe when `h > 0` at every sampled state
/// up to the horizon; it stops at the first exit.
#[allow(clippy::too_many_arguments)]
pub fn run_safety_trial_batch(
    label: &str,
    true_model: &SdeModel,
    policy: &dyn Policy,
    h: &dyn ScalarField,
    x0: &[f64],
    dt: f64,
    horizon: f64,
    n_trials: usize,
    master_seed: u64,
) -> Result<SafetyReport> {
    if n_trials == 0 {
        return Err(HarnessError::Config("n_trials must be positive".into()));
    }
    if !(dt > 0.0) || !(horizon >= dt) {
        return Err(HarnessError::Config(format!("need dt > 0 and horizon ≥ dt, got {dt}, {horizon}")));
    }
    if x0.len() != true_model.n() {
        return Err(HarnessError::Config(format!("x0 must have {} entries", true_model.n())));
    }
    let h0 = h.value(x0);
    if !(h0 > 0.0) {
        return Err(HarnessError::Config(format!("initial state {x0:?} is not strictly safe: h = {h0}")));
    }
    let n_steps = (horizon / dt).round() as usize;
    let start = DVector::from_column_slice(x0);

    let trials = (0..n_trials)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(master_seed, i as u64);
            let mut exit_step = None;
            let run = simulate_until(true_model, &start, policy, dt, n_steps, seed, |step, x| {
                let unsafe_now = !(h.value(x.as_slice()) > 0.0);
                if unsafe_now {
                    exit_step = Some(step);
                }
                unsafe_now
            });
            match run {
                Ok(traj) => {
                    let mut flags = FlagCounts::default();
                    for f in &traj.flags {
                        flags.uncontrollable += usize::from(f.uncontrollable);
                        flags.infeasible += usize::from(f.infeasible);
                        flags.level_exit += usize::from(f.level_exit);
                    }
                    Ok(TrialOutcome {
                        seed,
                        safe: exit_step.is_none(),
                        exit_time: exit_step.map(|s| (s + 1) as f64 * dt),
                        diverged: false,
                        flags,
                    })
                }
                Err(CoreError::Diverged { step, .. }) => Ok(TrialOutcome {
                    seed,
                    safe: false,
                    exit_time: step.map(|s| (s + 1) as f64 * dt),
                    diverged: true,
                    flags: FlagCounts::default(),
                }),
                Err(e) => Err(HarnessError::from(e)),
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let n_safe = trials.iter().filter(|t| t.safe).count();
    let ratio = n_safe as f64 / n_trials as f64;
    let (ci_low, ci_high) = wilson_interval(n_safe, n_trials);
    Ok(SafetyReport {
        label: label.to_string(),
        x0: x0.to_vec(),
        dt,
        horizon,
        n_steps,
        master_seed,
        n_trials,
        n_safe,
        ratio,
        std_error: (ratio * (1.0 - ratio) / n_trials as f64).sqrt(),
        ci_low,
        ci_high,
        bound: None,
        bound_note: None,
        trials,
    })
}

/// Worst-case bound at `x0` from a chain's level suprema, or the reason it
/// cannot be formed.
pub fn chain_bound(chain: &BarrierChain, x0: &[f64]) -> std::result::Result<SafetyBound, String> {
    let values = chain.values(x0);
    let mut levels = Vec::with_capacity(values.len());
    for (j, (b, sup)) in values.iter().zip(chain.suprema()).enumerate() {
        let sup = sup.as_ref().ok_or_else(|| format!("supremum of level {j} was not estimated"))?;
        if sup.unbounded_suspect {
            return Err(format!(
                "level {j} attains its sampled maximum {:.3e} on the sampling box, so no finite supremum was found",
                sup.value
            ));
        }
        levels.push((*b, sup.value));
    }
    let input = if levels.len() == 1 {
        BoundInput::Scbf {
            h0: levels[0].0,
            c: levels[0].1,
        }
    } else {
        BoundInput::HighOrder { levels }
    };
    worst_case_bound(input).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_is_well_formed() {
        for (k, n) in [(0, 10), (10, 10), (900, 1000), (1, 1)] {
            let (lo, hi) = wilson_interval(k, n);
            let p = k as f64 / n as f64;
            assert!(0.0 <= lo && lo <= p && p <= hi && hi <= 1.0, "{k}/{n}: {lo} {hi}");
        }
        let (lo, hi) = wilson_interval(900, 1000);
        assert!((lo - 0.8797).abs() < 5e-4 && (hi - 0.9170).abs() < 5e-4, "{lo} {hi}");
    }
}
