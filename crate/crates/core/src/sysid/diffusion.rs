//! Diffusion-scale estimation from one-step residuals of a fitted drift.
//!
//! Per channel, with `N` residuals, `S = Σξ²` and an inverse-gamma prior
//! `p(σ) ∝ σ^{-(α+1)} e^{-β/σ}`, the log-posterior used here is
//! `−(N+α) ln σ − S/(2σ²) − β/σ`, maximized at
//! `σ̂ = (β + √(β² + 4(N+α)S)) / (2(N+α))`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::drift::{hex_digest, DriftModel};
use crate::error::{Error, Result};
use crate::noise::{derive_seed, NoiseStream};
use crate::sde::{fmt17, Policy, SdeModel, TransitionSampler};

pub const DEFAULT_GRID_CELLS: usize = 4096;

/// Anything that predicts the deterministic part `f(x)`, `g(x)`.
pub trait DriftPredictor: Sync {
    fn drift_and_gain(&self, x: &[f64]) -> (DVector<f64>, DMatrix<f64>);
    /// Stable identifier recorded with residuals computed against it.
    fn fingerprint(&self) -> String;
}

impl DriftPredictor for DriftModel {
    fn drift_and_gain(&self, x: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let pred = self.predict(x);
        (pred.f, pred.g)
    }
    fn fingerprint(&self) -> String {
        DriftModel::fingerprint(self)
    }
}

impl DriftPredictor for SdeModel {
    fn drift_and_gain(&self, x: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        (self.drift(x), self.control_matrix(x))
    }
    fn fingerprint(&self) -> String {
        hex_digest(format!("model:{}", self.label()).as_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    Raw,
    PerSqrtDt,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualDataset {
    /// One residual series per state channel.
    pub channels: Vec<Vec<f64>>,
    pub dt: f64,
    pub normalization: Normalization,
    /// Fingerprint of the drift model the residuals were computed against.
    pub model_hash: String,
    /// Steps kept per rollout.
    pub rollout_steps: Vec<usize>,
    /// Step at which each truncated rollout diverged.
    pub truncated: Vec<Option<usize>>,
}

impl ResidualDataset {
    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# dt={}", fmt17(self.dt))?;
        let norm = match self.normalization {
            Normalization::Raw => "raw",
            Normalization::PerSqrtDt => "per-sqrt-dt",
        };
        writeln!(w, "# normalization={norm}")?;
        writeln!(w, "# model_hash={}", self.model_hash)?;
        let header: Vec<String> = (1..=self.channels.len()).map(|i| format!("xi{i}")).collect();
        writeln!(w, "{}", header.join(","))?;
        for r in 0..self.len() {
            let row: Vec<String> = self.channels.iter().map(|c| fmt17(c[r])).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Rolls the black box out from each `x0` under `policy` and records
/// `ξ = x_{i+1} − x_i − (f̂(x_i) + ĝ(x_i)u_i)dt`, divided by `√dt` when
/// normalized. A rollout that diverges is cut at the failing step.
#[allow(clippy::too_many_arguments)]
pub fn collect_residuals(
    blackbox: &dyn TransitionSampler,
    drift: &dyn DriftPredictor,
    policy: &dyn Policy,
    x0s: &[DVector<f64>],
    dt: f64,
    n_steps: usize,
    seed: u64,
    normalization: Normalization,
) -> Result<ResidualDataset> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!("dt must be positive, got {dt}")));
    }
    if x0s.is_empty() || n_steps == 0 {
        return Err(Error::Config("residual collection needs initial states and steps".into()));
    }
    let n = blackbox.state_dim();
    if let Some(x) = x0s.iter().find(|x| x.len() != n) {
        return Err(Error::Dimension {
            what: "initial state",
            expected: n,
            got: x.len(),
        });
    }
    let scale = match normalization {
        Normalization::Raw => 1.0,
        Normalization::PerSqrtDt => 1.0 / dt.sqrt(),
    };

    let rollouts = x0s
        .par_iter()
        .enumerate()
        .map(|(r, x0)| {
            let mut noise = NoiseStream::new(derive_seed(seed, r as u64), blackbox.noise_dim());
            let mut x = x0.clone();
            let mut out: Vec<DVector<f64>> = Vec::with_capacity(n_steps);
            let mut cut = None;
            for step in 0..n_steps {
                let u = policy.act(&x)?.u;
                let next = match blackbox.sample_next(&x, &u, dt, &mut noise) {
                    Ok(v) => v,
                    Err(Error::Diverged { .. }) => {
                        cut = Some(step);
                        break;
                    }
                    Err(e) => return Err(e),
                };
                let (f, g) = drift.drift_and_gain(x.as_slice());
                let xi = (&next - &x - (f + g * &u) * dt) * scale;
                if xi.iter().any(|v| !v.is_finite()) {
                    cut = Some(step);
                    break;
                }
                out.push(xi);
                x = next;
            }
            Ok((out, cut))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut channels = vec![Vec::new(); n];
    let mut rollout_steps = Vec::with_capacity(rollouts.len());
    let mut truncated = Vec::with_capacity(rollouts.len());
    for (res, cut) in rollouts {
        rollout_steps.push(res.len());
        truncated.push(cut);
        for xi in res {
            for (c, v) in xi.iter().enumerate() {
                channels[c].push(*v);
            }
        }
    }
    Ok(ResidualDataset {
        channels,
        dt,
        normalization,
        model_hash: drift.fingerprint(),
        rollout_steps,
        truncated,
    })
}

/// Grid posterior over `σ` for one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionPosterior {
    pub alpha: f64,
    pub beta: f64,
    pub n: usize,
    pub sum_sq: f64,
    pub sigma_hat: f64,
    /// Log-spaced over `[σ̂/10, 10σ̂]`.
    pub grid: Vec<f64>,
    /// Probability of each grid cell; sums to one.
    pub masses: Vec<f64>,
}

/// `−(N+α) ln σ − S/(2σ²) − β/σ`.
pub fn log_posterior(n: usize, sum_sq: f64, alpha: f64, beta: f64, sigma: f64) -> f64 {
    -(n as f64 + alpha) * sigma.ln() - sum_sq / (2.0 * sigma * sigma) - beta / sigma
}

/// Closed-form maximizer of [`log_posterior`].
pub fn map_sigma_closed_form(n: usize, sum_sq: f64, alpha: f64, beta: f64) -> f64 {
    let a = n as f64 + alpha;
    (beta + (beta * beta + 4.0 * a * sum_sq).sqrt()) / (2.0 * a)
}

impl DiffusionPosterior {
    pub fn log_posterior(&self, sigma: f64) -> f64 {
        log_posterior(self.n, self.sum_sq, self.alpha, self.beta, sigma)
    }

    /// Grid point with the largest log-posterior.
    pub fn grid_argmax(&self) -> f64 {
        let mut best = (f64::NEG_INFINITY, self.grid[0]);
        for &s in &self.grid {
            let lp = self.log_posterior(s);
            if lp > best.0 {
                best = (lp, s);
            }
        }
        best.1
    }

    /// Ratio between neighbouring grid points.
    pub fn grid_ratio(&self) -> f64 {
        self.grid[1] / self.grid[0]
    }

    /// Edges of cell `i` (geometric midpoints between grid points).
    pub fn cell_edges(&self, i: usize) -> (f64, f64) {
        let half = self.grid_ratio().sqrt();
        (self.grid[i] / half, self.grid[i] * half)
    }

    pub fn mean(&self) -> f64 {
        self.grid.iter().zip(&self.masses).map(|(s, m)| s * m).sum()
    }
}

pub fn map_sigma(residuals: &[f64], alpha: f64, beta: f64) -> Result<DiffusionPosterior> {
    map_sigma_with_grid(residuals, alpha, beta, DEFAULT_GRID_CELLS)
}

pub fn map_sigma_with_grid(residuals: &[f64], alpha: f64, beta: f64, cells: usize) -> Result<DiffusionPosterior> {
    if !(alpha > 0.0) || !(beta > 0.0) {
        return Err(Error::Config(format!("alpha and beta must be positive, got {alpha}, {beta}")));
    }
    if residuals.is_empty() {
        return Err(Error::Config("no residuals to estimate from".into()));
    }
    if cells < 2 {
        return Err(Error::Config("the posterior grid needs at least 2 cells".into()));
    }
    if residuals.iter().any(|v| !v.is_finite()) {
        return Err(Error::Estimation("non-finite residual".into()));
    }
    let n = residuals.len();
    let sum_sq: f64 = residuals.iter().map(|v| v * v).sum();
    let sigma_hat = map_sigma_closed_form(n, sum_sq, alpha, beta);

    let (lo, hi) = ((sigma_hat / 10.0).ln(), (sigma_hat * 10.0).ln());
    let step = (hi - lo) / (cells - 1) as f64;
    let grid: Vec<f64> = (0..cells).map(|i| (lo + step * i as f64).exp()).collect();
    // Cells have equal width in ln σ, so each mass is density × σ.
    let logw: Vec<f64> = grid
        .iter()
        .map(|&s| log_posterior(n, sum_sq, alpha, beta, s) + s.ln())
        .collect();
    let top = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut masses: Vec<f64> = logw.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = masses.iter().sum();
    masses.iter_mut().for_each(|m| *m /= total);

    Ok(DiffusionPosterior {
        alpha,
        beta,
        n,
        sum_sq,
        sigma_hat,
        grid,
        masses,
    })
}

/// One posterior per channel of `data`.
pub fn map_sigma_all(data: &ResidualDataset, alpha: f64, beta: f64) -> Result<Vec<DiffusionPosterior>> {
    data.channels.iter().map(|c| map_sigma(c, alpha, beta)).collect()
}

/// Inverse-CDF draws from the grid posterior, log-uniform within a cell.
pub fn sample_sigma_posterior(post: &DiffusionPosterior, n: usize, seed: u64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::Config("number of posterior samples must be positive".into()));
    }
    let mut cdf = Vec::with_capacity(post.masses.len());
    let mut acc = 0.0;
    for m in &post.masses {
        acc += m;
        cdf.push(acc);
    }
    let mut rng = NoiseStream::new(seed, 1);
    Ok((0..n)
        .map(|_| {
            let u = rng.uniform() * acc;
            let i = cdf.partition_point(|&c| c < u).min(cdf.len() - 1);
            let (a, b) = post.cell_edges(i);
            a * (b / a).powf(rng.uniform())
        })
        .collect())
}

/// Histogram `(left edge, right edge, count)` over `[lo, hi]`.
pub fn histogram(samples: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<(f64, f64, usize)> {
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &s in samples {
        if s >= lo && s <= hi {
            let b = (((s - lo) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(b, c)| (lo + width * b as f64, lo + width * (b + 1) as f64, c))
        .collect()
}
