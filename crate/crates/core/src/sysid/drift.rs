//! Drift identification from replicated one-step increments.
//!
//! At each probe the black box is stepped `K` times from the same state under
//! each control of a small design; the mean increments are then combined so
//! that `f` and every column of `g` appear alone.

use std::io::{BufRead, Write};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::basis::BasisSet;
use super::blr::{fit_blr, BlrPosterior};
use crate::error::{Error, Result};
use crate::jet::Scalar;
use crate::noise::{derive_seed, NoiseStream};
use crate::sde::{diagonal_field, fmt17, SdeModel, TransitionSampler, VectorExpr};

const MIN_GAP: f64 = 1e-9;

/// How controls are chosen at each probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DriftScheme {
    /// Base control `u1`; for column `k` a second run with `u1` whose `k`-th
    /// entry is replaced by `u2[k]`. With one input this is the two-control
    /// elimination `y_f = (dx₁u₂ − dx₂u₁)/((u₂−u₁)dt)`,
    /// `y_g = (dx₁−dx₂)/((u₁−u₂)dt)`.
    Paired { u1: Vec<f64>, u2: Vec<f64> },
    /// `f` from runs at `u = 0`, then column `k` of `g` from runs at
    /// `u_g[k]·e_k` with the fitted `f̂` subtracted.
    Sequential { u_g: Vec<f64> },
}

impl DriftScheme {
    pub fn paired_scalar(u1: f64, u2: f64) -> Self {
        Self::Paired {
            u1: vec![u1],
            u2: vec![u2],
        }
    }

    fn validate(&self, p: usize) -> Result<()> {
        match self {
            Self::Paired { u1, u2 } => {
                for (what, v) in [("u1", u1), ("u2", u2)] {
                    if v.len() != p {
                        return Err(Error::Dimension {
                            what: if what == "u1" { "control u1" } else { "control u2" },
                            expected: p,
                            got: v.len(),
                        });
                    }
                }
                for k in 0..p {
                    let gap = (u2[k] - u1[k]).abs();
                    if !(gap >= MIN_GAP) {
                        return Err(Error::DegeneratePair { channel: k, gap });
                    }
                }
            }
            Self::Sequential { u_g } => {
                if u_g.len() != p {
                    return Err(Error::Dimension {
                        what: "control u_g",
                        expected: p,
                        got: u_g.len(),
                    });
                }
                for (k, &u) in u_g.iter().enumerate() {
                    if !(u.abs() >= MIN_GAP) {
                        return Err(Error::DegeneratePair { channel: k, gap: u.abs() });
                    }
                }
            }
        }
        Ok(())
    }

    /// Variance of each regression target when the black box has diagonal
    /// additive noise `sigma`, as `(f channels, g entries row-major)`.
    pub fn target_noise_vars(&self, sigma: &[f64], k: usize, dt: f64) -> (Vec<f64>, Vec<f64>) {
        let base: Vec<f64> = sigma.iter().map(|s| s * s / (k as f64 * dt)).collect();
        match self {
            Self::Paired { u1, u2 } => {
                let gaps: Vec<f64> = u1.iter().zip(u2).map(|(a, b)| b - a).collect();
                let ratios: Vec<f64> = u1.iter().zip(&gaps).map(|(u, g)| u / g).collect();
                let sum: f64 = ratios.iter().sum();
                let f_scale = (1.0 + sum).powi(2) + ratios.iter().map(|a| a * a).sum::<f64>();
                let f = base.iter().map(|b| b * f_scale).collect();
                let g = base
                    .iter()
                    .flat_map(|b| gaps.iter().map(move |gap| 2.0 * b / (gap * gap)))
                    .collect();
                (f, g)
            }
            Self::Sequential { u_g } => {
                let g = base.iter().flat_map(|b| u_g.iter().map(move |u| b / (u * u))).collect();
                (base, g)
            }
        }
    }
}

/// Probe states with their regression targets.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftDataset {
    pub states: Vec<DVector<f64>>,
    /// `N × n`.
    pub y_f: DMatrix<f64>,
    /// `N × (n·p)`, entry `(i, k)` of `g` in column `i·p + k`.
    pub y_g: DMatrix<f64>,
    pub k: usize,
    pub dt: f64,
    pub scheme: DriftScheme,
}

impl DriftDataset {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn n(&self) -> usize {
        self.y_f.ncols()
    }

    pub fn p(&self) -> usize {
        self.y_g.ncols() / self.y_f.ncols().max(1)
    }

    /// Header comments carry `k`, `dt` and the scheme as JSON; one row per
    /// probe with columns `x*, yf*, yg*_*`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let (n, p) = (self.n(), self.p());
        writeln!(w, "# k={}", self.k)?;
        writeln!(w, "# dt={}", fmt17(self.dt))?;
        writeln!(w, "# scheme={}", serde_json::to_string(&self.scheme).map_err(std::io::Error::other)?)?;
        let mut header: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
        header.extend((1..=n).map(|i| format!("yf{i}")));
        for i in 1..=n {
            header.extend((1..=p).map(|k| format!("yg{i}_{k}")));
        }
        writeln!(w, "{}", header.join(","))?;
        for (r, x) in self.states.iter().enumerate() {
            let mut row: Vec<String> = x.iter().map(|v| fmt17(*v)).collect();
            row.extend(self.y_f.row(r).iter().map(|v| fmt17(*v)));
            row.extend(self.y_g.row(r).iter().map(|v| fmt17(*v)));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(mut r: R) -> Result<Self> {
        let mut k = None;
        let mut dt = None;
        let mut scheme = None;
        let mut body = String::new();
        let mut line = String::new();
        loop {
            line.clear();
            let read = r.read_line(&mut line).map_err(io_err)?;
            if read == 0 {
                break;
            }
            if let Some(meta) = line.strip_prefix("# ") {
                let (key, value) = meta
                    .trim_end()
                    .split_once('=')
                    .ok_or_else(|| Error::Config(format!("bad metadata line `{}`", line.trim_end())))?;
                match key {
                    "k" => k = Some(value.parse::<usize>().map_err(|e| Error::Config(e.to_string()))?),
                    "dt" => dt = Some(value.parse::<f64>().map_err(|e| Error::Config(e.to_string()))?),
                    "scheme" => scheme = Some(serde_json::from_str(value).map_err(|e| Error::Config(e.to_string()))?),
                    _ => {}
                }
            } else {
                body.push_str(&line);
            }
        }
        let (k, dt, scheme) = match (k, dt, scheme) {
            (Some(k), Some(dt), Some(s)) => (k, dt, s),
            _ => return Err(Error::Config("drift dataset CSV lacks k, dt or scheme metadata".into())),
        };
        let mut rdr = csv::Reader::from_reader(body.as_bytes());
        let header = rdr.headers().map_err(csv_err)?.clone();
        let n = header.iter().filter(|h| h.starts_with('x')).count();
        let n_g = header.iter().filter(|h| h.starts_with("yg")).count();
        if n == 0 || header.len() != 2 * n + n_g {
            return Err(Error::Config("unexpected drift dataset columns".into()));
        }
        let mut states = Vec::new();
        let mut rows_f = Vec::new();
        let mut rows_g = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(csv_err)?;
            let vals = rec
                .iter()
                .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Config(e.to_string())))
                .collect::<Result<Vec<f64>>>()?;
            states.push(DVector::from_column_slice(&vals[..n]));
            rows_f.extend_from_slice(&vals[n..2 * n]);
            rows_g.extend_from_slice(&vals[2 * n..]);
        }
        let rows = states.len();
        Ok(Self {
            states,
            y_f: DMatrix::from_row_slice(rows, n, &rows_f),
            y_g: DMatrix::from_row_slice(rows, n_g, &rows_g),
            k,
            dt,
            scheme,
        })
    }

    /// SHA-256 of the CSV serialization.
    pub fn fingerprint(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        hex_digest(&buf)
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn io_err(e: std::io::Error) -> Error {
    Error::Config(format!("I/O error: {e}"))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Config(format!("CSV error: {e}"))
}

/// Mean one-step increment over `k` replications from `x` under `u`.
fn mean_increment(
    blackbox: &dyn TransitionSampler,
    x: &DVector<f64>,
    u: &DVector<f64>,
    k: usize,
    dt: f64,
    seed: u64,
) -> Result<DVector<f64>> {
    let mut noise = NoiseStream::new(seed, blackbox.noise_dim());
    let mut acc = DVector::zeros(x.len());
    for _ in 0..k {
        acc += blackbox.sample_next(x, u, dt, &mut noise)? - x;
    }
    Ok(acc / k as f64)
}

fn check_common(blackbox: &dyn TransitionSampler, probes: &[DVector<f64>], k: usize, dt: f64) -> Result<()> {
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    if !(dt > 0.0) {
        return Err(Error::Config(format!("dt must be positive, got {dt}")));
    }
    if probes.is_empty() {
        return Err(Error::Config("at least one probe state is required".into()));
    }
    if let Some(x) = probes.iter().find(|x| x.len() != blackbox.state_dim()) {
        return Err(Error::Dimension {
            what: "probe state",
            expected: blackbox.state_dim(),
            got: x.len(),
        });
    }
    Ok(())
}

/// Paired-control elimination targets at every probe.
pub fn collect_drift_data(
    blackbox: &dyn TransitionSampler,
    probes: &[DVector<f64>],
    u1: &[f64],
    u2: &[f64],
    k: usize,
    dt: f64,
    seed: u64,
) -> Result<DriftDataset> {
    let scheme = DriftScheme::Paired {
        u1: u1.to_vec(),
        u2: u2.to_vec(),
    };
    check_common(blackbox, probes, k, dt)?;
    scheme.validate(blackbox.control_dim())?;
    let (n, p) = (blackbox.state_dim(), blackbox.control_dim());
    let base = DVector::from_column_slice(u1);

    let rows = probes
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let probe_seed = derive_seed(seed, i as u64);
            let dx0 = mean_increment(blackbox, x, &base, k, dt, derive_seed(probe_seed, 0))?;
            let mut g = DMatrix::zeros(n, p);
            for c in 0..p {
                let mut u = base.clone();
                u[c] = u2[c];
                let dxc = mean_increment(blackbox, x, &u, k, dt, derive_seed(probe_seed, c as u64 + 1))?;
                g.set_column(c, &((&dxc - &dx0) / ((u2[c] - u1[c]) * dt)));
            }
            let f = &dx0 / dt - &g * &base;
            Ok((f, g))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(probes, rows, k, dt, scheme))
}

/// Targets for `f` from runs at zero control.
fn zero_control_f_targets(
    blackbox: &dyn TransitionSampler,
    probes: &[DVector<f64>],
    k: usize,
    dt: f64,
    seed: u64,
) -> Result<Vec<DVector<f64>>> {
    let zero = DVector::zeros(blackbox.control_dim());
    probes
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let probe_seed = derive_seed(seed, i as u64);
            Ok(mean_increment(blackbox, x, &zero, k, dt, derive_seed(probe_seed, 0))? / dt)
        })
        .collect()
}

/// Targets for `g` given an estimate of `f`.
fn sequential_g_targets(
    blackbox: &dyn TransitionSampler,
    probes: &[DVector<f64>],
    u_g: &[f64],
    k: usize,
    dt: f64,
    seed: u64,
    f_hat: &(dyn Fn(&[f64]) -> DVector<f64> + Sync),
) -> Result<Vec<DMatrix<f64>>> {
    let (n, p) = (blackbox.state_dim(), blackbox.control_dim());
    probes
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let probe_seed = derive_seed(seed, i as u64);
            let f = f_hat(x.as_slice());
            let mut g = DMatrix::zeros(n, p);
            for c in 0..p {
                let mut u = DVector::zeros(p);
                u[c] = u_g[c];
                let dx = mean_increment(blackbox, x, &u, k, dt, derive_seed(probe_seed, c as u64 + 1))?;
                g.set_column(c, &((dx / dt - &f) / u_g[c]));
            }
            Ok(g)
        })
        .collect()
}

fn assemble(
    probes: &[DVector<f64>],
    rows: Vec<(DVector<f64>, DMatrix<f64>)>,
    k: usize,
    dt: f64,
    scheme: DriftScheme,
) -> DriftDataset {
    let n = probes[0].len();
    let p = rows[0].1.ncols();
    let mut y_f = DMatrix::zeros(probes.len(), n);
    let mut y_g = DMatrix::zeros(probes.len(), n * p);
    for (r, (f, g)) in rows.iter().enumerate() {
        for i in 0..n {
            y_f[(r, i)] = f[i];
            for c in 0..p {
                y_g[(r, i * p + c)] = g[(i, c)];
            }
        }
    }
    DriftDataset {
        states: probes.to_vec(),
        y_f,
        y_g,
        k,
        dt,
        scheme,
    }
}

/// Prior and noise settings for the per-channel regressions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftFitOptions {
    /// `Σ₀ = prior_var · I`.
    pub prior_var: f64,
    /// Target noise variance per `f` channel.
    pub noise_var_f: Vec<f64>,
    /// Target noise variance per `g` entry, row-major.
    pub noise_var_g: Vec<f64>,
}

impl DriftFitOptions {
    /// Noise variances implied by diagonal diffusion `sigma`.
    pub fn from_sigma(scheme: &DriftScheme, sigma: &[f64], k: usize, dt: f64, prior_var: f64) -> Self {
        let (noise_var_f, noise_var_g) = scheme.target_noise_vars(sigma, k, dt);
        Self {
            prior_var,
            noise_var_f,
            noise_var_g,
        }
    }

    pub fn uniform(n: usize, p: usize, prior_var: f64, noise_var: f64) -> Self {
        Self {
            prior_var,
            noise_var_f: vec![noise_var; n],
            noise_var_g: vec![noise_var; n * p],
        }
    }
}

/// Fits one regression per `f` channel and per `g` entry, sharing `basis`.
pub fn fit_drift(data: &DriftDataset, basis: &BasisSet, opts: &DriftFitOptions) -> Result<DriftModel> {
    if data.is_empty() {
        return Err(Error::Config("empty drift dataset".into()));
    }
    let (n, p) = (data.n(), data.p());
    if basis.state_dim() != n {
        return Err(Error::Dimension {
            what: "basis state dimension",
            expected: n,
            got: basis.state_dim(),
        });
    }
    if opts.noise_var_f.len() != n || opts.noise_var_g.len() != n * p {
        return Err(Error::Dimension {
            what: "noise variances",
            expected: n + n * p,
            got: opts.noise_var_f.len() + opts.noise_var_g.len(),
        });
    }
    if !(opts.prior_var > 0.0) {
        return Err(Error::Config("prior variance must be positive".into()));
    }
    check_targets(data)?;
    let phi = basis.design_matrix(&data.states);
    let prior = DMatrix::identity(basis.len(), basis.len()) * opts.prior_var;

    let jobs: Vec<(DVector<f64>, f64)> = (0..n)
        .map(|i| (data.y_f.column(i).into_owned(), opts.noise_var_f[i]))
        .chain((0..n * p).map(|j| (data.y_g.column(j).into_owned(), opts.noise_var_g[j])))
        .collect();
    let mut posts = jobs
        .par_iter()
        .map(|(y, s)| fit_blr(&phi, y, &prior, *s))
        .collect::<Result<Vec<_>>>()?;
    let g = posts.split_off(n);
    Ok(DriftModel {
        basis: basis.clone(),
        n,
        p,
        f: posts,
        g,
        dataset_hash: data.fingerprint(),
    })
}

fn check_targets(data: &DriftDataset) -> Result<()> {
    let bad = data.y_f.iter().chain(data.y_g.iter()).any(|v| !v.is_finite())
        || data.states.iter().flat_map(|x| x.iter()).any(|v| !v.is_finite());
    if bad {
        Err(Error::Estimation("drift targets contain non-finite values".into()))
    } else {
        Ok(())
    }
}

/// Collects targets under `scheme` and fits them. The sequential scheme fits
/// `f̂` first and reuses it for the `g` targets, so its returned dataset holds
/// the targets of both stages.
pub fn identify_drift(
    blackbox: &dyn TransitionSampler,
    probes: &[DVector<f64>],
    scheme: &DriftScheme,
    k: usize,
    dt: f64,
    basis: &BasisSet,
    opts: &DriftFitOptions,
    seed: u64,
) -> Result<(DriftModel, DriftDataset)> {
    match scheme {
        DriftScheme::Paired { u1, u2 } => {
            let data = collect_drift_data(blackbox, probes, u1, u2, k, dt, seed)?;
            let model = fit_drift(&data, basis, opts)?;
            Ok((model, data))
        }
        DriftScheme::Sequential { u_g } => {
            check_common(blackbox, probes, k, dt)?;
            scheme.validate(blackbox.control_dim())?;
            let (n, p) = (blackbox.state_dim(), blackbox.control_dim());
            let f_rows = zero_control_f_targets(blackbox, probes, k, dt, seed)?;
            let stage_one = assemble(
                probes,
                f_rows.iter().map(|f| (f.clone(), DMatrix::zeros(n, p))).collect(),
                k,
                dt,
                scheme.clone(),
            );
            let phi = basis.design_matrix(probes);
            let prior = DMatrix::identity(basis.len(), basis.len()) * opts.prior_var;
            check_targets(&stage_one)?;
            let f_posts = (0..n)
                .into_par_iter()
                .map(|i| fit_blr(&phi, &stage_one.y_f.column(i).into_owned(), &prior, opts.noise_var_f[i]))
                .collect::<Result<Vec<_>>>()?;
            let f_weights = weight_matrix(&f_posts);
            let f_hat = |x: &[f64]| &f_weights * DVector::from_vec(basis.eval(x));
            let g_rows = sequential_g_targets(blackbox, probes, u_g, k, dt, derive_seed(seed, u64::MAX), &f_hat)?;
            let data = assemble(probes, f_rows.into_iter().zip(g_rows).collect(), k, dt, scheme.clone());
            let model = fit_drift(&data, basis, opts)?;
            Ok((model, data))
        }
    }
}

fn weight_matrix(posts: &[BlrPosterior]) -> DMatrix<f64> {
    let m = posts[0].mean.len();
    DMatrix::from_fn(posts.len(), m, |i, j| posts[i].mean[j])
}

/// Mean and predictive variance of the learned drift at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftPrediction {
    pub f: DVector<f64>,
    pub g: DMatrix<f64>,
    pub f_var: DVector<f64>,
    pub g_var: DMatrix<f64>,
}

/// Fitted `f̂`, `ĝ`: one posterior per `f` channel and per `g` entry.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftModel {
    pub basis: BasisSet,
    pub n: usize,
    pub p: usize,
    pub f: Vec<BlrPosterior>,
    /// Row-major over `g` entries.
    pub g: Vec<BlrPosterior>,
    pub dataset_hash: String,
}

impl DriftModel {
    pub fn predict(&self, x: &[f64]) -> DriftPrediction {
        let phi = self.basis.row(x);
        let f = DVector::from_iterator(self.n, self.f.iter().map(|post| post.predict(&phi)));
        let f_var = DVector::from_iterator(self.n, self.f.iter().map(|post| post.predictive_var(&phi)));
        let g = DMatrix::from_fn(self.n, self.p, |i, k| self.g[i * self.p + k].predict(&phi));
        let g_var = DMatrix::from_fn(self.n, self.p, |i, k| self.g[i * self.p + k].predictive_var(&phi));
        DriftPrediction { f, g, f_var, g_var }
    }

    /// The posterior-mean model `dX = (f̂ + ĝu)dt + diag(sigma) dW`.
    pub fn to_sde(&self, sigma: &[f64]) -> Result<SdeModel> {
        if sigma.len() != self.n {
            return Err(Error::Dimension {
                what: "diffusion diagonal",
                expected: self.n,
                got: sigma.len(),
            });
        }
        let drift = LinearInBasis {
            basis: self.basis.clone(),
            weights: weight_matrix(&self.f),
        };
        let control = LinearInBasis {
            basis: self.basis.clone(),
            weights: weight_matrix(&self.g),
        };
        SdeModel::new(
            format!("learned[{}]", &self.dataset_hash[..12.min(self.dataset_hash.len())]),
            (self.n, self.p, self.n),
            Arc::new(drift),
            Arc::new(control),
            Arc::new(diagonal_field(sigma)),
        )
    }

    pub fn to_json(&self) -> FittedDriftJson {
        let channel = |name: String, post: &BlrPosterior| FittedChannel {
            name,
            mean: post.mean.iter().copied().collect(),
            cov: row_major(&post.cov),
            prior_cov: row_major(&post.prior_cov),
            noise_var: post.noise_var,
        };
        let mut channels: Vec<FittedChannel> =
            self.f.iter().enumerate().map(|(i, post)| channel(format!("f{}", i + 1), post)).collect();
        for i in 0..self.n {
            for k in 0..self.p {
                channels.push(channel(format!("g{}_{}", i + 1, k + 1), &self.g[i * self.p + k]));
            }
        }
        FittedDriftJson {
            basis: self.basis.names(),
            n: self.n,
            p: self.p,
            channels,
            dataset_hash: self.dataset_hash.clone(),
        }
    }

    pub fn from_json(json: &FittedDriftJson) -> Result<Self> {
        let basis = BasisSet::parse(json.n, &json.basis)?;
        let m = basis.len();
        if json.channels.len() != json.n * (1 + json.p) {
            return Err(Error::Config("fitted model has the wrong number of channels".into()));
        }
        let posts = json
            .channels
            .iter()
            .map(|c| {
                if c.mean.len() != m || c.cov.len() != m * m || c.prior_cov.len() != m * m {
                    return Err(Error::Config(format!("channel {} has inconsistent sizes", c.name)));
                }
                Ok(BlrPosterior {
                    mean: DVector::from_column_slice(&c.mean),
                    cov: DMatrix::from_row_slice(m, m, &c.cov),
                    prior_cov: DMatrix::from_row_slice(m, m, &c.prior_cov),
                    noise_var: c.noise_var,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut f = posts;
        let g = f.split_off(json.n);
        Ok(Self {
            basis,
            n: json.n,
            p: json.p,
            f,
            g,
            dataset_hash: json.dataset_hash.clone(),
        })
    }

    /// SHA-256 of the JSON serialization.
    pub fn fingerprint(&self) -> String {
        hex_digest(serde_json::to_string(&self.to_json()).expect("serializable").as_bytes())
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().iter().copied().collect()
}

/// On-disk form of a [`DriftModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedDriftJson {
    pub basis: Vec<String>,
    pub n: usize,
    pub p: usize,
    pub channels: Vec<FittedChannel>,
    pub dataset_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedChannel {
    pub name: String,
    pub mean: Vec<f64>,
    pub cov: Vec<f64>,
    pub prior_cov: Vec<f64>,
    pub noise_var: f64,
}

/// `x ↦ W φ(x)`.
#[derive(Debug, Clone)]
struct LinearInBasis {
    basis: BasisSet,
    weights: DMatrix<f64>,
}

impl VectorExpr for LinearInBasis {
    fn eval<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        let phi = self.basis.eval(x);
        (0..self.weights.nrows())
            .map(|r| {
                let mut acc = x[0].constant_like(0.0);
                for (j, feat) in phi.iter().enumerate() {
                    let w = self.weights[(r, j)];
                    if w != 0.0 {
                        acc = acc + feat.clone() * w;
                    }
                }
                acc
            })
            .collect()
    }
}

/// Crude per-channel diffusion scale from one rollout under constant `u`,
/// using second differences of the increments so that smooth drift cancels:
/// `σ̂ᵢ² = mean((Δx_{k+1} − Δx_k)ᵢ²) / (2dt)`.
pub fn pilot_sigma(
    blackbox: &dyn TransitionSampler,
    x0: &DVector<f64>,
    u: &DVector<f64>,
    dt: f64,
    n_steps: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if n_steps < 3 {
        return Err(Error::Config("pilot rollout needs at least 3 steps".into()));
    }
    let mut noise = NoiseStream::new(seed, blackbox.noise_dim());
    let mut x = x0.clone();
    let mut prev: Option<DVector<f64>> = None;
    let mut acc = DVector::zeros(x0.len());
    let mut count = 0usize;
    for _ in 0..n_steps {
        let next = match blackbox.sample_next(&x, u, dt, &mut noise) {
            Ok(v) => v,
            Err(Error::Diverged { .. }) => break,
            Err(e) => return Err(e),
        };
        let dx = &next - &x;
        if let Some(p) = &prev {
            acc += (&dx - p).map(|v| v * v);
            count += 1;
        }
        prev = Some(dx);
        x = next;
    }
    if count == 0 {
        return Err(Error::Estimation("pilot rollout diverged immediately".into()));
    }
    Ok(acc.iter().map(|s| (s / (count as f64 * 2.0 * dt)).sqrt()).collect())
}
