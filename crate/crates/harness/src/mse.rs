use scbf_core::noise::NoiseStream;
use scbf_core::sde::SdeModel;
use scbf_core::sysid::DriftModel;
use serde::Serialize;

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MseEntry {
    /// `f1`, `g2_1`, ...
    pub function: String,
    pub mse: f64,
    /// Standard error of the mean of the squared errors.
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MseReport {
    pub k: usize,
    pub seed: u64,
    pub n_eval: usize,
    pub entries: Vec<MseEntry>,
}

impl MseReport {
    pub fn get(&self, function: &str) -> Option<f64> {
        self.entries.iter().find(|e| e.function == function).map(|e| e.mse)
    }
}

/// Mean squared error of the posterior-mean drift against the true one at
/// `n_eval` points drawn uniformly from `[lo, hi]`.
pub fn run_mse_eval(
    model: &DriftModel,
    truth: &SdeModel,
    lo: &[f64],
    hi: &[f64],
    n_eval: usize,
    seed: u64,
    k: usize,
) -> Result<MseReport> {
    if n_eval == 0 {
        return Err(HarnessError::Config("n_eval must be positive".into()));
    }
    if model.n != truth.n() || model.p != truth.p() || lo.len() != truth.n() || hi.len() != truth.n() {
        return Err(HarnessError::Config("model, truth and evaluation box disagree in dimension".into()));
    }
    let (n, p) = (model.n, model.p);
    let mut rng = NoiseStream::new(seed, 0);
    let mut sq: Vec<Vec<f64>> = vec![Vec::with_capacity(n_eval); n + n * p];
    for _ in 0..n_eval {
        let x: Vec<f64> = lo.iter().zip(hi).map(|(&l, &h)| rng.uniform_in(l, h)).collect();
        let pred = model.predict(&x);
        let f = truth.drift(&x);
        let g = truth.control_matrix(&x);
        for i in 0..n {
            sq[i].push((pred.f[i] - f[i]).powi(2));
            for c in 0..p {
                sq[n + i * p + c].push((pred.g[(i, c)] - g[(i, c)]).powi(2));
            }
        }
    }
    let mut names: Vec<String> = (1..=n).map(|i| format!("f{i}")).collect();
    for i in 1..=n {
        names.extend((1..=p).map(|c| format!("g{i}_{c}")));
    }
    let entries = names
        .into_iter()
        .zip(sq)
        .map(|(function, s)| {
            let m = s.len() as f64;
            let mean = s.iter().sum::<f64>() / m;
            let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0).max(1.0);
            MseEntry {
                function,
                mse: mean,
                std_error: (var / m).sqrt(),
            }
        })
        .collect();
    Ok(MseReport {
        k,
        seed,
        n_eval,
        entries,
    })
}
