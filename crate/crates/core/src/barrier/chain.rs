//! High-order barrier chains `b₀ = h`, `b_j = 𝒜 b_{j-1}` and Monte Carlo
//! estimates of their level-set suprema.

use std::sync::Arc;

use serde::Serialize;

use super::fields::{Derivation, ScalarField};
use super::generator::{generator, GeneratorAffine, GeneratorField};
use crate::error::{Error, Result};
use crate::noise::NoiseStream;
use crate::sde::SdeModel;

/// Axis-aligned sampling box, optionally cut down to the points where every
/// member field is nonnegative.
#[derive(Clone)]
pub struct Region {
    lo: Vec<f64>,
    hi: Vec<f64>,
    members: Vec<Arc<dyn ScalarField>>,
}

impl Region {
    pub fn boxed(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::Config("sampling box bounds must be nonempty and equal length".into()));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l < h) || !l.is_finite() || !h.is_finite()) {
            return Err(Error::Config("sampling box needs finite lo < hi per axis".into()));
        }
        Ok(Self {
            lo,
            hi,
            members: Vec::new(),
        })
    }

    /// Restrict to `{x : field(x) ≥ 0}`.
    pub fn with_member(mut self, field: Arc<dyn ScalarField>) -> Self {
        self.members.push(field);
        self
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (l, h))| v >= l && v <= h)
            && self.members.iter().all(|m| m.value(x) >= 0.0)
    }

    /// Up to `n` accepted points by rejection, giving up after `100·n` draws.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = NoiseStream::new(seed, 0);
        let mut out = Vec::with_capacity(n);
        let max_draws = n.saturating_mul(100);
        let mut draws = 0;
        while out.len() < n && draws < max_draws {
            draws += 1;
            let x: Vec<f64> = self
                .lo
                .iter()
                .zip(&self.hi)
                .map(|(&l, &h)| rng.uniform_in(l, h))
                .collect();
            if self.members.iter().all(|m| m.value(&x) >= 0.0) {
                out.push(x);
            }
        }
        out
    }

    /// True when `x` lies within `frac` of the box width of any face.
    fn near_face(&self, x: &[f64], frac: f64) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .any(|(v, (l, h))| {
                let tol = frac * (h - l);
                (v - l) <= tol || (h - v) <= tol
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupEstimate {
    pub value: f64,
    pub argmax: Vec<f64>,
    pub n_samples: usize,
    pub min: f64,
    pub mean: f64,
    /// The maximizer sits on the sampling box, so the true supremum may be
    /// larger or infinite.
    pub unbounded_suspect: bool,
}

/// Projected gradient ascent from the best sample, accepting only steps that
/// stay in `region` and strictly improve the value.
fn refine_max(b: &dyn ScalarField, region: &Region, mut x: Vec<f64>, mut v: f64) -> (Vec<f64>, f64) {
    let diag = region
        .lo
        .iter()
        .zip(&region.hi)
        .map(|(l, h)| (h - l) * (h - l))
        .sum::<f64>()
        .sqrt();
    let mut reach = 0.1 * diag;
    for _ in 0..200 {
        let g = b.gradient(&x);
        let norm = g.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            break;
        }
        let mut t = reach / norm;
        let mut improved = false;
        for _ in 0..60 {
            let cand: Vec<f64> = x
                .iter()
                .zip(g.iter())
                .zip(region.lo.iter().zip(&region.hi))
                .map(|((xi, gi), (l, h))| (xi + t * gi).clamp(*l, *h))
                .collect();
            if region.contains(&cand) {
                let cv = b.value(&cand);
                if cv.is_finite() && cv > v {
                    x = cand;
                    v = cv;
                    improved = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
        reach = 2.0 * t * norm;
    }
    (x, v)
}

/// Sample maximum of `b` over `region`, polished by local ascent.
pub fn sup_over_set(b: &dyn ScalarField, region: &Region, n_samples: usize, seed: u64) -> Result<SupEstimate> {
    if n_samples == 0 {
        return Err(Error::Estimation("n_samples must be at least 1".into()));
    }
    let points = region.sample(n_samples, seed);
    if points.is_empty() {
        return Err(Error::Estimation("no sample landed in the region".into()));
    }
    let mut best = f64::NEG_INFINITY;
    let mut argmax = points[0].clone();
    let mut min = f64::INFINITY;
    let mut sum = 0.0;
    for x in &points {
        let v = b.value(x);
        if !v.is_finite() {
            return Err(Error::Evaluation {
                what: "field value",
                x: x.clone(),
            });
        }
        sum += v;
        min = min.min(v);
        if v > best {
            best = v;
            argmax = x.clone();
        }
    }
    let (argmax, best) = refine_max(b, region, argmax, best);
    let unbounded_suspect = region.near_face(&argmax, 0.01);
    Ok(SupEstimate {
        value: best,
        n_samples: points.len(),
        min,
        mean: sum / points.len() as f64,
        unbounded_suspect,
        argmax,
    })
}

/// Probe and supremum settings for [`build_chain`].
#[derive(Clone)]
pub struct ChainOptions {
    /// Box the safe set is sampled from, for probes and suprema.
    pub region: Region,
    pub n_probes: usize,
    pub n_sup_samples: usize,
    pub seed: u64,
    /// Allowed `|c1| / (1 + |c0|)` below the top level.
    pub relative_degree_tol: f64,
    pub estimate_suprema: bool,
}

impl ChainOptions {
    pub fn new(region: Region) -> Self {
        Self {
            region,
            n_probes: 100,
            n_sup_samples: 100_000,
            seed: 0,
            relative_degree_tol: 1e-9,
            estimate_suprema: true,
        }
    }
}

#[derive(Clone)]
pub struct BarrierChain {
    model: SdeModel,
    levels: Vec<Arc<dyn ScalarField>>,
    suprema: Vec<Option<SupEstimate>>,
}

impl std::fmt::Debug for BarrierChain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BarrierChain")
            .field("model", &self.model)
            .field("r", &self.levels.len())
            .field("suprema", &self.suprema)
            .finish()
    }
}

impl BarrierChain {
    pub fn relative_degree(&self) -> usize {
        self.levels.len()
    }

    pub fn model(&self) -> &SdeModel {
        &self.model
    }

    pub fn level(&self, j: usize) -> &Arc<dyn ScalarField> {
        &self.levels[j]
    }

    pub fn top(&self) -> &Arc<dyn ScalarField> {
        self.levels.last().expect("chain has at least one level")
    }

    pub fn suprema(&self) -> &[Option<SupEstimate>] {
        &self.suprema
    }

    pub fn sup(&self, j: usize) -> Option<f64> {
        self.suprema[j].as_ref().map(|s| s.value)
    }

    /// `b_j(x)` for every level.
    pub fn values(&self, x: &[f64]) -> Vec<f64> {
        self.levels.iter().map(|b| b.value(x)).collect()
    }

    /// Generator of the top level under the chain's own model.
    pub fn top_generator(&self, x: &[f64]) -> Result<GeneratorAffine> {
        generator(&self.model, self.top().as_ref(), x)
    }

    pub fn derivation(&self) -> Derivation {
        self.levels[0].derivation()
    }

    pub fn report(&self) -> ChainReport {
        ChainReport {
            r: self.relative_degree(),
            derivation: self.derivation(),
            levels: self
                .suprema
                .iter()
                .enumerate()
                .map(|(level, s)| LevelReport {
                    level,
                    c: s.as_ref().map(|s| s.value),
                    n_samples: s.as_ref().map(|s| s.n_samples).unwrap_or(0),
                    sample_min: s.as_ref().map(|s| s.min),
                    sample_mean: s.as_ref().map(|s| s.mean),
                    unbounded_suspect: s.as_ref().map(|s| s.unbounded_suspect).unwrap_or(false),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelReport {
    pub level: usize,
    pub c: Option<f64>,
    pub n_samples: usize,
    pub sample_min: Option<f64>,
    pub sample_mean: Option<f64>,
    pub unbounded_suspect: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainReport {
    pub r: usize,
    pub derivation: Derivation,
    pub levels: Vec<LevelReport>,
}

/// Builds `b_0..b_{r-1}` by nested generator application and, if asked,
/// estimates `c_j = sup_{b_j ≥ 0} b_j` over the sampling box.
pub fn build_chain(
    model: &SdeModel,
    h: Arc<dyn ScalarField>,
    r: usize,
    opts: &ChainOptions,
) -> Result<BarrierChain> {
    if r == 0 {
        return Err(Error::Config("relative degree must be at least 1".into()));
    }
    if h.dim() != model.n() || opts.region.dim() != model.n() {
        return Err(Error::Dimension {
            what: "barrier dimension",
            expected: model.n(),
            got: h.dim(),
        });
    }

    let probes = opts
        .region
        .clone()
        .with_member(h.clone())
        .sample(opts.n_probes, opts.seed);
    if r > 1 && probes.is_empty() {
        return Err(Error::Estimation("no probe point found in the safe set".into()));
    }

    let mut levels: Vec<Arc<dyn ScalarField>> = vec![h];
    for j in 0..r - 1 {
        let current = levels[j].clone();
        for x in &probes {
            let gen = generator(model, current.as_ref(), x)?;
            let magnitude = gen.c1.amax();
            if magnitude > opts.relative_degree_tol * (1.0 + gen.c0.abs()) {
                return Err(Error::RelativeDegree {
                    level: j,
                    x: x.clone(),
                    magnitude,
                });
            }
        }
        levels.push(Arc::new(GeneratorField::new(current, model.clone())));
    }

    let suprema = if opts.estimate_suprema {
        levels
            .iter()
            .enumerate()
            .map(|(j, b)| {
                let region = opts.region.clone().with_member(b.clone());
                sup_over_set(b.as_ref(), &region, opts.n_sup_samples, opts.seed.wrapping_add(j as u64 + 1))
                    .map(Some)
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        vec![None; levels.len()]
    };

    Ok(BarrierChain {
        model: model.clone(),
        levels,
        suprema,
    })
}
