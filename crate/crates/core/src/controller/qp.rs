//! Small dense QPs of the form
//!
//! ```text
//! min ½‖u‖² + ½ q δ²   s.t.  aᵢᵀu + sᵢ δ + bᵢ ≥ 0,   lo ≤ u ≤ hi
//! ```
//!
//! solved exactly by enumerating active sets. With the handful of rows a
//! safety filter carries, every subset can be checked against the KKT
//! conditions; the first (smallest) one that passes is the unique optimum.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest number of rows (including bound rows) the enumeration accepts.
pub const MAX_ROWS: usize = 16;

const FEAS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowKind {
    Scbf,
    Szcbf,
    Clf,
    Bound,
}

/// `aᵀu + slack·δ + b ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintRow {
    pub a: DVector<f64>,
    pub b: f64,
    pub slack: f64,
    pub kind: RowKind,
    /// `a ≈ 0` while `b < 0`: no control can satisfy the row.
    pub uncontrollable: bool,
}

impl ConstraintRow {
    pub fn hard(a: DVector<f64>, b: f64, kind: RowKind) -> Self {
        Self {
            a,
            b,
            slack: 0.0,
            kind,
            uncontrollable: false,
        }
    }

    pub fn eval(&self, u: &DVector<f64>, delta: f64) -> f64 {
        self.a.dot(u) + self.slack * delta + self.b
    }

    pub fn scaled(&self, lambda: f64) -> Self {
        Self {
            a: &self.a * lambda,
            b: self.b * lambda,
            slack: self.slack * lambda,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSpec {
    pub p: usize,
    pub rows: Vec<ConstraintRow>,
    /// Weight `q` of the slack term; required when any row uses the slack.
    pub slack_weight: Option<f64>,
    pub bounds: Option<(DVector<f64>, DVector<f64>)>,
}

impl QpSpec {
    pub fn new(p: usize, rows: Vec<ConstraintRow>) -> Self {
        Self {
            p,
            rows,
            slack_weight: None,
            bounds: None,
        }
    }

    pub fn with_slack(mut self, weight: f64) -> Self {
        self.slack_weight = Some(weight);
        self
    }

    pub fn with_bounds(mut self, lo: DVector<f64>, hi: DVector<f64>) -> Self {
        self.bounds = Some((lo, hi));
        self
    }

    pub fn objective(&self, u: &DVector<f64>, delta: f64) -> f64 {
        0.5 * u.norm_squared() + 0.5 * self.slack_weight.unwrap_or(0.0) * delta * delta
    }

    fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::Config("QP needs at least one control".into()));
        }
        if self.rows.is_empty() && self.bounds.is_none() {
            return Err(Error::Config("QP needs at least one constraint or bound".into()));
        }
        for row in &self.rows {
            if row.a.len() != self.p {
                return Err(Error::Dimension {
                    what: "constraint row",
                    expected: self.p,
                    got: row.a.len(),
                });
            }
            if !row.b.is_finite() || !row.slack.is_finite() || row.a.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config("constraint coefficients must be finite".into()));
            }
            if row.slack != 0.0 && self.slack_weight.is_none() {
                return Err(Error::Config("a row uses the slack but no slack weight is set".into()));
            }
        }
        if let Some(q) = self.slack_weight {
            if !(q > 0.0) || !q.is_finite() {
                return Err(Error::Config(format!("slack weight must be positive, got {q}")));
            }
        }
        if let Some((lo, hi)) = &self.bounds {
            if lo.len() != self.p || hi.len() != self.p {
                return Err(Error::Dimension {
                    what: "control bounds",
                    expected: self.p,
                    got: lo.len().min(hi.len()),
                });
            }
            if lo.iter().zip(hi.iter()).any(|(l, h)| !(l <= h)) {
                return Err(Error::Config("control bounds must satisfy lo ≤ hi".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub complementarity: f64,
    pub primal: f64,
    pub dual: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.complementarity).max(self.primal).max(self.dual)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub u: DVector<f64>,
    pub delta: f64,
    /// Indices of active rows; bound rows follow the user rows, lower bounds
    /// first.
    pub active: Vec<usize>,
    /// One multiplier per row (user rows then bound rows).
    pub multipliers: Vec<f64>,
    pub kkt: KktResiduals,
}

/// Rows over `z = (u, δ)` with the bounds appended.
struct Expanded {
    a: Vec<DVector<f64>>,
    b: Vec<f64>,
    h_diag: DVector<f64>,
    nz: usize,
}

fn expand(spec: &QpSpec) -> Expanded {
    let with_slack = spec.slack_weight.is_some();
    let nz = spec.p + usize::from(with_slack);
    let mut a = Vec::new();
    let mut b = Vec::new();
    let lift = |u: &DVector<f64>, s: f64| {
        let mut z = DVector::zeros(nz);
        z.rows_mut(0, spec.p).copy_from(u);
        if with_slack {
            z[spec.p] = s;
        }
        z
    };
    for row in &spec.rows {
        a.push(lift(&row.a, row.slack));
        b.push(row.b);
    }
    if let Some((lo, hi)) = &spec.bounds {
        for k in 0..spec.p {
            let mut e = DVector::zeros(spec.p);
            e[k] = 1.0;
            a.push(lift(&e, 0.0));
            b.push(-lo[k]);
        }
        for k in 0..spec.p {
            let mut e = DVector::zeros(spec.p);
            e[k] = -1.0;
            a.push(lift(&e, 0.0));
            b.push(hi[k]);
        }
    }
    let mut h_diag = DVector::from_element(nz, 1.0);
    if let Some(q) = spec.slack_weight {
        h_diag[spec.p] = q;
    }
    Expanded { a, b, h_diag, nz }
}

pub fn solve_qp(spec: &QpSpec) -> Result<QpSolution> {
    spec.validate()?;
    let ex = expand(spec);
    let m = ex.a.len();
    if m > MAX_ROWS {
        return Err(Error::Unsupported(format!("QP with {m} rows exceeds the enumeration limit of {MAX_ROWS}")));
    }
    if spec.slack_weight.is_none() && spec.bounds.is_none() && spec.rows.len() == 1 {
        if let Some(sol) = single_row(spec, &ex) {
            return Ok(sol);
        }
    }

    let tol: Vec<f64> = (0..m).map(|i| FEAS_TOL * (1.0 + ex.b[i].abs() + ex.a[i].amax())).collect();
    // Subsets by increasing size; the first KKT point is optimal.
    let mut subsets: Vec<u32> = (0..(1u32 << m)).collect();
    subsets.sort_by_key(|s| (s.count_ones(), *s));
    for mask in subsets {
        if mask.count_ones() as usize > ex.nz {
            break;
        }
        let active: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        let Some((z, lambda)) = solve_equality(&ex, &active) else {
            continue;
        };
        if lambda.iter().any(|&l| l < -FEAS_TOL) {
            continue;
        }
        let feasible = (0..m).all(|i| ex.a[i].dot(&z) + ex.b[i] >= -tol[i]);
        if !feasible {
            continue;
        }
        let mut multipliers = vec![0.0; m];
        for (k, &i) in active.iter().enumerate() {
            multipliers[i] = lambda[k].max(0.0);
        }
        return Ok(finish(spec, &ex, z, active, multipliers));
    }

    let z0 = DVector::zeros(ex.nz);
    let (row, violation) = (0..m)
        .map(|i| (i, -(ex.a[i].dot(&z0) + ex.b[i])))
        .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
    Err(Error::Infeasible { row, violation })
}

/// `u = max(0, −b/‖a‖²)·a`.
fn single_row(spec: &QpSpec, ex: &Expanded) -> Option<QpSolution> {
    let row = &spec.rows[0];
    let nrm2 = row.a.norm_squared();
    if row.b >= 0.0 {
        return Some(finish(spec, ex, DVector::zeros(ex.nz), vec![], vec![0.0]));
    }
    if nrm2 == 0.0 {
        return None;
    }
    let lambda = -row.b / nrm2;
    Some(finish(spec, ex, &row.a * lambda, vec![0], vec![lambda]))
}

/// Minimizes `½zᵀHz` on `{a_iᵀz + b_i = 0, i ∈ active}`; `None` if the active
/// rows are linearly dependent.
fn solve_equality(ex: &Expanded, active: &[usize]) -> Option<(DVector<f64>, DVector<f64>)> {
    let k = active.len();
    if k == 0 {
        return Some((DVector::zeros(ex.nz), DVector::zeros(0)));
    }
    let hinv = ex.h_diag.map(|h| 1.0 / h);
    let scaled: Vec<DVector<f64>> = active.iter().map(|&i| ex.a[i].component_mul(&hinv)).collect();
    let mut gram = DMatrix::zeros(k, k);
    for r in 0..k {
        for c in 0..k {
            gram[(r, c)] = ex.a[active[r]].dot(&scaled[c]);
        }
    }
    let chol = Cholesky::new(gram.clone())?;
    let l = chol.l_dirty();
    let diag_max = (0..k).map(|i| l[(i, i)].abs()).fold(0.0, f64::max);
    if (0..k).any(|i| l[(i, i)].abs() <= 1e-10 * diag_max.max(1e-300)) {
        return None;
    }
    let rhs = DVector::from_iterator(k, active.iter().map(|&i| -ex.b[i]));
    let mut lambda = chol.solve(&rhs);
    let combine = |lambda: &DVector<f64>| {
        let mut z = DVector::zeros(ex.nz);
        for (c, s) in scaled.iter().enumerate() {
            z += s * lambda[c];
        }
        z
    };
    let mut z = combine(&lambda);
    // Large opposing multipliers cancel in `z`; one incremental refinement
    // step restores the active residuals to rounding level.
    let resid = DVector::from_iterator(k, active.iter().map(|&i| ex.a[i].dot(&z) + ex.b[i]));
    let correction = chol.solve(&-resid);
    z += combine(&correction);
    lambda += correction;
    Some((z, lambda))
}

fn finish(spec: &QpSpec, ex: &Expanded, z: DVector<f64>, active: Vec<usize>, multipliers: Vec<f64>) -> QpSolution {
    let m = ex.a.len();
    let mut grad = z.component_mul(&ex.h_diag);
    for i in 0..m {
        grad -= &ex.a[i] * multipliers[i];
    }
    let mut kkt = KktResiduals {
        stationarity: grad.amax(),
        ..Default::default()
    };
    for i in 0..m {
        let g = ex.a[i].dot(&z) + ex.b[i];
        kkt.complementarity = kkt.complementarity.max((multipliers[i] * g).abs());
        kkt.primal = kkt.primal.max(-g);
        kkt.dual = kkt.dual.max(-multipliers[i]);
    }
    let u = z.rows(0, spec.p).into_owned();
    let delta = if spec.slack_weight.is_some() { z[spec.p] } else { 0.0 };
    QpSolution {
        u,
        delta,
        active,
        multipliers,
        kkt,
    }
}
