use std::io::Write;
use std::sync::Arc;

use nalgebra::DVector;

use super::constraints::{clf_constraint, scbf_constraint, BarrierKind};
use super::qp::{solve_qp, ConstraintRow, QpSolution, QpSpec};
use crate::barrier::{BarrierChain, ScalarField};
use crate::error::{Error, Result};
use crate::sde::{fmt17, Action, Policy, StepFlags, Trajectory};

/// Soft tracking objective added next to the barrier row.
#[derive(Clone)]
pub struct ClfConfig {
    pub v: Arc<dyn ScalarField>,
    pub gamma: f64,
    pub slack_weight: f64,
}

impl ClfConfig {
    pub fn new(v: Arc<dyn ScalarField>) -> Self {
        Self {
            v,
            gamma: 1.0,
            slack_weight: 1e3,
        }
    }
}

/// Everything computed while choosing one control.
#[derive(Debug, Clone)]
pub struct PolicyStep {
    pub u: DVector<f64>,
    pub delta: f64,
    /// Barrier row first, then the CLF row if any.
    pub rows: Vec<ConstraintRow>,
    /// `None` when the fallback control was used.
    pub solution: Option<QpSolution>,
    pub flags: StepFlags,
}

/// Min-norm control subject to the barrier condition of a chain's top level,
/// optionally with a soft CLF row and box bounds.
#[derive(Clone)]
pub struct SafePolicy {
    chain: Arc<BarrierChain>,
    kind: BarrierKind,
    clf: Option<ClfConfig>,
    bounds: Option<(DVector<f64>, DVector<f64>)>,
}

impl SafePolicy {
    pub fn new(chain: Arc<BarrierChain>) -> Self {
        Self {
            chain,
            kind: BarrierKind::Scbf,
            clf: None,
            bounds: None,
        }
    }

    pub fn with_kind(mut self, kind: BarrierKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn with_clf(mut self, clf: ClfConfig) -> Self {
        self.clf = Some(clf);
        self
    }

    pub fn with_bounds(mut self, lo: DVector<f64>, hi: DVector<f64>) -> Self {
        self.bounds = Some((lo, hi));
        self
    }

    pub fn chain(&self) -> &Arc<BarrierChain> {
        &self.chain
    }

    pub fn kind(&self) -> BarrierKind {
        self.kind
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<PolicyStep> {
        let p = self.chain.model().p();
        let mut flags = StepFlags {
            level_exit: (1..self.chain.relative_degree()).any(|j| self.chain.level(j).value(x) < 0.0),
            ..Default::default()
        };
        let barrier = scbf_constraint(&self.chain, x, self.kind)?;
        let mut rows = vec![barrier];
        if rows[0].uncontrollable {
            flags.uncontrollable = true;
            return Ok(PolicyStep {
                u: DVector::zeros(p),
                delta: 0.0,
                rows,
                solution: None,
                flags,
            });
        }
        let mut spec = QpSpec::new(p, Vec::new());
        if let Some(clf) = &self.clf {
            rows.push(clf_constraint(clf.v.as_ref(), self.chain.model(), x, clf.gamma)?);
            spec = spec.with_slack(clf.slack_weight);
        }
        spec.rows = rows.clone();
        if let Some((lo, hi)) = &self.bounds {
            spec = spec.with_bounds(lo.clone(), hi.clone());
        }
        match solve_qp(&spec) {
            Ok(sol) => Ok(PolicyStep {
                u: sol.u.clone(),
                delta: sol.delta,
                rows,
                solution: Some(sol),
                flags,
            }),
            Err(Error::Infeasible { .. }) => {
                flags.infeasible = true;
                Ok(PolicyStep {
                    u: DVector::zeros(p),
                    delta: 0.0,
                    rows,
                    solution: None,
                    flags,
                })
            }
            Err(e) => Err(e),
        }
    }

    /// Re-evaluates the policy along `traj` and writes
    /// `t,c0,c1_*,u*,delta,active_set,feasible`.
    pub fn write_qp_trace<W: Write>(&self, traj: &Trajectory, mut w: W) -> Result<()> {
        let p = self.chain.model().p();
        let io = |e: std::io::Error| Error::Config(format!("I/O error: {e}"));
        let mut header = vec!["t".to_string(), "c0".to_string()];
        header.extend((1..=p).map(|k| format!("c1_{k}")));
        header.extend((1..=p).map(|k| format!("u{k}")));
        header.extend(["delta", "active_set", "feasible"].map(String::from));
        writeln!(w, "{}", header.join(",")).map_err(io)?;
        for (t, x) in traj.times.iter().zip(&traj.states).take(traj.len()) {
            let step = self.evaluate(x.as_slice())?;
            let mut row = vec![fmt17(*t), fmt17(step.rows[0].b)];
            row.extend(step.rows[0].a.iter().map(|v| fmt17(*v)));
            row.extend(step.u.iter().map(|v| fmt17(*v)));
            row.push(fmt17(step.delta));
            let active = step
                .solution
                .as_ref()
                .map(|s| s.active.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(";"))
                .unwrap_or_default();
            row.push(active);
            row.push(step.solution.is_some().to_string());
            writeln!(w, "{}", row.join(",")).map_err(io)?;
        }
        Ok(())
    }
}

impl Policy for SafePolicy {
    fn act(&self, x: &DVector<f64>) -> Result<Action> {
        let step = self.evaluate(x.as_slice())?;
        Ok(Action {
            u: step.u,
            flags: step.flags,
        })
    }
}
