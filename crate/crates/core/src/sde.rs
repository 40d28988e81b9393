//! Control-affine SDEs `dX = (f(X) + g(X)u) dt + σ(X) dW` and their
//! Euler–Maruyama integration under a feedback policy.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::jet::{Jet, Scalar};
use crate::noise::NoiseStream;

/// A vector-valued expression written once for every [`Scalar`] type.
pub trait VectorExpr: Send + Sync {
    fn eval<S: Scalar>(&self, x: &[S]) -> Vec<S>;
}

/// Object-safe view of a vector field, evaluable on plain floats and on jets.
pub trait VectorField: Send + Sync {
    fn value(&self, x: &[f64]) -> Vec<f64>;
    fn value_jet(&self, x: &[Jet]) -> Vec<Jet>;
}

impl<T: VectorExpr> VectorField for T {
    fn value(&self, x: &[f64]) -> Vec<f64> {
        self.eval(x)
    }
    fn value_jet(&self, x: &[Jet]) -> Vec<Jet> {
        self.eval(x)
    }
}

/// State-independent field, e.g. additive diffusion.
#[derive(Debug, Clone)]
pub struct ConstantField(pub Vec<f64>);

impl VectorExpr for ConstantField {
    fn eval<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        match x.first() {
            Some(x0) => self.0.iter().map(|&v| x0.constant_like(v)).collect(),
            None => Vec::new(),
        }
    }
}

/// Row-major `n × n` diagonal matrix field with constant entries.
pub fn diagonal_field(diag: &[f64]) -> ConstantField {
    let n = diag.len();
    let mut m = vec![0.0; n * n];
    for (i, &s) in diag.iter().enumerate() {
        m[i * n + i] = s;
    }
    ConstantField(m)
}

/// Drift `f`, control matrix `g` and diffusion `σ` of a control-affine SDE.
///
/// `g` and `σ` are stored row-major (`n × p` and `n × d`).
#[derive(Clone)]
pub struct SdeModel {
    n: usize,
    p: usize,
    d: usize,
    label: String,
    drift: Arc<dyn VectorField>,
    control: Arc<dyn VectorField>,
    diffusion: Arc<dyn VectorField>,
}

impl std::fmt::Debug for SdeModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SdeModel")
            .field("label", &self.label)
            .field("n", &self.n)
            .field("p", &self.p)
            .field("d", &self.d)
            .finish()
    }
}

impl SdeModel {
    /// Builds a model, checking output shapes at the origin.
    pub fn new(
        label: impl Into<String>,
        (n, p, d): (usize, usize, usize),
        drift: Arc<dyn VectorField>,
        control: Arc<dyn VectorField>,
        diffusion: Arc<dyn VectorField>,
    ) -> Result<Self> {
        if n == 0 || p == 0 || d == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        let origin = vec![0.0; n];
        let checks = [
            ("drift", drift.value(&origin).len(), n),
            ("control matrix", control.value(&origin).len(), n * p),
            ("diffusion", diffusion.value(&origin).len(), n * d),
        ];
        for (what, got, expected) in checks {
            if got != expected {
                return Err(Error::Dimension { what, expected, got });
            }
        }
        Ok(Self {
            n,
            p,
            d,
            label: label.into(),
            drift,
            control,
            diffusion,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn drift(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_vec(self.drift.value(x))
    }

    pub fn control_matrix(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.p, &self.control.value(x))
    }

    pub fn diffusion(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.d, &self.diffusion.value(x))
    }

    pub fn drift_jet(&self, x: &[Jet]) -> Vec<Jet> {
        self.drift.value_jet(x)
    }

    /// Row-major `n × p` entries.
    pub fn control_matrix_jet(&self, x: &[Jet]) -> Vec<Jet> {
        self.control.value_jet(x)
    }

    /// Row-major `n × d` entries.
    pub fn diffusion_jet(&self, x: &[Jet]) -> Vec<Jet> {
        self.diffusion.value_jet(x)
    }

    /// Same model with the diffusion replaced.
    pub fn with_diffusion(&self, diffusion: Arc<dyn VectorField>, d: usize) -> Result<Self> {
        Self::new(
            self.label.clone(),
            (self.n, self.p, d),
            self.drift.clone(),
            self.control.clone(),
            diffusion,
        )
    }
}

/// Anything that can be stepped forward one sample at a time. Identification
/// code only ever sees this view of the system.
pub trait TransitionSampler: Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn sample_next(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        dt: f64,
        noise: &mut NoiseStream,
    ) -> Result<DVector<f64>>;
}

impl TransitionSampler for SdeModel {
    fn state_dim(&self) -> usize {
        self.n
    }
    fn control_dim(&self) -> usize {
        self.p
    }
    fn noise_dim(&self) -> usize {
        self.d
    }
    fn sample_next(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        dt: f64,
        noise: &mut NoiseStream,
    ) -> Result<DVector<f64>> {
        let dw = noise.increment(dt);
        em_step(self, x, u, dt, &dw)
    }
}

/// One Euler–Maruyama step `x + (f(x) + g(x)u)dt + σ(x)dW`.
pub fn em_step(
    model: &SdeModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    dt: f64,
    dw: &[f64],
) -> Result<DVector<f64>> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!("dt must be positive, got {dt}")));
    }
    check_len("state", x.len(), model.n)?;
    check_len("control", u.len(), model.p)?;
    check_len("Brownian increment", dw.len(), model.d)?;

    let xs = x.as_slice();
    let drift = model.drift(xs) + model.control_matrix(xs) * u;
    let dw = DVector::from_column_slice(dw);
    let next = x + drift * dt + model.diffusion(xs) * dw;
    if let Some((entry, &value)) = next.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Diverged {
            step: None,
            entry,
            value,
        });
    }
    Ok(next)
}

fn check_len(what: &'static str, got: usize, expected: usize) -> Result<()> {
    if got == expected {
        Ok(())
    } else {
        Err(Error::Dimension { what, expected, got })
    }
}

/// Per-step annotations raised by a policy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct StepFlags {
    /// The barrier row had no control authority and demanded correction.
    pub uncontrollable: bool,
    /// The QP had no feasible point; a fallback control was applied.
    pub infeasible: bool,
    /// The state left an intermediate level set of a barrier chain.
    pub level_exit: bool,
}

impl StepFlags {
    pub fn any(&self) -> bool {
        self.uncontrollable || self.infeasible || self.level_exit
    }

    pub fn merge(&mut self, other: StepFlags) {
        self.uncontrollable |= other.uncontrollable;
        self.infeasible |= other.infeasible;
        self.level_exit |= other.level_exit;
    }
}

#[derive(Debug, Clone)]
pub struct Action {
    pub u: DVector<f64>,
    pub flags: StepFlags,
}

impl Action {
    pub fn plain(u: DVector<f64>) -> Self {
        Self {
            u,
            flags: StepFlags::default(),
        }
    }
}

/// State feedback `x ↦ u`.
pub trait Policy: Sync {
    fn act(&self, x: &DVector<f64>) -> Result<Action>;
}

/// Applies the same control at every state.
#[derive(Debug, Clone)]
pub struct ConstantPolicy(pub DVector<f64>);

impl ConstantPolicy {
    pub fn zero(p: usize) -> Self {
        Self(DVector::zeros(p))
    }
}

impl Policy for ConstantPolicy {
    fn act(&self, _x: &DVector<f64>) -> Result<Action> {
        Ok(Action::plain(self.0.clone()))
    }
}

/// Wraps a plain closure.
pub struct FnPolicy<F>(pub F);

impl<F> Policy for FnPolicy<F>
where
    F: Fn(&DVector<f64>) -> DVector<f64> + Sync,
{
    fn act(&self, x: &DVector<f64>) -> Result<Action> {
        Ok(Action::plain((self.0)(x)))
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub dt: f64,
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    pub flags: Vec<StepFlags>,
    pub seed: u64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.controls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.controls.is_empty()
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory holds the initial state")
    }

    /// CSV with header `t,x1..xn,u1..up`. The last row has empty control
    /// cells since no control is applied after the final state.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let n = self.states[0].len();
        let p = self.controls.first().map(|u| u.len()).unwrap_or(0);
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=p).map(|i| format!("u{i}")));
        writeln!(w, "{}", header.join(","))?;
        for (i, (t, x)) in self.times.iter().zip(&self.states).enumerate() {
            let mut row = vec![fmt17(*t)];
            row.extend(x.iter().map(|v| fmt17(*v)));
            match self.controls.get(i) {
                Some(u) => row.extend(u.iter().map(|v| fmt17(*v))),
                None => row.extend(std::iter::repeat_n(String::new(), p)),
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Integrates `n_steps` Euler–Maruyama steps under `policy`.
pub fn simulate(
    model: &SdeModel,
    x0: &DVector<f64>,
    policy: &dyn Policy,
    dt: f64,
    n_steps: usize,
    seed: u64,
) -> Result<Trajectory> {
    simulate_until(model, x0, policy, dt, n_steps, seed, |_, _| false)
}

/// Like [`simulate`], stopping after the first state for which `stop`
/// returns true. `stop` receives the step index and the new state.
pub fn simulate_until(
    model: &SdeModel,
    x0: &DVector<f64>,
    policy: &dyn Policy,
    dt: f64,
    n_steps: usize,
    seed: u64,
    mut stop: impl FnMut(usize, &DVector<f64>) -> bool,
) -> Result<Trajectory> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!("dt must be positive, got {dt}")));
    }
    if n_steps == 0 {
        return Err(Error::Config("n_steps must be at least 1".into()));
    }
    check_len("initial state", x0.len(), model.n)?;

    let mut noise = NoiseStream::new(seed, model.d);
    let mut traj = Trajectory {
        dt,
        times: Vec::with_capacity(n_steps + 1),
        states: Vec::with_capacity(n_steps + 1),
        controls: Vec::with_capacity(n_steps),
        flags: Vec::with_capacity(n_steps),
        seed,
    };
    traj.times.push(0.0);
    traj.states.push(x0.clone());
    let mut x = x0.clone();
    for step in 0..n_steps {
        let action = policy.act(&x)?;
        let dw = noise.increment(dt);
        let next = em_step(model, &x, &action.u, dt, &dw).map_err(|e| match e {
            Error::Diverged { entry, value, .. } => Error::Diverged {
                step: Some(step),
                entry,
                value,
            },
            other => other,
        })?;
        traj.controls.push(action.u);
        traj.flags.push(action.flags);
        traj.times.push((step + 1) as f64 * dt);
        traj.states.push(next.clone());
        x = next;
        if stop(step, &x) {
            break;
        }
    }
    Ok(traj)
}
