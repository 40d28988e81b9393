use serde::{Deserialize, Serialize};

use super::qp::{ConstraintRow, RowKind};
use crate::barrier::{generator, BarrierChain, ScalarField};
use crate::error::Result;
use crate::sde::SdeModel;

/// `|c1| ≤ UNCONTROLLABLE_TOL·(1 + |c0|)` counts as no control authority.
pub const UNCONTROLLABLE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BarrierKind {
    /// `𝒜b(x,u) ≥ 0`.
    Scbf,
    /// `𝒜b(x,u) + k·b(x) ≥ 0`.
    Szcbf { k: f64 },
}

/// Row `c1ᵀu + c0 ≥ 0` from the generator of the chain's top level under the
/// chain's own dynamics.
pub fn scbf_constraint(chain: &BarrierChain, x: &[f64], kind: BarrierKind) -> Result<ConstraintRow> {
    let gen = chain.top_generator(x)?;
    let (b, row_kind) = match kind {
        BarrierKind::Scbf => (gen.c0, RowKind::Scbf),
        BarrierKind::Szcbf { k } => (gen.c0 + k * chain.top().value(x), RowKind::Szcbf),
    };
    let uncontrollable = b < 0.0 && gen.c1.amax() <= UNCONTROLLABLE_TOL * (1.0 + gen.c0.abs());
    Ok(ConstraintRow {
        a: gen.c1,
        b,
        slack: 0.0,
        kind: row_kind,
        uncontrollable,
    })
}

/// Soft decrease condition `𝒜V(x,u) ≤ −γV(x) + δ`, stored as
/// `−c1ᵀu + δ − c0 − γV ≥ 0`.
pub fn clf_constraint(v: &dyn ScalarField, model: &SdeModel, x: &[f64], gamma: f64) -> Result<ConstraintRow> {
    let gen = generator(model, v, x)?;
    Ok(ConstraintRow {
        a: -gen.c1,
        b: -gen.c0 - gamma * v.value(x),
        slack: 1.0,
        kind: RowKind::Clf,
        uncontrollable: false,
    })
}

