//! Worst-case lower bounds on the probability of staying in the safe set.
//!
//! * SCBF: `P ≥ h(ξ)/c`
//! * SZCBF with linear class-K function `k·h`: `P ≥ (h(ξ)/c)·e^{-cT}` over `[0, T]`
//! * relative degree `r`: `P ≥ ∏_j b_j(ξ)/c_j`

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BoundKind {
    #[serde(rename = "SCBF")]
    Scbf,
    #[serde(rename = "SZCBF")]
    Szcbf,
    #[serde(rename = "high-order")]
    HighOrder,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundInput {
    Scbf { h0: f64, c: f64 },
    Szcbf { h0: f64, c: f64, k: f64, horizon: f64 },
    /// `(b_j(ξ), c_j)` for `j = 0..r`.
    HighOrder { levels: Vec<(f64, f64)> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SafetyBound {
    pub kind: BoundKind,
    pub value: f64,
    pub input: BoundInput,
}

fn ratio(level: usize, b: f64, c: f64) -> Result<f64> {
    if !b.is_finite() || !c.is_finite() {
        return Err(Error::Config(format!("non-finite bound input at level {level}")));
    }
    if b < 0.0 {
        return Err(Error::InvalidInitialState { level, value: b });
    }
    if c <= 0.0 {
        return Err(Error::Config(format!("supremum c_{level} must be positive, got {c}")));
    }
    Ok((b / c).min(1.0))
}

pub fn worst_case_bound(input: BoundInput) -> Result<SafetyBound> {
    let (kind, value) = match &input {
        BoundInput::Scbf { h0, c } => (BoundKind::Scbf, ratio(0, *h0, *c)?),
        BoundInput::Szcbf { h0, c, k, horizon } => {
            if !(*horizon >= 0.0) {
                return Err(Error::Config(format!("horizon must be nonnegative, got {horizon}")));
            }
            if !(*k > 0.0) {
                return Err(Error::Config(format!("SZCBF gain k must be positive, got {k}")));
            }
            (BoundKind::Szcbf, ratio(0, *h0, *c)? * (-c * horizon).exp())
        }
        BoundInput::HighOrder { levels } => {
            if levels.is_empty() {
                return Err(Error::Config("high-order bound needs at least one level".into()));
            }
            let mut p = 1.0;
            for (j, (b, c)) in levels.iter().enumerate() {
                p *= ratio(j, *b, *c)?;
            }
            (BoundKind::HighOrder, p)
        }
    };
    Ok(SafetyBound {
        kind,
        value: value.clamp(0.0, 1.0),
        input,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn szcbf_boundary_algebra() {
        let b = worst_case_bound(BoundInput::Szcbf {
            h0: 2.0,
            c: 2.0,
            k: 1.0,
            horizon: 1.5,
        })
        .unwrap();
        assert!((b.value - (-3.0f64).exp()).abs() < 1e-15);
        let b = worst_case_bound(BoundInput::Szcbf {
            h0: 2.0,
            c: 2.0,
            k: 1.0,
            horizon: 0.0,
        })
        .unwrap();
        assert_eq!(b.value, 1.0);
    }

    #[test]
    fn negative_level_names_index() {
        let err = worst_case_bound(BoundInput::HighOrder {
            levels: vec![(0.5, 1.0), (-0.1, 2.0)],
        })
        .unwrap_err();
        assert_eq!(err, Error::InvalidInitialState { level: 1, value: -0.1 });
    }

    #[test]
    fn product_of_levels() {
        let b = worst_case_bound(BoundInput::HighOrder {
            levels: vec![(0.5, 1.0), (1.0, 4.0)],
        })
        .unwrap();
        assert!((b.value - 0.125).abs() < 1e-15);
    }

    #[test]
    fn clamped_above() {
        let b = worst_case_bound(BoundInput::Scbf { h0: 3.0, c: 1.0 }).unwrap();
        assert_eq!(b.value, 1.0);
    }
}
