use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jet::Scalar;

/// Ordered set of monomial features `∏ xᵢ^eᵢ`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisSet {
    n: usize,
    exponents: Vec<Vec<u32>>,
}

impl BasisSet {
    pub fn from_exponents(n: usize, exponents: Vec<Vec<u32>>) -> Result<Self> {
        if exponents.is_empty() {
            return Err(Error::Config("basis needs at least one feature".into()));
        }
        if let Some(bad) = exponents.iter().find(|e| e.len() != n) {
            return Err(Error::Dimension {
                what: "monomial exponents",
                expected: n,
                got: bad.len(),
            });
        }
        Ok(Self { n, exponents })
    }

    /// `[1, x1, x2, x1^2, x2^2, x1*x2, x1^3, x2^3]`.
    pub fn planar_cubic() -> Self {
        Self::parse(2, &["1", "x1", "x2", "x1^2", "x2^2", "x1*x2", "x1^3", "x2^3"]).expect("valid names")
    }

    /// Every monomial of total degree `≤ degree`, graded.
    pub fn total_degree(n: usize, degree: u32) -> Self {
        let mut exps = Vec::new();
        for deg in 0..=degree {
            let mut cur = vec![0u32; n];
            collect(&mut exps, &mut cur, 0, deg);
        }
        Self { n, exponents: exps }
    }

    /// Parses names such as `1`, `x2`, `x1^3`, `x1*x2^2` (variables 1-based).
    pub fn parse<S: AsRef<str>>(n: usize, names: &[S]) -> Result<Self> {
        let exps = names
            .iter()
            .map(|name| parse_monomial(n, name.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        Self::from_exponents(n, exps)
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.exponents.iter().map(|e| monomial_name(e)).collect()
    }

    pub fn eval<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        self.exponents
            .iter()
            .map(|e| {
                let mut term = x[0].constant_like(1.0);
                for (xi, &p) in x.iter().zip(e) {
                    if p > 0 {
                        term = term * xi.powi(p as i32);
                    }
                }
                term
            })
            .collect()
    }

    pub fn row(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_vec(self.eval(x))
    }

    /// Design matrix `Φ` with one row per state.
    pub fn design_matrix(&self, states: &[DVector<f64>]) -> DMatrix<f64> {
        let mut phi = DMatrix::zeros(states.len(), self.len());
        for (i, x) in states.iter().enumerate() {
            for (j, v) in self.eval(x.as_slice()).into_iter().enumerate() {
                phi[(i, j)] = v;
            }
        }
        phi
    }
}

fn collect(out: &mut Vec<Vec<u32>>, cur: &mut [u32], pos: usize, remaining: u32) {
    if pos + 1 == cur.len() {
        cur[pos] = remaining;
        out.push(cur.to_vec());
        cur[pos] = 0;
        return;
    }
    for k in (0..=remaining).rev() {
        cur[pos] = k;
        collect(out, cur, pos + 1, remaining - k);
    }
    cur[pos] = 0;
}

fn monomial_name(e: &[u32]) -> String {
    let parts: Vec<String> = e
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0)
        .map(|(i, &p)| if p == 1 { format!("x{}", i + 1) } else { format!("x{}^{}", i + 1, p) })
        .collect();
    if parts.is_empty() {
        "1".into()
    } else {
        parts.join("*")
    }
}

fn parse_monomial(n: usize, name: &str) -> Result<Vec<u32>> {
    let mut e = vec![0u32; n];
    let name = name.trim();
    if name == "1" {
        return Ok(e);
    }
    let bad = || Error::Config(format!("cannot parse basis feature `{name}`"));
    for factor in name.split('*') {
        let factor = factor.trim();
        let rest = factor.strip_prefix('x').ok_or_else(bad)?;
        let (idx, pow) = match rest.split_once('^') {
            Some((i, p)) => (i, p.parse::<u32>().map_err(|_| bad())?),
            None => (rest, 1),
        };
        let idx: usize = idx.parse().map_err(|_| bad())?;
        if idx == 0 || idx > n {
            return Err(bad());
        }
        e[idx - 1] += pow;
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planar_cubic_names_roundtrip() {
        let b = BasisSet::planar_cubic();
        assert_eq!(b.names(), ["1", "x1", "x2", "x1^2", "x2^2", "x1*x2", "x1^3", "x2^3"]);
        assert_eq!(BasisSet::parse(2, &b.names()).unwrap(), b);
    }

    #[test]
    fn evaluates_features() {
        let b = BasisSet::planar_cubic();
        assert_eq!(b.eval(&[2.0, 3.0]), vec![1.0, 2.0, 3.0, 4.0, 9.0, 6.0, 8.0, 27.0]);
    }

    #[test]
    fn rejects_bad_names() {
        assert!(BasisSet::parse(2, &["x3"]).is_err());
        assert!(BasisSet::parse(2, &["y1"]).is_err());
        assert!(BasisSet::parse(2, &["x1^a"]).is_err());
    }

    #[test]
    fn total_degree_counts() {
        assert_eq!(BasisSet::total_degree(2, 3).len(), 10);
    }
}
