//! Forward-mode automatic differentiation with truncated multivariate
//! Taylor polynomials ("jets").
//!
//! A [`Jet`] of order `K` in `n` variables carries every Taylor coefficient
//! `c_α = ∂^α f(x₀) / α!` with `|α| ≤ K`. Order 1 is the classic dual
//! number; order 2 is enough for gradients and Hessians; higher orders let us
//! differentiate expressions that already contain second derivatives (the
//! nested generators of a barrier chain) without any symbolic expansion.
//!
//! Monomials are stored graded by total degree, so the coefficient vector of
//! an order `K-1` jet is a prefix of the order `K` one. Truncation is a slice.
//!
//! Functions meant to be differentiated are written once against the
//! [`Scalar`] trait and evaluated with either `f64` or `Jet`.

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::Arc;

/// Number type accepted by differentiable expressions.
pub trait Scalar:
    Clone
    + fmt::Debug
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    /// A constant carrying the same layout as `self`.
    fn constant_like(&self, v: f64) -> Self;
    /// The primal (order-0) value.
    fn value(&self) -> f64;
    fn powi(&self, n: i32) -> Self;
    fn powf(&self, p: f64) -> Self;
    fn sqrt(&self) -> Self;
    fn exp(&self) -> Self;
    fn ln(&self) -> Self;
    fn sin(&self) -> Self;
    fn cos(&self) -> Self;
}

impl Scalar for f64 {
    fn constant_like(&self, v: f64) -> Self {
        v
    }
    fn value(&self) -> f64 {
        *self
    }
    fn powi(&self, n: i32) -> Self {
        f64::powi(*self, n)
    }
    fn powf(&self, p: f64) -> Self {
        f64::powf(*self, p)
    }
    fn sqrt(&self) -> Self {
        f64::sqrt(*self)
    }
    fn exp(&self) -> Self {
        f64::exp(*self)
    }
    fn ln(&self) -> Self {
        f64::ln(*self)
    }
    fn sin(&self) -> Self {
        f64::sin(*self)
    }
    fn cos(&self) -> Self {
        f64::cos(*self)
    }
}

/// Monomial bookkeeping shared by every jet with the same `(n, order)`.
#[derive(Debug)]
pub struct Layout {
    n: usize,
    order: usize,
    exponents: Vec<Vec<u8>>,
    degree_start: Vec<usize>,
    index: HashMap<Vec<u8>, usize>,
    /// `(i, j, k)`: coefficient `i` times coefficient `j` lands in `k`.
    products: Vec<(u16, u16, u16)>,
    /// Per variable: `(dst, src, factor)` for the partial derivative, where
    /// `dst` indexes the order `K-1` layout.
    partials: Vec<Vec<(usize, usize, f64)>>,
}

impl Layout {
    fn build(n: usize, order: usize) -> Self {
        let mut exponents: Vec<Vec<u8>> = Vec::new();
        let mut degree_start = Vec::with_capacity(order + 2);
        for deg in 0..=order {
            degree_start.push(exponents.len());
            let mut cur = vec![0u8; n];
            push_compositions(&mut exponents, &mut cur, 0, deg);
        }
        degree_start.push(exponents.len());

        let index: HashMap<Vec<u8>, usize> = exponents
            .iter()
            .enumerate()
            .map(|(i, e)| (e.clone(), i))
            .collect();

        let mut products = Vec::new();
        for (i, a) in exponents.iter().enumerate() {
            for (j, b) in exponents.iter().enumerate() {
                let da: usize = a.iter().map(|&v| v as usize).sum();
                let db: usize = b.iter().map(|&v| v as usize).sum();
                if da + db > order {
                    continue;
                }
                let sum: Vec<u8> = a.iter().zip(b).map(|(x, y)| x + y).collect();
                products.push((i as u16, j as u16, index[&sum] as u16));
            }
        }

        let lower = if order == 0 { 0 } else { degree_start[order] };
        let partials = (0..n)
            .map(|var| {
                (0..lower)
                    .map(|dst| {
                        let mut e = exponents[dst].clone();
                        e[var] += 1;
                        (dst, index[&e], e[var] as f64)
                    })
                    .collect()
            })
            .collect();

        Self {
            n,
            order,
            exponents,
            degree_start,
            index,
            products,
            partials,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    /// Number of coefficients of total degree at most `order`.
    fn len_up_to(&self, order: usize) -> usize {
        self.degree_start[order + 1]
    }

    pub fn index_of(&self, exponents: &[u8]) -> Option<usize> {
        self.index.get(exponents).copied()
    }
}

fn push_compositions(out: &mut Vec<Vec<u8>>, cur: &mut [u8], pos: usize, remaining: usize) {
    if pos + 1 == cur.len() {
        cur[pos] = remaining as u8;
        out.push(cur.to_vec());
        cur[pos] = 0;
        return;
    }
    if cur.is_empty() {
        if remaining == 0 {
            out.push(Vec::new());
        }
        return;
    }
    for k in (0..=remaining).rev() {
        cur[pos] = k as u8;
        push_compositions(out, cur, pos + 1, remaining - k);
    }
    cur[pos] = 0;
}

thread_local! {
    static LAYOUTS: RefCell<HashMap<(usize, usize), Arc<Layout>>> = RefCell::new(HashMap::new());
}

/// Shared layout for `n` variables truncated at `order`.
pub fn layout(n: usize, order: usize) -> Arc<Layout> {
    LAYOUTS.with(|cache| {
        cache
            .borrow_mut()
            .entry((n, order))
            .or_insert_with(|| Arc::new(Layout::build(n, order)))
            .clone()
    })
}

/// Truncated multivariate Taylor polynomial.
#[derive(Clone)]
pub struct Jet {
    coeffs: Vec<f64>,
    layout: Arc<Layout>,
}

impl fmt::Debug for Jet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Jet")
            .field("n", &self.layout.n)
            .field("order", &self.layout.order)
            .field("coeffs", &self.coeffs)
            .finish()
    }
}

impl Jet {
    pub fn constant(v: f64, layout: Arc<Layout>) -> Self {
        let mut coeffs = vec![0.0; layout.len()];
        coeffs[0] = v;
        Self { coeffs, layout }
    }

    /// # Panics
    /// Panics if `coeffs` does not match the layout size.
    pub fn from_parts(coeffs: Vec<f64>, layout: Arc<Layout>) -> Self {
        assert_eq!(coeffs.len(), layout.len(), "coefficient count does not match layout");
        Self { coeffs, layout }
    }

    /// Independent variables `x₀ᵢ + tᵢ` expanded around `x0` to `order`.
    pub fn variables(x0: &[f64], order: usize) -> Vec<Jet> {
        let lay = layout(x0.len(), order);
        (0..x0.len())
            .map(|i| {
                let mut j = Jet::constant(x0[i], lay.clone());
                if order >= 1 {
                    let mut e = vec![0u8; x0.len()];
                    e[i] = 1;
                    let idx = lay.index_of(&e).expect("first-order monomial");
                    j.coeffs[idx] = 1.0;
                }
                j
            })
            .collect()
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn order(&self) -> usize {
        self.layout.order
    }

    pub fn nvars(&self) -> usize {
        self.layout.n
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Taylor coefficient of the monomial with the given exponents, zero if
    /// beyond the truncation order.
    pub fn coefficient(&self, exponents: &[u8]) -> f64 {
        self.layout
            .index_of(exponents)
            .map(|i| self.coeffs[i])
            .unwrap_or(0.0)
    }

    pub fn primal(&self) -> f64 {
        self.coeffs[0]
    }

    /// First partial derivatives; zeros for an order-0 jet.
    pub fn gradient(&self) -> Vec<f64> {
        let n = self.layout.n;
        (0..n)
            .map(|i| {
                let mut e = vec![0u8; n];
                e[i] = 1;
                self.coefficient(&e)
            })
            .collect()
    }

    /// Second partial derivatives as a row-major `n × n` buffer.
    pub fn hessian(&self) -> Vec<f64> {
        let n = self.layout.n;
        let mut h = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let mut e = vec![0u8; n];
                e[i] += 1;
                e[j] += 1;
                let c = self.coefficient(&e);
                let v = if i == j { 2.0 * c } else { c };
                h[i * n + j] = v;
                h[j * n + i] = v;
            }
        }
        h
    }

    /// Truncate to a lower order (no-op when `order` is not lower).
    pub fn truncate(&self, order: usize) -> Jet {
        if order >= self.layout.order {
            return self.clone();
        }
        let lay = layout(self.layout.n, order);
        Jet {
            coeffs: self.coeffs[..lay.len()].to_vec(),
            layout: lay,
        }
    }

    /// Partial derivative with respect to variable `var`, one order lower.
    ///
    /// # Panics
    /// Panics on an order-0 jet; there is nothing left to differentiate.
    pub fn partial(&self, var: usize) -> Jet {
        assert!(self.layout.order >= 1, "cannot differentiate an order-0 jet");
        let lay = layout(self.layout.n, self.layout.order - 1);
        let mut coeffs = vec![0.0; lay.len()];
        for &(dst, src, factor) in &self.layout.partials[var] {
            coeffs[dst] = factor * self.coeffs[src];
        }
        Jet { coeffs, layout: lay }
    }

    fn aligned<'a>(&'a self, other: &'a Jet) -> (&'a [f64], &'a [f64], Arc<Layout>) {
        assert_eq!(self.layout.n, other.layout.n, "jets over different variable counts");
        let lay = if self.layout.order <= other.layout.order {
            self.layout.clone()
        } else {
            other.layout.clone()
        };
        let len = lay.len();
        (&self.coeffs[..len], &other.coeffs[..len], lay)
    }

    fn add_jet(&self, other: &Jet) -> Jet {
        let (a, b, layout) = self.aligned(other);
        Jet {
            coeffs: a.iter().zip(b).map(|(x, y)| x + y).collect(),
            layout,
        }
    }

    fn sub_jet(&self, other: &Jet) -> Jet {
        let (a, b, layout) = self.aligned(other);
        Jet {
            coeffs: a.iter().zip(b).map(|(x, y)| x - y).collect(),
            layout,
        }
    }

    fn mul_jet(&self, other: &Jet) -> Jet {
        let (a, b, layout) = self.aligned(other);
        let mut coeffs = vec![0.0; layout.len()];
        for &(i, j, k) in &layout.products {
            coeffs[k as usize] += a[i as usize] * b[j as usize];
        }
        Jet { coeffs, layout }
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Jet {
        Jet {
            coeffs: self.coeffs.iter().map(|&c| f(c)).collect(),
            layout: self.layout.clone(),
        }
    }

    /// Compose with a univariate function given its scaled Taylor
    /// coefficients `g⁽ᵏ⁾(a₀)/k!` for `k = 0..=order`.
    fn compose(&self, scaled: &[f64]) -> Jet {
        let order = self.layout.order;
        let mut out = Jet::constant(scaled[0], self.layout.clone());
        if order == 0 {
            return out;
        }
        let mut tail = self.clone();
        tail.coeffs[0] = 0.0;
        let mut power = tail.clone();
        for (k, &s) in scaled.iter().enumerate().skip(1) {
            if k > 1 {
                power = power.mul_jet(&tail);
            }
            if s != 0.0 {
                for (o, p) in out.coeffs.iter_mut().zip(&power.coeffs) {
                    *o += s * p;
                }
            }
        }
        out
    }

    pub fn recip(&self) -> Jet {
        let a = self.coeffs[0];
        let scaled: Vec<f64> = (0..=self.order())
            .map(|k| if k % 2 == 0 { 1.0 } else { -1.0 } / a.powi(k as i32 + 1))
            .collect();
        self.compose(&scaled)
    }

    /// Highest degree carrying a nonzero coefficient; 0 for constants.
    pub fn effective_degree(&self) -> usize {
        let mut deg = 0;
        for d in 0..=self.layout.order {
            let range = self.layout.degree_start[d]..self.layout.len_up_to(d);
            if self.coeffs[range].iter().any(|c| *c != 0.0) {
                deg = d;
            }
        }
        deg
    }
}

impl Scalar for Jet {
    fn constant_like(&self, v: f64) -> Self {
        Jet::constant(v, self.layout.clone())
    }

    fn value(&self) -> f64 {
        self.coeffs[0]
    }

    fn powi(&self, n: i32) -> Self {
        if n < 0 {
            return self.recip().powi(-n);
        }
        let mut result = self.constant_like(1.0);
        let mut base = self.clone();
        let mut e = n as u32;
        while e > 0 {
            if e & 1 == 1 {
                result = result.mul_jet(&base);
            }
            e >>= 1;
            if e > 0 {
                base = base.mul_jet(&base);
            }
        }
        result
    }

    fn powf(&self, p: f64) -> Self {
        let a = self.coeffs[0];
        let mut binom = 1.0;
        let scaled: Vec<f64> = (0..=self.order())
            .map(|k| {
                if k > 0 {
                    binom *= (p - (k as f64 - 1.0)) / k as f64;
                }
                binom * a.powf(p - k as f64)
            })
            .collect();
        self.compose(&scaled)
    }

    fn sqrt(&self) -> Self {
        self.powf(0.5)
    }

    fn exp(&self) -> Self {
        let e = self.coeffs[0].exp();
        let mut fact = 1.0;
        let scaled: Vec<f64> = (0..=self.order())
            .map(|k| {
                if k > 0 {
                    fact *= k as f64;
                }
                e / fact
            })
            .collect();
        self.compose(&scaled)
    }

    fn ln(&self) -> Self {
        let a = self.coeffs[0];
        let scaled: Vec<f64> = (0..=self.order())
            .map(|k| {
                if k == 0 {
                    a.ln()
                } else {
                    let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                    sign / (k as f64 * a.powi(k as i32))
                }
            })
            .collect();
        self.compose(&scaled)
    }

    fn sin(&self) -> Self {
        let (s, c) = self.coeffs[0].sin_cos();
        let cycle = [s, c, -s, -c];
        let mut fact = 1.0;
        let scaled: Vec<f64> = (0..=self.order())
            .map(|k| {
                if k > 0 {
                    fact *= k as f64;
                }
                cycle[k % 4] / fact
            })
            .collect();
        self.compose(&scaled)
    }

    fn cos(&self) -> Self {
        let (s, c) = self.coeffs[0].sin_cos();
        let cycle = [c, -s, -c, s];
        let mut fact = 1.0;
        let scaled: Vec<f64> = (0..=self.order())
            .map(|k| {
                if k > 0 {
                    fact *= k as f64;
                }
                cycle[k % 4] / fact
            })
            .collect();
        self.compose(&scaled)
    }
}

macro_rules! jet_binop {
    ($trait:ident, $method:ident, $inner:ident) => {
        impl $trait<Jet> for Jet {
            type Output = Jet;
            fn $method(self, rhs: Jet) -> Jet {
                self.$inner(&rhs)
            }
        }
        impl<'a> $trait<&'a Jet> for Jet {
            type Output = Jet;
            fn $method(self, rhs: &'a Jet) -> Jet {
                self.$inner(rhs)
            }
        }
        impl<'a> $trait<Jet> for &'a Jet {
            type Output = Jet;
            fn $method(self, rhs: Jet) -> Jet {
                self.$inner(&rhs)
            }
        }
        impl<'a, 'b> $trait<&'b Jet> for &'a Jet {
            type Output = Jet;
            fn $method(self, rhs: &'b Jet) -> Jet {
                self.$inner(rhs)
            }
        }
    };
}

jet_binop!(Add, add, add_jet);
jet_binop!(Sub, sub, sub_jet);
jet_binop!(Mul, mul, mul_jet);

impl Div<Jet> for Jet {
    type Output = Jet;
    fn div(self, rhs: Jet) -> Jet {
        self.mul_jet(&rhs.recip())
    }
}

impl<'a, 'b> Div<&'b Jet> for &'a Jet {
    type Output = Jet;
    fn div(self, rhs: &'b Jet) -> Jet {
        self.mul_jet(&rhs.recip())
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.map(|c| -c)
    }
}

impl Neg for &Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.map(|c| -c)
    }
}

impl Add<f64> for Jet {
    type Output = Jet;
    fn add(mut self, rhs: f64) -> Jet {
        self.coeffs[0] += rhs;
        self
    }
}

impl Sub<f64> for Jet {
    type Output = Jet;
    fn sub(mut self, rhs: f64) -> Jet {
        self.coeffs[0] -= rhs;
        self
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    fn mul(self, rhs: f64) -> Jet {
        self.map(|c| c * rhs)
    }
}

impl Div<f64> for Jet {
    type Output = Jet;
    fn div(self, rhs: f64) -> Jet {
        self.map(|c| c / rhs)
    }
}

impl Add<Jet> for f64 {
    type Output = Jet;
    fn add(self, rhs: Jet) -> Jet {
        rhs + self
    }
}

impl Sub<Jet> for f64 {
    type Output = Jet;
    fn sub(self, rhs: Jet) -> Jet {
        (-rhs) + self
    }
}

impl Mul<Jet> for f64 {
    type Output = Jet;
    fn mul(self, rhs: Jet) -> Jet {
        rhs * self
    }
}
