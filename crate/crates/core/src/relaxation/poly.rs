//! Sparse polynomials in the lifted state `(c, s, phi, I)`.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::ser::{SerializeSeq, Serializer};
use serde::Serialize;

/// Monomial `c^a s^b phi^g I^m`, stored as `[a, b, g, m]`.
///
/// Ordering is graded lexicographic: lower total degree first, then larger
/// exponents of earlier variables first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct Monomial(pub [u8; 4]);

impl Monomial {
    pub const ONE: Monomial = Monomial([0, 0, 0, 0]);
    pub const C: Monomial = Monomial([1, 0, 0, 0]);
    pub const S: Monomial = Monomial([0, 1, 0, 0]);
    pub const PHI: Monomial = Monomial([0, 0, 1, 0]);
    pub const CURRENT: Monomial = Monomial([0, 0, 0, 1]);

    pub fn new(a: u8, b: u8, g: u8, m: u8) -> Self {
        Monomial([a, b, g, m])
    }

    pub fn degree(&self) -> usize {
        self.0.iter().map(|&e| e as usize).sum()
    }

    pub fn mul(self, other: Monomial) -> Monomial {
        let mut e = self.0;
        for (x, y) in e.iter_mut().zip(other.0) {
            *x += y;
        }
        Monomial(e)
    }

    /// Whether the monomial only involves `phi` and `I`.
    pub fn is_clock_current_only(&self) -> bool {
        self.0[0] == 0 && self.0[1] == 0
    }

    pub fn eval(&self, x: &[f64; 4]) -> f64 {
        self.0
            .iter()
            .zip(x)
            .map(|(&e, v)| v.powi(e as i32))
            .product()
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| other.0.cmp(&self.0))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self == Monomial::ONE {
            return write!(f, "1");
        }
        let names = ["c", "s", "phi", "I"];
        let mut first = true;
        for (name, &e) in names.iter().zip(&self.0) {
            if e == 0 {
                continue;
            }
            if !first {
                write!(f, "*")?;
            }
            first = false;
            if e == 1 {
                write!(f, "{name}")?;
            } else {
                write!(f, "{name}^{e}")?;
            }
        }
        Ok(())
    }
}

/// All monomials of total degree at most `max_degree` in graded-lex order.
/// With `clock_current_only`, only `phi^g I^m` terms are produced.
pub fn monomials(max_degree: usize, clock_current_only: bool) -> Vec<Monomial> {
    let mut out = Vec::new();
    for total in 0..=max_degree {
        let mut layer = Vec::new();
        for a in 0..=total {
            for b in 0..=total - a {
                if clock_current_only && a + b > 0 {
                    continue;
                }
                for g in 0..=total - a - b {
                    let m = total - a - b - g;
                    layer.push(Monomial::new(a as u8, b as u8, g as u8, m as u8));
                }
            }
        }
        layer.sort();
        out.extend(layer);
    }
    out
}

/// Polynomial with real coefficients; zero terms are never stored.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Poly {
    terms: BTreeMap<Monomial, f64>,
}

impl Poly {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(v: f64) -> Self {
        Self::term(v, Monomial::ONE)
    }

    pub fn term(coef: f64, mono: Monomial) -> Self {
        let mut p = Self::zero();
        p.add_term(coef, mono);
        p
    }

    pub fn monomial(mono: Monomial) -> Self {
        Self::term(1.0, mono)
    }

    pub fn add_term(&mut self, coef: f64, mono: Monomial) {
        if coef == 0.0 {
            return;
        }
        let entry = self.terms.entry(mono).or_insert(0.0);
        *entry += coef;
        if *entry == 0.0 {
            self.terms.remove(&mono);
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (Monomial, f64)> + '_ {
        self.terms.iter().map(|(m, c)| (*m, *c))
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> usize {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn coefficient(&self, mono: Monomial) -> f64 {
        self.terms.get(&mono).copied().unwrap_or(0.0)
    }

    pub fn scale(&self, k: f64) -> Poly {
        let mut out = Poly::zero();
        for (m, c) in self.terms() {
            out.add_term(k * c, m);
        }
        out
    }

    pub fn mul_monomial(&self, mono: Monomial) -> Poly {
        let mut out = Poly::zero();
        for (m, c) in self.terms() {
            out.add_term(c, m.mul(mono));
        }
        out
    }

    pub fn eval(&self, x: &[f64; 4]) -> f64 {
        self.terms().map(|(m, c)| c * m.eval(x)).sum()
    }

    /// Substitutes constants for some variables (`None` keeps the variable).
    pub fn substitute(&self, values: [Option<f64>; 4]) -> Poly {
        let mut out = Poly::zero();
        for (m, c) in self.terms() {
            let mut e = m.0;
            let mut k = c;
            for (j, v) in values.iter().enumerate() {
                if let Some(v) = v {
                    k *= v.powi(e[j] as i32);
                    e[j] = 0;
                }
            }
            out.add_term(k, Monomial(e));
        }
        out
    }

    /// Ring reduction modulo `c^2 + s^2 - 1`: every `s^2` is replaced by
    /// `1 - c^2`, so the result has `s`-degree at most 1.
    pub fn reduce_circle(&self) -> Poly {
        let mut out = Poly::zero();
        for (m, c) in self.terms() {
            let [a, b, g, m_] = m.0;
            let k = b / 2;
            // (1 - c^2)^k = sum_j C(k, j) (-1)^j c^{2j}
            let mut binom = 1.0;
            for j in 0..=k {
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                out.add_term(c * sign * binom, Monomial([a + 2 * j, b % 2, g, m_]));
                binom = binom * (k - j) as f64 / (j + 1) as f64;
            }
        }
        out
    }
}

impl Serialize for Poly {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(self.terms.len()))?;
        for (m, c) in self.terms() {
            seq.serialize_element(&(m.0, c))?;
        }
        seq.end()
    }
}

impl fmt::Display for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        for (k, (m, c)) in self.terms().enumerate() {
            if k > 0 {
                write!(f, " {} ", if c < 0.0 { '-' } else { '+' })?;
            } else if c < 0.0 {
                write!(f, "-")?;
            }
            let a = c.abs();
            if m == Monomial::ONE {
                write!(f, "{a}")?;
            } else if a == 1.0 {
                write!(f, "{m}")?;
            } else {
                write!(f, "{a}*{m}")?;
            }
        }
        Ok(())
    }
}

impl Add for &Poly {
    type Output = Poly;
    fn add(self, rhs: &Poly) -> Poly {
        let mut out = self.clone();
        for (m, c) in rhs.terms() {
            out.add_term(c, m);
        }
        out
    }
}

impl Sub for &Poly {
    type Output = Poly;
    fn sub(self, rhs: &Poly) -> Poly {
        self + &rhs.scale(-1.0)
    }
}

impl Neg for &Poly {
    type Output = Poly;
    fn neg(self) -> Poly {
        self.scale(-1.0)
    }
}

impl Mul for &Poly {
    type Output = Poly;
    fn mul(self, rhs: &Poly) -> Poly {
        let mut out = Poly::zero();
        for (m1, c1) in self.terms() {
            for (m2, c2) in rhs.terms() {
                out.add_term(c1 * c2, m1.mul(m2));
            }
        }
        out
    }
}

/// Lie derivative along mode dynamics with level voltage `v`:
/// `(-s d/dc + c d/ds + d/dphi + v d/dI) w`.
pub fn lie_derivative(w: Monomial, v: f64) -> Poly {
    let [a, b, g, m] = w.0;
    let mut out = Poly::zero();
    if a > 0 {
        out.add_term(-(a as f64), Monomial([a - 1, b + 1, g, m]));
    }
    if b > 0 {
        out.add_term(b as f64, Monomial([a + 1, b - 1, g, m]));
    }
    if g > 0 {
        out.add_term(g as f64, Monomial([a, b, g - 1, m]));
    }
    if m > 0 {
        out.add_term(v * m as f64, Monomial([a, b, g, m - 1]));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monomial_counts() {
        assert_eq!(monomials(2, false).len(), 15);
        assert_eq!(monomials(6, false).len(), 210);
        assert_eq!(monomials(4, true).len(), 15);
        let m = monomials(3, false);
        assert!(m.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(m[0], Monomial::ONE);
        assert_eq!(m[1], Monomial::C);
    }

    #[test]
    fn lie_derivative_rules() {
        assert_eq!(
            lie_derivative(Monomial::C, 0.5),
            Poly::term(-1.0, Monomial::S)
        );
        assert_eq!(
            lie_derivative(Monomial::new(0, 0, 0, 2), 0.5),
            Poly::term(1.0, Monomial::CURRENT)
        );
        let w = lie_derivative(Monomial::new(1, 1, 1, 0), 0.0);
        let mut expect = Poly::zero();
        expect.add_term(-1.0, Monomial::new(0, 2, 1, 0));
        expect.add_term(1.0, Monomial::new(2, 0, 1, 0));
        expect.add_term(1.0, Monomial::new(1, 1, 0, 0));
        assert_eq!(w, expect);
    }

    #[test]
    fn circle_reduction_preserves_values_on_circle() {
        let p = &Poly::term(3.0, Monomial::new(1, 5, 2, 1))
            + &Poly::term(-2.0, Monomial::new(0, 4, 0, 0));
        let r = p.reduce_circle();
        assert!(r.terms().all(|(m, _)| m.0[1] <= 1));
        let t: f64 = 0.7;
        let x = [t.cos(), t.sin(), 0.3, -1.2];
        assert!((p.eval(&x) - r.eval(&x)).abs() < 1e-13);
    }

    #[test]
    fn display() {
        let p = &Poly::term(2.0, Monomial::new(1, 0, 0, 2)) - &Poly::constant(1.5);
        assert_eq!(p.to_string(), "-1.5 + 2*c*I^2");
    }
}
