//! Adaptive Gauss–Legendre quadrature.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for k in 0..m {
        // Tricomi's initial guess, then Newton on P_n
        let mut x = (PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d.is_finite() {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[k] = -x;
        nodes[n - 1 - k] = x;
        weights[k] = w;
        weights[n - 1 - k] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// A pair of nested rules used for error estimation on each panel.
#[derive(Debug, Clone)]
pub struct Quadrature {
    coarse: (Vec<f64>, Vec<f64>),
    fine: (Vec<f64>, Vec<f64>),
    max_depth: usize,
}

impl Default for Quadrature {
    fn default() -> Self {
        Self::new(12)
    }
}

impl Quadrature {
    /// Compares `order`-point against `2 * order`-point rules.
    pub fn new(order: usize) -> Self {
        Self {
            coarse: gauss_legendre(order),
            fine: gauss_legendre(2 * order),
            max_depth: 40,
        }
    }

    fn apply(rule: &(Vec<f64>, Vec<f64>), f: &impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        rule.0
            .iter()
            .zip(&rule.1)
            .map(|(x, w)| w * f(mid + half * x))
            .sum::<f64>()
            * half
    }

    /// `int_a^b f` to absolute tolerance `tol` by recursive bisection.
    pub fn integrate(&self, f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
        if a == b {
            return Ok(0.0);
        }
        let mut worst = 0.0f64;
        let value = self.recurse(&f, a, b, tol, 0, &mut worst);
        if worst > tol {
            return Err(Error::QuadratureAccuracy { achieved: worst });
        }
        Ok(value)
    }

    fn recurse(
        &self,
        f: &impl Fn(f64) -> f64,
        a: f64,
        b: f64,
        tol: f64,
        depth: usize,
        worst: &mut f64,
    ) -> f64 {
        let coarse = Self::apply(&self.coarse, f, a, b);
        let fine = Self::apply(&self.fine, f, a, b);
        let err = (fine - coarse).abs();
        if err <= tol || depth >= self.max_depth {
            if err > tol {
                *worst = worst.max(err);
            }
            return fine;
        }
        let mid = 0.5 * (a + b);
        self.recurse(f, a, mid, 0.5 * tol, depth + 1, worst)
            + self.recurse(f, mid, b, 0.5 * tol, depth + 1, worst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_is_exact_for_polynomials() {
        let (x, w) = gauss_legendre(5);
        for p in 0..10 {
            let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(p)).sum();
            let exact = if p % 2 == 0 {
                2.0 / (p as f64 + 1.0)
            } else {
                0.0
            };
            assert!((q - exact).abs() < 1e-14, "degree {p}");
        }
    }

    #[test]
    fn weights_sum_to_two() {
        for n in [1, 2, 7, 24, 40] {
            let (_, w) = gauss_legendre(n);
            assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
        }
    }

    #[test]
    fn adaptive_integrates_smooth_and_kinked() {
        let q = Quadrature::default();
        let v = q.integrate(f64::sin, 0.0, PI, 1e-13).unwrap();
        assert!((v - 2.0).abs() < 1e-13);
        let v = q
            .integrate(|x: f64| (x - 0.3).abs(), 0.0, 1.0, 1e-10)
            .unwrap();
        assert!((v - (0.045 + 0.245)).abs() < 1e-10);
    }
}
