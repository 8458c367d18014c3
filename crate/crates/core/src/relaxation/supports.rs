//! Semialgebraic supports of the measures.
//!
//! All intervals are derived from the interlock constraints of the pattern
//! problem so that the trajectory of any feasible pattern (started with clock
//! `pi/2 - alpha^d`) stays inside them.

use std::f64::consts::FRAC_PI_2;

use serde::Serialize;

use super::poly::{Monomial, Poly};

/// `{x : g(x) = 0 for g in equalities, g(x) >= 0 for g in inequalities}`.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct SupportSet {
    pub equalities: Vec<Poly>,
    pub inequalities: Vec<Poly>,
}

impl SupportSet {
    pub fn contains(&self, x: &[f64; 4], tol: f64) -> bool {
        self.equalities.iter().all(|g| g.eval(x).abs() <= tol)
            && self.inequalities.iter().all(|g| g.eval(x) >= -tol)
    }

    fn with_circle_arc(mut self, from: f64, to: f64) -> Self {
        let mut circle = Poly::zero();
        circle.add_term(1.0, Monomial::new(2, 0, 0, 0));
        circle.add_term(1.0, Monomial::new(0, 2, 0, 0));
        circle.add_term(-1.0, Monomial::ONE);
        self.equalities.push(circle);
        // s cos(from) - c sin(from) >= 0 and c sin(to) - s cos(to) >= 0
        let mut lower = Poly::zero();
        lower.add_term(from.cos(), Monomial::S);
        lower.add_term(-from.sin(), Monomial::C);
        let mut upper = Poly::zero();
        upper.add_term(to.sin(), Monomial::C);
        upper.add_term(-to.cos(), Monomial::S);
        self.inequalities.push(lower);
        self.inequalities.push(upper);
        self
    }

    /// `lo <= x <= hi` as two linear inequalities plus the redundant product
    /// `(x - lo)(hi - x) >= 0`, which bounds the top-degree moments of `x`.
    fn with_interval(mut self, var: Monomial, lo: f64, hi: f64) -> Self {
        let mut above = Poly::monomial(var);
        above.add_term(-lo, Monomial::ONE);
        let mut below = Poly::constant(hi);
        below.add_term(-1.0, var);
        let product = &above * &below;
        self.inequalities.push(above);
        self.inequalities.push(below);
        self.inequalities.push(product);
        self
    }
}

/// Geometry shared by all supports of one problem.
#[derive(Debug, Clone, Copy)]
pub(crate) struct SupportGeometry {
    pub pulse_number: usize,
    pub interlock: f64,
    pub current_limit: f64,
}

impl SupportGeometry {
    fn d(&self) -> f64 {
        self.pulse_number as f64
    }

    /// Largest initial/terminal clock value, `pi/2 - Theta (d - 1/2)`.
    fn clock_end_max(&self) -> f64 {
        FRAC_PI_2 - self.interlock * (self.d() - 0.5)
    }

    /// Initial measure over `(phi, I)`.
    pub fn initial(&self) -> SupportSet {
        SupportSet::default()
            .with_interval(Monomial::PHI, self.interlock / 2.0, self.clock_end_max())
            .with_interval(Monomial::CURRENT, -self.current_limit, self.current_limit)
    }

    /// Terminal measure over `(phi, I)`, or over `phi` alone when the end
    /// current is pinned to zero; `(c, s) = (0, 1)` is implicit.
    pub fn terminal(&self, with_current: bool) -> SupportSet {
        let clock = SupportSet::default().with_interval(
            Monomial::PHI,
            self.interlock / 2.0,
            self.clock_end_max(),
        );
        self.maybe_current(clock, with_current)
    }

    fn maybe_current(&self, set: SupportSet, with_current: bool) -> SupportSet {
        if with_current {
            set.with_interval(Monomial::CURRENT, -self.current_limit, self.current_limit)
        } else {
            set
        }
    }

    /// Occupation measure of a mode that has seen `i` switches.
    pub fn occupation(&self, i: usize, with_current: bool) -> SupportSet {
        let t = self.interlock;
        let i = i as f64;
        let from = (t * (i - 0.5)).max(0.0);
        let to = (FRAC_PI_2 - t * (self.d() - i - 0.5)).min(FRAC_PI_2);
        let set = SupportSet::default()
            .with_circle_arc(from, to)
            .with_interval(Monomial::PHI, 0.0, FRAC_PI_2 - t * (self.d() - 1.0));
        self.maybe_current(set, with_current)
    }

    /// Jump measure of the `i`-th switch (`1 <= i <= d`), located on the
    /// guard of the mode it leaves.
    pub fn guard(&self, i: usize, with_current: bool) -> SupportSet {
        let t = self.interlock;
        let i = i as f64;
        let set = SupportSet::default()
            .with_circle_arc(t * (i - 0.5), FRAC_PI_2 - t * (self.d() - i + 0.5))
            .with_interval(Monomial::PHI, t, FRAC_PI_2 - t * (self.d() - 1.0));
        self.maybe_current(set, with_current)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arc_membership() {
        let g = SupportGeometry {
            pulse_number: 4,
            interlock: 0.1,
            current_limit: 2.0,
        };
        let occ = g.occupation(2, true);
        let at = |theta: f64| [theta.cos(), theta.sin(), 0.1, 0.0];
        assert!(occ.contains(&at(0.2), 1e-12));
        assert!(occ.contains(&at(0.5), 1e-12));
        assert!(!occ.contains(&at(0.1), 1e-12));
        assert!(!occ.contains(&at(1.5), 1e-12));
        assert!(!occ.contains(&[0.5, 0.5, 0.1, 0.0], 1e-12));
        assert_eq!(occ.inequalities.len(), 8);
        assert_eq!(g.initial().inequalities.len(), 6);
        assert!(!g.initial().contains(&[0.0, 1.0, 0.1, 2.5], 1e-12));
        assert_eq!(g.occupation(2, false).inequalities.len(), 5);
        assert_eq!(g.terminal(false).inequalities.len(), 3);
    }
}
