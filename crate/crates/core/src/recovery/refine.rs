//! Local refinement of the switching angles with the level sequence frozen.
//!
//! The interlock constraints are linear, so the angles are written through
//! the slack gaps
//!
//! ```text
//! delta_0 = alpha^1 - Theta/2,  delta_i = alpha^{i+1} - alpha^i - Theta,
//! delta_d = pi/2 - Theta/2 - alpha^d
//! ```
//!
//! which range over the simplex `delta >= 0, sum delta = pi/2 - d Theta`.
//! Harmonic bounds enter an augmented Lagrangian whose inner problems are
//! solved by a spectral projected gradient method on that simplex.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pattern::{
    check_feasibility, energy_from_values, energy_gradient_from_values, extended_angles,
    fourier_from_values, zero_mean_current_from_values, ConverterProblem, ObjectiveMode,
    SwitchingSequence, EQUALITY_WINDOW,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineOptions {
    /// Number of starts: the input itself plus jittered copies.
    pub starts: usize,
    pub seed: u64,
    /// Jitter half-width as a fraction of the interlock angle.
    pub jitter: f64,
    /// Distance kept from the lower end of an equality window, and from
    /// both ends of a box.
    pub margin: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Projected-gradient tolerance of the inner solves.
    pub inner_tol: f64,
    /// Constraint violation accepted by the outer loop.
    pub violation_tol: f64,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self {
            starts: 5,
            seed: 0x5eed,
            jitter: 0.5,
            margin: 1e-9,
            max_outer: 40,
            max_inner: 4000,
            inner_tol: 1e-12,
            violation_tol: 1e-11,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineTraceRow {
    pub start: usize,
    pub iteration: usize,
    pub objective: f64,
    pub max_violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineOutcome {
    pub sequence: SwitchingSequence,
    /// Objective (current or voltage energy) at the returned angles.
    pub objective: f64,
    /// Objective at the input angles.
    pub initial_objective: f64,
    pub quality: f64,
    /// Largest distance of a harmonic outside its feasibility window.
    pub max_violation: f64,
    pub feasible: bool,
    /// Index of the start that produced the result; `None` when the input
    /// itself was kept.
    pub start: Option<usize>,
    pub trace: Vec<RefineTraceRow>,
}

/// Refinement trace as CSV with header `start,iteration,objective,max_violation`.
pub fn trace_csv(rows: &[RefineTraceRow]) -> String {
    let mut out = String::from("start,iteration,objective,max_violation\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:.17e},{:.6e}",
            r.start, r.iteration, r.objective, r.max_violation
        );
    }
    out
}

/// Objective minimized by refinement: `||I||^2` with the zero-mean initial
/// current, or `||u||^2` in voltage mode.
pub fn objective_value(angles: &[f64], values: &[f64], mode: ObjectiveMode) -> f64 {
    match mode {
        ObjectiveMode::Current => {
            let i0 = zero_mean_current_from_values(angles, values);
            energy_from_values(angles, values, i0)
        }
        ObjectiveMode::Voltage => {
            let ext = extended_angles(angles);
            4.0 * values
                .iter()
                .enumerate()
                .map(|(k, u)| u * u * (ext[k + 1] - ext[k]))
                .sum::<f64>()
        }
    }
}

/// Gradient of [`objective_value`] with respect to the angles.
pub fn objective_gradient(angles: &[f64], values: &[f64], mode: ObjectiveMode) -> Vec<f64> {
    match mode {
        ObjectiveMode::Current => energy_gradient_from_values(angles, values),
        ObjectiveMode::Voltage => (0..angles.len())
            .map(|k| 4.0 * (values[k] * values[k] - values[k + 1] * values[k + 1]))
            .collect(),
    }
}

/// `d b_ell / d alpha^i = -(4/pi) (u^i - u^{i-1}) sin(ell alpha^i)`.
pub fn fourier_gradient(angles: &[f64], values: &[f64], ell: u32) -> Vec<f64> {
    if ell.is_multiple_of(2) {
        return vec![0.0; angles.len()];
    }
    let l = ell as f64;
    angles
        .iter()
        .enumerate()
        .map(|(i, a)| -4.0 / PI * (values[i + 1] - values[i]) * (l * a).sin())
        .collect()
}

/// Inequality `lo <= b_order <= hi` used inside the augmented Lagrangian.
#[derive(Debug, Clone, Copy)]
struct Bound {
    order: u32,
    lo: f64,
    hi: f64,
}

struct Problem<'a> {
    values: &'a [f64],
    mode: ObjectiveMode,
    theta: f64,
    bounds: Vec<Bound>,
    /// Feasibility windows reported to the caller.
    windows: Vec<Bound>,
}

impl Problem<'_> {
    fn d(&self) -> usize {
        self.values.len() - 1
    }

    fn radius(&self) -> f64 {
        FRAC_PI_2 - self.theta * self.d() as f64
    }

    fn angles(&self, delta: &[f64]) -> Vec<f64> {
        let mut acc = self.theta / 2.0;
        let mut out = Vec::with_capacity(self.d());
        for (k, dk) in delta.iter().take(self.d()).enumerate() {
            if k > 0 {
                acc += self.theta;
            }
            acc += dk;
            out.push(acc);
        }
        out
    }

    fn deltas(&self, angles: &[f64]) -> Vec<f64> {
        let d = self.d();
        let mut out = Vec::with_capacity(d + 1);
        out.push(angles[0] - self.theta / 2.0);
        for k in 1..d {
            out.push(angles[k] - angles[k - 1] - self.theta);
        }
        out.push(FRAC_PI_2 - self.theta / 2.0 - angles[d - 1]);
        out
    }

    /// Chain rule from angle gradients to gap gradients.
    fn pull_back(&self, g_alpha: &[f64]) -> Vec<f64> {
        let d = self.d();
        let mut out = vec![0.0; d + 1];
        let mut acc = 0.0;
        for k in (0..d).rev() {
            acc += g_alpha[k];
            out[k] = acc;
        }
        out
    }

    /// Constraint values `g_j <= 0`, two per bound.
    fn constraints(&self, angles: &[f64]) -> Vec<f64> {
        self.bounds
            .iter()
            .flat_map(|b| {
                let v = fourier_from_values(angles, self.values, b.order);
                [b.lo - v, v - b.hi]
            })
            .collect()
    }

    fn window_violation(&self, angles: &[f64]) -> f64 {
        self.windows
            .iter()
            .map(|b| {
                let v = fourier_from_values(angles, self.values, b.order);
                (b.lo - v).max(v - b.hi).max(0.0)
            })
            .fold(0.0, f64::max)
    }

    /// Augmented Lagrangian value and gradient with respect to the gaps.
    fn lagrangian(&self, delta: &[f64], lambda: &[f64], rho: f64) -> (f64, Vec<f64>) {
        let angles = self.angles(delta);
        let mut value = objective_value(&angles, self.values, self.mode);
        let mut grad = objective_gradient(&angles, self.values, self.mode);
        for (j, b) in self.bounds.iter().enumerate() {
            let v = fourier_from_values(&angles, self.values, b.order);
            let dv = fourier_gradient(&angles, self.values, b.order);
            for (side, (g, sign)) in [(b.lo - v, -1.0), (v - b.hi, 1.0)].into_iter().enumerate() {
                let lam = lambda[2 * j + side];
                let t = (lam + rho * g).max(0.0);
                value += (t * t - lam * lam) / (2.0 * rho);
                if t > 0.0 {
                    for (gk, dk) in grad.iter_mut().zip(&dv) {
                        *gk += t * sign * dk;
                    }
                }
            }
        }
        (value, self.pull_back(&grad))
    }
}

/// Euclidean projection onto `{x >= 0, sum x = r}`.
fn project_simplex(v: &[f64], r: f64) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
    let mut acc = 0.0;
    let mut shift = 0.0;
    for (k, uk) in u.iter().enumerate() {
        acc += uk;
        let t = (acc - r) / (k + 1) as f64;
        if uk - t > 0.0 {
            shift = t;
        }
    }
    v.iter().map(|x| (x - shift).max(0.0)).collect()
}

fn inf_norm_step(x: &[f64], g: &[f64], r: f64) -> f64 {
    let trial: Vec<f64> = x.iter().zip(g).map(|(a, b)| a - b).collect();
    project_simplex(&trial, r)
        .iter()
        .zip(x)
        .map(|(p, a)| (p - a).abs())
        .fold(0.0, f64::max)
}

/// Nonmonotone spectral projected gradient on the simplex.
fn spg(
    prob: &Problem,
    mut x: Vec<f64>,
    lambda: &[f64],
    rho: f64,
    opts: &RefineOptions,
) -> Vec<f64> {
    const MEMORY: usize = 10;
    const SUFFICIENT: f64 = 1e-4;
    let r = prob.radius();
    let (mut f, mut g) = prob.lagrangian(&x, lambda, rho);
    let mut history = vec![f];
    let pg0 = inf_norm_step(&x, &g, r);
    let mut step = if pg0 > 0.0 { 1.0 / pg0 } else { 1.0 };
    step = step.clamp(1e-12, 1e12);
    for _ in 0..opts.max_inner {
        if inf_norm_step(&x, &g, r) <= opts.inner_tol {
            break;
        }
        let trial: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - step * b).collect();
        let dir: Vec<f64> = project_simplex(&trial, r)
            .iter()
            .zip(&x)
            .map(|(p, a)| p - a)
            .collect();
        let slope: f64 = dir.iter().zip(&g).map(|(d, gk)| d * gk).sum();
        if slope >= 0.0 {
            break;
        }
        let fmax = history.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn: Vec<f64> = x
                .iter()
                .zip(&dir)
                .map(|(a, d)| (a + t * d).max(0.0))
                .collect();
            let (fn_, gn) = prob.lagrangian(&xn, lambda, rho);
            if fn_ <= fmax + SUFFICIENT * t * slope {
                accepted = Some((xn, fn_, gn));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else {
            break;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|a| a * a).sum();
        step = if sy > 0.0 {
            (ss / sy).clamp(1e-12, 1e12)
        } else {
            1e12
        };
        x = xn;
        f = fn_;
        g = gn;
        history.push(f);
        if history.len() > MEMORY {
            history.remove(0);
        }
    }
    x
}

struct StartResult {
    angles: Vec<f64>,
    objective: f64,
    violation: f64,
    trace: Vec<RefineTraceRow>,
}

fn run_start(prob: &Problem, start: usize, delta0: Vec<f64>, opts: &RefineOptions) -> StartResult {
    let mut delta = project_simplex(&delta0, prob.radius());
    let mut lambda = vec![0.0; 2 * prob.bounds.len()];
    let mut rho = 10.0;
    let mut last_violation = f64::INFINITY;
    let mut trace = Vec::new();
    for iteration in 0..opts.max_outer {
        delta = spg(prob, delta, &lambda, rho, opts);
        let angles = prob.angles(&delta);
        let g = prob.constraints(&angles);
        let violation = g.iter().copied().fold(0.0, f64::max);
        trace.push(RefineTraceRow {
            start,
            iteration,
            objective: objective_value(&angles, prob.values, prob.mode),
            max_violation: violation,
        });
        for (l, gj) in lambda.iter_mut().zip(&g) {
            *l = (*l + rho * gj).max(0.0);
        }
        let complementary = lambda.iter().zip(&g).all(|(l, gj)| (l * gj).abs() <= 1e-12);
        if violation <= opts.violation_tol && complementary {
            break;
        }
        if violation > 0.25 * last_violation {
            rho = (rho * 10.0).min(1e12);
        }
        last_violation = violation;
    }
    let angles = prob.angles(&delta);
    StartResult {
        objective: objective_value(&angles, prob.values, prob.mode),
        violation: prob.window_violation(&angles),
        angles,
        trace,
    }
}

fn lexicographic(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y) {
            Some(std::cmp::Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    std::cmp::Ordering::Equal
}

/// Refines with default options.
pub fn refine(seq: &SwitchingSequence, prob: &ConverterProblem) -> Result<RefineOutcome> {
    refine_with(seq, prob, &RefineOptions::default())
}

/// Locally optimal angles for the fixed level sequence of `seq`.
///
/// Returns the best feasible candidate among the input and all starts,
/// ordered by objective and then lexicographically by angles; the input is a
/// candidate, so the objective never increases for a feasible input. When no
/// candidate meets the harmonic windows, fails with
/// [`Error::RefineFailed`] carrying the least-violating one.
pub fn refine_with(
    seq: &SwitchingSequence,
    prob: &ConverterProblem,
    opts: &RefineOptions,
) -> Result<RefineOutcome> {
    seq.validate_for(prob)?;
    if seq
        .level_indices
        .windows(2)
        .any(|w| w[0].abs_diff(w[1]) != 1)
    {
        return Err(Error::invalid(
            "refinement needs a sequence that steps one level at a time",
        ));
    }
    let d = seq.pulse_number();
    let theta = prob.interlock;
    if FRAC_PI_2 - theta * d as f64 <= 0.0 {
        return Err(Error::invalid(
            "interlock leaves no room for the switching angles",
        ));
    }
    let values = seq.values(prob);
    let margin = opts.margin;
    let mut bounds = Vec::new();
    let mut windows = Vec::new();
    for h in &prob.harmonics {
        if h.is_equality() {
            windows.push(Bound {
                order: h.order,
                lo: h.lo,
                hi: h.lo + EQUALITY_WINDOW,
            });
            bounds.push(Bound {
                order: h.order,
                lo: h.lo + margin,
                hi: h.lo + 3.0 * margin,
            });
        } else {
            windows.push(Bound {
                order: h.order,
                lo: h.lo,
                hi: h.hi,
            });
            let m = margin.min((h.hi - h.lo) / 4.0);
            bounds.push(Bound {
                order: h.order,
                lo: h.lo + m,
                hi: h.hi - m,
            });
        }
    }
    let problem = Problem {
        values: &values,
        mode: prob.objective,
        theta,
        bounds,
        windows,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let half = opts.jitter * theta;
    let mut starts = vec![problem.deltas(&seq.angles)];
    for _ in 1..opts.starts.max(1) {
        let jittered: Vec<f64> = seq
            .angles
            .iter()
            .map(|a| a + rng.gen_range(-half..=half))
            .collect();
        starts.push(problem.deltas(&jittered));
    }
    let results: Vec<StartResult> = starts
        .into_par_iter()
        .enumerate()
        .map(|(k, d0)| run_start(&problem, k, d0, opts))
        .collect();

    let initial_objective = objective_value(&seq.angles, &values, prob.objective);
    let input_feasible = check_feasibility(seq, prob)
        .map(|r| r.feasible)
        .unwrap_or(false);
    let trace: Vec<RefineTraceRow> = results
        .iter()
        .flat_map(|r| r.trace.iter().copied())
        .collect();

    // (angles, objective, violation, start)
    let mut candidates: Vec<(Vec<f64>, f64, f64, Option<usize>)> = results
        .into_iter()
        .enumerate()
        .map(|(k, r)| (r.angles, r.objective, r.violation, Some(k)))
        .collect();
    if input_feasible {
        candidates.push((seq.angles.clone(), initial_objective, 0.0, None));
    }
    let feasible_candidate = |c: &(Vec<f64>, f64, f64, Option<usize>)| {
        c.2 == 0.0
            && check_feasibility(
                &SwitchingSequence::new(c.0.clone(), seq.level_indices.clone()),
                prob,
            )
            .map(|r| r.feasible)
            .unwrap_or(false)
    };
    let order = |a: &(Vec<f64>, f64, f64, Option<usize>),
                 b: &(Vec<f64>, f64, f64, Option<usize>)| {
        a.1.partial_cmp(&b.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| lexicographic(&a.0, &b.0))
    };
    let feasible: Vec<_> = candidates
        .iter()
        .filter(|c| feasible_candidate(c))
        .cloned()
        .collect();
    let (chosen, ok) = match feasible.into_iter().min_by(order) {
        Some(c) => (c, true),
        None => {
            let best = candidates
                .into_iter()
                .min_by(|a, b| {
                    a.2.partial_cmp(&b.2)
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then_with(|| order(a, b))
                })
                .expect("at least one start");
            (best, false)
        }
    };
    let sequence = SwitchingSequence::new(chosen.0, seq.level_indices.clone());
    let quality = crate::pattern::quality_metric(&sequence, prob).unwrap_or(f64::NAN);
    let outcome = RefineOutcome {
        objective: chosen.1,
        initial_objective,
        quality,
        max_violation: chosen.2,
        feasible: ok,
        start: chosen.3,
        trace,
        sequence,
    };
    if ok {
        Ok(outcome)
    } else {
        Err(Error::RefineFailed(Box::new(outcome)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pattern::{fourier_coefficient, HarmonicBound};

    #[test]
    fn simplex_projection() {
        let p = project_simplex(&[0.5, 0.5, 0.5], 1.0);
        for v in &p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = project_simplex(&[2.0, -1.0, 0.0], 1.0);
        assert_eq!(p, vec![1.0, 0.0, 0.0]);
        let p = project_simplex(&[0.2, 0.3, 0.1], 0.6);
        assert!((p.iter().sum::<f64>() - 0.6).abs() < 1e-15);
    }

    #[test]
    fn single_switch_matches_inverse_cosine() {
        let m = 0.6;
        let prob = ConverterProblem {
            levels: vec![-1.0, 0.0, 1.0],
            pulse_number: 1,
            interlock: PI / 100.0,
            harmonics: vec![HarmonicBound::equality(1, m)],
            current_bound: None,
            unipolar: true,
            modulation_index: None,
            objective: ObjectiveMode::Current,
        };
        let seq = SwitchingSequence::new(vec![0.9], vec![2, 3]);
        let out = refine(&seq, &prob).unwrap();
        let exact = (m * PI / 4.0).acos();
        assert!(
            (out.sequence.angles[0] - exact).abs() < 1e-8,
            "{}",
            out.sequence.angles[0] - exact
        );
        let b1 = fourier_coefficient(&out.sequence, &prob, 1);
        assert!(b1 >= m && b1 <= m + EQUALITY_WINDOW);
    }

    #[test]
    fn gradients_match_differences() {
        let angles = [0.2, 0.5, 0.9, 1.3];
        let values = [0.0, 0.5, 1.0, 0.5, 1.0];
        let h = 1e-6;
        for mode in [ObjectiveMode::Current, ObjectiveMode::Voltage] {
            let g = objective_gradient(&angles, &values, mode);
            for k in 0..angles.len() {
                let mut p = angles;
                let mut q = angles;
                p[k] += h;
                q[k] -= h;
                let fd = (objective_value(&p, &values, mode) - objective_value(&q, &values, mode))
                    / (2.0 * h);
                assert!(
                    (fd - g[k]).abs() <= 1e-6 * fd.abs().max(1.0),
                    "{mode:?} {k}: {fd} vs {}",
                    g[k]
                );
            }
        }
        for ell in [1, 3, 5] {
            let g = fourier_gradient(&angles, &values, ell);
            for k in 0..angles.len() {
                let mut p = angles;
                let mut q = angles;
                p[k] += h;
                q[k] -= h;
                let fd = (fourier_from_values(&p, &values, ell)
                    - fourier_from_values(&q, &values, ell))
                    / (2.0 * h);
                assert!((fd - g[k]).abs() <= 1e-6 * fd.abs().max(1.0));
            }
        }
    }

    #[test]
    fn infeasible_target_reports_failure() {
        // b_1 = 1.5 needs cos(alpha) > 1 on a single 0 -> 1 step
        let prob = ConverterProblem {
            levels: vec![-1.0, 0.0, 1.0],
            pulse_number: 1,
            interlock: PI / 100.0,
            harmonics: vec![HarmonicBound::equality(1, 1.5)],
            current_bound: None,
            unipolar: true,
            modulation_index: None,
            objective: ObjectiveMode::Current,
        };
        let seq = SwitchingSequence::new(vec![0.5], vec![2, 3]);
        match refine(&seq, &prob) {
            Err(Error::RefineFailed(out)) => assert!(out.max_violation > 0.1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn trace_has_header() {
        let csv = trace_csv(&[RefineTraceRow {
            start: 0,
            iteration: 1,
            objective: 2.0,
            max_violation: 0.0,
        }]);
        assert!(csv.starts_with("start,iteration,objective,max_violation\n0,1,"));
    }
}
