//! Ground-truth engine: hybrid trajectory simulation, measure moments built
//! from a known trajectory, quadrature evaluators and brute-force search.
//!
//! Nothing here reuses the closed-form evaluators of [`crate::pattern`] or the
//! row assembly of [`crate::relaxation`]; the point of this module is to check
//! them from an independent route.

pub mod quadrature;

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{
    build_graph, levels_to_path, path_levels, ModeId, Path, TransitionGraph, DEFAULT_PATH_CAP,
};
use crate::pattern::{ConverterProblem, SwitchingSequence};
use quadrature::Quadrature;

/// Absolute tolerance of the per-segment moment quadrature.
const MOMENT_TOL: f64 = 1e-13;

/// Offset above `M` at which the brute-force search places the equality harmonic.
const EQUALITY_TARGET_OFFSET: f64 = 1e-10;

/// Continuous state `x = [c, s, phi, I]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HybridState {
    pub c: f64,
    pub s: f64,
    pub phi: f64,
    pub current: f64,
}

/// Switching angles together with the graph path they are applied along.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpPattern {
    pub angles: Vec<f64>,
    pub path: Path,
}

impl JumpPattern {
    pub fn from_sequence(seq: &SwitchingSequence, graph: &TransitionGraph) -> Result<Self> {
        if seq.angles.len() != graph.pulse_number {
            return Err(Error::invalid(format!(
                "sequence has {} angles, graph expects {}",
                seq.angles.len(),
                graph.pulse_number
            )));
        }
        if seq.angles.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("angles must be nondecreasing"));
        }
        Ok(Self {
            angles: seq.angles.clone(),
            path: levels_to_path(graph, &seq.level_indices)?,
        })
    }

    pub fn levels(&self) -> Vec<usize> {
        path_levels(&self.path)
    }

    pub fn modes(&self) -> Vec<ModeId> {
        self.levels()
            .into_iter()
            .enumerate()
            .map(|(i, n)| ModeId::new(n, i))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub theta: f64,
    pub mode: ModeId,
    pub state: HybridState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// Uniform samples over `[0, pi/2]`.
    pub samples: Vec<TrajectorySample>,
    /// State immediately before each switch (the jump locations).
    pub switch_states: Vec<HybridState>,
    pub initial: HybridState,
    /// State at `theta = pi/2`.
    pub terminal: HybridState,
}

/// Piecewise description shared by the simulator and the moment builder.
struct Segments {
    /// `alpha^0 = 0, alpha^1, ..., alpha^d, pi/2`.
    bounds: Vec<f64>,
    voltages: Vec<f64>,
    /// Clock and current at the start of each segment (after the reset).
    start_phi: Vec<f64>,
    start_current: Vec<f64>,
}

impl Segments {
    fn new(jp: &JumpPattern, prob: &ConverterProblem, i0: f64, phi0: f64) -> Self {
        let d = jp.angles.len();
        let mut bounds = Vec::with_capacity(d + 2);
        bounds.push(0.0);
        bounds.extend_from_slice(&jp.angles);
        bounds.push(FRAC_PI_2);
        let voltages: Vec<f64> = jp.levels().iter().map(|&n| prob.level(n)).collect();
        let mut start_phi = vec![0.0; d + 1];
        start_phi[0] = phi0;
        let mut start_current = vec![i0; d + 1];
        for k in 1..=d {
            start_current[k] = start_current[k - 1] + voltages[k - 1] * (bounds[k] - bounds[k - 1]);
        }
        Self {
            bounds,
            voltages,
            start_phi,
            start_current,
        }
    }

    fn state(&self, k: usize, theta: f64) -> HybridState {
        let t = theta - self.bounds[k];
        HybridState {
            c: theta.cos(),
            s: theta.sin(),
            phi: self.start_phi[k] + t,
            current: self.start_current[k] + self.voltages[k] * t,
        }
    }

    fn end_state(&self, k: usize) -> HybridState {
        self.state(k, self.bounds[k + 1])
    }

    fn segment_of(&self, theta: f64) -> usize {
        let d = self.voltages.len() - 1;
        self.bounds[1..=d].partition_point(|&a| a <= theta)
    }
}

/// Integrates the mode dynamics `c' = -s, s' = c, phi' = 1, I' = v_n` along the
/// pattern, applying the clock reset `phi = 0` at every switch.
pub fn simulate(
    jp: &JumpPattern,
    i0: f64,
    phi0: f64,
    prob: &ConverterProblem,
    samples: usize,
) -> Result<Trajectory> {
    let seg = Segments::new(jp, prob, i0, phi0);
    let d = jp.angles.len();
    let mut switch_states = Vec::with_capacity(d);
    for k in 0..d {
        let st = seg.end_state(k);
        if st.phi < prob.interlock - 1e-12 {
            return Err(Error::GuardViolation {
                index: k + 1,
                clock: st.phi,
                interlock: prob.interlock,
            });
        }
        switch_states.push(st);
    }
    let modes = jp.modes();
    let samples = (0..samples.max(2))
        .map(|j| {
            let theta = FRAC_PI_2 * j as f64 / (samples.max(2) - 1) as f64;
            let k = seg.segment_of(theta);
            TrajectorySample {
                theta,
                mode: modes[k],
                state: seg.state(k, theta),
            }
        })
        .collect();
    Ok(Trajectory {
        samples,
        switch_states,
        initial: seg.state(0, 0.0),
        terminal: seg.end_state(d),
    })
}

/// Exponents `(a, b, g, m)` of `c^a s^b phi^g I^m`.
pub type Exponents4 = [u8; 4];
/// Exponents `(g, m)` of `phi^g I^m`.
pub type Exponents2 = [u8; 2];

fn exponents4(max_degree: usize) -> Vec<Exponents4> {
    let mut out = Vec::new();
    for total in 0..=max_degree {
        for a in (0..=total).rev() {
            for b in (0..=total - a).rev() {
                for g in (0..=total - a - b).rev() {
                    let m = total - a - b - g;
                    out.push([a as u8, b as u8, g as u8, m as u8]);
                }
            }
        }
    }
    out
}

fn exponents2(max_degree: usize) -> Vec<Exponents2> {
    let mut out = Vec::new();
    for total in 0..=max_degree {
        for g in (0..=total).rev() {
            out.push([g as u8, (total - g) as u8]);
        }
    }
    out
}

fn eval4(e: Exponents4, x: &HybridState) -> f64 {
    x.c.powi(e[0] as i32)
        * x.s.powi(e[1] as i32)
        * x.phi.powi(e[2] as i32)
        * x.current.powi(e[3] as i32)
}

fn eval2(e: Exponents2, phi: f64, current: f64) -> f64 {
    phi.powi(e[0] as i32) * current.powi(e[1] as i32)
}

/// Moments (up to degree `2 beta`) of every measure of the relaxation, built
/// from one concrete trajectory.
#[derive(Debug, Clone)]
pub struct MeasureMoments {
    pub beta: usize,
    pub graph: TransitionGraph,
    pub initial: BTreeMap<Exponents2, f64>,
    /// One entry per terminal mode, zero for terminals the path does not end in.
    pub terminal: BTreeMap<ModeId, BTreeMap<Exponents2, f64>>,
    pub occupation: BTreeMap<ModeId, BTreeMap<Exponents4, f64>>,
    /// Indexed like `graph.edges`.
    pub jump: Vec<BTreeMap<Exponents4, f64>>,
}

impl MeasureMoments {
    pub fn total_mass(&self) -> f64 {
        self.occupation.values().map(|m| m[&[0, 0, 0, 0]]).sum()
    }

    /// `4 sum <I^2, mu_{n,i}>`.
    pub fn current_energy(&self) -> f64 {
        4.0 * self
            .occupation
            .values()
            .map(|m| m[&[0, 0, 0, 2]])
            .sum::<f64>()
    }
}

/// Builds all measure moments for the trajectory of `jp` started at
/// `(c, s, phi, I) = (1, 0, pi/2 - alpha^d, i0)`: Dirac initial, terminal and
/// jump measures, and occupation measures integrated by quadrature.
pub fn trajectory_moments(
    jp: &JumpPattern,
    i0: f64,
    prob: &ConverterProblem,
    beta: usize,
) -> Result<MeasureMoments> {
    if beta == 0 {
        return Err(Error::invalid("beta must be at least 1"));
    }
    let d = jp.angles.len();
    let graph = build_graph(prob.num_levels(), d, prob.unipolar)?;
    let phi0 = FRAC_PI_2 - jp.angles[d - 1];
    let seg = Segments::new(jp, prob, i0, phi0);
    let deg = 2 * beta;
    let e4 = exponents4(deg);
    let e2 = exponents2(deg);
    let quad = Quadrature::default();

    let initial = e2.iter().map(|&e| (e, eval2(e, phi0, i0))).collect();

    let end = seg.end_state(d);
    let last = *jp.modes().last().expect("pattern has at least one mode");
    let terminal = graph
        .terminals
        .iter()
        .map(|t| {
            let values = e2
                .iter()
                .map(|&e| {
                    (
                        e,
                        if *t == last {
                            eval2(e, end.phi, end.current)
                        } else {
                            0.0
                        },
                    )
                })
                .collect();
            (*t, values)
        })
        .collect();

    let modes = jp.modes();
    let mut occupation: BTreeMap<ModeId, BTreeMap<Exponents4, f64>> = graph
        .vertices
        .iter()
        .map(|v| (*v, e4.iter().map(|&e| (e, 0.0)).collect()))
        .collect();
    for (k, mode) in modes.iter().enumerate() {
        let (a, b) = (seg.bounds[k], seg.bounds[k + 1]);
        let target = occupation
            .get_mut(mode)
            .ok_or_else(|| Error::invalid(format!("mode {mode} not in graph")))?;
        for &e in &e4 {
            let v = quad.integrate(|t| eval4(e, &seg.state(k, t)), a, b, MOMENT_TOL)?;
            *target.get_mut(&e).expect("exponent present") += v;
        }
    }

    let mut jump: Vec<BTreeMap<Exponents4, f64>> = graph
        .edges
        .iter()
        .map(|_| e4.iter().map(|&e| (e, 0.0)).collect())
        .collect();
    for (k, edge) in jp.path.iter().enumerate() {
        let idx = graph
            .edge_index(edge.from, edge.to)
            .ok_or(Error::InvalidPath { column: k + 1 })?;
        let st = seg.end_state(k);
        for &e in &e4 {
            *jump[idx].get_mut(&e).expect("exponent present") += eval4(e, &st);
        }
    }

    Ok(MeasureMoments {
        beta,
        graph,
        initial,
        terminal,
        occupation,
        jump,
    })
}

/// `<L_v w, mu>` for the monomial `w = c^a s^b phi^g I^m`, read off a moment map.
fn lie_pairing(e: Exponents4, voltage: f64, moments: &BTreeMap<Exponents4, f64>) -> f64 {
    let [a, b, g, m] = e;
    let get = |x: Exponents4| moments.get(&x).copied().unwrap_or(0.0);
    let mut acc = 0.0;
    if a > 0 {
        acc -= a as f64 * get([a - 1, b + 1, g, m]);
    }
    if b > 0 {
        acc += b as f64 * get([a + 1, b - 1, g, m]);
    }
    if g > 0 {
        acc += g as f64 * get([a, b, g - 1, m]);
    }
    if m > 0 {
        acc += voltage * m as f64 * get([a, b, g, m - 1]);
    }
    acc
}

/// Largest violation of the Liouville (flow conservation) equations over all
/// modes and all test monomials of degree at most `2 beta`.
pub fn liouville_residual(mm: &MeasureMoments, prob: &ConverterProblem, beta: usize) -> f64 {
    let g = &mm.graph;
    let d = g.pulse_number;
    let mut worst = 0.0f64;
    for mode in &g.vertices {
        let occ = &mm.occupation[mode];
        let v = prob.level(mode.level);
        for e in exponents4(2 * beta) {
            let [a, b, gg, m] = e;
            let mut r = 0.0;
            if mode.switches == 0 {
                if b == 0 {
                    r += mm.initial.get(&[gg, m]).copied().unwrap_or(0.0);
                }
            } else if gg == 0 {
                for k in g.incoming(*mode) {
                    r += mm.jump[k].get(&[a, b, 0, m]).copied().unwrap_or(0.0);
                }
            }
            r += lie_pairing(e, v, occ);
            if mode.switches == d {
                if a == 0 {
                    r -= mm.terminal[mode].get(&[gg, m]).copied().unwrap_or(0.0);
                }
            } else {
                for k in g.outgoing(*mode) {
                    r -= mm.jump[k].get(&e).copied().unwrap_or(0.0);
                }
            }
            worst = worst.max(r.abs());
        }
    }
    worst
}

/// Level voltage `u(theta)` on the quarter period.
fn quarter_value(angles: &[f64], values: &[f64], theta: f64) -> f64 {
    values[angles.partition_point(|&a| a <= theta)]
}

/// `b_ell = (4/pi) int_0^{pi/2} u(theta) sin(ell theta)` by quadrature.
pub fn quadrature_fourier(
    seq: &SwitchingSequence,
    prob: &ConverterProblem,
    ell: u32,
) -> Result<f64> {
    if ell.is_multiple_of(2) {
        return Ok(0.0);
    }
    let values = seq.values(prob);
    let quad = Quadrature::default();
    let mut bounds = vec![0.0];
    bounds.extend_from_slice(&seq.angles);
    bounds.push(FRAC_PI_2);
    let mut acc = 0.0;
    for (k, w) in bounds.windows(2).enumerate() {
        let u = values[k];
        acc += quad.integrate(|t| u * (ell as f64 * t).sin(), w[0], w[1], 1e-14)?;
    }
    Ok(4.0 / PI * acc)
}

/// `-int_0^{pi/2} u` by quadrature.
pub fn quadrature_zero_mean_current(
    seq: &SwitchingSequence,
    prob: &ConverterProblem,
) -> Result<f64> {
    let values = seq.values(prob);
    let quad = Quadrature::new(4);
    let mut bounds = vec![0.0];
    bounds.extend_from_slice(&seq.angles);
    bounds.push(FRAC_PI_2);
    let mut acc = 0.0;
    for (k, w) in bounds.windows(2).enumerate() {
        acc += quad.integrate(
            |t| quarter_value(&seq.angles, &values, t.clamp(w[0], w[1])),
            w[0],
            w[1],
            1e-15,
        )?;
        let _ = k;
    }
    Ok(-acc)
}

/// `4 int_0^{pi/2} I^2` by quadrature, with `I` from the hybrid simulation.
pub fn quadrature_energy(seq: &SwitchingSequence, prob: &ConverterProblem, i0: f64) -> Result<f64> {
    let graph = build_graph(prob.num_levels(), seq.angles.len(), false)?;
    let jp = JumpPattern::from_sequence(seq, &graph)?;
    let seg = Segments::new(&jp, prob, i0, 0.0);
    let quad = Quadrature::default();
    let mut acc = 0.0;
    for k in 0..seg.voltages.len() {
        acc += quad.integrate(
            |t| {
                let i = seg.state(k, t).current;
                i * i
            },
            seg.bounds[k],
            seg.bounds[k + 1],
            1e-14,
        )?;
    }
    Ok(4.0 * acc)
}

/// Samples `(theta, u, I, I - I*)` over one full period, where
/// `I* = -M cos(theta)` is the reference current and `I(0)` is the zero-mean
/// initial current.
pub fn waveform_samples(
    seq: &SwitchingSequence,
    prob: &ConverterProblem,
    points: usize,
) -> Vec<[f64; 4]> {
    let full = crate::pattern::expand_quarter_wave(seq, prob);
    let m = prob.modulation().unwrap_or(0.0);
    // cumulative current at each full-period switching angle
    let mut bounds = vec![0.0];
    bounds.extend_from_slice(&full.angles);
    let values = seq.values(prob);
    let mut bounds_q = vec![0.0];
    bounds_q.extend_from_slice(&seq.angles);
    bounds_q.push(FRAC_PI_2);
    let i0 = -values
        .iter()
        .enumerate()
        .map(|(k, u)| u * (bounds_q[k + 1] - bounds_q[k]))
        .sum::<f64>();
    let mut start = vec![i0];
    for k in 1..bounds.len() {
        let prev = start[k - 1] + full.values[k - 1] * (bounds[k] - bounds[k - 1]);
        start.push(prev);
    }
    (0..points)
        .map(|j| {
            let theta = 2.0 * PI * j as f64 / points as f64;
            let k = full.angles.partition_point(|&a| a <= theta);
            let u = full.values[k];
            let i = start[k] + u * (theta - bounds[k]);
            [theta, u, i, i + m * theta.cos()]
        })
        .collect()
}

/// Result of [`brute_force_best`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleBest {
    pub sequence: SwitchingSequence,
    pub quality: f64,
    /// Slack allowed on equality harmonics other than the one solved exactly.
    pub slack: f64,
    pub evaluated: u64,
}

struct SearchContext<'a> {
    prob: &'a ConverterProblem,
    values: Vec<f64>,
    step: f64,
    slack: f64,
    solved: Option<(u32, f64)>,
}

impl SearchContext<'_> {
    fn fourier(&self, angles: &[f64], ell: u32) -> f64 {
        let l = ell as f64;
        let s: f64 = angles
            .iter()
            .enumerate()
            .map(|(i, a)| (self.values[i + 1] - self.values[i]) * (l * a).cos())
            .sum();
        4.0 / (l * PI) * s
    }

    /// Zero-mean current energy, integrated segment by segment.
    fn quality(&self, angles: &[f64]) -> Option<f64> {
        let mut bounds = vec![0.0];
        bounds.extend_from_slice(angles);
        bounds.push(FRAC_PI_2);
        let i0 = -self
            .values
            .iter()
            .enumerate()
            .map(|(k, u)| u * (bounds[k + 1] - bounds[k]))
            .sum::<f64>();
        let limit = self.prob.current_limit();
        let mut current = i0;
        let mut energy = 0.0;
        for (k, &u) in self.values.iter().enumerate() {
            let len = bounds[k + 1] - bounds[k];
            let next = current + u * len;
            if current.abs() > limit || next.abs() > limit {
                return None;
            }
            // exact integral of a linear function squared: len/3 (I0^2 + I0 I1 + I1^2)
            energy += len / 3.0 * (current * current + current * next + next * next);
            current = next;
        }
        let b1 = self.fourier(angles, 1);
        let rad = 4.0 * energy / PI - b1 * b1;
        Some(rad.max(0.0).sqrt())
    }

    fn admissible(&self, angles: &[f64]) -> bool {
        for h in &self.prob.harmonics {
            let b = self.fourier(angles, h.order);
            let ok = if Some((h.order, h.lo)) == self.solved {
                true
            } else if h.is_equality() {
                (b - h.lo).abs() <= self.slack
            } else {
                b >= h.lo && b <= h.hi
            };
            if !ok {
                return false;
            }
        }
        true
    }

    /// Candidate last angles that put the solved harmonic on target.
    fn last_angles(&self, prefix: &[f64]) -> Vec<f64> {
        let (q, target) = self.solved.expect("solved harmonic present");
        let d = self.values.len() - 1;
        let l = q as f64;
        let partial: f64 = prefix
            .iter()
            .enumerate()
            .map(|(i, a)| (self.values[i + 1] - self.values[i]) * (l * a).cos())
            .sum();
        let du = self.values[d] - self.values[d - 1];
        let r = ((target + EQUALITY_TARGET_OFFSET) * l * PI / 4.0 - partial) / du;
        if !(-1.0..=1.0).contains(&r) {
            return Vec::new();
        }
        let base = r.acos();
        let mut out = Vec::new();
        let mut k = 0.0;
        while 2.0 * PI * k - base <= l * FRAC_PI_2 {
            for x in [base + 2.0 * PI * k, 2.0 * PI * k - base] {
                if (0.0..=l * FRAC_PI_2).contains(&x) {
                    out.push(x / l);
                }
            }
            k += 1.0;
        }
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }

    fn search(&self, angles: &mut Vec<f64>, best: &mut Option<(f64, Vec<f64>)>, count: &mut u64) {
        let d = self.values.len() - 1;
        let theta = self.prob.interlock;
        let upper = FRAC_PI_2 - theta / 2.0 + 1e-12;
        let fixed = if self.solved.is_some() { d - 1 } else { d };
        if angles.len() == fixed {
            let finals = if self.solved.is_some() {
                self.last_angles(angles)
            } else {
                vec![f64::NAN]
            };
            for last in finals {
                if !last.is_nan() {
                    let lower = angles.last().map_or(theta / 2.0, |a| a + theta) - 1e-12;
                    if last < lower || last > upper {
                        continue;
                    }
                    angles.push(last);
                }
                *count += 1;
                if self.admissible(angles) {
                    if let Some(q) = self.quality(angles) {
                        let better = match best {
                            None => true,
                            Some((bq, ba)) => {
                                compare_candidates(q, angles, *bq, ba) == Ordering::Less
                            }
                        };
                        if better {
                            *best = Some((q, angles.clone()));
                        }
                    }
                }
                if !last.is_nan() {
                    angles.pop();
                }
            }
            return;
        }
        let remaining = (d - angles.len() - 1) as f64;
        let lower = angles.last().map_or(theta / 2.0, |a| a + theta);
        let k0 = ((lower - theta / 2.0) / self.step - 1e-9).ceil().max(0.0) as u64;
        let mut k = k0;
        loop {
            let a = theta / 2.0 + k as f64 * self.step;
            if a + remaining * theta > upper {
                break;
            }
            angles.push(a);
            self.search(angles, best, count);
            angles.pop();
            k += 1;
        }
    }
}

fn compare_candidates(q1: f64, a1: &[f64], q2: f64, a2: &[f64]) -> Ordering {
    q1.total_cmp(&q2).then_with(|| {
        a1.iter()
            .zip(a2)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

/// Exhaustive search over all graph paths and an angle grid of spacing
/// `grid_step`. The first equality harmonic (usually `b_1 = M`) is met by
/// solving for the last angle in closed form; any further equality harmonic
/// gets the slack `grid_step * sum|du| * max order`, boxes are used verbatim.
pub fn brute_force_best(prob: &ConverterProblem, grid_step: f64) -> Result<OracleBest> {
    prob.validate()?;
    if !(grid_step > 0.0) || grid_step > prob.interlock / 2.0 {
        return Err(Error::invalid("grid step must lie in (0, Theta/2]"));
    }
    let d = prob.pulse_number;
    let span = FRAC_PI_2 - d as f64 * prob.interlock;
    let free = if prob.harmonics.iter().any(|h| h.is_equality()) {
        d - 1
    } else {
        d
    };
    let estimate = (span / grid_step + 1.0).powi(free as i32);
    if estimate > 5e9 {
        return Err(Error::invalid(format!(
            "brute-force grid would have about {estimate:.1e} points; reduce d or coarsen the grid"
        )));
    }
    let graph = build_graph(prob.num_levels(), d, prob.unipolar)?;
    let paths = graph.enumerate_paths(DEFAULT_PATH_CAP)?;
    let solved = prob
        .harmonics
        .iter()
        .find(|h| h.is_equality())
        .map(|h| (h.order, h.lo));
    let max_order = prob.max_harmonic_order().max(1) as f64;

    let results: Vec<(Option<(f64, Vec<f64>)>, u64, Vec<usize>, f64)> = paths
        .par_iter()
        .map(|path| {
            let levels = path_levels(path);
            let values: Vec<f64> = levels.iter().map(|&n| prob.level(n)).collect();
            let total_step: f64 = values.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
            let ctx = SearchContext {
                prob,
                values,
                step: grid_step,
                slack: grid_step * total_step * max_order,
                solved,
            };
            let mut best = None;
            let mut count = 0;
            ctx.search(&mut Vec::with_capacity(d), &mut best, &mut count);
            (best, count, levels, ctx.slack)
        })
        .collect();

    let evaluated = results.iter().map(|r| r.1).sum();
    let mut winner: Option<(f64, Vec<f64>, Vec<usize>, f64)> = None;
    for (best, _, levels, slack) in results {
        if let Some((q, angles)) = best {
            let better = match &winner {
                None => true,
                Some((wq, wa, wl, _)) => match compare_candidates(q, &angles, *wq, wa) {
                    Ordering::Less => true,
                    Ordering::Equal => levels < *wl,
                    Ordering::Greater => false,
                },
            };
            if better {
                winner = Some((q, angles, levels, slack));
            }
        }
    }
    let (quality, angles, levels, slack) = winner.ok_or(Error::Infeasible)?;
    Ok(OracleBest {
        sequence: SwitchingSequence::new(angles, levels),
        quality,
        slack,
        evaluated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pattern::HarmonicBound;

    fn three_level(d: usize, m: f64) -> ConverterProblem {
        ConverterProblem {
            levels: vec![-1.0, 0.0, 1.0],
            pulse_number: d,
            interlock: PI / 100.0,
            harmonics: vec![HarmonicBound::equality(1, m)],
            current_bound: None,
            unipolar: false,
            modulation_index: Some(m),
            objective: Default::default(),
        }
    }

    #[test]
    fn single_segment_simulation() {
        let prob = three_level(1, 0.5);
        let g = build_graph(3, 1, false).unwrap();
        let seq = SwitchingSequence::new(vec![PI / 4.0], vec![2, 3]);
        let jp = JumpPattern::from_sequence(&seq, &g).unwrap();
        let tr = simulate(&jp, 0.0, prob.interlock / 2.0, &prob, 101).unwrap();
        assert!((tr.terminal.current - PI / 4.0).abs() < 1e-15);
        for s in &tr.samples {
            assert!((s.state.c.powi(2) + s.state.s.powi(2) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn guard_violation() {
        let prob = three_level(2, 0.5);
        let g = build_graph(3, 2, false).unwrap();
        let seq = SwitchingSequence::new(vec![0.5, 0.5 + prob.interlock / 3.0], vec![2, 3, 2]);
        let jp = JumpPattern::from_sequence(&seq, &g).unwrap();
        assert!(matches!(
            simulate(&jp, 0.0, 0.1, &prob, 10),
            Err(Error::GuardViolation { index: 2, .. })
        ));
    }

    #[test]
    fn constructed_moments_conserve_flow() {
        let prob = ConverterProblem::reference_five_level(3, 0.5);
        let seq = SwitchingSequence::new(vec![0.3, 0.7, 1.1], vec![3, 4, 5, 4]);
        let g = build_graph(5, 3, true).unwrap();
        let jp = JumpPattern::from_sequence(&seq, &g).unwrap();
        let i0 = quadrature_zero_mean_current(&seq, &prob).unwrap();
        let mm = trajectory_moments(&jp, i0, &prob, 2).unwrap();
        assert!((mm.total_mass() - FRAC_PI_2).abs() < 1e-12);
        assert!(liouville_residual(&mm, &prob, 2) < 1e-10);
        let mut bad = mm.clone();
        *bad.jump[0].get_mut(&[1, 0, 0, 0]).unwrap() += 1e-3;
        assert!(liouville_residual(&bad, &prob, 2) >= 1e-4);
    }

    #[test]
    fn brute_force_infeasible_and_inversion() {
        assert!(matches!(
            brute_force_best(&three_level(1, 1.5), 1e-3),
            Err(Error::Infeasible)
        ));
        let best = brute_force_best(&three_level(1, 0.6), 1e-3).unwrap();
        let expect = (0.15 * PI).acos();
        assert!((best.sequence.angles[0] - expect).abs() < 1e-8);
        assert_eq!(best.sequence.level_indices, vec![2, 3]);
    }

    #[test]
    fn waveform_is_half_wave_antisymmetric() {
        let prob = ConverterProblem::reference_five_level(2, 0.5);
        let seq = SwitchingSequence::new(vec![0.4, 0.9], vec![3, 4, 5]);
        let s = waveform_samples(&seq, &prob, 1000);
        for j in 0..500 {
            assert_eq!(s[j][1], -s[j + 500][1]);
            assert!((s[j][2] + s[j + 500][2]).abs() < 1e-12);
        }
    }
}
