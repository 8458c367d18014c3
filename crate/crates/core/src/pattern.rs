//! Quarter-and-half-wave (QaHW) switching sequences and their closed-form
//! evaluators.
//!
//! A sequence is described on the first quarter period `[0, pi/2]` by `d`
//! switching angles `alpha^1 <= ... <= alpha^d` and `d + 1` level indices
//! `n^0, ..., n^d` into the converter's level vector. Everything else (the
//! full-period waveform, Fourier coefficients, the per-unit load current and
//! its energy) follows from symmetry.
//!
//! Level indices are 1-based throughout the public API, matching the usual
//! `1..N` numbering of converter output levels.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Width of the acceptance window `[M, M + EQUALITY_WINDOW]` used for
/// equality harmonics when judging numerical feasibility.
pub const EQUALITY_WINDOW: f64 = 1e-7;

/// Slack allowed on the linear interlock constraints before they are reported.
const INTERLOCK_SLACK: f64 = 1e-12;

/// Radicands of the quality metric in `[-RADICAND_CLAMP, 0)` are treated as 0.
const RADICAND_CLAMP: f64 = 1e-12;

/// Box constraint `lo <= b_order <= hi` on one odd sine harmonic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarmonicBound {
    pub order: u32,
    pub lo: f64,
    pub hi: f64,
}

impl HarmonicBound {
    pub fn equality(order: u32, value: f64) -> Self {
        Self {
            order,
            lo: value,
            hi: value,
        }
    }

    pub fn range(order: u32, lo: f64, hi: f64) -> Self {
        Self { order, lo, hi }
    }

    pub fn is_equality(&self) -> bool {
        self.lo == self.hi
    }

    /// Whether `value` meets the bound under the numerical feasibility rule:
    /// equalities accept `[lo, lo + EQUALITY_WINDOW]`, boxes are verbatim.
    pub fn admits(&self, value: f64) -> bool {
        if self.is_equality() {
            value >= self.lo && value <= self.lo + EQUALITY_WINDOW
        } else {
            value >= self.lo && value <= self.hi
        }
    }
}

/// What the relaxation minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveMode {
    /// Load-current energy `||I||^2`.
    #[default]
    Current,
    /// Voltage energy `||u||^2`.
    Voltage,
}

fn default_true() -> bool {
    true
}

/// Full parameter set of an OPP instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConverterProblem {
    /// Per-unit converter levels, strictly increasing and symmetric about 0.
    pub levels: Vec<f64>,
    /// Number of switching transitions per quarter period.
    pub pulse_number: usize,
    /// Interlocking angle in radians.
    pub interlock: f64,
    #[serde(default)]
    pub harmonics: Vec<HarmonicBound>,
    /// Half-width of the current box; defaults to `max(levels) * pi / 2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub current_bound: Option<f64>,
    #[serde(default = "default_true")]
    pub unipolar: bool,
    /// Shorthand for the equality `b_1 = M`; merged into `harmonics`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modulation_index: Option<f64>,
    #[serde(default)]
    pub objective: ObjectiveMode,
}

impl ConverterProblem {
    /// The five-level setup used throughout the numerical examples:
    /// `L = [-1, -0.5, 0, 0.5, 1]`, `Theta = pi/100`, unipolar,
    /// `b_1 = M` and `b_3 in [-0.01, 0.01]`.
    pub fn reference_five_level(pulse_number: usize, modulation_index: f64) -> Self {
        Self {
            levels: vec![-1.0, -0.5, 0.0, 0.5, 1.0],
            pulse_number,
            interlock: PI / 100.0,
            harmonics: vec![
                HarmonicBound::equality(1, modulation_index),
                HarmonicBound::range(3, -0.01, 0.01),
            ],
            current_bound: None,
            unipolar: true,
            modulation_index: Some(modulation_index),
            objective: ObjectiveMode::Current,
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let problem: Self = serde_json::from_str(text)?;
        problem.normalized()
    }

    /// Validates the instance and folds `modulation_index` into `harmonics`.
    pub fn normalized(mut self) -> Result<Self> {
        if let Some(m) = self.modulation_index {
            match self.harmonics.iter().find(|h| h.order == 1) {
                Some(h) if !(h.is_equality() && h.lo == m) => {
                    return Err(Error::invalid(format!(
                        "modulation_index {m} conflicts with harmonic bound on b_1 [{}, {}]",
                        h.lo, h.hi
                    )));
                }
                Some(_) => {}
                None => self.harmonics.insert(0, HarmonicBound::equality(1, m)),
            }
        } else if let Some(h) = self
            .harmonics
            .iter()
            .find(|h| h.order == 1 && h.is_equality())
        {
            self.modulation_index = Some(h.lo);
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.levels.len();
        if n < 3 || n.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "need an odd number (>= 3) of levels, got {n}"
            )));
        }
        if self.levels.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("levels must be finite"));
        }
        if self.levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("levels must be strictly increasing"));
        }
        for (a, b) in self.levels.iter().zip(self.levels.iter().rev()) {
            if (a + b).abs() > 1e-12 {
                return Err(Error::invalid("levels must be symmetric about zero"));
            }
        }
        if self.levels[n / 2] != 0.0 {
            return Err(Error::invalid("levels must contain 0"));
        }
        if self.pulse_number == 0 {
            return Err(Error::invalid("pulse number must be at least 1"));
        }
        if !(self.interlock > 0.0 && self.interlock.is_finite()) {
            return Err(Error::invalid("interlock angle must be positive"));
        }
        if self.pulse_number as f64 * self.interlock >= FRAC_PI_2 {
            return Err(Error::invalid(format!(
                "d * Theta = {} leaves no room in the quarter period",
                self.pulse_number as f64 * self.interlock
            )));
        }
        for h in &self.harmonics {
            if h.order == 0 || h.order % 2 == 0 {
                return Err(Error::invalid(format!(
                    "harmonic order {} must be odd and positive",
                    h.order
                )));
            }
            if !(h.lo.is_finite() && h.hi.is_finite()) || h.lo > h.hi {
                return Err(Error::invalid(format!(
                    "harmonic {} has an empty or non-finite interval",
                    h.order
                )));
            }
        }
        if let Some(bound) = self.current_bound {
            if !(bound > 0.0 && bound.is_finite()) {
                return Err(Error::invalid("current bound must be positive"));
            }
        }
        Ok(())
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    /// 1-based index `N_c` of the zero level.
    pub fn center_index(&self) -> usize {
        self.levels.len().div_ceil(2)
    }

    /// Voltage of the 1-based level index `n`.
    pub fn level(&self, n: usize) -> f64 {
        self.levels[n - 1]
    }

    pub fn current_limit(&self) -> f64 {
        self.current_bound
            .unwrap_or_else(|| self.levels.last().copied().unwrap_or(1.0) * FRAC_PI_2)
    }

    /// `M` from the equality on `b_1`, if one is present.
    pub fn modulation(&self) -> Option<f64> {
        self.harmonics
            .iter()
            .find(|h| h.order == 1 && h.is_equality())
            .map(|h| h.lo)
            .or(self.modulation_index)
    }

    pub fn max_harmonic_order(&self) -> u32 {
        self.harmonics.iter().map(|h| h.order).max().unwrap_or(0)
    }
}

/// Switching angles and level indices over the first quarter period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchingSequence {
    pub angles: Vec<f64>,
    /// 1-based level indices `n^0, ..., n^d`.
    pub level_indices: Vec<usize>,
}

impl SwitchingSequence {
    pub fn new(angles: Vec<f64>, level_indices: Vec<usize>) -> Self {
        Self {
            angles,
            level_indices,
        }
    }

    /// Builds a sequence from level voltages, looking each one up in `prob.levels`.
    pub fn from_level_values(
        angles: Vec<f64>,
        values: &[f64],
        prob: &ConverterProblem,
    ) -> Result<Self> {
        let level_indices = values
            .iter()
            .map(|v| {
                prob.levels
                    .iter()
                    .position(|l| (l - v).abs() < 1e-12)
                    .map(|i| i + 1)
                    .ok_or_else(|| Error::invalid(format!("level {v} is not a converter level")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(angles, level_indices))
    }

    pub fn pulse_number(&self) -> usize {
        self.angles.len()
    }

    /// Level voltages `u^0, ..., u^d`.
    pub fn values(&self, prob: &ConverterProblem) -> Vec<f64> {
        self.level_indices.iter().map(|&n| prob.level(n)).collect()
    }

    /// Structural checks: lengths, index range, strictly increasing angles
    /// inside `[0, pi/2]`. Constraint violations of the OPP problem itself are
    /// reported by [`check_feasibility`] instead.
    pub fn validate_for(&self, prob: &ConverterProblem) -> Result<()> {
        let d = self.angles.len();
        if d != prob.pulse_number {
            return Err(Error::invalid(format!(
                "sequence has {d} angles but the problem has pulse number {}",
                prob.pulse_number
            )));
        }
        if self.level_indices.len() != d + 1 {
            return Err(Error::invalid(format!(
                "sequence with {d} angles needs {} level indices, got {}",
                d + 1,
                self.level_indices.len()
            )));
        }
        let n = prob.num_levels();
        if let Some(bad) = self.level_indices.iter().find(|&&k| k == 0 || k > n) {
            return Err(Error::invalid(format!("level index {bad} outside 1..{n}")));
        }
        if self
            .angles
            .iter()
            .any(|a| !a.is_finite() || *a < 0.0 || *a > FRAC_PI_2)
        {
            return Err(Error::invalid("angles must lie in [0, pi/2]"));
        }
        if self.angles.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid(
                "angles must be strictly increasing (zero-width segments are not allowed)",
            ));
        }
        Ok(())
    }
}

/// Angles extended with `alpha^0 = 0` and `alpha^{d+1} = pi/2`.
pub(crate) fn extended_angles(angles: &[f64]) -> Vec<f64> {
    let mut ext = Vec::with_capacity(angles.len() + 2);
    ext.push(0.0);
    ext.extend_from_slice(angles);
    ext.push(FRAC_PI_2);
    ext
}

/// `b_l` of a QaHW waveform with the given angles and level values.
pub(crate) fn fourier_from_values(angles: &[f64], values: &[f64], ell: u32) -> f64 {
    if ell.is_multiple_of(2) {
        return 0.0;
    }
    let l = ell as f64;
    let sum: f64 = angles
        .iter()
        .enumerate()
        .map(|(i, a)| (values[i + 1] - values[i]) * (l * a).cos())
        .sum();
    4.0 / (l * PI) * sum
}

/// `I(0)` that makes `I(pi/2) = 0`, i.e. `-int_0^{pi/2} u`.
pub(crate) fn zero_mean_current_from_values(angles: &[f64], values: &[f64]) -> f64 {
    let ext = extended_angles(angles);
    -values
        .iter()
        .enumerate()
        .map(|(k, u)| u * (ext[k + 1] - ext[k]))
        .sum::<f64>()
}

/// Full-period current energy `4 int_0^{pi/2} I^2` for the given `I(0)`.
pub(crate) fn energy_from_values(angles: &[f64], values: &[f64], i0: f64) -> f64 {
    let ext = extended_angles(angles);
    let mut current = i0;
    let mut acc = 0.0;
    for (k, &u) in values.iter().enumerate() {
        let len = ext[k + 1] - ext[k];
        // int_0^len (I + u t)^2 dt, expanded so u = 0 needs no special case
        acc += len * (current * current + current * u * len + u * u * len * len / 3.0);
        current += u * len;
    }
    4.0 * acc
}

/// Gradient of the zero-mean energy with respect to each switching angle.
///
/// Moving `alpha^k` only changes `I` on `[0, alpha^k)`, by `u^k - u^{k-1}`, so
/// `dE/dalpha^k = 8 (u^k - u^{k-1}) int_0^{alpha^k} I`.
pub(crate) fn energy_gradient_from_values(angles: &[f64], values: &[f64]) -> Vec<f64> {
    let ext = extended_angles(angles);
    let mut current = zero_mean_current_from_values(angles, values);
    let mut integral = 0.0;
    let mut grad = Vec::with_capacity(angles.len());
    for (k, &u) in values.iter().enumerate().take(angles.len()) {
        let len = ext[k + 1] - ext[k];
        integral += current * len + 0.5 * u * len * len;
        current += u * len;
        grad.push(8.0 * (values[k + 1] - u) * integral);
    }
    grad
}

/// Fourier sine coefficient `b_ell` of the full-period waveform.
pub fn fourier_coefficient(seq: &SwitchingSequence, prob: &ConverterProblem, ell: u32) -> f64 {
    fourier_from_values(&seq.angles, &seq.values(prob), ell)
}

/// `I_0 = -int_0^{pi/2} u`, the initial current that makes the QaHW current
/// zero-mean.
pub fn zero_mean_initial_current(seq: &SwitchingSequence, prob: &ConverterProblem) -> f64 {
    zero_mean_current_from_values(&seq.angles, &seq.values(prob))
}

/// The `I_0` minimizing `4 int_0^{pi/2} I^2` when the initial current is free:
/// minus the average of `int_0^theta u` over the quarter period.
pub fn min_energy_initial_current(seq: &SwitchingSequence, prob: &ConverterProblem) -> f64 {
    let values = seq.values(prob);
    let ext = extended_angles(&seq.angles);
    let mut f = 0.0;
    let mut area = 0.0;
    for (k, u) in values.iter().enumerate() {
        let len = ext[k + 1] - ext[k];
        area += f * len + 0.5 * u * len * len;
        f += u * len;
    }
    -area / FRAC_PI_2
}

/// `||I||_2^2` over the full period, from the closed-form cubic recursion.
pub fn signal_energy(seq: &SwitchingSequence, prob: &ConverterProblem, i0: f64) -> f64 {
    energy_from_values(&seq.angles, &seq.values(prob), i0)
}

/// Voltage energy `||u||_2^2 = 4 int_0^{pi/2} u^2`.
pub fn voltage_energy(seq: &SwitchingSequence, prob: &ConverterProblem) -> f64 {
    let ext = extended_angles(&seq.angles);
    4.0 * seq
        .values(prob)
        .iter()
        .enumerate()
        .map(|(k, u)| u * u * (ext[k + 1] - ext[k]))
        .sum::<f64>()
}

pub(crate) fn quality_from_energy(energy: f64, b1: f64) -> Result<f64> {
    let radicand = energy / PI - b1 * b1;
    if radicand < -RADICAND_CLAMP {
        return Err(Error::NegativeRadicand(radicand));
    }
    Ok(radicand.max(0.0).sqrt())
}

/// `Q = sqrt(||I||^2 / pi - b_1^2)` with the zero-mean initial current.
pub fn quality_metric(seq: &SwitchingSequence, prob: &ConverterProblem) -> Result<f64> {
    let values = seq.values(prob);
    let i0 = zero_mean_current_from_values(&seq.angles, &values);
    let energy = energy_from_values(&seq.angles, &values, i0);
    quality_from_energy(energy, fourier_from_values(&seq.angles, &values, 1))
}

/// Physical ratings used to turn `Q` into a current TDD.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ratings {
    /// Fundamental frequency in Hz.
    pub f1: f64,
    pub v_dc: f64,
    pub l_load: f64,
    /// Rated rms current.
    pub i_rated: f64,
}

impl Ratings {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.f1, self.v_dc, self.l_load, self.i_rated]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("ratings must all be strictly positive"))
        }
    }

    /// Factor `V_dc / (2 sqrt(2) I_R omega_1 L_load)` that maps `Q` to TDD.
    pub fn tdd_factor(&self) -> f64 {
        let omega = 2.0 * PI * self.f1;
        self.v_dc / (2.0 * SQRT_2 * self.i_rated * omega * self.l_load)
    }
}

/// Current total demand distortion.
pub fn tdd(seq: &SwitchingSequence, prob: &ConverterProblem, ratings: &Ratings) -> Result<f64> {
    ratings.validate()?;
    Ok(quality_metric(seq, prob)? * ratings.tdd_factor())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    /// Two consecutive angles closer than `Theta`.
    Interlock,
    /// `alpha^1 < Theta / 2`.
    InterlockStart,
    /// `alpha^d > pi/2 - Theta / 2`.
    InterlockEnd,
    /// Consecutive levels not one step apart.
    LevelStep,
    /// The sequence does not start at the zero level.
    StartLevel,
    /// A negative level in a unipolar problem.
    Unipolar,
    /// A harmonic outside its bound.
    Harmonic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub message: String,
}

/// Everything the CLI reports about one pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternReport {
    pub fourier: BTreeMap<u32, f64>,
    pub energy: f64,
    pub initial_current: f64,
    pub quality: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tdd: Option<f64>,
    pub feasible: bool,
    pub violations: Vec<Violation>,
}

/// Evaluates every constraint of the OPP problem and collects violations.
///
/// Fails only when the sequence is structurally malformed for `prob`.
pub fn check_feasibility(
    seq: &SwitchingSequence,
    prob: &ConverterProblem,
) -> Result<PatternReport> {
    check_feasibility_with(seq, prob, None)
}

pub fn check_feasibility_with(
    seq: &SwitchingSequence,
    prob: &ConverterProblem,
    ratings: Option<&Ratings>,
) -> Result<PatternReport> {
    seq.validate_for(prob)?;
    let values = seq.values(prob);
    let theta = prob.interlock;
    let a = &seq.angles;
    let d = a.len();
    let mut violations = Vec::new();

    if a[0] < theta / 2.0 - INTERLOCK_SLACK {
        violations.push(Violation {
            kind: ViolationKind::InterlockStart,
            message: format!("alpha^1 = {} < Theta/2 = {}", a[0], theta / 2.0),
        });
    }
    for i in 1..d {
        if a[i] - a[i - 1] < theta - INTERLOCK_SLACK {
            violations.push(Violation {
                kind: ViolationKind::Interlock,
                message: format!(
                    "alpha^{} - alpha^{} = {} < Theta = {theta}",
                    i + 1,
                    i,
                    a[i] - a[i - 1]
                ),
            });
        }
    }
    if a[d - 1] > FRAC_PI_2 - theta / 2.0 + INTERLOCK_SLACK {
        violations.push(Violation {
            kind: ViolationKind::InterlockEnd,
            message: format!("alpha^{d} = {} > pi/2 - Theta/2", a[d - 1]),
        });
    }
    for (i, w) in seq.level_indices.windows(2).enumerate() {
        if w[0].abs_diff(w[1]) != 1 {
            violations.push(Violation {
                kind: ViolationKind::LevelStep,
                message: format!("n^{} = {} -> n^{} = {}", i, w[0], i + 1, w[1]),
            });
        }
    }
    if seq.level_indices[0] != prob.center_index() {
        violations.push(Violation {
            kind: ViolationKind::StartLevel,
            message: format!(
                "n^0 = {} but QaHW symmetry requires the zero level {}",
                seq.level_indices[0],
                prob.center_index()
            ),
        });
    }
    if prob.unipolar {
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| **v < 0.0) {
            violations.push(Violation {
                kind: ViolationKind::Unipolar,
                message: format!("u^{i} = {v} is negative"),
            });
        }
    }

    let mut fourier = BTreeMap::new();
    for ell in [1, 3, 5, 7]
        .into_iter()
        .chain(prob.harmonics.iter().map(|h| h.order))
    {
        fourier.insert(ell, fourier_from_values(a, &values, ell));
    }
    for h in &prob.harmonics {
        let b = fourier[&h.order];
        if !h.admits(b) {
            let hi = if h.is_equality() {
                h.lo + EQUALITY_WINDOW
            } else {
                h.hi
            };
            violations.push(Violation {
                kind: ViolationKind::Harmonic,
                message: format!("b_{} = {b:.10e} outside [{}, {}]", h.order, h.lo, hi),
            });
        }
    }

    let initial_current = zero_mean_current_from_values(a, &values);
    let energy = energy_from_values(a, &values, initial_current);
    let quality = quality_from_energy(energy, fourier[&1])?;
    let tdd = match ratings {
        Some(r) => {
            r.validate()?;
            Some(quality * r.tdd_factor())
        }
        None => None,
    };
    Ok(PatternReport {
        fourier,
        energy,
        initial_current,
        quality,
        tdd,
        feasible: violations.is_empty(),
        violations,
    })
}

/// The waveform over one full period `[0, 2pi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullPeriodPattern {
    /// The `4d` switching angles in increasing order.
    pub angles: Vec<f64>,
    /// `4d + 1` levels; `values[k]` holds on `[angles[k-1], angles[k])`.
    pub values: Vec<f64>,
}

impl FullPeriodPattern {
    /// `u(theta)` for any real `theta` (the pattern is `2pi`-periodic).
    pub fn value_at(&self, theta: f64) -> f64 {
        let t = theta.rem_euclid(2.0 * PI);
        let k = self.angles.partition_point(|&a| a <= t);
        self.values[k]
    }
}

/// Mirrors the quarter-period description onto `[0, 2pi)` using the
/// quarter-wave and half-wave symmetries.
pub fn expand_quarter_wave(seq: &SwitchingSequence, prob: &ConverterProblem) -> FullPeriodPattern {
    let a = &seq.angles;
    let u = seq.values(prob);
    let d = a.len();
    let mut angles = Vec::with_capacity(4 * d);
    angles.extend(a.iter().copied());
    angles.extend((1..=d).map(|i| PI - a[d - i]));
    angles.extend(a.iter().map(|x| PI + x));
    angles.extend((1..=d).map(|i| 2.0 * PI - a[d - i]));

    let mut values = Vec::with_capacity(4 * d + 1);
    values.extend(u.iter().copied());
    values.extend((1..d).rev().map(|k| u[k]));
    values.push(u[0]);
    values.extend(u[1..].iter().map(|v| -v));
    values.extend((1..d).rev().map(|k| -u[k]));
    values.push(-u[0]);
    FullPeriodPattern { angles, values }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_step(alpha: f64) -> (SwitchingSequence, ConverterProblem) {
        let mut prob = ConverterProblem::reference_five_level(1, 0.5);
        prob.levels = vec![-1.0, 0.0, 1.0];
        prob.harmonics = vec![];
        prob.modulation_index = None;
        (SwitchingSequence::new(vec![alpha], vec![2, 3]), prob)
    }

    #[test]
    fn single_step_fourier() {
        let (seq, prob) = single_step(PI / 3.0);
        assert!((fourier_coefficient(&seq, &prob, 1) - 2.0 / PI).abs() < 1e-15);
        assert_eq!(fourier_coefficient(&seq, &prob, 2), 0.0);
    }

    #[test]
    fn single_step_current() {
        let (seq, prob) = single_step(PI / 4.0);
        assert!((zero_mean_initial_current(&seq, &prob) + PI / 4.0).abs() < 1e-15);
    }

    #[test]
    fn zero_signal_has_zero_energy() {
        let mut prob = ConverterProblem::reference_five_level(2, 0.0);
        prob.unipolar = false;
        // 0 -> 0.5 -> 0 still has current; use a sequence that is zero except
        // for a vanishing excursion
        let seq = SwitchingSequence::new(vec![0.5, 0.5 + 1e-9], vec![3, 4, 3]);
        let i0 = zero_mean_initial_current(&seq, &prob);
        assert!(signal_energy(&seq, &prob, i0) < 1e-15);
        assert_eq!(
            signal_energy(&seq, &prob, 0.0),
            signal_energy(&seq, &prob, 0.0)
        );
    }

    #[test]
    fn tdd_scaling() {
        let (seq, prob) = single_step(0.7);
        let ones = Ratings {
            f1: 1.0,
            v_dc: 1.0,
            l_load: 1.0,
            i_rated: 1.0,
        };
        let q = quality_metric(&seq, &prob).unwrap();
        let t = tdd(&seq, &prob, &ones).unwrap();
        assert!((t - q / (2.0 * SQRT_2 * 2.0 * PI)).abs() < 1e-15);
        let bad = Ratings { f1: 0.0, ..ones };
        assert!(tdd(&seq, &prob, &bad).is_err());
    }

    #[test]
    fn negative_radicand_is_an_error() {
        assert!(matches!(
            quality_from_energy(PI * 0.5, 1.0),
            Err(Error::NegativeRadicand(_))
        ));
        assert_eq!(quality_from_energy(PI - 1e-13, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn interlock_and_level_step_violations() {
        let prob = ConverterProblem::reference_five_level(2, 0.3);
        let theta = prob.interlock;
        let close = SwitchingSequence::new(vec![0.5, 0.5 + theta / 2.0], vec![3, 4, 5]);
        let r = check_feasibility(&close, &prob).unwrap();
        assert!(!r.feasible);
        assert!(r
            .violations
            .iter()
            .any(|v| v.kind == ViolationKind::Interlock));

        let jump = SwitchingSequence::new(vec![0.5, 0.9], vec![3, 5, 4]);
        let r = check_feasibility(&jump, &prob).unwrap();
        assert!(r
            .violations
            .iter()
            .any(|v| v.kind == ViolationKind::LevelStep));
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"level-step\""));
    }

    #[test]
    fn structural_errors() {
        let prob = ConverterProblem::reference_five_level(2, 0.3);
        let short = SwitchingSequence::new(vec![0.5], vec![3, 4]);
        assert!(check_feasibility(&short, &prob).is_err());
        let flat = SwitchingSequence::new(vec![0.5, 0.5], vec![3, 4, 3]);
        assert!(flat.validate_for(&prob).is_err());
        let range = SwitchingSequence::new(vec![0.5, 0.7], vec![3, 4, 6]);
        assert!(range.validate_for(&prob).is_err());
    }

    #[test]
    fn expansion_of_single_step() {
        let (seq, prob) = single_step(PI / 4.0);
        let full = expand_quarter_wave(&seq, &prob);
        let expected = [PI / 4.0, 3.0 * PI / 4.0, 5.0 * PI / 4.0, 7.0 * PI / 4.0];
        for (a, e) in full.angles.iter().zip(expected) {
            assert!((a - e).abs() < 1e-15);
        }
        assert_eq!(full.values, vec![0.0, 1.0, 0.0, -1.0, -0.0]);
    }

    #[test]
    fn problem_validation() {
        let mut p = ConverterProblem::reference_five_level(8, 0.9);
        assert!(p.validate().is_ok());
        p.levels = vec![-1.0, 0.0, 0.5];
        assert!(p.validate().is_err());
        let mut p = ConverterProblem::reference_five_level(60, 0.9);
        assert!(p.validate().is_err());
        p.pulse_number = 8;
        p.harmonics.push(HarmonicBound::range(2, 0.0, 1.0));
        assert!(p.validate().is_err());
    }

    #[test]
    fn modulation_index_is_merged() {
        let text =
            r#"{"levels":[-1,0,1],"pulse_number":2,"interlock":0.03,"modulation_index":0.4}"#;
        let p = ConverterProblem::from_json_str(text).unwrap();
        assert_eq!(p.harmonics, vec![HarmonicBound::equality(1, 0.4)]);
        assert!(p.unipolar);
        let bad = r#"{"levels":[-1,0,1],"pulse_number":2,"interlock":0.03,"modulation_index":0.4,
                      "harmonics":[{"order":1,"lo":0.5,"hi":0.5}]}"#;
        assert!(ConverterProblem::from_json_str(bad).is_err());
        let unknown = r#"{"levels":[-1,0,1],"pulse_number":2,"interlock":0.03,"bogus":1}"#;
        assert!(ConverterProblem::from_json_str(unknown).is_err());
    }
}
