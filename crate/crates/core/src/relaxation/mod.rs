//! Degree-`2 beta` moment truncation of the occupation-measure program.
//!
//! Each mode `(n, i)` of the transition graph carries an occupation measure
//! over `x = (c, s, phi, I)`, each edge a jump measure located at the switch,
//! and the start and end of the quarter period an initial and terminal
//! measure over `(phi, I)`. The truncation keeps every moment of degree at
//! most `2 beta` and imposes
//!
//! * unit initial mass,
//! * harmonic constraints `(4/pi) sum v_n <s U_{q-1}(c), mu_{n,i}> in [lo, hi]`,
//! * uniform angle coverage `sum <c^a s^b, mu_{n,i}> = int_0^{pi/2} cos^a sin^b`,
//! * a Liouville (flow conservation) equation per mode and test monomial,
//! * the circle identity `c^2 + s^2 = 1` on every measure over `(c, s)`.
//!
//! Positivity (moment and localizing matrices) is added by [`crate::sdp`].

mod poly;
mod supports;

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use poly::{lie_derivative, monomials, Monomial, Poly};
pub use supports::SupportSet;

use crate::error::{Error, Result};
use crate::graph::{build_graph, ModeId, TransitionGraph};
use crate::oracle::MeasureMoments;
use crate::pattern::{ConverterProblem, ObjectiveMode};
use supports::SupportGeometry;

/// Coefficients of the Chebyshev polynomial of the second kind `U_l`, in
/// increasing powers of `c`.
pub fn chebyshev_u(l: usize) -> Vec<i64> {
    let mut prev = vec![1i64];
    if l == 0 {
        return prev;
    }
    let mut cur = vec![0i64, 2];
    for _ in 1..l {
        let mut next = vec![0i64; cur.len() + 1];
        for (k, &v) in cur.iter().enumerate() {
            next[k + 1] += 2 * v;
        }
        for (k, &v) in prev.iter().enumerate() {
            next[k] -= v;
        }
        prev = cur;
        cur = next;
    }
    cur
}

/// `s U_{q-1}(c)`, which equals `sin(q theta)` on the unit circle.
pub fn harmonic_polynomial(order: u32) -> Poly {
    let mut p = Poly::zero();
    for (k, &coef) in chebyshev_u(order as usize - 1).iter().enumerate() {
        p.add_term(coef as f64, Monomial::new(k as u8, 1, 0, 0));
    }
    p
}

/// `W(a, b) = int_0^{pi/2} cos^a sin^b`.
pub fn arc_monomial_integral(a: u32, b: u32) -> f64 {
    match (a, b) {
        (0, 0) => FRAC_PI_2,
        (1, 0) | (0, 1) => 1.0,
        (1, 1) => 0.5,
        _ if a >= 2 => (a - 1) as f64 / (a + b) as f64 * arc_monomial_integral(a - 2, b),
        _ => (b - 1) as f64 / (a + b) as f64 * arc_monomial_integral(a, b - 2),
    }
}

/// `C(n, k)` as a float, for the nominal size formulas.
pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, j| acc * (n - j) / (j + 1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MeasureKind {
    Initial,
    Terminal {
        mode: ModeId,
    },
    Occupation {
        mode: ModeId,
    },
    /// Jump measure of `graph.edges[edge]`.
    Jump {
        edge: usize,
        from: ModeId,
        to: ModeId,
    },
}

impl std::fmt::Display for MeasureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MeasureKind::Initial => write!(f, "initial"),
            MeasureKind::Terminal { mode } => write!(f, "terminal{mode}"),
            MeasureKind::Occupation { mode } => write!(f, "occupation{mode}"),
            MeasureKind::Jump { from, to, .. } => write!(f, "jump{from}->{to}"),
        }
    }
}

/// One measure and the slice of the stacked moment vector it owns.
#[derive(Debug, Clone, Serialize)]
pub struct MeasureBlock {
    pub kind: MeasureKind,
    /// Measures over `(phi, I)` only.
    pub clock_current_only: bool,
    pub support: SupportSet,
    /// Sorted graded-lex; position `k` is stacked variable `offset + k`.
    pub monomials: Vec<Monomial>,
    pub offset: usize,
}

impl MeasureBlock {
    pub fn position(&self, m: Monomial) -> Option<usize> {
        self.monomials.binary_search(&m).ok()
    }

    /// Stacked index of monomial `m`; panics if `m` is outside the truncation.
    pub fn var(&self, m: Monomial) -> usize {
        self.offset
            + self
                .position(m)
                .unwrap_or_else(|| panic!("monomial {m} outside block {}", self.kind))
    }

    pub fn len(&self) -> usize {
        self.monomials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.monomials.is_empty()
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.monomials.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum RowKind {
    Mass,
    Liouville { mode: ModeId, test: Monomial },
    Uniformity { a: u8, b: u8 },
    Circle { block: usize, multiplier: Monomial },
    Harmonic { order: u32 },
}

/// `sum coeffs[k].1 * y[coeffs[k].0] = rhs`.
#[derive(Debug, Clone, Serialize)]
pub struct LinearRow {
    pub kind: RowKind,
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl LinearRow {
    pub fn eval(&self, y: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(k, c)| c * y[k]).sum()
    }
}

/// `lo <= sum coeffs * y <= hi`.
#[derive(Debug, Clone, Serialize)]
pub struct HarmonicRow {
    pub order: u32,
    pub lo: f64,
    pub hi: f64,
    pub coeffs: Vec<(usize, f64)>,
}

impl HarmonicRow {
    pub fn eval(&self, y: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(k, c)| c * y[k]).sum()
    }
}

/// What to do with harmonic constraints whose polynomial degree exceeds `2 beta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExcessHarmonics {
    /// Fail with [`Error::DegreeTooLow`].
    #[default]
    Reject,
    /// Leave them out; the result is a weaker but still valid relaxation.
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AssembleOptions {
    pub excess_harmonics: ExcessHarmonics,
    /// Let the current at `theta = pi/2` range over the whole current box.
    /// By default it is pinned to zero, the value forced by quarter-wave
    /// symmetry of a zero-mean current; the terminal measures then carry the
    /// clock only.
    pub free_terminal_current: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentRelaxation {
    pub beta: usize,
    pub objective_mode: ObjectiveMode,
    pub graph: TransitionGraph,
    pub levels: Vec<f64>,
    pub blocks: Vec<MeasureBlock>,
    pub equalities: Vec<LinearRow>,
    pub harmonics: Vec<HarmonicRow>,
    /// Sparse objective `sum coeff * y[var]`, minimized.
    pub objective: Vec<(usize, f64)>,
    pub num_moments: usize,
    /// Harmonic orders left out because their degree exceeds `2 beta`.
    pub dropped_harmonics: Vec<u32>,
    pub modulation_index: Option<f64>,
}

struct RowBuilder(BTreeMap<usize, f64>);

impl RowBuilder {
    fn new() -> Self {
        Self(BTreeMap::new())
    }

    fn add(&mut self, var: usize, coef: f64) {
        if coef != 0.0 {
            *self.0.entry(var).or_insert(0.0) += coef;
        }
    }

    fn finish(self) -> Vec<(usize, f64)> {
        self.0.into_iter().filter(|(_, c)| *c != 0.0).collect()
    }
}

/// Assembles the truncation with default options (harmonics of too high a
/// degree are rejected).
pub fn assemble(
    prob: &ConverterProblem,
    beta: usize,
    objective: ObjectiveMode,
) -> Result<MomentRelaxation> {
    assemble_with(prob, beta, objective, AssembleOptions::default())
}

pub fn assemble_with(
    prob: &ConverterProblem,
    beta: usize,
    objective: ObjectiveMode,
    options: AssembleOptions,
) -> Result<MomentRelaxation> {
    prob.validate()?;
    if beta == 0 {
        return Err(Error::invalid("beta must be at least 1"));
    }
    if 2 * beta > u8::MAX as usize / 2 {
        return Err(Error::invalid(format!(
            "beta = {beta} is unreasonably large"
        )));
    }
    let deg = 2 * beta;
    let mut dropped = Vec::new();
    let mut kept = Vec::new();
    for h in &prob.harmonics {
        if h.order as usize > deg {
            match options.excess_harmonics {
                ExcessHarmonics::Reject => {
                    return Err(Error::DegreeTooLow {
                        order: h.order,
                        beta,
                    })
                }
                ExcessHarmonics::Drop => dropped.push(h.order),
            }
        } else {
            kept.push(*h);
        }
    }

    let graph = build_graph(prob.num_levels(), prob.pulse_number, prob.unipolar)?;
    let geom = SupportGeometry {
        pulse_number: prob.pulse_number,
        interlock: prob.interlock,
        current_limit: prob.current_limit(),
    };
    let full = monomials(deg, false);
    let planar = monomials(deg, true);

    let mut blocks = Vec::new();
    let mut offset = 0;
    // With the end current pinned to zero, a terminal mode of level zero
    // keeps the current at zero throughout, so its measures carry no current.
    let pinned = |mode: ModeId| {
        !options.free_terminal_current
            && mode.switches == graph.pulse_number
            && prob.level(mode.level) == 0.0
    };
    let without_current = |monos: &[Monomial]| -> Vec<Monomial> {
        monos.iter().copied().filter(|m| m.0[3] == 0).collect()
    };
    let mut push =
        |kind: MeasureKind, clock_current_only: bool, current: bool, support: SupportSet| {
            let monos = match (clock_current_only, current) {
                (true, true) => planar.clone(),
                (true, false) => without_current(&planar),
                (false, true) => full.clone(),
                (false, false) => without_current(&full),
            };
            let n = monos.len();
            blocks.push(MeasureBlock {
                kind,
                clock_current_only,
                support,
                monomials: monos,
                offset,
            });
            offset += n;
        };
    push(MeasureKind::Initial, true, true, geom.initial());
    for t in &graph.terminals {
        let free = options.free_terminal_current;
        push(
            MeasureKind::Terminal { mode: *t },
            true,
            free,
            geom.terminal(free),
        );
    }
    for v in &graph.vertices {
        let current = !pinned(*v);
        push(
            MeasureKind::Occupation { mode: *v },
            false,
            current,
            geom.occupation(v.switches, current),
        );
    }
    for (k, e) in graph.edges.iter().enumerate() {
        let current = !pinned(e.to);
        push(
            MeasureKind::Jump {
                edge: k,
                from: e.from,
                to: e.to,
            },
            false,
            current,
            geom.guard(e.to.switches, current),
        );
    }
    let num_moments = offset;

    let initial = 0;
    let terminal_block: BTreeMap<ModeId, usize> = graph
        .terminals
        .iter()
        .enumerate()
        .map(|(k, t)| (*t, 1 + k))
        .collect();
    let occ_base = 1 + graph.terminals.len();
    let occupation_block: BTreeMap<ModeId, usize> = graph
        .vertices
        .iter()
        .enumerate()
        .map(|(k, v)| (*v, occ_base + k))
        .collect();
    let jump_base = occ_base + graph.vertices.len();

    let mut equalities = Vec::new();
    equalities.push(LinearRow {
        kind: RowKind::Mass,
        coeffs: vec![(blocks[initial].var(Monomial::ONE), 1.0)],
        rhs: 1.0,
    });

    for mode in &graph.vertices {
        let occ = &blocks[occupation_block[mode]];
        let v = prob.level(mode.level);
        let incoming = graph.incoming(*mode);
        let outgoing = graph.outgoing(*mode);
        for &w in &full {
            let [a, b, g, m] = w.0;
            if pinned(*mode) && m > 0 {
                continue;
            }
            let mut row = RowBuilder::new();
            // monomials with a current factor vanish on current-free measures
            let mut add = |block: &MeasureBlock, mono: Monomial, coef: f64| {
                if let Some(p) = block.position(mono) {
                    row.add(block.offset + p, coef);
                }
            };
            if mode.switches == 0 {
                if b == 0 {
                    add(&blocks[initial], Monomial::new(0, 0, g, m), 1.0);
                }
            } else if g == 0 {
                for &k in &incoming {
                    add(&blocks[jump_base + k], w, 1.0);
                }
            }
            for (mono, coef) in lie_derivative(w, v).terms() {
                add(occ, mono, coef);
            }
            if mode.switches == graph.pulse_number {
                if a == 0 {
                    add(
                        &blocks[terminal_block[mode]],
                        Monomial::new(0, 0, g, m),
                        -1.0,
                    );
                }
            } else {
                for &k in &outgoing {
                    add(&blocks[jump_base + k], w, -1.0);
                }
            }
            equalities.push(LinearRow {
                kind: RowKind::Liouville {
                    mode: *mode,
                    test: w,
                },
                coeffs: row.finish(),
                rhs: 0.0,
            });
        }
    }

    for total in 0..=deg {
        for a in (0..=total).rev() {
            let b = total - a;
            let mono = Monomial::new(a as u8, b as u8, 0, 0);
            let mut row = RowBuilder::new();
            for mode in &graph.vertices {
                row.add(blocks[occupation_block[mode]].var(mono), 1.0);
            }
            equalities.push(LinearRow {
                kind: RowKind::Uniformity {
                    a: a as u8,
                    b: b as u8,
                },
                coeffs: row.finish(),
                rhs: arc_monomial_integral(a as u32, b as u32),
            });
        }
    }

    let multipliers = monomials(deg - 2, false);
    for (k, block) in blocks.iter().enumerate() {
        if block.clock_current_only {
            continue;
        }
        for &m in &multipliers {
            if block.position(m).is_none() {
                continue;
            }
            let mut row = RowBuilder::new();
            row.add(block.var(m.mul(Monomial::new(2, 0, 0, 0))), 1.0);
            row.add(block.var(m.mul(Monomial::new(0, 2, 0, 0))), 1.0);
            row.add(block.var(m), -1.0);
            equalities.push(LinearRow {
                kind: RowKind::Circle {
                    block: k,
                    multiplier: m,
                },
                coeffs: row.finish(),
                rhs: 0.0,
            });
        }
    }

    let mut harmonics = Vec::new();
    for h in &kept {
        let poly = harmonic_polynomial(h.order);
        let mut row = RowBuilder::new();
        for mode in &graph.vertices {
            let v = prob.level(mode.level);
            if v == 0.0 {
                continue;
            }
            let occ = &blocks[occupation_block[mode]];
            for (mono, coef) in poly.terms() {
                row.add(occ.var(mono), 4.0 / PI * v * coef);
            }
        }
        harmonics.push(HarmonicRow {
            order: h.order,
            lo: h.lo,
            hi: h.hi,
            coeffs: row.finish(),
        });
    }

    let mut obj = RowBuilder::new();
    for mode in &graph.vertices {
        let occ = &blocks[occupation_block[mode]];
        match objective {
            ObjectiveMode::Current => {
                if let Some(p) = occ.position(Monomial::new(0, 0, 0, 2)) {
                    obj.add(occ.offset + p, 4.0)
                }
            }
            ObjectiveMode::Voltage => {
                let v = prob.level(mode.level);
                obj.add(occ.var(Monomial::ONE), 4.0 * v * v)
            }
        }
    }

    Ok(MomentRelaxation {
        beta,
        objective_mode: objective,
        graph,
        levels: prob.levels.clone(),
        blocks,
        equalities,
        harmonics,
        objective: obj.finish(),
        num_moments,
        dropped_harmonics: dropped,
        modulation_index: prob.modulation(),
    })
}

/// Nominal sizes of the truncation, as functions of `beta` alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct NominalSizes {
    /// Moments per four-variable measure, `C(4 + 2 beta, 4)`.
    pub vector_dim_4: usize,
    /// Moments per two-variable measure, `C(2 + 2 beta, 2)`.
    pub vector_dim_2: usize,
    /// Side of a four-variable moment matrix, `C(4 + beta, 4)`.
    pub psd_side_4: usize,
    /// Side of a two-variable moment matrix, `C(2 + beta, 2)`.
    pub psd_side_2: usize,
}

pub fn nominal_sizes(beta: usize) -> NominalSizes {
    NominalSizes {
        vector_dim_4: binomial(4 + 2 * beta, 4),
        vector_dim_2: binomial(2 + 2 * beta, 2),
        psd_side_4: binomial(4 + beta, 4),
        psd_side_2: binomial(2 + beta, 2),
    }
}

impl MomentRelaxation {
    pub fn occupation_blocks(&self) -> impl Iterator<Item = (ModeId, &MeasureBlock)> {
        self.blocks.iter().filter_map(|b| match b.kind {
            MeasureKind::Occupation { mode } => Some((mode, b)),
            _ => None,
        })
    }

    pub fn block_of(&self, kind: MeasureKind) -> Option<&MeasureBlock> {
        self.blocks.iter().find(|b| b.kind == kind)
    }

    pub fn objective_value(&self, y: &[f64]) -> f64 {
        self.objective.iter().map(|&(k, c)| c * y[k]).sum()
    }

    /// Largest `|row(y) - rhs|` over all equality rows.
    pub fn max_equality_residual(&self, y: &[f64]) -> f64 {
        self.equalities
            .iter()
            .map(|r| (r.eval(y) - r.rhs).abs())
            .fold(0.0, f64::max)
    }

    /// Row with the largest residual, for diagnostics.
    pub fn worst_equality(&self, y: &[f64]) -> Option<(&LinearRow, f64)> {
        self.equalities
            .iter()
            .map(|r| (r, (r.eval(y) - r.rhs).abs()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
    }

    /// Stacks moments computed from a trajectory into this relaxation's layout.
    pub fn moment_vector(&self, mm: &MeasureMoments) -> Result<Vec<f64>> {
        if mm.beta < self.beta || mm.graph.vertices != self.graph.vertices {
            return Err(Error::invalid("moments do not match the relaxation"));
        }
        let mut y = vec![0.0; self.num_moments];
        for block in &self.blocks {
            for (k, m) in block.monomials.iter().enumerate() {
                let planar = [m.0[2], m.0[3]];
                let value = match block.kind {
                    MeasureKind::Initial => mm.initial.get(&planar),
                    MeasureKind::Terminal { mode } => {
                        mm.terminal.get(&mode).and_then(|t| t.get(&planar))
                    }
                    MeasureKind::Occupation { mode } => {
                        mm.occupation.get(&mode).and_then(|o| o.get(&m.0))
                    }
                    MeasureKind::Jump { edge, .. } => mm.jump.get(edge).and_then(|j| j.get(&m.0)),
                };
                y[block.offset + k] = *value.ok_or_else(|| {
                    Error::invalid(format!("missing moment {m} of {}", block.kind))
                })?;
            }
        }
        Ok(y)
    }

    /// Human-readable roster of blocks and row families.
    pub fn dump_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "beta = {}, objective = {:?}",
            self.beta, self.objective_mode
        );
        let _ = writeln!(
            s,
            "graph: {} vertices, {} edges, {} terminals",
            self.graph.vertices.len(),
            self.graph.edges.len(),
            self.graph.terminals.len()
        );
        let _ = writeln!(s, "moments: {}", self.num_moments);
        let _ = writeln!(s, "blocks:");
        for b in &self.blocks {
            let _ = writeln!(
                s,
                "  {:<24} vars {:>5}..{:<5} ({} moments, {} inequalities)",
                b.kind.to_string(),
                b.offset,
                b.offset + b.len(),
                b.len(),
                b.support.inequalities.len()
            );
        }
        let mut families: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for r in &self.equalities {
            let name = match r.kind {
                RowKind::Mass => "mass",
                RowKind::Liouville { .. } => "liouville",
                RowKind::Uniformity { .. } => "uniformity",
                RowKind::Circle { .. } => "circle",
                RowKind::Harmonic { .. } => "harmonic",
            };
            let e = families.entry(name).or_default();
            e.0 += 1;
            e.1 += r.coeffs.len();
        }
        let _ = writeln!(s, "equality rows:");
        for (name, (rows, nnz)) in families {
            let _ = writeln!(s, "  {name:<12} {rows:>6} rows {nnz:>8} nnz");
        }
        for h in &self.harmonics {
            let _ = writeln!(
                s,
                "harmonic b_{} in [{}, {}] ({} nnz)",
                h.order,
                h.lo,
                h.hi,
                h.coeffs.len()
            );
        }
        if !self.dropped_harmonics.is_empty() {
            let _ = writeln!(
                s,
                "dropped harmonics (degree > 2 beta): {:?}",
                self.dropped_harmonics
            );
        }
        s
    }

    /// Canonical JSON rendering (block roster, all rows, objective).
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("relaxation serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chebyshev_coefficients() {
        assert_eq!(chebyshev_u(0), vec![1]);
        assert_eq!(chebyshev_u(1), vec![0, 2]);
        assert_eq!(chebyshev_u(2), vec![-1, 0, 4]);
        assert_eq!(chebyshev_u(4), vec![1, 0, -12, 0, 16]);
    }

    #[test]
    fn harmonic_polynomial_is_sine_multiple() {
        for q in [1u32, 3, 5, 7] {
            let p = harmonic_polynomial(q);
            for t in [0.1, 0.7, 1.3] {
                let x = [f64::cos(t), f64::sin(t), 0.0, 0.0];
                assert!((p.eval(&x) - (q as f64 * t).sin()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn arc_integrals() {
        assert!((arc_monomial_integral(0, 0) - FRAC_PI_2).abs() < 1e-15);
        assert!((arc_monomial_integral(2, 0) - PI / 4.0).abs() < 1e-15);
        assert!((arc_monomial_integral(3, 2) - 2.0 / 15.0).abs() < 1e-15);
        assert!((arc_monomial_integral(0, 4) - arc_monomial_integral(4, 0)).abs() < 1e-15);
    }

    #[test]
    fn nominal_size_table() {
        let s = nominal_sizes(1);
        assert_eq!((s.vector_dim_4, s.psd_side_4, s.psd_side_2), (15, 5, 3));
        let s = nominal_sizes(3);
        assert_eq!((s.vector_dim_4, s.psd_side_4, s.psd_side_2), (210, 35, 10));
    }

    #[test]
    fn roster_for_reference_problem() {
        let prob = ConverterProblem::reference_five_level(8, 0.9);
        let rel = assemble(&prob, 2, ObjectiveMode::Current).unwrap();
        let occ = rel.occupation_blocks().count();
        let jumps = rel
            .blocks
            .iter()
            .filter(|b| matches!(b.kind, MeasureKind::Jump { .. }))
            .count();
        let planar = rel.blocks.iter().filter(|b| b.clock_current_only).count();
        assert_eq!((occ, jumps, planar), (13, 15, 3));
        let liouville = rel
            .equalities
            .iter()
            .filter(|r| matches!(r.kind, RowKind::Liouville { .. }))
            .count();
        // the zero-level terminal mode carries no current moments
        assert_eq!(liouville, 12 * binomial(8, 4) + binomial(7, 3));
        let uniform = rel
            .equalities
            .iter()
            .filter(|r| matches!(r.kind, RowKind::Uniformity { .. }))
            .count();
        assert_eq!(uniform, binomial(6, 2));
        assert!(rel.dump_text().contains("liouville"));
    }

    #[test]
    fn excess_harmonics() {
        let prob = ConverterProblem::reference_five_level(8, 0.9);
        assert!(matches!(
            assemble(&prob, 1, ObjectiveMode::Current),
            Err(Error::DegreeTooLow { order: 3, beta: 1 })
        ));
        let rel = assemble_with(
            &prob,
            1,
            ObjectiveMode::Current,
            AssembleOptions {
                excess_harmonics: ExcessHarmonics::Drop,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(rel.dropped_harmonics, vec![3]);
        assert_eq!(rel.harmonics.len(), 1);
    }
}
