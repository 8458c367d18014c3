//! From a solved relaxation back to a switching sequence.
//!
//! The mass `xi_{n,i} = <1, mu_{n,i}>` of each occupation measure is the
//! (averaged) angle spent in mode `(n, i)`. Column `i` of the table picks the
//! level `n^i` with the largest mass, and the column sums give the segment
//! lengths, so `alpha^i` is the cumulative mass of columns `0..i`. The result
//! usually misses the harmonic specification slightly; [`refine`] then fixes
//! the levels and polishes the angles.

mod refine;

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

pub use refine::{
    fourier_gradient, objective_gradient, objective_value, refine, refine_with, trace_csv,
    RefineOptions, RefineOutcome, RefineTraceRow,
};

use crate::error::{Error, Result};
use crate::graph::{levels_to_path, ModeId, TransitionGraph};
use crate::oracle::MeasureMoments;
use crate::pattern::{ConverterProblem, SwitchingSequence};
use crate::relaxation::{MeasureKind, MomentRelaxation, Monomial};
use crate::sdp::{ConicProblem, ConicSolution};

/// Occupation masses below this magnitude are treated as numerical noise.
pub const NEGATIVE_MASS_TOLERANCE: f64 = 1e-9;

/// Masses `xi_{n,i}` of the occupation measures, one per graph vertex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyTable {
    pub pulse_number: usize,
    pub entries: Vec<OccupancyEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OccupancyEntry {
    pub mode: ModeId,
    pub mass: f64,
}

impl OccupancyTable {
    /// Builds a table from raw masses; masses down to `-1e-9` are clamped to
    /// 0, anything more negative is kept so that it stays visible.
    pub fn from_masses(pulse_number: usize, masses: BTreeMap<ModeId, f64>) -> Self {
        let entries = masses
            .into_iter()
            .map(|(mode, mass)| OccupancyEntry {
                mode,
                mass: if (-NEGATIVE_MASS_TOLERANCE..0.0).contains(&mass) {
                    0.0
                } else {
                    mass
                },
            })
            .collect();
        Self {
            pulse_number,
            entries,
        }
    }

    /// Masses read off a full moment vector of `rel`.
    pub fn from_moment_vector(rel: &MomentRelaxation, y: &[f64]) -> Self {
        let masses = rel
            .occupation_blocks()
            .map(|(mode, block)| (mode, y[block.var(Monomial::ONE)]))
            .collect();
        Self::from_masses(rel.graph.pulse_number, masses)
    }

    /// Masses of trajectory-constructed moments.
    pub fn from_measure_moments(mm: &MeasureMoments) -> Self {
        let masses = mm
            .occupation
            .iter()
            .map(|(mode, m)| (*mode, m.get(&[0, 0, 0, 0]).copied().unwrap_or(0.0)))
            .collect();
        Self::from_masses(mm.graph.pulse_number, masses)
    }

    pub fn mass(&self, mode: ModeId) -> Option<f64> {
        self.entries.iter().find(|e| e.mode == mode).map(|e| e.mass)
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.mass).sum()
    }

    /// Entries of column `i`, ordered by level.
    pub fn column(&self, i: usize) -> Vec<OccupancyEntry> {
        self.entries
            .iter()
            .filter(|e| e.mode.switches == i)
            .copied()
            .collect()
    }

    pub fn column_mass(&self, i: usize) -> f64 {
        self.column(i).iter().map(|e| e.mass).sum()
    }
}

/// First moment of every occupation block of a compiled relaxation.
///
/// Meaningful only for `sol.status == Optimal`; `cp` must come from
/// [`compile`](crate::sdp::compile).
pub fn extract_occupancies(sol: &ConicSolution, cp: &ConicProblem) -> Result<OccupancyTable> {
    let emb = cp
        .embedding
        .as_ref()
        .ok_or_else(|| Error::invalid("conic problem carries no moment embedding"))?;
    if sol.x.len() != cp.num_vars {
        return Err(Error::invalid("solution length differs from the problem"));
    }
    let pulse_number = emb
        .blocks
        .iter()
        .filter_map(|b| match b.kind {
            MeasureKind::Occupation { mode } => Some(mode.switches),
            _ => None,
        })
        .max()
        .unwrap_or(0);
    Ok(OccupancyTable::from_masses(
        pulse_number,
        emb.occupation_masses(&sol.x),
    ))
}

/// `|v_n|`, then `n`: the preferred order among equally heavy levels.
fn tie_key(prob: &ConverterProblem, level: usize) -> (f64, usize) {
    (prob.level(level).abs(), level)
}

fn argmax_level(entries: &[OccupancyEntry], prob: &ConverterProblem) -> Option<usize> {
    let max = entries
        .iter()
        .map(|e| e.mass)
        .fold(f64::NEG_INFINITY, f64::max);
    entries
        .iter()
        .filter(|e| e.mass == max)
        .map(|e| e.mode.level)
        .min_by(|&a, &b| {
            tie_key(prob, a)
                .partial_cmp(&tie_key(prob, b))
                .expect("finite levels")
        })
}

/// Cumulative column masses, normalized so the quarter period sums to `pi/2`.
fn angles_from_columns(table: &OccupancyTable) -> Result<Vec<f64>> {
    let d = table.pulse_number;
    let columns: Vec<f64> = (0..=d).map(|i| table.column_mass(i).max(0.0)).collect();
    let total: f64 = columns.iter().sum();
    if !(total > 0.0) {
        return Err(Error::invalid("occupancy table has no mass"));
    }
    let mut acc = 0.0;
    let mut angles = Vec::with_capacity(d);
    for m in &columns[..d] {
        acc += m;
        angles.push(FRAC_PI_2 * acc / total);
    }
    Ok(angles)
}

/// Level per column by argmax of the masses (ties toward smaller `|v_n|`,
/// then smaller `n`); angles from cumulative column masses.
///
/// The result respects the graph but not necessarily the harmonic
/// specification. Fails with [`Error::InvalidPath`] when two consecutive
/// argmax levels are not adjacent.
pub fn recover_sequence(
    table: &OccupancyTable,
    prob: &ConverterProblem,
) -> Result<SwitchingSequence> {
    let d = table.pulse_number;
    let mut levels = Vec::with_capacity(d + 1);
    for i in 0..=d {
        let col = table.column(i);
        let n = argmax_level(&col, prob)
            .ok_or_else(|| Error::invalid(format!("occupancy column {i} is empty")))?;
        if let Some(&prev) = levels.last() {
            let prev: usize = prev;
            if prev.abs_diff(n) != 1 {
                return Err(Error::InvalidPath { column: i });
            }
        }
        levels.push(n);
    }
    Ok(SwitchingSequence::new(angles_from_columns(table)?, levels))
}

/// The source-to-terminal path with the largest total occupation mass;
/// the fallback when the per-column argmax is not a path.
pub fn heaviest_path_sequence(
    table: &OccupancyTable,
    graph: &TransitionGraph,
    prob: &ConverterProblem,
) -> Result<SwitchingSequence> {
    let d = graph.pulse_number;
    if table.pulse_number != d {
        return Err(Error::invalid(
            "occupancy table and graph disagree on the pulse number",
        ));
    }
    let mass = |m: ModeId| table.mass(m).unwrap_or(0.0);
    // best[(mode)] = (score, predecessor level)
    let mut best: BTreeMap<ModeId, (f64, Option<usize>)> = BTreeMap::new();
    best.insert(graph.source, (mass(graph.source), None));
    for i in 1..=d {
        for mode in graph.column(i) {
            let mut choice: Option<(f64, usize)> = None;
            for k in graph.incoming(mode) {
                let from = graph.edges[k].from;
                if let Some(&(score, _)) = best.get(&from) {
                    let better = match choice {
                        None => true,
                        Some((s, lvl)) => {
                            score > s
                                || (score == s && tie_key(prob, from.level) < tie_key(prob, lvl))
                        }
                    };
                    if better {
                        choice = Some((score, from.level));
                    }
                }
            }
            if let Some((score, lvl)) = choice {
                best.insert(mode, (score + mass(mode), Some(lvl)));
            }
        }
    }
    let end = graph
        .terminals
        .iter()
        .filter_map(|t| best.get(t).map(|(s, _)| (*t, *s)))
        .fold(None::<(ModeId, f64)>, |acc, (t, s)| match acc {
            Some((bt, bs))
                if bs > s || (bs == s && tie_key(prob, bt.level) <= tie_key(prob, t.level)) =>
            {
                Some((bt, bs))
            }
            _ => Some((t, s)),
        })
        .ok_or(Error::EmptyGraph)?
        .0;
    let mut levels = vec![end.level];
    let mut cur = end;
    while let Some(&(_, Some(prev))) = best.get(&cur) {
        cur = ModeId::new(prev, cur.switches - 1);
        levels.push(prev);
    }
    levels.reverse();
    levels_to_path(graph, &levels)?;
    Ok(SwitchingSequence::new(angles_from_columns(table)?, levels))
}

/// [`recover_sequence`], falling back to [`heaviest_path_sequence`] when the
/// argmax levels do not form a path. The flag reports whether the fallback
/// was used.
pub fn recover_or_fallback(
    table: &OccupancyTable,
    graph: &TransitionGraph,
    prob: &ConverterProblem,
) -> Result<(SwitchingSequence, bool)> {
    match recover_sequence(table, prob) {
        Ok(seq) => Ok((seq, false)),
        Err(Error::InvalidPath { .. }) => Ok((heaviest_path_sequence(table, graph, prob)?, true)),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;

    fn table(entries: &[((usize, usize), f64)], d: usize) -> OccupancyTable {
        OccupancyTable::from_masses(
            d,
            entries
                .iter()
                .map(|&((n, i), m)| (ModeId::new(n, i), m))
                .collect(),
        )
    }

    #[test]
    fn exact_masses_recover_path_and_angles() {
        let prob = ConverterProblem::reference_five_level(2, 0.5);
        let t = table(
            &[
                ((3, 0), 0.3),
                ((4, 1), 0.5),
                ((2, 1), 0.0),
                ((3, 2), FRAC_PI_2 - 0.8),
                ((5, 2), 0.0),
            ],
            2,
        );
        let seq = recover_sequence(&t, &prob).unwrap();
        assert_eq!(seq.level_indices, vec![3, 4, 3]);
        assert!((seq.angles[0] - 0.3).abs() < 1e-15);
        assert!((seq.angles[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn ties_prefer_smaller_magnitude() {
        let prob = ConverterProblem {
            unipolar: false,
            ..ConverterProblem::reference_five_level(2, 0.5)
        };
        let t = table(
            &[
                ((3, 0), 0.5),
                ((2, 1), 0.4),
                ((4, 1), 0.4),
                ((3, 2), 0.3),
                ((1, 2), 0.2),
                ((5, 2), 0.2),
            ],
            2,
        );
        let seq = recover_sequence(&t, &prob).unwrap();
        // levels 2 and 4 have equal |v|; the smaller index wins
        assert_eq!(seq.level_indices, vec![3, 2, 3]);
    }

    #[test]
    fn invalid_path_names_column_and_fallback_recovers() {
        let prob = ConverterProblem {
            unipolar: false,
            ..ConverterProblem::reference_five_level(3, 0.5)
        };
        let graph = build_graph(5, 3, false).unwrap();
        let t = table(
            &[
                ((3, 0), 0.3),
                ((2, 1), 0.4),
                ((4, 1), 0.1),
                ((1, 2), 0.0),
                ((3, 2), 0.1),
                ((5, 2), 0.2),
                ((2, 3), 0.0),
                ((4, 3), 0.05),
            ],
            3,
        );
        match recover_sequence(&t, &prob) {
            Err(Error::InvalidPath { column }) => assert_eq!(column, 2),
            other => panic!("{other:?}"),
        }
        let (seq, used) = recover_or_fallback(&t, &graph, &prob).unwrap();
        assert!(used);
        assert_eq!(seq.level_indices, vec![3, 2, 3, 4]);
    }

    #[test]
    fn tiny_negative_masses_are_clamped() {
        let t = table(&[((3, 0), -5e-10), ((4, 1), -1e-6)], 1);
        assert_eq!(t.mass(ModeId::new(3, 0)), Some(0.0));
        assert_eq!(t.mass(ModeId::new(4, 1)), Some(-1e-6));
    }
}
