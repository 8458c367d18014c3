//! Mode transition graph of the hybrid system behind a switching sequence.
//!
//! A mode `(n, i)` means "the output sits at level `n` after `i` switches".
//! Every switch moves one level up or down and increments `i`, so paths from
//! the source `(N_c, 0)` to a terminal `(n, d)` are exactly the admissible
//! level sequences of a pattern with `d` switches.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap on the number of enumerated paths.
pub const DEFAULT_PATH_CAP: usize = 1_000_000;

/// A mode `(n, i)`: 1-based level index and number of switches so far.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModeId {
    pub level: usize,
    pub switches: usize,
}

impl ModeId {
    pub fn new(level: usize, switches: usize) -> Self {
        Self { level, switches }
    }
}

impl std::fmt::Display for ModeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.level, self.switches)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Up,
    Down,
}

/// A switch from `from = (n -/+ 1, i)` to `to = (n, i + 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub from: ModeId,
    pub to: ModeId,
    pub kind: EdgeKind,
}

/// Sequence of `d` edges from the source to a terminal.
pub type Path = Vec<Edge>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionGraph {
    pub num_levels: usize,
    pub pulse_number: usize,
    pub unipolar: bool,
    pub source: ModeId,
    /// Sorted by `(switches, level)`.
    pub vertices: Vec<ModeId>,
    /// Sorted by `(from.switches, from.level, to.level)`.
    pub edges: Vec<Edge>,
    /// Vertices with `switches == pulse_number`, sorted by level.
    pub terminals: Vec<ModeId>,
    #[serde(skip)]
    index: BTreeMap<ModeId, usize>,
}

/// Builds the transition graph for `num_levels` levels and `pulse_number`
/// switches; with `unipolar` only levels at or above the zero level are kept.
pub fn build_graph(
    num_levels: usize,
    pulse_number: usize,
    unipolar: bool,
) -> Result<TransitionGraph> {
    if num_levels < 3 || num_levels.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "number of levels must be odd and at least 3, got {num_levels}"
        )));
    }
    if pulse_number == 0 {
        return Err(Error::invalid("pulse number must be at least 1"));
    }
    let center = num_levels.div_ceil(2);
    let lowest = if unipolar { center } else { 1 };
    let d = pulse_number;

    let mut layers: Vec<BTreeSet<usize>> = vec![BTreeSet::from([center])];
    for i in 0..d {
        let next: BTreeSet<usize> = layers[i]
            .iter()
            .flat_map(|&n| [n.wrapping_sub(1), n + 1])
            .filter(|&m| m >= lowest && m <= num_levels)
            .collect();
        layers.push(next);
    }
    // backward pass: drop vertices that cannot reach the last layer
    for i in (0..d).rev() {
        let reachable = layers[i + 1].clone();
        layers[i]
            .retain(|&n| reachable.contains(&(n + 1)) || (n > 1 && reachable.contains(&(n - 1))));
    }
    if layers[d].is_empty() || !layers[0].contains(&center) {
        return Err(Error::EmptyGraph);
    }

    let mut vertices = Vec::new();
    let mut edges = Vec::new();
    for (i, layer) in layers.iter().enumerate() {
        for &n in layer {
            vertices.push(ModeId::new(n, i));
            if i < d {
                for (m, kind) in [(n.wrapping_sub(1), EdgeKind::Down), (n + 1, EdgeKind::Up)] {
                    if layers[i + 1].contains(&m) {
                        edges.push(Edge {
                            from: ModeId::new(n, i),
                            to: ModeId::new(m, i + 1),
                            kind,
                        });
                    }
                }
            }
        }
    }
    let terminals = layers[d].iter().map(|&n| ModeId::new(n, d)).collect();
    let index = vertices.iter().enumerate().map(|(k, v)| (*v, k)).collect();
    Ok(TransitionGraph {
        num_levels,
        pulse_number,
        unipolar,
        source: ModeId::new(center, 0),
        vertices,
        edges,
        terminals,
        index,
    })
}

impl TransitionGraph {
    pub fn center(&self) -> usize {
        self.num_levels.div_ceil(2)
    }

    pub fn vertex_index(&self, mode: ModeId) -> Option<usize> {
        if self.index.is_empty() && !self.vertices.is_empty() {
            return self.vertices.iter().position(|v| *v == mode);
        }
        self.index.get(&mode).copied()
    }

    pub fn contains(&self, mode: ModeId) -> bool {
        self.vertex_index(mode).is_some()
    }

    pub fn up_edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(|e| e.kind == EdgeKind::Up)
    }

    pub fn down_edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(|e| e.kind == EdgeKind::Down)
    }

    /// Indices into `edges` of the edges entering `mode`.
    pub fn incoming(&self, mode: ModeId) -> Vec<usize> {
        (0..self.edges.len())
            .filter(|&k| self.edges[k].to == mode)
            .collect()
    }

    /// Indices into `edges` of the edges leaving `mode`.
    pub fn outgoing(&self, mode: ModeId) -> Vec<usize> {
        (0..self.edges.len())
            .filter(|&k| self.edges[k].from == mode)
            .collect()
    }

    pub fn edge_index(&self, from: ModeId, to: ModeId) -> Option<usize> {
        self.edges.iter().position(|e| e.from == from && e.to == to)
    }

    /// Vertices with `switches == i`, sorted by level.
    pub fn column(&self, i: usize) -> Vec<ModeId> {
        self.vertices
            .iter()
            .copied()
            .filter(|v| v.switches == i)
            .collect()
    }

    pub fn terminal_count(&self) -> usize {
        self.terminals.len()
    }

    /// Every source-to-terminal path, in lexicographic order of level sequences.
    pub fn enumerate_paths(&self, cap: usize) -> Result<Vec<Path>> {
        let mut out = Vec::new();
        let mut stack: Path = Vec::with_capacity(self.pulse_number);
        self.extend_paths(self.source, &mut stack, &mut out, cap)?;
        Ok(out)
    }

    fn extend_paths(
        &self,
        at: ModeId,
        stack: &mut Path,
        out: &mut Vec<Path>,
        cap: usize,
    ) -> Result<()> {
        if at.switches == self.pulse_number {
            if out.len() >= cap {
                return Err(Error::PathExplosion { cap });
            }
            out.push(stack.clone());
            return Ok(());
        }
        for k in self.outgoing(at) {
            let e = self.edges[k];
            stack.push(e);
            self.extend_paths(e.to, stack, out, cap)?;
            stack.pop();
        }
        Ok(())
    }

    /// Closed-form counts as printed in the literature, for side-by-side
    /// comparison with the enumerated ones.
    pub fn formula_counts(&self) -> FormulaCounts {
        let n = self.num_levels as i64;
        let d = self.pulse_number as i64;
        let nc = (n + 1) / 2;
        let ceil_half = |x: i64| x.div_euclid(2) + x.rem_euclid(2);
        let vertices = (ceil_half(d) + 1) + 2 * (1..=nc).map(|i| ceil_half(d - i) + 1).sum::<i64>();
        FormulaCounts {
            vertices,
            edges: 2 * d - (nc - 1) * nc,
            terminals: ((n - 1) / 2 + (d + 1).rem_euclid(2)).min(d + 1),
        }
    }

    pub fn counts(&self) -> GraphCounts {
        GraphCounts {
            vertices: self.vertices.len(),
            edges: self.edges.len(),
            up_edges: self.up_edges().count(),
            down_edges: self.down_edges().count(),
            terminals: self.terminals.len(),
            formula: self.formula_counts(),
        }
    }

    /// Graphviz rendering, one rank per switch count.
    pub fn to_dot(&self) -> String {
        let name = if self.unipolar {
            "unipolar"
        } else {
            "multipolar"
        };
        let mut s = String::new();
        let _ = writeln!(s, "digraph {name} {{");
        let _ = writeln!(s, "  rankdir=LR;");
        let _ = writeln!(s, "  node [shape=circle, width=0.3, fontsize=8];");
        for i in 0..=self.pulse_number {
            let col = self.column(i);
            let names: Vec<String> = col.iter().map(|v| format!("\"{v}\"")).collect();
            let _ = writeln!(s, "  {{ rank=same; {} }}", names.join("; "));
        }
        for t in &self.terminals {
            let _ = writeln!(s, "  \"{t}\" [style=filled, fillcolor=gray80];");
        }
        for e in &self.edges {
            let color = match e.kind {
                EdgeKind::Up => "blue",
                EdgeKind::Down => "red",
            };
            let _ = writeln!(s, "  \"{}\" -> \"{}\" [color={color}];", e.from, e.to);
        }
        s.push_str("}\n");
        s
    }

    /// Adjacency lists keyed by `"(n,i)"`.
    pub fn adjacency(&self) -> BTreeMap<String, Vec<String>> {
        self.vertices
            .iter()
            .map(|v| {
                let out = self
                    .outgoing(*v)
                    .iter()
                    .map(|&k| self.edges[k].to.to_string())
                    .collect();
                (v.to_string(), out)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormulaCounts {
    pub vertices: i64,
    pub edges: i64,
    pub terminals: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphCounts {
    pub vertices: usize,
    pub edges: usize,
    pub up_edges: usize,
    pub down_edges: usize,
    pub terminals: usize,
    pub formula: FormulaCounts,
}

/// Level indices `n^0, ..., n^d` visited by a path.
pub fn path_levels(path: &[Edge]) -> Vec<usize> {
    let mut levels = Vec::with_capacity(path.len() + 1);
    if let Some(first) = path.first() {
        levels.push(first.from.level);
    }
    levels.extend(path.iter().map(|e| e.to.level));
    levels
}

/// Inverse of [`path_levels`]; fails if the sequence leaves the graph.
pub fn levels_to_path(graph: &TransitionGraph, levels: &[usize]) -> Result<Path> {
    if levels.len() != graph.pulse_number + 1 {
        return Err(Error::invalid(format!(
            "expected {} level indices, got {}",
            graph.pulse_number + 1,
            levels.len()
        )));
    }
    levels
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let from = ModeId::new(w[0], i);
            let to = ModeId::new(w[1], i + 1);
            graph
                .edge_index(from, to)
                .map(|k| graph.edges[k])
                .ok_or(Error::InvalidPath { column: i + 1 })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn modes(list: &[(usize, usize)]) -> Vec<ModeId> {
        list.iter().map(|&(n, i)| ModeId::new(n, i)).collect()
    }

    #[test]
    fn three_level_two_switches() {
        let g = build_graph(3, 2, false).unwrap();
        assert_eq!(g.vertices, modes(&[(2, 0), (1, 1), (3, 1), (2, 2)]));
        assert_eq!(g.edges.len(), 4);
        assert_eq!(g.enumerate_paths(10).unwrap().len(), 2);

        let u = build_graph(3, 2, true).unwrap();
        assert_eq!(u.vertices, modes(&[(2, 0), (3, 1), (2, 2)]));
        assert_eq!(u.edges.len(), 2);
        assert_eq!(u.enumerate_paths(10).unwrap().len(), 1);
    }

    #[test]
    fn five_level_eight_switches_unipolar() {
        let g = build_graph(5, 8, true).unwrap();
        assert_eq!(g.vertices.len(), 13);
        assert_eq!(g.edges.len(), 15);
        assert_eq!(g.terminals, modes(&[(3, 8), (5, 8)]));
        assert_eq!(g.source, ModeId::new(3, 0));
    }

    #[test]
    fn terminal_counts_against_formula() {
        let g = build_graph(5, 8, false).unwrap();
        assert_eq!(g.terminal_count(), 3);
        assert_eq!(g.formula_counts().terminals, 3);
        let g = build_graph(3, 1, false).unwrap();
        assert_eq!(g.terminal_count(), 2);
        assert_eq!(g.formula_counts().terminals, 1);
    }

    #[test]
    fn path_cap() {
        let g = build_graph(7, 8, false).unwrap();
        assert!(matches!(
            g.enumerate_paths(3),
            Err(Error::PathExplosion { cap: 3 })
        ));
    }

    #[test]
    fn paths_round_trip() {
        let g = build_graph(5, 5, false).unwrap();
        for p in g.enumerate_paths(DEFAULT_PATH_CAP).unwrap() {
            assert_eq!(p.len(), 5);
            let levels = path_levels(&p);
            assert_eq!(levels_to_path(&g, &levels).unwrap(), p);
        }
        assert!(matches!(
            levels_to_path(&g, &[3, 4, 3, 2, 1, 3]),
            Err(Error::InvalidPath { column: 5 })
        ));
    }

    #[test]
    fn dot_mentions_every_edge() {
        let g = build_graph(7, 8, true).unwrap();
        let dot = g.to_dot();
        assert_eq!(dot.matches("->").count(), g.edges.len());
        assert_eq!(g.adjacency().len(), g.vertices.len());
    }
}
