//! Moment relaxation to conic problem.
//!
//! Every measure over `(c, s)` lives on the unit circle, so its moments are
//! only needed modulo the ideal generated by `c^2 + s^2 - 1`. Compilation
//! therefore keeps one decision variable per monomial with `s`-degree at most
//! 1 and rewrites every other moment through `s^2 = 1 - c^2`. The circle
//! identities then hold by construction, and the moment matrices are built on
//! the reduced basis so that they can be strictly positive definite.

use std::collections::{BTreeMap, HashMap};

use nalgebra::DMatrix;
use serde::Serialize;

use super::{ConicProblem, EqualityRow, LinearInequality, PsdBlock};
use crate::error::{Error, Result};
use crate::graph::ModeId;
use crate::relaxation::{
    nominal_sizes, MeasureKind, MomentRelaxation, Monomial, NominalSizes, Poly, RowKind,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompileOptions {
    /// Drop linearly dependent equality rows before export. The built-in
    /// solver does not need this; the check costs a dense factorization of
    /// `A A^T`, which is prohibitive beyond `beta = 4`.
    pub remove_dependent_rows: bool,
    /// Relative pivot threshold for the dependency test.
    pub dependency_tol: f64,
}

impl Default for CompileOptions {
    fn default() -> Self {
        Self {
            remove_dependent_rows: false,
            dependency_tol: 1e-9,
        }
    }
}

/// Actual and nominal problem dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SizeReport {
    pub nominal: NominalSizes,
    /// Reduced moments per four-variable measure.
    pub reduced_dim_4: usize,
    pub moment_side_4: usize,
    pub moment_side_2: usize,
    pub localizer_side_4: usize,
    pub localizer_side_2: usize,
    pub num_vars: usize,
    pub num_equalities: usize,
    pub dependent_rows_dropped: usize,
    pub num_psd_blocks: usize,
    pub num_linear: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmbeddedBlock {
    pub kind: MeasureKind,
    /// First conic variable of this measure.
    pub offset: usize,
    /// Monomials with one variable each, sorted graded-lex.
    pub reduced: Vec<Monomial>,
    /// The relaxation's full monomial list for the same measure.
    pub full: Vec<Monomial>,
}

/// How the conic variables map back onto the relaxation's moments.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentEmbedding {
    pub beta: usize,
    pub blocks: Vec<EmbeddedBlock>,
    /// Auxiliary variable holding the value of each boxed harmonic.
    pub harmonic_vars: Vec<(u32, usize)>,
    pub sizes: SizeReport,
    pub modulation_index: Option<f64>,
}

fn reduce_monomial(m: Monomial) -> Poly {
    Poly::monomial(m).reduce_circle()
}

impl EmbeddedBlock {
    fn var(&self, m: Monomial) -> Option<usize> {
        self.reduced.binary_search(&m).ok().map(|k| self.offset + k)
    }

    /// Linear form over conic variables equal to the moment of `p`.
    fn linear_form(&self, p: &Poly) -> Vec<(usize, f64)> {
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for (m, c) in p.reduce_circle().terms() {
            let v = self
                .var(m)
                .unwrap_or_else(|| panic!("reduced monomial {m} missing from {}", self.kind));
            *acc.entry(v).or_insert(0.0) += c;
        }
        acc.into_iter().filter(|(_, c)| *c != 0.0).collect()
    }
}

impl MomentEmbedding {
    /// Conic variables from a full moment vector of the relaxation; auxiliary
    /// harmonic variables are filled in from `harmonic_values`.
    pub fn reduce(&self, rel: &MomentRelaxation, y: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.sizes.num_vars];
        for (eb, rb) in self.blocks.iter().zip(&rel.blocks) {
            for (k, m) in eb.reduced.iter().enumerate() {
                x[eb.offset + k] = y[rb.var(*m)];
            }
        }
        for &(order, var) in &self.harmonic_vars {
            if let Some(h) = rel.harmonics.iter().find(|h| h.order == order) {
                x[var] = h.eval(y);
            }
        }
        x
    }

    /// Full moment vector in the relaxation's layout.
    pub fn expand(&self, x: &[f64]) -> Vec<f64> {
        let total: usize = self.blocks.iter().map(|b| b.full.len()).sum();
        let mut y = Vec::with_capacity(total);
        for eb in &self.blocks {
            for m in &eb.full {
                let v = eb
                    .linear_form(&Poly::monomial(*m))
                    .iter()
                    .map(|&(k, c)| c * x[k])
                    .sum();
                y.push(v);
            }
        }
        y
    }

    /// Masses `<1, mu_{n,i}>` of the occupation measures.
    pub fn occupation_masses(&self, x: &[f64]) -> BTreeMap<ModeId, f64> {
        self.blocks
            .iter()
            .filter_map(|b| match b.kind {
                MeasureKind::Occupation { mode } => Some((mode, x[b.offset])),
                _ => None,
            })
            .collect()
    }
}

/// Compiles with default options.
pub fn compile(rel: &MomentRelaxation) -> Result<ConicProblem> {
    compile_with(rel, CompileOptions::default())
}

pub fn compile_with(rel: &MomentRelaxation, options: CompileOptions) -> Result<ConicProblem> {
    let beta = rel.beta;
    let mut blocks = Vec::with_capacity(rel.blocks.len());
    let mut offset = 0;
    for b in &rel.blocks {
        let reduced: Vec<Monomial> = b
            .monomials
            .iter()
            .copied()
            .filter(|m| m.0[1] <= 1)
            .collect();
        let n = reduced.len();
        blocks.push(EmbeddedBlock {
            kind: b.kind,
            offset,
            reduced,
            full: b.monomials.clone(),
        });
        offset += n;
    }
    let num_moment_vars = offset;

    // relaxation variable -> conic linear form
    let mut reduction_cache: HashMap<Monomial, Poly> = HashMap::new();
    let mut owner = Vec::with_capacity(rel.num_moments);
    for (k, b) in rel.blocks.iter().enumerate() {
        owner.extend(std::iter::repeat_n(k, b.len()));
    }
    let mut transform = |coeffs: &[(usize, f64)]| -> Vec<(usize, f64)> {
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for &(var, c) in coeffs {
            let bk = owner[var];
            let mono = rel.blocks[bk].monomials[var - rel.blocks[bk].offset];
            let red = reduction_cache
                .entry(mono)
                .or_insert_with(|| reduce_monomial(mono));
            for (m, rc) in red.terms() {
                let v = blocks[bk].var(m).expect("reduced monomial present");
                *acc.entry(v).or_insert(0.0) += c * rc;
            }
        }
        let scale = acc.values().fold(0.0f64, |s, c| s.max(c.abs()));
        acc.into_iter()
            .filter(|(_, c)| c.abs() > 1e-14 * scale)
            .collect()
    };

    let mut equalities = Vec::new();
    for row in &rel.equalities {
        let keep = match row.kind {
            RowKind::Circle { .. } => false,
            RowKind::Liouville { test, .. } => test.0[1] <= 1,
            RowKind::Uniformity { b, .. } => b <= 1,
            RowKind::Mass | RowKind::Harmonic { .. } => true,
        };
        if !keep {
            continue;
        }
        let coeffs = transform(&row.coeffs);
        if coeffs.is_empty() {
            if row.rhs.abs() > 1e-12 {
                return Err(Error::Infeasible);
            }
            continue;
        }
        equalities.push(EqualityRow {
            label: row_label(&row.kind),
            coeffs,
            rhs: row.rhs,
        });
    }

    let mut num_vars = num_moment_vars;
    let mut linear = Vec::new();
    let mut harmonic_vars = Vec::new();
    for h in &rel.harmonics {
        let mut coeffs = transform(&h.coeffs);
        if h.lo == h.hi {
            equalities.push(EqualityRow {
                label: format!("harmonic b_{}", h.order),
                coeffs,
                rhs: h.lo,
            });
        } else {
            let t = num_vars;
            num_vars += 1;
            harmonic_vars.push((h.order, t));
            coeffs.push((t, -1.0));
            equalities.push(EqualityRow {
                label: format!("harmonic b_{} value", h.order),
                coeffs,
                rhs: 0.0,
            });
            linear.push(LinearInequality {
                label: format!("b_{} >= lo", h.order),
                coeffs: vec![(t, 1.0)],
                constant: -h.lo,
            });
            linear.push(LinearInequality {
                label: format!("b_{} <= hi", h.order),
                coeffs: vec![(t, -1.0)],
                constant: h.hi,
            });
        }
    }

    let mut dropped = 0;
    if options.remove_dependent_rows {
        let (keep, inconsistent) = independent_rows(&equalities, num_vars, options.dependency_tol);
        if inconsistent {
            return Err(Error::Infeasible);
        }
        dropped = equalities.len() - keep.len();
        let mut kept = Vec::with_capacity(keep.len());
        let mut iter = keep.into_iter().peekable();
        for (k, row) in equalities.into_iter().enumerate() {
            if iter.peek() == Some(&k) {
                kept.push(row);
                iter.next();
            }
        }
        equalities = kept;
    }

    let mut psd = Vec::new();
    let mut sides = [0usize; 4];
    for (eb, rb) in blocks.iter().zip(&rel.blocks) {
        let planar = rb.clock_current_only;
        let basis = |deg: usize| -> Vec<Monomial> {
            rb.monomials
                .iter()
                .copied()
                .filter(|m| m.degree() <= deg && m.0[1] <= 1)
                .collect()
        };
        let moment_basis = basis(beta);
        psd.push(matrix_block(
            format!("moment {}", eb.kind),
            eb,
            &moment_basis,
            &Poly::constant(1.0),
        ));
        let slot = if planar { 1 } else { 0 };
        sides[slot] = sides[slot].max(moment_basis.len());
        for (k, g) in rb.support.inequalities.iter().enumerate() {
            let half = g.degree().div_ceil(2);
            if half > beta {
                continue;
            }
            let loc_basis = basis(beta - half);
            psd.push(matrix_block(
                format!("localizer {k} {}", eb.kind),
                eb,
                &loc_basis,
                g,
            ));
            sides[slot + 2] = sides[slot + 2].max(loc_basis.len());
        }
    }

    let mut objective = vec![0.0; num_vars];
    for (v, c) in transform(&rel.objective) {
        objective[v] += c;
    }

    let sizes = SizeReport {
        nominal: nominal_sizes(beta),
        reduced_dim_4: blocks
            .iter()
            .zip(&rel.blocks)
            .find(|(_, rb)| !rb.clock_current_only)
            .map_or(0, |(eb, _)| eb.reduced.len()),
        moment_side_4: sides[0],
        moment_side_2: sides[1],
        localizer_side_4: sides[2],
        localizer_side_2: sides[3],
        num_vars,
        num_equalities: equalities.len(),
        dependent_rows_dropped: dropped,
        num_psd_blocks: psd.len(),
        num_linear: linear.len(),
    };
    Ok(ConicProblem {
        num_vars,
        objective,
        objective_offset: 0.0,
        equalities,
        linear,
        psd,
        embedding: Some(MomentEmbedding {
            beta,
            blocks,
            harmonic_vars,
            sizes,
            modulation_index: rel.modulation_index,
        }),
    })
}

fn row_label(kind: &RowKind) -> String {
    match kind {
        RowKind::Mass => "mass".into(),
        RowKind::Liouville { mode, test } => format!("liouville {mode} w={test}"),
        RowKind::Uniformity { a, b } => format!("uniformity c^{a} s^{b}"),
        RowKind::Circle { block, multiplier } => format!("circle block {block} m={multiplier}"),
        RowKind::Harmonic { order } => format!("harmonic b_{order}"),
    }
}

/// `[g * u * v]` over `basis`, as a PSD block in the conic variables.
fn matrix_block(label: String, eb: &EmbeddedBlock, basis: &[Monomial], g: &Poly) -> PsdBlock {
    let mut entries = Vec::new();
    for (i, u) in basis.iter().enumerate() {
        for (j, v) in basis.iter().enumerate().skip(i) {
            let p = g.mul_monomial(u.mul(*v));
            for (var, c) in eb.linear_form(&p) {
                entries.push((var, i, j, c));
            }
        }
    }
    PsdBlock {
        label,
        side: basis.len(),
        entries,
        constant: Vec::new(),
    }
}

/// Greedy selection of linearly independent rows by diagonally pivoted
/// Cholesky on the Gram matrix `A A^T`. Returns the kept row indices in
/// increasing order and whether some dropped row has an inconsistent
/// right-hand side.
pub(crate) fn independent_rows(
    rows: &[EqualityRow],
    num_vars: usize,
    tol: f64,
) -> (Vec<usize>, bool) {
    let m = rows.len();
    if m == 0 {
        return (Vec::new(), false);
    }
    // normalize rows so that the pivot threshold is scale free
    let norms: Vec<f64> = rows
        .iter()
        .map(|r| {
            r.coeffs
                .iter()
                .map(|(_, c)| c * c)
                .sum::<f64>()
                .sqrt()
                .max(1e-300)
        })
        .collect();
    let mut by_var: Vec<Vec<(usize, f64)>> = vec![Vec::new(); num_vars];
    for (i, r) in rows.iter().enumerate() {
        for &(k, c) in &r.coeffs {
            by_var[k].push((i, c / norms[i]));
        }
    }
    let mut gram = DMatrix::<f64>::zeros(m, m);
    for list in &by_var {
        for &(i, ci) in list {
            for &(j, cj) in list {
                gram[(i, j)] += ci * cj;
            }
        }
    }

    let mut diag: Vec<f64> = (0..m).map(|i| gram[(i, i)]).collect();
    let mut perm: Vec<usize> = (0..m).collect();
    // l[(i, k)] for original row i, pivot column k
    let mut l = DMatrix::<f64>::zeros(m, m);
    let mut rank = 0;
    for k in 0..m {
        let (jbest, dbest) =
            (k..m)
                .map(|j| (j, diag[perm[j]]))
                .fold(
                    (k, f64::NEG_INFINITY),
                    |acc, x| if x.1 > acc.1 { x } else { acc },
                );
        if dbest <= tol {
            break;
        }
        perm.swap(k, jbest);
        let p = perm[k];
        let lkk = dbest.sqrt();
        l[(p, k)] = lkk;
        for &q in &perm[k + 1..] {
            let mut v = gram[(q, p)];
            for t in 0..k {
                v -= l[(q, t)] * l[(p, t)];
            }
            let lqk = v / lkk;
            l[(q, k)] = lqk;
            diag[q] -= lqk * lqk;
        }
        rank += 1;
    }

    let selected: Vec<usize> = perm[..rank].to_vec();
    let mut inconsistent = false;
    if rank < m {
        // L_S (rank x rank, lower triangular in pivot order) and the scaled rhs
        let ls = DMatrix::from_fn(rank, rank, |i, j| l[(selected[i], j)]);
        let b_s =
            nalgebra::DVector::from_fn(rank, |i, _| rows[selected[i]].rhs / norms[selected[i]]);
        // G_SS = L_S L_S^T, so lambda = G_SS^{-1} G_{S,r}
        for &r in &perm[rank..] {
            let g_sr = nalgebra::DVector::from_fn(rank, |i, _| l[(r, i)]);
            // G_{S,r} = L_S * l_r, hence lambda = L_S^{-T} l_r
            let lambda = ls.transpose().solve_upper_triangular(&g_sr);
            if let Some(lambda) = lambda {
                let predicted = lambda.dot(&b_s);
                let actual = rows[r].rhs / norms[r];
                if (predicted - actual).abs() > 1e-7 * (1.0 + actual.abs()) {
                    inconsistent = true;
                }
            }
        }
    }
    let mut keep = selected;
    keep.sort_unstable();
    (keep, inconsistent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pattern::{ConverterProblem, ObjectiveMode};
    use crate::relaxation::assemble;

    fn row(coeffs: Vec<(usize, f64)>, rhs: f64) -> EqualityRow {
        EqualityRow {
            label: String::new(),
            coeffs,
            rhs,
        }
    }

    #[test]
    fn dependent_rows_are_found() {
        let rows = vec![
            row(vec![(0, 1.0), (1, 1.0)], 1.0),
            row(vec![(1, 2.0)], 2.0),
            row(vec![(0, 2.0), (1, 4.0)], 4.0),
            row(vec![(2, 1.0)], 0.5),
        ];
        let (keep, bad) = independent_rows(&rows, 3, 1e-9);
        assert_eq!(keep.len(), 3);
        assert!(!bad);
        let mut rows = rows;
        rows[2].rhs = 5.0;
        let (_, bad) = independent_rows(&rows, 3, 1e-9);
        assert!(bad);
    }

    #[test]
    fn reduced_sizes_for_reference_problem() {
        let prob = ConverterProblem::reference_five_level(8, 0.9);
        let rel = assemble(&prob, 2, ObjectiveMode::Current).unwrap();
        let cp = compile(&rel).unwrap();
        let s = cp.embedding.as_ref().unwrap().sizes;
        // four variables with s-degree <= 1 and total degree <= beta
        assert_eq!(s.moment_side_4, 10 + 4);
        assert_eq!(s.moment_side_2, 6);
        assert_eq!(s.localizer_side_4, 4 + 1);
        assert_eq!(s.nominal.psd_side_4, 15);
        let measures = rel.blocks.len();
        let localizers: usize = rel
            .blocks
            .iter()
            .map(|b| b.support.inequalities.len())
            .sum();
        assert_eq!(cp.psd.len(), measures + localizers);
        cp.validate().unwrap();
    }
}
