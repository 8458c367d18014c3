//! Primal-dual interior-point method for
//!
//! ```text
//! minimize    c'x
//! subject to  A x = b
//!             F_k(x) = F_k0 + sum_i x_i F_ki  PSD for every block k
//!             g_r(x) = g_r0 + a_r' x          >= 0 for every linear row r
//! ```
//!
//! The equalities are eliminated once: with an orthonormal basis `N` of the
//! null space of `A` and a particular solution `x0`, every feasible point is
//! `x0 + N xi`. The remaining cone program in `xi` is written as
//! `G xi + s = h`, `s` in the cone, and solved with the homogeneous self-dual
//! embedding, Nesterov–Todd scaling and a Mehrotra predictor-corrector.
//!
//! Each Newton step needs `N' G' W^{-1} W^{-T} G N`. It is never formed: a QR
//! factorization of the scaled constraints of each group of variables gives
//! `R_g`, and a second QR of the stacked `R_g N_g` gives its triangular
//! factor directly.
//!
//! The iterates `s` and `z` are stored explicitly and the scaling is
//! recomputed from them at every iteration; `ds` is taken from the unscaled
//! primal equation.

use faer::linalg::solvers::SolveLstsq;
use faer::Mat;
use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{ConicProblem, ConicSolution, SolveStatus, SolverOptions};
use crate::error::{Error, Result};

const STEP_FRACTION: f64 = 0.99;

/// Halvings tried when a step leaves the cone through rounding.
const MAX_STEP_CUTS: usize = 8;

/// Relative size below which a pivot of `A'` marks a dependent equality.
const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub gap: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub step: f64,
    pub tau: f64,
    pub kappa: f64,
}

/// Solves with the given feasibility and gap tolerance.
pub fn solve(cp: &ConicProblem, tol: f64) -> Result<ConicSolution> {
    solve_with(cp, &SolverOptions::with_tolerance(tol))
}

struct Block {
    side: usize,
    vars: Vec<usize>,
    /// Upper-triangle coefficients of `F_ki` for each entry of `vars`.
    mats: Vec<Vec<(usize, usize, f64)>>,
    constant: DMatrix<f64>,
    group: usize,
}

struct LinRow {
    coeffs: Vec<(usize, f64)>,
    constant: f64,
    group: usize,
}

/// The cone constraints of the original variables.
struct Model {
    n: usize,
    blocks: Vec<Block>,
    lin: Vec<LinRow>,
    /// Variables of each group (connected through shared cone constraints).
    groups: Vec<Vec<usize>>,
    /// Group and local position of each variable.
    var_slot: Vec<(usize, usize)>,
    /// First row of each block and each linear row in the flat scaled cone
    /// vector, where every group occupies a contiguous range.
    block_row: Vec<usize>,
    lin_row: Vec<usize>,
    /// Row range of each group: `group_row[g]..group_row[g + 1]`.
    group_row: Vec<usize>,
}

/// Element of the cone space: linear part and one symmetric matrix per block.
#[derive(Clone, Debug)]
struct ConeVec {
    lin: DVector<f64>,
    psd: Vec<DMatrix<f64>>,
}

impl ConeVec {
    fn identity(model: &Model) -> Self {
        Self {
            lin: DVector::from_element(model.lin.len(), 1.0),
            psd: model
                .blocks
                .iter()
                .map(|b| DMatrix::identity(b.side, b.side))
                .collect(),
        }
    }

    fn dot(&self, other: &ConeVec) -> f64 {
        self.lin.dot(&other.lin)
            + self
                .psd
                .iter()
                .zip(&other.psd)
                .map(|(a, b)| a.dot(b))
                .sum::<f64>()
    }

    fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    fn axpy(&mut self, alpha: f64, x: &ConeVec) {
        self.lin.axpy(alpha, &x.lin, 1.0);
        for (a, b) in self.psd.iter_mut().zip(&x.psd) {
            *a += b * alpha;
        }
    }

    fn scaled(&self, alpha: f64) -> ConeVec {
        ConeVec {
            lin: &self.lin * alpha,
            psd: self.psd.iter().map(|m| m * alpha).collect(),
        }
    }

    fn add(&self, other: &ConeVec) -> ConeVec {
        let mut out = self.clone();
        out.axpy(1.0, other);
        out
    }
}

/// Nesterov–Todd scaling `W` with `W z = W^{-T} s = lambda`.
struct Scaling {
    /// Linear part: `w = sqrt(s / z)`.
    w: DVector<f64>,
    lambda_lin: DVector<f64>,
    /// PSD part: `W(Z) = R' Z R`, `W^{-T}(S) = R^{-1} S R^{-T}`; only
    /// `R^{-1}` is kept.
    rinv: Vec<DMatrix<f64>>,
    lambda: Vec<DVector<f64>>,
}

impl Scaling {
    fn identity(model: &Model) -> Self {
        Self {
            w: DVector::from_element(model.lin.len(), 1.0),
            lambda_lin: DVector::from_element(model.lin.len(), 1.0),
            rinv: model
                .blocks
                .iter()
                .map(|b| DMatrix::identity(b.side, b.side))
                .collect(),
            lambda: model
                .blocks
                .iter()
                .map(|b| DVector::from_element(b.side, 1.0))
                .collect(),
        }
    }

    /// Nesterov–Todd scaling of the pair `(s, z)`: with `s = L_s L_s'`,
    /// `z = L_z L_z'` and `L_z' L_s = U diag(lambda) V'`,
    /// `R^{-1} = diag(lambda)^{-1/2} U' L_z'`.
    fn from_pair(s: &ConeVec, z: &ConeVec) -> Result<Self> {
        let mut w = DVector::zeros(s.lin.len());
        let mut lambda_lin = DVector::zeros(s.lin.len());
        for k in 0..s.lin.len() {
            let (sk, zk) = (s.lin[k], z.lin[k]);
            if !(sk > 0.0 && zk > 0.0) {
                return Err(numerical("linear slack left the cone"));
            }
            w[k] = (sk / zk).sqrt();
            lambda_lin[k] = (sk * zk).sqrt();
        }
        let mut rinv = Vec::with_capacity(s.psd.len());
        let mut lambda = Vec::with_capacity(s.psd.len());
        for (sk, zk) in s.psd.iter().zip(&z.psd) {
            let mut st = sk.clone();
            let mut zt = zk.clone();
            symmetrize(&mut st);
            symmetrize(&mut zt);
            let cs = lower_cholesky(st).ok_or_else(|| numerical("slack lost definiteness"))?;
            let cz = lower_cholesky(zt).ok_or_else(|| numerical("dual lost definiteness"))?;
            let svd = (cz.transpose() * &cs).svd(true, false);
            let u = svd.u.ok_or_else(|| numerical("SVD failed"))?;
            let sig = svd.singular_values;
            if sig.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
                return Err(numerical("degenerate scaling"));
            }
            let inv_sqrt = DMatrix::from_diagonal(&sig.map(|x| 1.0 / x.sqrt()));
            rinv.push(&inv_sqrt * u.transpose() * cz.transpose());
            lambda.push(sig);
        }
        Ok(Self {
            w,
            lambda_lin,
            rinv,
            lambda,
        })
    }

    /// `W^{-1} x`.
    fn apply_inverse(&self, x: &ConeVec) -> ConeVec {
        ConeVec {
            lin: x.lin.component_div(&self.w),
            psd: self
                .rinv
                .iter()
                .zip(&x.psd)
                .map(|(ri, m)| ri.transpose() * m * ri)
                .collect(),
        }
    }

    /// `W^{-T} x`.
    fn apply_inverse_transpose(&self, x: &ConeVec) -> ConeVec {
        ConeVec {
            lin: x.lin.component_div(&self.w),
            psd: self
                .rinv
                .iter()
                .zip(&x.psd)
                .map(|(ri, m)| ri * m * ri.transpose())
                .collect(),
        }
    }

    fn lambda_vec(&self) -> ConeVec {
        ConeVec {
            lin: self.lambda_lin.clone(),
            psd: self.lambda.iter().map(DMatrix::from_diagonal).collect(),
        }
    }

    /// Solves `lambda o X = r` for `X`.
    fn lambda_divide(&self, r: &ConeVec) -> ConeVec {
        ConeVec {
            lin: r.lin.component_div(&self.lambda_lin),
            psd: self
                .lambda
                .iter()
                .zip(&r.psd)
                .map(|(l, m)| {
                    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| 2.0 * m[(i, j)] / (l[i] + l[j]))
                })
                .collect(),
        }
    }
}

/// Jordan product `(AB + BA) / 2` (componentwise on the linear part).
fn jordan(a: &ConeVec, b: &ConeVec) -> ConeVec {
    ConeVec {
        lin: a.lin.component_mul(&b.lin),
        psd: a
            .psd
            .iter()
            .zip(&b.psd)
            .map(|(x, y)| {
                let p = x * y;
                (&p + p.transpose()) * 0.5
            })
            .collect(),
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// Largest `alpha` with `lambda + alpha d` in the cone.
fn max_step(scaling: &Scaling, d: &ConeVec) -> f64 {
    let mut worst = 0.0f64;
    for (k, v) in d.lin.iter().enumerate() {
        worst = worst.min(v / scaling.lambda_lin[k]);
    }
    for (l, m) in scaling.lambda.iter().zip(&d.psd) {
        let n = l.len();
        let scaled = DMatrix::from_fn(n, n, |i, j| m[(i, j)] / (l[i] * l[j]).sqrt());
        let min = scaled
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        worst = worst.min(min);
    }
    if worst < 0.0 {
        -1.0 / worst
    } else {
        f64::INFINITY
    }
}

fn lower_cholesky(m: DMatrix<f64>) -> Option<DMatrix<f64>> {
    Cholesky::new(m).map(|c| c.l())
}

impl Model {
    fn build(cp: &ConicProblem) -> Self {
        let n = cp.num_vars;
        // union-find over variables that share a cone block
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        let union = |p: &mut Vec<usize>, vars: &[usize]| {
            if let Some(&first) = vars.first() {
                let r0 = find(p, first);
                for &v in &vars[1..] {
                    let r = find(p, v);
                    p[r] = r0;
                }
            }
        };

        let mut blocks = Vec::with_capacity(cp.psd.len());
        for pb in &cp.psd {
            let mut per_var: std::collections::BTreeMap<usize, Vec<(usize, usize, f64)>> =
                Default::default();
            for &(v, i, j, c) in &pb.entries {
                per_var.entry(v).or_default().push((i, j, c));
            }
            let mut constant = DMatrix::zeros(pb.side, pb.side);
            for &(i, j, c) in &pb.constant {
                constant[(i, j)] += c;
                if i != j {
                    constant[(j, i)] += c;
                }
            }
            let vars: Vec<usize> = per_var.keys().copied().collect();
            union(&mut parent, &vars);
            blocks.push(Block {
                side: pb.side,
                vars,
                mats: per_var.into_values().collect(),
                constant,
                group: 0,
            });
        }
        let mut lin = Vec::with_capacity(cp.linear.len());
        for row in &cp.linear {
            let vars: Vec<usize> = row.coeffs.iter().map(|&(k, _)| k).collect();
            union(&mut parent, &vars);
            lin.push(LinRow {
                coeffs: row.coeffs.clone(),
                constant: row.constant,
                group: 0,
            });
        }

        let mut root_group = vec![usize::MAX; n];
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut var_slot = vec![(0, 0); n];
        for v in 0..n {
            let r = find(&mut parent, v);
            if root_group[r] == usize::MAX {
                root_group[r] = groups.len();
                groups.push(Vec::new());
            }
            let g = root_group[r];
            var_slot[v] = (g, groups[g].len());
            groups[g].push(v);
        }
        for b in &mut blocks {
            if let Some(&v) = b.vars.first() {
                b.group = var_slot[v].0;
            }
        }
        for l in &mut lin {
            if let Some(&(v, _)) = l.coeffs.first() {
                l.group = var_slot[v].0;
            }
        }
        let mut rows_of = vec![0usize; groups.len()];
        for b in &blocks {
            rows_of[b.group] += b.side * (b.side + 1) / 2;
        }
        for l in &lin {
            rows_of[l.group] += 1;
        }
        let mut group_row = vec![0usize; groups.len() + 1];
        for g in 0..groups.len() {
            group_row[g + 1] = group_row[g] + rows_of[g];
        }
        let mut next = group_row.clone();
        let block_row = blocks
            .iter()
            .map(|b| {
                let at = next[b.group];
                next[b.group] += b.side * (b.side + 1) / 2;
                at
            })
            .collect();
        let lin_row = lin
            .iter()
            .map(|l| {
                let at = next[l.group];
                next[l.group] += 1;
                at
            })
            .collect();
        Model {
            n,
            blocks,
            lin,
            groups,
            var_slot,
            block_row,
            lin_row,
            group_row,
        }
    }

    /// Flat vector with the lower triangle of each block, off-diagonal
    /// entries weighted by `sqrt 2` so that dot products are preserved.
    fn svec(&self, v: &ConeVec) -> DVector<f64> {
        let mut out = DVector::zeros(self.group_row[self.groups.len()]);
        for (bk, m) in v.psd.iter().enumerate() {
            let mut r = self.block_row[bk];
            for q in 0..m.nrows() {
                out[r] = m[(q, q)];
                r += 1;
                for p in q + 1..m.nrows() {
                    out[r] = std::f64::consts::SQRT_2 * m[(p, q)];
                    r += 1;
                }
            }
        }
        for (k, &r) in self.lin_row.iter().enumerate() {
            out[r] = v.lin[k];
        }
        out
    }

    fn smat(&self, v: &DVector<f64>) -> ConeVec {
        let psd = self
            .blocks
            .iter()
            .zip(&self.block_row)
            .map(|(b, &start)| {
                let mut m = DMatrix::zeros(b.side, b.side);
                let mut r = start;
                for q in 0..b.side {
                    m[(q, q)] = v[r];
                    r += 1;
                    for p in q + 1..b.side {
                        let e = v[r] / std::f64::consts::SQRT_2;
                        m[(p, q)] = e;
                        m[(q, p)] = e;
                        r += 1;
                    }
                }
                m
            })
            .collect();
        let lin = DVector::from_iterator(self.lin.len(), self.lin_row.iter().map(|&r| v[r]));
        ConeVec { lin, psd }
    }

    /// `G x = -(F(x) - F_0)` on the PSD part, `-a'x` on the linear part.
    fn g_mul(&self, x: &DVector<f64>) -> ConeVec {
        let lin = DVector::from_iterator(
            self.lin.len(),
            self.lin
                .iter()
                .map(|r| -r.coeffs.iter().map(|&(k, c)| c * x[k]).sum::<f64>()),
        );
        let psd = self
            .blocks
            .iter()
            .map(|b| {
                let mut m = DMatrix::zeros(b.side, b.side);
                for (v, mat) in b.vars.iter().zip(&b.mats) {
                    let xv = x[*v];
                    if xv == 0.0 {
                        continue;
                    }
                    for &(i, j, c) in mat {
                        m[(i, j)] -= c * xv;
                        if i != j {
                            m[(j, i)] -= c * xv;
                        }
                    }
                }
                m
            })
            .collect();
        ConeVec { lin, psd }
    }

    fn gt_mul(&self, z: &ConeVec) -> DVector<f64> {
        let mut out = DVector::zeros(self.n);
        for (r, row) in self.lin.iter().enumerate() {
            for &(k, c) in &row.coeffs {
                out[k] -= c * z.lin[r];
            }
        }
        for (b, m) in self.blocks.iter().zip(&z.psd) {
            for (v, mat) in b.vars.iter().zip(&b.mats) {
                out[*v] -= frob_sparse(mat, m);
            }
        }
        out
    }

    fn h(&self) -> ConeVec {
        ConeVec {
            lin: DVector::from_iterator(self.lin.len(), self.lin.iter().map(|r| r.constant)),
            psd: self.blocks.iter().map(|b| b.constant.clone()).collect(),
        }
    }

    fn degree(&self) -> usize {
        self.lin.len() + self.blocks.iter().map(|b| b.side).sum::<usize>()
    }
}

/// `x = x0 + N xi` parameterizes `{x : A x = b}`.
struct Elimination {
    x0: DVector<f64>,
    /// Orthonormal columns spanning the null space of `A`.
    null: DMatrix<f64>,
}

/// `None` when the equalities are inconsistent.
fn eliminate(cp: &ConicProblem) -> Option<Elimination> {
    let n = cp.num_vars;
    let p = cp.equalities.len();
    if p == 0 {
        return Some(Elimination {
            x0: DVector::zeros(n),
            null: DMatrix::identity(n, n),
        });
    }
    let mut at = Mat::<f64>::zeros(n, p);
    for (i, row) in cp.equalities.iter().enumerate() {
        for &(k, c) in &row.coeffs {
            at[(k, i)] += c;
        }
    }
    let qr = at.col_piv_qr();
    let r = qr.thin_R();
    let diag: Vec<f64> = (0..r.nrows().min(r.ncols()))
        .map(|i| r[(i, i)].abs())
        .collect();
    let largest = diag.iter().copied().fold(0.0f64, f64::max);
    let rank = diag
        .iter()
        .take_while(|&&d| d > RANK_TOLERANCE * largest)
        .count();
    let q = qr.compute_Q();
    let range = DMatrix::from_fn(n, rank, |i, j| q[(i, j)]);
    let null = DMatrix::from_fn(n, n - rank, |i, j| q[(i, rank + j)]);

    // x0 = range w with (A range) w = b in the least-squares sense
    let mut ar = Mat::<f64>::zeros(p, rank);
    for (i, row) in cp.equalities.iter().enumerate() {
        for &(k, c) in &row.coeffs {
            for j in 0..rank {
                ar[(i, j)] += c * range[(k, j)];
            }
        }
    }
    let b = DVector::from_iterator(p, cp.equalities.iter().map(|r| r.rhs));
    let w = if rank == 0 {
        DVector::zeros(0)
    } else {
        let rhs = Mat::<f64>::from_fn(p, 1, |i, _| b[i]);
        let sol = ar.qr().solve_lstsq(&rhs);
        DVector::from_fn(rank, |i, _| sol[(i, 0)])
    };
    let x0: DVector<f64> = &range * w;
    let residual = cp
        .equalities
        .iter()
        .map(|row| (row.coeffs.iter().map(|&(k, c)| c * x0[k]).sum::<f64>() - row.rhs).abs())
        .fold(0.0f64, f64::max);
    if residual > 1e-8 * b.amax().max(1.0) {
        return None;
    }
    Some(Elimination { x0, null })
}

/// The cone program in the null-space coordinates `xi`.
struct Reduced<'a> {
    model: &'a Model,
    null: &'a DMatrix<f64>,
    c: DVector<f64>,
    h: ConeVec,
}

impl Reduced<'_> {
    fn dim(&self) -> usize {
        self.null.ncols()
    }

    fn g_mul(&self, xi: &DVector<f64>) -> ConeVec {
        self.model.g_mul(&(self.null * xi))
    }

    fn gt_mul(&self, z: &ConeVec) -> DVector<f64> {
        self.null.tr_mul(&self.model.gt_mul(z))
    }
}

/// `<F, M>` for symmetric `F` given by its upper triangle.
fn frob_sparse(mat: &[(usize, usize, f64)], m: &DMatrix<f64>) -> f64 {
    mat.iter()
        .map(|&(i, j, c)| {
            if i == j {
                c * m[(i, i)]
            } else {
                c * (m[(i, j)] + m[(j, i)])
            }
        })
        .sum()
}

/// Factorization of the reduced Newton system for one scaling.
///
/// The system is solved in scaled coordinates: with `Gs = W^{-T} G N`,
/// `[0 Gs'; Gs -I] [ux; vz] = [bx; bz]` where `vz = W uz` and `bz` is already
/// scaled by `W^{-T}`. Residuals are formed with the same `Gs` that is
/// factored, so iterative refinement converges even when `W` is badly
/// conditioned.
struct Factorization {
    /// Per group, `W^{-T} F` restricted to the group's variables, one row per
    /// svec entry or linear row.
    k: Vec<DMatrix<f64>>,
    /// Upper triangular `R` with `R'R = Gs' Gs`.
    r: DMatrix<f64>,
}

impl Factorization {
    fn new(red: &Reduced, scaling: &Scaling) -> Result<Self> {
        let model = red.model;
        let mut k: Vec<DMatrix<f64>> = model
            .groups
            .iter()
            .enumerate()
            .map(|(g, vars)| {
                DMatrix::zeros(model.group_row[g + 1] - model.group_row[g], vars.len())
            })
            .collect();
        for (bk, block) in model.blocks.iter().enumerate() {
            let ri = &scaling.rinv[bk];
            let n = block.side;
            let kg = &mut k[block.group];
            let base = model.block_row[bk] - model.group_row[block.group];
            for (a, mat_a) in block.mats.iter().enumerate() {
                let mut m = DMatrix::<f64>::zeros(n, n);
                for &(i, j, c) in mat_a {
                    let qi = ri.column(i);
                    let qj = ri.column(j);
                    if i == j {
                        m.ger(c, &qi, &qi, 1.0);
                    } else {
                        m.ger(c, &qi, &qj, 1.0);
                        m.ger(c, &qj, &qi, 1.0);
                    }
                }
                let col = model.var_slot[block.vars[a]].1;
                let mut r = base;
                for q in 0..n {
                    kg[(r, col)] += m[(q, q)];
                    r += 1;
                    for p in q + 1..n {
                        kg[(r, col)] += std::f64::consts::SQRT_2 * m[(p, q)];
                        r += 1;
                    }
                }
            }
        }
        for (r, row) in model.lin.iter().enumerate() {
            let kg = &mut k[row.group];
            let at = model.lin_row[r] - model.group_row[row.group];
            for &(i, c) in &row.coeffs {
                kg[(at, model.var_slot[i].1)] += c / scaling.w[r];
            }
        }

        let dim = red.dim();
        let mut stacked = Mat::<f64>::zeros(model.n.max(dim), dim);
        let mut row = 0;
        for (g, kg) in k.iter().enumerate() {
            let mat = Mat::<f64>::from_fn(kg.nrows(), kg.ncols(), |i, j| kg[(i, j)]);
            let rg = triangular_factor(mat)
                .ok_or_else(|| numerical(&format!("cone block group {g} is singular")))?;
            let vars = &model.groups[g];
            let ng = DMatrix::from_fn(vars.len(), dim, |i, j| red.null[(vars[i], j)]);
            let prod = rg * ng;
            for i in 0..prod.nrows() {
                for j in 0..dim {
                    stacked[(row + i, j)] = prod[(i, j)];
                }
            }
            row += prod.nrows();
        }
        let r = triangular_factor(stacked)
            .ok_or_else(|| numerical("reduced Newton system is singular"))?;
        Ok(Self { k, r })
    }

    /// `Gs ux`.
    fn g_mul(&self, red: &Reduced, ux: &DVector<f64>) -> DVector<f64> {
        let model = red.model;
        let t = red.null * ux;
        let mut out = DVector::zeros(model.group_row[model.groups.len()]);
        for (g, (kg, vars)) in self.k.iter().zip(&model.groups).enumerate() {
            let vg = DVector::from_iterator(vars.len(), vars.iter().map(|&v| t[v]));
            let start = model.group_row[g];
            out.rows_mut(start, kg.nrows()).axpy(-1.0, &(kg * vg), 0.0);
        }
        out
    }

    /// `Gs' v`.
    fn gt_mul(&self, red: &Reduced, v: &DVector<f64>) -> DVector<f64> {
        let model = red.model;
        let mut t = DVector::zeros(model.n);
        for (g, (kg, vars)) in self.k.iter().zip(&model.groups).enumerate() {
            let start = model.group_row[g];
            let part = kg.tr_mul(&v.rows(start, kg.nrows()));
            for (&var, p) in vars.iter().zip(part.iter()) {
                t[var] = -p;
            }
        }
        red.null.tr_mul(&t)
    }

    fn h_solve(&self, rhs: DVector<f64>) -> DVector<f64> {
        let mut v = rhs;
        self.r.tr_solve_upper_triangular_mut(&mut v);
        self.r.solve_upper_triangular_mut(&mut v);
        v
    }

    fn solve_once(
        &self,
        red: &Reduced,
        bx: &DVector<f64>,
        bz: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>) {
        let ux = self.h_solve(bx + self.gt_mul(red, bz));
        let vz = self.g_mul(red, &ux) - bz;
        (ux, vz)
    }

    fn residual(
        &self,
        red: &Reduced,
        sol: (&DVector<f64>, &DVector<f64>),
        rhs: (&DVector<f64>, &DVector<f64>),
    ) -> (DVector<f64>, DVector<f64>, f64) {
        let (ux, vz) = sol;
        let (bx, bz) = rhs;
        let rx = bx - self.gt_mul(red, vz);
        let rz = bz - self.g_mul(red, ux) + vz;
        let norm = (rx.norm_squared() + rz.norm_squared()).sqrt();
        (rx, rz, norm)
    }

    /// Solves with iterative refinement: at least `refinement` correction
    /// steps, more while the residual keeps shrinking.
    fn solve(
        &self,
        red: &Reduced,
        bx: &DVector<f64>,
        bz: &DVector<f64>,
        refinement: usize,
    ) -> (DVector<f64>, DVector<f64>) {
        const MAX_EXTRA: usize = 6;
        let (mut ux, mut vz) = self.solve_once(red, bx, bz);
        let rhs_norm = (bx.norm_squared() + bz.norm_squared()).sqrt().max(1e-300);
        let (mut rx, mut rz, mut res_norm) = self.residual(red, (&ux, &vz), (bx, bz));
        for step in 0..refinement + MAX_EXTRA {
            if step >= refinement && res_norm <= 1e-15 * rhs_norm {
                break;
            }
            let (dx, dz) = self.solve_once(red, &rx, &rz);
            let nx = &ux + dx;
            let nz = &vz + dz;
            let (nrx, nrz, nnorm) = self.residual(red, (&nx, &nz), (bx, bz));
            if nnorm >= res_norm && step >= refinement {
                break;
            }
            ux = nx;
            vz = nz;
            rx = nrx;
            rz = nrz;
            res_norm = nnorm;
        }
        (ux, vz)
    }
}

/// `R` from a QR factorization of `k`, padded with a small multiple of the
/// identity when `k` is rank deficient.
fn triangular_factor(k: Mat<f64>) -> Option<DMatrix<f64>> {
    let n = k.ncols();
    if n == 0 {
        return Some(DMatrix::zeros(0, 0));
    }
    let scale = (0..n)
        .map(|j| {
            (0..k.nrows())
                .map(|i| k[(i, j)] * k[(i, j)])
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0f64, f64::max)
        .max(1e-300);
    let extract = |k: &Mat<f64>| -> Option<DMatrix<f64>> {
        let qr = k.qr();
        let r = qr.thin_R();
        let out = DMatrix::from_fn(n, n, |i, j| if i <= j { r[(i, j)] } else { 0.0 });
        (0..n)
            .all(|i| out[(i, i)].abs() > 1e-15 * scale && out[(i, i)].is_finite())
            .then_some(out)
    };
    if k.nrows() >= n {
        if let Some(r) = extract(&k) {
            return Some(r);
        }
    }
    let mut delta = 1e-12 * scale;
    for _ in 0..6 {
        let mut padded = Mat::<f64>::zeros(k.nrows() + n, n);
        for j in 0..n {
            for i in 0..k.nrows() {
                padded[(i, j)] = k[(i, j)];
            }
            padded[(k.nrows() + j, j)] = delta;
        }
        if let Some(r) = extract(&padded) {
            return Some(r);
        }
        delta *= 100.0;
    }
    None
}

/// New scaling from the scaled iterates `s~ = lambda + alpha ds~` and
/// `z~ = lambda + alpha dz~`.
fn numerical(msg: &str) -> Error {
    Error::NumericalFailure {
        message: msg.to_string(),
        iterations: 0,
    }
}

struct Direction {
    dx: DVector<f64>,
    ds: ConeVec,
    dz: ConeVec,
    ds_scaled: ConeVec,
    dz_scaled: ConeVec,
    dtau: f64,
    dkappa: f64,
}

pub fn solve_with(cp: &ConicProblem, opts: &SolverOptions) -> Result<ConicSolution> {
    cp.validate()?;
    if cp.max_block_side() > opts.max_block_side {
        return Err(Error::invalid(format!(
            "largest PSD block has side {} > {}; export to SDPA for an external solver",
            cp.max_block_side(),
            opts.max_block_side
        )));
    }
    let model = Model::build(cp);
    let Some(elim) = eliminate(cp) else {
        return Ok(ConicSolution {
            status: SolveStatus::Infeasible,
            primal_objective: f64::INFINITY,
            dual_objective: f64::INFINITY,
            p_beta: f64::INFINITY,
            x: vec![0.0; cp.num_vars],
            gap: 0.0,
            primal_residual: f64::INFINITY,
            dual_residual: 0.0,
            iterations: 0,
            trace: Vec::new(),
        });
    };
    let c_full = DVector::from_vec(cp.objective.clone());
    let base_objective = c_full.dot(&elim.x0) + cp.objective_offset;
    let mut h = model.h();
    h.axpy(-1.0, &model.g_mul(&elim.x0));
    let red = Reduced {
        model: &model,
        null: &elim.null,
        c: elim.null.tr_mul(&c_full),
        h,
    };
    let n = red.dim();
    let c = red.c.clone();
    let h = red.h.clone();
    let resx0 = c.norm().max(1.0);
    let resz0 = h.norm().max(1.0);
    let degree = model.degree() as f64;

    let mut x = DVector::<f64>::zeros(n);
    let mut tau = 1.0;
    let mut kappa = 1.0;
    let mut s = ConeVec::identity(&model);
    let mut z = ConeVec::identity(&model);
    let mut scaling = Scaling::identity(&model);

    let mut trace = Vec::new();
    let mut last_step = 0.0;
    let mut status = SolveStatus::MaxIter;
    let mut iterations = 0;
    let mut numerical_note: Option<String> = None;

    for iter in 0..=opts.max_iter {
        iterations = iter;

        // residuals of the embedding
        let gtz = red.gt_mul(&z);
        let gx = red.g_mul(&x);
        let r1 = -(&gtz + &c * tau);
        let mut r3 = s.add(&gx);
        r3.axpy(-tau, &h);
        let cx = c.dot(&x);
        let hz = h.dot(&z);
        let r4 = kappa + cx + hz;

        let gap = s.dot(&z);
        let pcost = cx / tau + base_objective;
        let dcost = -hz / tau + base_objective;
        let pres = r3.norm() / tau / resz0;
        let dres = r1.norm() / tau / resx0;
        let relgap = if pcost < 0.0 {
            Some(gap / tau / tau / -pcost)
        } else if dcost > 0.0 {
            Some(gap / tau / tau / dcost)
        } else {
            None
        };
        if opts.keep_trace {
            trace.push(IterationLog {
                iteration: iter,
                primal_objective: pcost,
                dual_objective: dcost,
                gap: gap / tau / tau,
                primal_residual: pres,
                dual_residual: dres,
                step: last_step,
                tau,
                kappa,
            });
        }

        let converged = pres <= opts.feastol
            && dres <= opts.feastol
            && (gap / tau / tau <= opts.abstol || relgap.is_some_and(|g| g <= opts.reltol));
        if converged {
            status = SolveStatus::Optimal;
            break;
        }
        if hz < 0.0 {
            let pinf = gtz.norm() / resx0 / -hz;
            if pinf <= opts.feastol {
                status = SolveStatus::Infeasible;
                break;
            }
        }
        if cx < 0.0 {
            let mut gxs = gx.clone();
            gxs.axpy(1.0, &s);
            let dinf = gxs.norm() / resz0 / -cx;
            if dinf <= opts.feastol {
                status = SolveStatus::Unbounded;
                break;
            }
        }
        if iter == opts.max_iter {
            break;
        }

        let fact = match Factorization::new(&red, &scaling) {
            Ok(f) => f,
            Err(e) => {
                numerical_note = Some(e.to_string());
                status = SolveStatus::Numerical;
                break;
            }
        };
        let h_scaled = model.svec(&scaling.apply_inverse_transpose(&h));
        let (x1, z1) = fact.solve(&red, &(-&c), &h_scaled, opts.refinement);
        let denom = c.dot(&x1) + h_scaled.dot(&z1) - kappa / tau;

        let lam = scaling.lambda_vec();
        let lam_sq = jordan(&lam, &lam);
        let mu = (gap + tau * kappa) / (degree + 1.0);

        let direction = |gamma: f64, rc: &ConeVec, rk: f64| -> Direction {
            let bx = &r1 * (1.0 - gamma);
            let lr = scaling.lambda_divide(rc);
            let bz = model.svec(&scaling.apply_inverse_transpose(&r3)) * -(1.0 - gamma)
                - model.svec(&lr);
            let (x2, z2) = fact.solve(&red, &bx, &bz, opts.refinement);
            let num = -(1.0 - gamma) * r4 - rk / tau - (c.dot(&x2) + h_scaled.dot(&z2));
            let dtau = num / denom;
            let dx = &x2 + &x1 * dtau;
            let dz_scaled = model.smat(&(z2 + &z1 * dtau));
            // ds from the unscaled primal equation
            let mut ds = r3.scaled(-(1.0 - gamma));
            ds.axpy(-1.0, &red.g_mul(&dx));
            ds.axpy(dtau, &h);
            let ds_scaled = scaling.apply_inverse_transpose(&ds);
            let dz = scaling.apply_inverse(&dz_scaled);
            let dkappa = (rk - kappa * dtau) / tau;
            Direction {
                dx,
                ds,
                dz,
                ds_scaled,
                dz_scaled,
                dtau,
                dkappa,
            }
        };
        let step_of = |d: &Direction| -> f64 {
            let mut a = max_step(&scaling, &d.ds_scaled).min(max_step(&scaling, &d.dz_scaled));
            if d.dtau < 0.0 {
                a = a.min(-tau / d.dtau);
            }
            if d.dkappa < 0.0 {
                a = a.min(-kappa / d.dkappa);
            }
            a
        };

        // predictor
        let rc_aff = lam_sq.scaled(-1.0);
        let aff = direction(0.0, &rc_aff, -tau * kappa);
        let alpha_aff = step_of(&aff).min(1.0);
        let sigma = (1.0 - alpha_aff).powi(3).clamp(0.0, 1.0);

        // corrector
        let mut rc = lam_sq.scaled(-1.0);
        rc.axpy(-1.0, &jordan(&aff.ds_scaled, &aff.dz_scaled));
        let e = ConeVec::identity(&model);
        rc.axpy(sigma * mu, &e);
        let rk = -tau * kappa - aff.dtau * aff.dkappa + sigma * mu;
        let dir = direction(sigma, &rc, rk);
        let mut alpha = (STEP_FRACTION * step_of(&dir)).min(1.0);
        let mut next = None;
        let mut failure = None;
        for _ in 0..MAX_STEP_CUTS {
            if !(alpha > 1e-12) {
                break;
            }
            let mut s_new = s.clone();
            s_new.axpy(alpha, &dir.ds);
            let mut z_new = z.clone();
            z_new.axpy(alpha, &dir.dz);
            match Scaling::from_pair(&s_new, &z_new) {
                Ok(sc) => {
                    next = Some((s_new, z_new, sc));
                    break;
                }
                Err(e) => {
                    failure = Some(e.to_string());
                    alpha *= 0.5;
                }
            }
        }
        last_step = alpha;
        let Some((s_new, z_new, sc)) = next else {
            numerical_note = Some(failure.unwrap_or_else(|| "step length collapsed".into()));
            status = SolveStatus::Numerical;
            break;
        };
        x.axpy(alpha, &dir.dx, 1.0);
        tau += alpha * dir.dtau;
        kappa += alpha * dir.dkappa;
        s = s_new;
        z = z_new;
        scaling = sc;
        if !(tau.is_finite() && kappa.is_finite()) || x.iter().any(|v| !v.is_finite()) {
            numerical_note = Some("iterates are not finite".into());
            status = SolveStatus::Numerical;
            break;
        }
    }

    if status == SolveStatus::Numerical && iterations == 0 {
        return Err(Error::NumericalFailure {
            message: numerical_note.unwrap_or_default(),
            iterations,
        });
    }
    let hz = h.dot(&z);
    let x_full = &elim.x0 + &elim.null * (&x / tau);
    let cone_res = {
        let mut r = s.scaled(1.0 / tau);
        r.axpy(1.0, &model.g_mul(&x_full));
        r.axpy(-1.0, &model.h());
        r.norm() / resz0
    };
    let eq_res = cp
        .equalities
        .iter()
        .map(|row| row.coeffs.iter().map(|&(k, c)| c * x_full[k]).sum::<f64>() - row.rhs)
        .map(|r| r * r)
        .sum::<f64>()
        .sqrt()
        / cp.equalities
            .iter()
            .map(|r| r.rhs * r.rhs)
            .sum::<f64>()
            .sqrt()
            .max(1.0);
    let dres = (red.gt_mul(&z) + &c * tau).norm() / tau / resx0;
    let dual_objective = -hz / tau + base_objective;
    Ok(ConicSolution {
        status,
        primal_objective: c_full.dot(&x_full) + cp.objective_offset,
        dual_objective,
        p_beta: dual_objective,
        x: x_full.iter().copied().collect(),
        gap: s.dot(&z) / tau / tau,
        primal_residual: cone_res.max(eq_res),
        dual_residual: dres,
        iterations,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdp::{EqualityRow, LinearInequality, PsdBlock};

    fn two_by_two() -> ConicProblem {
        // minimize x subject to [[x, 1], [1, x]] PSD
        ConicProblem {
            num_vars: 1,
            objective: vec![1.0],
            objective_offset: 0.0,
            equalities: vec![],
            linear: vec![],
            psd: vec![PsdBlock {
                label: "m".into(),
                side: 2,
                entries: vec![(0, 0, 0, 1.0), (0, 1, 1, 1.0)],
                constant: vec![(0, 1, 1.0)],
            }],
            embedding: None,
        }
    }

    #[test]
    fn analytic_psd_boundary() {
        let sol = solve(&two_by_two(), 1e-9).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-7, "{}", sol.x[0]);
        assert!((sol.p_beta - 1.0).abs() < 1e-7);
    }

    #[test]
    fn small_lp() {
        // minimize -x0 - x1 s.t. x0 + 2 x1 = 2, x >= 0, x0 <= 1
        let cp = ConicProblem {
            num_vars: 2,
            objective: vec![-1.0, -1.0],
            objective_offset: 0.0,
            equalities: vec![EqualityRow {
                label: "e".into(),
                coeffs: vec![(0, 1.0), (1, 2.0)],
                rhs: 2.0,
            }],
            linear: vec![
                LinearInequality {
                    label: "a".into(),
                    coeffs: vec![(0, 1.0)],
                    constant: 0.0,
                },
                LinearInequality {
                    label: "b".into(),
                    coeffs: vec![(1, 1.0)],
                    constant: 0.0,
                },
                LinearInequality {
                    label: "c".into(),
                    coeffs: vec![(0, -1.0)],
                    constant: 1.0,
                },
            ],
            psd: vec![],
            embedding: None,
        };
        let sol = solve(&cp, 1e-9).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-6 && (sol.x[1] - 0.5).abs() < 1e-6);
        assert!((sol.p_beta + 1.5).abs() < 1e-7);
    }

    #[test]
    fn detects_infeasibility() {
        // x >= 1 and x <= 0
        let cp = ConicProblem {
            num_vars: 1,
            objective: vec![1.0],
            objective_offset: 0.0,
            equalities: vec![],
            linear: vec![
                LinearInequality {
                    label: "lo".into(),
                    coeffs: vec![(0, 1.0)],
                    constant: -1.0,
                },
                LinearInequality {
                    label: "hi".into(),
                    coeffs: vec![(0, -1.0)],
                    constant: 0.0,
                },
            ],
            psd: vec![],
            embedding: None,
        };
        let sol = solve(&cp, 1e-8).unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible);
    }

    #[test]
    fn detects_unboundedness() {
        // minimize -x subject to [[x, 0], [0, 1]] PSD
        let cp = ConicProblem {
            num_vars: 1,
            objective: vec![-1.0],
            objective_offset: 0.0,
            equalities: vec![],
            linear: vec![],
            psd: vec![PsdBlock {
                label: "m".into(),
                side: 2,
                entries: vec![(0, 0, 0, 1.0)],
                constant: vec![(1, 1, 1.0)],
            }],
            embedding: None,
        };
        let sol = solve(&cp, 1e-8).unwrap();
        assert_eq!(sol.status, SolveStatus::Unbounded);
    }

    #[test]
    fn deterministic() {
        let a = solve(&two_by_two(), 1e-9).unwrap();
        let b = solve(&two_by_two(), 1e-9).unwrap();
        assert_eq!(a, b);
    }
}
