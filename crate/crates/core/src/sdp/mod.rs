//! Semidefinite programs from moment relaxations.
//!
//! [`compile`] turns a [`MomentRelaxation`](crate::relaxation::MomentRelaxation)
//! into a [`ConicProblem`]: moment and localizing matrices become PSD blocks,
//! the linear moment identities become equality rows. [`solve`] runs a
//! homogeneous self-dual interior-point method with Nesterov–Todd scaling on
//! the result, and [`sdpa`] reads and writes the sparse SDPA format for
//! external solvers.

mod compile;
mod ipm;
pub mod sdpa;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

pub use compile::{compile, compile_with, CompileOptions, MomentEmbedding, SizeReport};
pub use ipm::{solve, solve_with, IterationLog};

/// Linear matrix inequality `constant + sum_k value_k * x[var_k] E_{row,col} >= 0`,
/// where `E_{row,col}` is the symmetric unit matrix for `row <= col`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdBlock {
    pub label: String,
    pub side: usize,
    /// `(var, row, col, value)` with `row <= col`.
    pub entries: Vec<(usize, usize, usize, f64)>,
    /// `(row, col, value)` with `row <= col`.
    pub constant: Vec<(usize, usize, f64)>,
}

/// `constant + coeffs . x >= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearInequality {
    pub label: String,
    pub coeffs: Vec<(usize, f64)>,
    pub constant: f64,
}

/// `coeffs . x = rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EqualityRow {
    pub label: String,
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

/// `minimize objective . x + objective_offset` subject to equality rows,
/// linear inequalities and PSD blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConicProblem {
    pub num_vars: usize,
    pub objective: Vec<f64>,
    pub objective_offset: f64,
    pub equalities: Vec<EqualityRow>,
    pub linear: Vec<LinearInequality>,
    pub psd: Vec<PsdBlock>,
    /// Present when the problem was compiled from a moment relaxation.
    #[serde(skip)]
    pub embedding: Option<MomentEmbedding>,
}

impl ConicProblem {
    pub fn max_block_side(&self) -> usize {
        self.psd.iter().map(|b| b.side).max().unwrap_or(0)
    }

    /// Structural validation: indices in range, upper-triangle entries, finite data.
    pub fn validate(&self) -> crate::Result<()> {
        use crate::error::Error;
        if self.objective.len() != self.num_vars {
            return Err(Error::invalid(
                "objective length differs from the variable count",
            ));
        }
        let finite = |v: f64| v.is_finite();
        for r in &self.equalities {
            if r.coeffs
                .iter()
                .any(|&(k, c)| k >= self.num_vars || !finite(c))
                || !finite(r.rhs)
            {
                return Err(Error::invalid(format!(
                    "equality row {} is malformed",
                    r.label
                )));
            }
        }
        for r in &self.linear {
            if r.coeffs
                .iter()
                .any(|&(k, c)| k >= self.num_vars || !finite(c))
                || !finite(r.constant)
            {
                return Err(Error::invalid(format!(
                    "inequality {} is malformed",
                    r.label
                )));
            }
        }
        for b in &self.psd {
            let ok = b
                .entries
                .iter()
                .all(|&(k, i, j, v)| k < self.num_vars && i <= j && j < b.side && finite(v))
                && b.constant
                    .iter()
                    .all(|&(i, j, v)| i <= j && j < b.side && finite(v));
            if !ok || b.side == 0 {
                return Err(Error::invalid(format!(
                    "PSD block {} is malformed",
                    b.label
                )));
            }
        }
        Ok(())
    }

    /// Dense value of PSD block `k` at `x`.
    pub fn block_matrix(&self, k: usize, x: &[f64]) -> nalgebra::DMatrix<f64> {
        let b = &self.psd[k];
        let mut m = nalgebra::DMatrix::zeros(b.side, b.side);
        for &(i, j, v) in &b.constant {
            m[(i, j)] += v;
            if i != j {
                m[(j, i)] += v;
            }
        }
        for &(var, i, j, v) in &b.entries {
            m[(i, j)] += v * x[var];
            if i != j {
                m[(j, i)] += v * x[var];
            }
        }
        m
    }

    /// Smallest eigenvalue of every PSD block at `x`.
    pub fn block_min_eigenvalues(&self, x: &[f64]) -> Vec<f64> {
        (0..self.psd.len())
            .map(|k| {
                let m = self.block_matrix(k, x);
                m.symmetric_eigenvalues()
                    .iter()
                    .copied()
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    pub fn max_equality_residual(&self, x: &[f64]) -> f64 {
        self.equalities
            .iter()
            .map(|r| (r.coeffs.iter().map(|&(k, c)| c * x[k]).sum::<f64>() - r.rhs).abs())
            .fold(0.0, f64::max)
    }

    pub fn min_linear_slack(&self, x: &[f64]) -> f64 {
        self.linear
            .iter()
            .map(|r| r.constant + r.coeffs.iter().map(|&(k, c)| c * x[k]).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective_offset
            + self
                .objective
                .iter()
                .zip(x)
                .map(|(c, v)| c * v)
                .sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
    Numerical,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::MaxIter => "maxiter",
            SolveStatus::Numerical => "numerical",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConicSolution {
    pub status: SolveStatus,
    /// `objective . x` at the returned primal point.
    pub primal_objective: f64,
    /// Dual objective; a lower bound on the optimum up to the dual residual.
    pub dual_objective: f64,
    /// Reported bound `p_beta` (the dual objective).
    pub p_beta: f64,
    pub x: Vec<f64>,
    pub gap: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<IterationLog>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Primal and dual feasibility tolerance (relative).
    pub feastol: f64,
    /// Absolute duality-gap tolerance.
    pub abstol: f64,
    /// Relative duality-gap tolerance.
    pub reltol: f64,
    pub max_iter: usize,
    /// Blocks larger than this are refused; use SDPA export instead.
    pub max_block_side: usize,
    /// Iterative refinement steps per linear solve.
    pub refinement: usize,
    pub keep_trace: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            feastol: 1e-8,
            abstol: 1e-8,
            reltol: 1e-8,
            max_iter: 200,
            max_block_side: 300,
            refinement: 1,
            keep_trace: false,
        }
    }
}

impl SolverOptions {
    pub fn with_tolerance(tol: f64) -> Self {
        Self {
            feastol: tol,
            abstol: tol,
            reltol: tol,
            ..Self::default()
        }
    }
}

/// A lower bound on the quality metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QBound {
    pub q: f64,
    /// The relaxation value fell below `pi M^2` and was clamped to 0.
    pub clamped: bool,
}

/// `Q_beta = sqrt(max(p_beta / pi - M^2, 0))`.
pub fn bound_to_q(p_beta: f64, m: f64) -> QBound {
    let r = p_beta / PI - m * m;
    QBound {
        q: r.max(0.0).sqrt(),
        clamped: r < 0.0,
    }
}
