//! End-to-end runs: bound an instance, then recover and refine a pattern
//! from the solved relaxation.
//!
//! ```no_run
//! use oppsyn::pattern::ConverterProblem;
//! use oppsyn::synth::{synthesize, BoundOptions};
//!
//! let prob = ConverterProblem::reference_five_level(8, 0.9).normalized().unwrap();
//! let out = synthesize(&prob, &BoundOptions::new(3)).unwrap();
//! println!("Q_3 = {:?}, refined Q = {}", out.certificate.q_beta, out.certificate.q_refined);
//! ```

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::build_graph;
use crate::pattern::{ConverterProblem, ObjectiveMode, SwitchingSequence};
use crate::recovery::{
    extract_occupancies, recover_or_fallback, refine_with, RefineOptions, RefineOutcome,
};
use crate::relaxation::{assemble_with, AssembleOptions, MomentRelaxation};
use crate::sdp::{
    bound_to_q, compile, solve_with, ConicProblem, ConicSolution, SolveStatus, SolverOptions,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundOptions {
    pub beta: usize,
    pub assemble: AssembleOptions,
    pub solver: SolverOptions,
}

impl BoundOptions {
    pub fn new(beta: usize) -> Self {
        Self {
            beta,
            assemble: AssembleOptions::default(),
            solver: SolverOptions::default(),
        }
    }
}

/// Summary of one bound computation, with wall times split into assembly
/// plus compilation (`prep_s`) and the solve itself (`solve_s`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub pulse_number: usize,
    pub modulation_index: Option<f64>,
    pub beta: usize,
    pub objective: ObjectiveMode,
    pub status: SolveStatus,
    pub p_beta: f64,
    /// `Q_beta`; only defined for the current objective with `b_1 = M`.
    pub q_beta: Option<f64>,
    pub num_vars: usize,
    pub num_equalities: usize,
    pub max_block_side: usize,
    pub iterations: usize,
    pub gap: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub prep_s: f64,
    pub solve_s: f64,
}

/// A bound together with everything needed to recover a pattern from it.
#[derive(Debug, Clone)]
pub struct BoundRun {
    pub report: BoundReport,
    pub relaxation: MomentRelaxation,
    pub conic: ConicProblem,
    pub solution: ConicSolution,
}

/// Assembles and compiles the degree-`2 beta` relaxation of `prob`.
pub fn prepare(
    prob: &ConverterProblem,
    opts: &BoundOptions,
) -> Result<(MomentRelaxation, ConicProblem)> {
    let rel = assemble_with(prob, opts.beta, prob.objective, opts.assemble)?;
    let cp = compile(&rel)?;
    Ok((rel, cp))
}

pub fn bound(prob: &ConverterProblem, opts: &BoundOptions) -> Result<BoundRun> {
    let start = Instant::now();
    let (rel, cp) = prepare(prob, opts)?;
    let prep_s = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let sol = solve_with(&cp, &opts.solver)?;
    let solve_s = start.elapsed().as_secs_f64();
    let m = prob.modulation();
    let q_beta = match (prob.objective, m, sol.status) {
        (ObjectiveMode::Current, Some(m), SolveStatus::Optimal) => {
            Some(bound_to_q(sol.p_beta, m).q)
        }
        _ => None,
    };
    let report = BoundReport {
        pulse_number: prob.pulse_number,
        modulation_index: m,
        beta: opts.beta,
        objective: prob.objective,
        status: sol.status,
        p_beta: sol.p_beta,
        q_beta,
        num_vars: cp.num_vars,
        num_equalities: cp.equalities.len(),
        max_block_side: cp.max_block_side(),
        iterations: sol.iterations,
        gap: sol.gap,
        primal_residual: sol.primal_residual,
        dual_residual: sol.dual_residual,
        prep_s,
        solve_s,
    };
    Ok(BoundRun {
        report,
        relaxation: rel,
        conic: cp,
        solution: sol,
    })
}

/// Outcome of [`synthesize`]: the certified bound next to the quality of
/// the refined pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub beta: usize,
    pub status: SolveStatus,
    pub q_beta: Option<f64>,
    /// Quality of the starting sequence (recovered or warm start), before
    /// refinement; `None` when it misses the harmonic windows.
    pub q_recovered: Option<f64>,
    pub q_refined: f64,
    /// `q_refined - q_beta`.
    pub gap: Option<f64>,
    /// The per-column argmax was not a path and the heaviest path was used.
    pub used_fallback: bool,
    pub refined_feasible: bool,
    pub prep_s: f64,
    pub solve_s: f64,
    pub refine_s: f64,
}

#[derive(Debug, Clone)]
pub struct Synthesis {
    pub bound: BoundRun,
    pub recovered: SwitchingSequence,
    pub refined: RefineOutcome,
    pub certificate: Certificate,
}

/// Bound, recover and refine.
///
/// Fails with [`Error::Infeasible`] when the relaxation is infeasible (no
/// pattern exists), with [`Error::NumericalFailure`] when the solve did not
/// converge, and with [`Error::RefineFailed`] when no refined candidate
/// meets the harmonic windows.
pub fn synthesize(prob: &ConverterProblem, opts: &BoundOptions) -> Result<Synthesis> {
    synthesize_with(prob, opts, &RefineOptions::default(), None)
}

/// [`synthesize`] with explicit refinement options. A `warm_start` pattern
/// replaces the recovered one as the starting point of refinement; the
/// bound is computed either way.
pub fn synthesize_with(
    prob: &ConverterProblem,
    opts: &BoundOptions,
    refine_opts: &RefineOptions,
    warm_start: Option<&SwitchingSequence>,
) -> Result<Synthesis> {
    if let Some(seq) = warm_start {
        seq.validate_for(prob)?;
    }
    let run = bound(prob, opts)?;
    certify(prob, run, refine_opts, warm_start)
}

/// Recovery and refinement on top of a finished [`bound`] run.
pub fn certify(
    prob: &ConverterProblem,
    run: BoundRun,
    refine_opts: &RefineOptions,
    warm_start: Option<&SwitchingSequence>,
) -> Result<Synthesis> {
    match run.solution.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => return Err(Error::Infeasible),
        other => {
            return Err(Error::NumericalFailure {
                message: format!("solver stopped with status {other}"),
                iterations: run.solution.iterations,
            })
        }
    }
    let (recovered, used_fallback) = match warm_start {
        Some(seq) => (seq.clone(), false),
        None => {
            let table = extract_occupancies(&run.solution, &run.conic)?;
            let graph = build_graph(prob.num_levels(), prob.pulse_number, prob.unipolar)?;
            recover_or_fallback(&table, &graph, prob)?
        }
    };
    let q_recovered = crate::pattern::check_feasibility(&recovered, prob)
        .ok()
        .filter(|r| r.feasible)
        .map(|r| r.quality);
    let start = Instant::now();
    let refined = refine_with(&recovered, prob, refine_opts)?;
    let refine_s = start.elapsed().as_secs_f64();
    let q_beta = run.report.q_beta;
    let certificate = Certificate {
        beta: run.report.beta,
        status: run.solution.status,
        q_beta,
        q_recovered,
        q_refined: refined.quality,
        gap: q_beta.map(|q| refined.quality - q),
        used_fallback,
        refined_feasible: refined.feasible,
        prep_s: run.report.prep_s,
        solve_s: run.report.solve_s,
        refine_s,
    };
    Ok(Synthesis {
        bound: run,
        recovered,
        refined,
        certificate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_instance_is_sandwiched() {
        let prob = ConverterProblem::reference_five_level(2, 0.5)
            .normalized()
            .unwrap();
        let out = synthesize(&prob, &BoundOptions::new(2)).unwrap();
        let c = &out.certificate;
        assert!(c.refined_feasible);
        assert!(c.gap.unwrap() >= -1e-7, "{c:?}");
    }

    #[test]
    fn infeasible_cell_is_reported() {
        let prob = ConverterProblem::reference_five_level(1, 0.6)
            .normalized()
            .unwrap();
        assert!(matches!(
            synthesize(&prob, &BoundOptions::new(2)),
            Err(Error::Infeasible)
        ));
    }
}
