//! `oppsyn` command line: evaluate patterns, compute lower bounds, synthesize
//! patterns, sweep parameter grids and export transition graphs.
//!
//! Exit codes: 0 ok, 2 invalid input, 3 infeasible, 4 numerical failure,
//! 5 refinement failed. Errors are reported on stderr as a JSON object.

mod sweep;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use oppsyn::graph::build_graph;
use oppsyn::oracle::waveform_samples;
use oppsyn::pattern::{check_feasibility, ConverterProblem, SwitchingSequence};
use oppsyn::recovery::{trace_csv, RefineOptions};
use oppsyn::relaxation::{AssembleOptions, ExcessHarmonics};
use oppsyn::sdp::sdpa::export_sdpa;
use oppsyn::sdp::{SolveStatus, SolverOptions};
use oppsyn::synth::{bound, prepare, synthesize_with, BoundOptions};
use oppsyn::Error;

#[derive(Parser)]
#[command(
    name = "oppsyn",
    version,
    about = "Optimal pulse pattern synthesis with certified lower bounds"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate a switching pattern: Fourier coefficients, energy, Q, feasibility.
    Eval {
        pattern: PathBuf,
        problem: PathBuf,
        /// Write (theta, u, I, I - I*) samples over one period as CSV.
        #[arg(long)]
        trajectory: Option<PathBuf>,
        #[arg(long, default_value_t = 2000)]
        points: usize,
    },
    /// Lower bound Q_beta from the moment relaxation.
    Bound {
        problem: PathBuf,
        #[command(flatten)]
        relax: RelaxArgs,
        /// Export the semidefinite program in SDPA sparse format.
        #[arg(long)]
        sdpa_out: Option<PathBuf>,
        /// Stop after the export; solve with an external solver.
        #[arg(long, requires = "sdpa_out")]
        export_only: bool,
        /// Include the optimal moment vector in the output.
        #[arg(long)]
        moments: bool,
        /// Include the per-iteration solver log in the output.
        #[arg(long)]
        trace: bool,
    },
    /// Bound, recover a pattern from the relaxation and refine it locally.
    Synth {
        problem: PathBuf,
        #[command(flatten)]
        relax: RelaxArgs,
        /// Start refinement from this pattern instead of the recovered one.
        #[arg(long)]
        warm_start: Option<PathBuf>,
        #[arg(long)]
        pattern_out: Option<PathBuf>,
        #[arg(long)]
        certificate_out: Option<PathBuf>,
        /// Refinement trace as CSV.
        #[arg(long)]
        trace_out: Option<PathBuf>,
        #[arg(long, default_value_t = RefineOptions::default().seed)]
        seed: u64,
        #[arg(long, default_value_t = RefineOptions::default().starts)]
        starts: usize,
    },
    /// Bound and synthesize over a grid of pulse numbers and modulation indices.
    Sweep {
        /// Problem whose pulse number and modulation index are overridden per cell.
        template: PathBuf,
        /// Pulse numbers: `A:B` (inclusive) or a comma list.
        #[arg(long, default_value = "1:10")]
        d_range: String,
        /// Modulation indices: `START:STOP:STEP` (inclusive) or a comma list.
        #[arg(long, default_value = "0.05:1.1:0.05")]
        m_range: String,
        #[command(flatten)]
        relax: RelaxArgs,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; defaults to `OPPSYN_THREADS` or all cores.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Transition graphs (multipolar and unipolar) as DOT plus vertex and edge counts.
    Graph {
        problem: PathBuf,
        /// Write `<prefix>-multipolar.dot` and `<prefix>-unipolar.dot`.
        #[arg(long)]
        dot_prefix: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct RelaxArgs {
    /// Relaxation order; moments up to degree 2 * beta.
    #[arg(long, default_value_t = 2)]
    beta: usize,
    /// Feasibility and gap tolerance of the interior-point solver.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    /// Drop harmonic constraints of degree above 2 * beta instead of failing.
    #[arg(long)]
    drop_excess_harmonics: bool,
    /// Let the current at pi/2 range over the whole box instead of pinning it to 0.
    #[arg(long)]
    free_terminal_current: bool,
}

impl RelaxArgs {
    fn options(&self, keep_trace: bool) -> BoundOptions {
        BoundOptions {
            beta: self.beta,
            assemble: AssembleOptions {
                excess_harmonics: if self.drop_excess_harmonics {
                    ExcessHarmonics::Drop
                } else {
                    ExcessHarmonics::Reject
                },
                free_terminal_current: self.free_terminal_current,
            },
            solver: SolverOptions {
                max_iter: self.max_iter,
                keep_trace,
                ..SolverOptions::with_tolerance(self.tol)
            },
        }
    }
}

/// A failed command: exit code plus a JSON error body.
struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
    /// Printed on stdout before exiting, e.g. a best-effort pattern.
    output: Option<Value>,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            kind: "invalid_input",
            message: message.into(),
            output: None,
        }
    }

    fn status(status: SolveStatus, output: Value) -> Self {
        let (code, kind) = match status {
            SolveStatus::Infeasible => (3, "infeasible"),
            _ => (4, "numerical"),
        };
        Self {
            code,
            kind,
            message: format!("solver finished with status {status}"),
            output: Some(output),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        let (code, kind, output) = match e {
            Error::Invalid(_)
            | Error::Json(_)
            | Error::Parse { .. }
            | Error::Io(_)
            | Error::DegreeTooLow { .. }
            | Error::EmptyGraph => (2, "invalid_input", None),
            Error::Infeasible => (3, "infeasible", None),
            Error::RefineFailed(best) => (
                5,
                "refine_failed",
                Some(json!({
                    "pattern": best.sequence,
                    "quality": best.quality,
                    "max_violation": best.max_violation,
                })),
            ),
            _ => (4, "numerical", None),
        };
        Self {
            code,
            kind,
            message,
            output,
        }
    }
}

type CmdResult = Result<Value, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Eval {
            pattern,
            problem,
            trajectory,
            points,
        } => cmd_eval(&pattern, &problem, trajectory.as_deref(), points),
        Command::Bound {
            problem,
            relax,
            sdpa_out,
            export_only,
            moments,
            trace,
        } => cmd_bound(
            &problem,
            &relax,
            sdpa_out.as_deref(),
            export_only,
            moments,
            trace,
        ),
        Command::Synth {
            problem,
            relax,
            warm_start,
            pattern_out,
            certificate_out,
            trace_out,
            seed,
            starts,
        } => {
            let refine = RefineOptions {
                seed,
                starts,
                ..RefineOptions::default()
            };
            cmd_synth(
                &problem,
                &relax,
                &refine,
                warm_start.as_deref(),
                [
                    pattern_out.as_deref(),
                    certificate_out.as_deref(),
                    trace_out.as_deref(),
                ],
            )
        }
        Command::Sweep {
            template,
            d_range,
            m_range,
            relax,
            out,
            threads,
        } => sweep::cmd_sweep(
            &template,
            &d_range,
            &m_range,
            &relax,
            out.as_deref(),
            threads,
        ),
        Command::Graph {
            problem,
            dot_prefix,
        } => cmd_graph(&problem, dot_prefix.as_deref()),
    };
    match result {
        Ok(Value::Null) => ExitCode::SUCCESS,
        Ok(v) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&v).expect("JSON values serialize")
            );
            ExitCode::SUCCESS
        }
        Err(f) => {
            if let Some(v) = &f.output {
                println!(
                    "{}",
                    serde_json::to_string_pretty(v).expect("JSON values serialize")
                );
            }
            eprintln!("{}", json!({ "error": f.kind, "message": f.message }));
            ExitCode::from(f.code)
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn load_problem(path: &Path) -> Result<ConverterProblem, Failure> {
    ConverterProblem::from_json_str(&read(path)?)
        .map_err(|e| Failure::input(format!("problem {}: {e}", path.display())))
}

fn load_pattern(path: &Path, prob: &ConverterProblem) -> Result<SwitchingSequence, Failure> {
    let seq: SwitchingSequence = serde_json::from_str(&read(path)?)
        .map_err(|e| Failure::input(format!("pattern {}: {e}", path.display())))?;
    seq.validate_for(prob)?;
    Ok(seq)
}

fn to_json<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

fn cmd_eval(pattern: &Path, problem: &Path, trajectory: Option<&Path>, points: usize) -> CmdResult {
    let prob = load_problem(problem)?;
    let seq = load_pattern(pattern, &prob)?;
    let report = check_feasibility(&seq, &prob)?;
    if let Some(path) = trajectory {
        let mut csv = String::from("theta,u,i,i_minus_ref\n");
        for [t, u, i, e] in waveform_samples(&seq, &prob, points.max(2)) {
            csv.push_str(&format!("{t:.12},{u},{i:.12e},{e:.12e}\n"));
        }
        write(path, &csv)?;
    }
    Ok(to_json(&report))
}

fn cmd_bound(
    problem: &Path,
    relax: &RelaxArgs,
    sdpa_out: Option<&Path>,
    export_only: bool,
    moments: bool,
    trace: bool,
) -> CmdResult {
    let prob = load_problem(problem)?;
    let opts = relax.options(trace);
    if export_only {
        let (_, cp) = prepare(&prob, &opts)?;
        let path = sdpa_out.expect("clap enforces --sdpa-out");
        export_sdpa(&cp, path)?;
        return Ok(json!({
            "sdpa": path.display().to_string(),
            "beta": opts.beta,
            "num_vars": cp.num_vars,
            "num_equalities": cp.equalities.len(),
            "num_blocks": cp.psd.len(),
            "max_block_side": cp.max_block_side(),
        }));
    }
    let run = bound(&prob, &opts)?;
    if let Some(path) = sdpa_out {
        export_sdpa(&run.conic, path)?;
    }
    let mut out = to_json(&run.report);
    if moments {
        out["moments"] = to_json(&run.solution.x);
    }
    if trace {
        out["trace"] = to_json(&run.solution.trace);
    }
    match run.report.status {
        SolveStatus::Optimal => Ok(out),
        status => Err(Failure::status(status, out)),
    }
}

fn cmd_synth(
    problem: &Path,
    relax: &RelaxArgs,
    refine: &RefineOptions,
    warm_start: Option<&Path>,
    outputs: [Option<&Path>; 3],
) -> CmdResult {
    let prob = load_problem(problem)?;
    let warm = warm_start.map(|p| load_pattern(p, &prob)).transpose()?;
    let out = synthesize_with(&prob, &relax.options(false), refine, warm.as_ref())?;
    let [pattern_out, certificate_out, trace_out] = outputs;
    let pattern = to_json(&out.refined.sequence);
    let certificate = to_json(&out.certificate);
    if let Some(path) = pattern_out {
        write(
            path,
            &serde_json::to_string_pretty(&pattern).expect("JSON values serialize"),
        )?;
    }
    if let Some(path) = certificate_out {
        write(
            path,
            &serde_json::to_string_pretty(&certificate).expect("JSON values serialize"),
        )?;
    }
    if let Some(path) = trace_out {
        write(path, &trace_csv(&out.refined.trace))?;
    }
    Ok(json!({ "pattern": pattern, "certificate": certificate }))
}

fn cmd_graph(problem: &Path, dot_prefix: Option<&Path>) -> CmdResult {
    let prob = load_problem(problem)?;
    let mut out = serde_json::Map::new();
    for unipolar in [false, true] {
        let g = build_graph(prob.num_levels(), prob.pulse_number, unipolar)?;
        let name = if unipolar { "unipolar" } else { "multipolar" };
        let dot = g.to_dot();
        if let Some(prefix) = dot_prefix {
            let mut file = prefix.as_os_str().to_owned();
            file.push(format!("-{name}.dot"));
            write(Path::new(&file), &dot)?;
        }
        out.insert(
            name.to_string(),
            json!({
                "counts": g.counts(),
                "adjacency": g.adjacency(),
                "dot": dot,
            }),
        );
    }
    Ok(Value::Object(out))
}
