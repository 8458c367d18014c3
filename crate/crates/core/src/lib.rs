//! Synthesis of quarter-and-half-wave optimal pulse patterns (OPPs) for
//! multilevel converters, with certified lower bounds on load-current
//! distortion.
//!
//! The pipeline is:
//!
//! 1. [`pattern`] evaluates switching sequences in closed form (Fourier
//!    coefficients, current energy, quality metric `Q`, feasibility).
//! 2. [`graph`] builds the mode transition graph of the equivalent hybrid
//!    system.
//! 3. [`relaxation`] assembles the occupation-measure linear program over that
//!    graph, truncated to moments of degree `2 * beta`.
//! 4. [`sdp`] turns the truncation into a semidefinite program, solves it with
//!    a built-in interior-point method (or exports it in SDPA format) and
//!    converts the optimal value into a lower bound on `Q`.
//! 5. [`recovery`] reads occupation masses off the solution, recovers a
//!    switching sequence and refines it locally.
//!
//! [`synth`] chains these steps for a single instance.
//!
//! [`oracle`] is an independent ground-truth engine (trajectory simulation,
//! quadrature, brute-force search) used to test all of the above.
//!
//! ```
//! use oppsyn::pattern::{quality_metric, ConverterProblem, SwitchingSequence};
//!
//! let prob = ConverterProblem::reference_five_level(1, 0.6);
//! let alpha = (0.6 * std::f64::consts::PI / 2.0).acos();
//! let seq = SwitchingSequence::new(vec![alpha], vec![3, 4]);
//! assert!(quality_metric(&seq, &prob).unwrap() > 0.0);
//! ```

pub mod error;
pub mod graph;
pub mod oracle;
pub mod pattern;
pub mod recovery;
pub mod relaxation;
pub mod sdp;
pub mod synth;

pub use error::{Error, Result};
pub use graph::{build_graph, ModeId, TransitionGraph};
pub use pattern::{
    check_feasibility, ConverterProblem, HarmonicBound, ObjectiveMode, PatternReport, Ratings,
    SwitchingSequence,
};
pub use relaxation::{assemble, MomentRelaxation};
pub use sdp::{
    bound_to_q, compile, solve, ConicProblem, ConicSolution, SolveStatus, SolverOptions,
};
