//! Shared helpers for the integration tests.
#![allow(dead_code)]

use std::f64::consts::{FRAC_PI_2, PI};

use rand::seq::SliceRandom;
use rand::Rng;

use oppsyn::graph::{build_graph, path_levels};
use oppsyn::pattern::{
    fourier_coefficient, ConverterProblem, HarmonicBound, ObjectiveMode, SwitchingSequence,
};

pub fn levels(num_levels: usize) -> Vec<f64> {
    match num_levels {
        3 => vec![-1.0, 0.0, 1.0],
        5 => vec![-1.0, -0.5, 0.0, 0.5, 1.0],
        n => panic!("no level set for N = {n}"),
    }
}

/// Problem without harmonic constraints.
pub fn bare_problem(num_levels: usize, d: usize, unipolar: bool) -> ConverterProblem {
    ConverterProblem {
        levels: levels(num_levels),
        pulse_number: d,
        interlock: PI / 100.0,
        harmonics: Vec::new(),
        current_bound: None,
        unipolar,
        modulation_index: None,
        objective: ObjectiveMode::Current,
    }
}

/// Interlock-respecting angles: `alpha^1 >= Theta/2`, gaps `>= Theta`,
/// `alpha^d <= pi/2 - Theta/2`, each with a little room to spare.
pub fn random_angles<R: Rng>(rng: &mut R, d: usize, theta: f64) -> Vec<f64> {
    let spare = 1e-3;
    let free = FRAC_PI_2 - theta - (d as f64 - 1.0) * theta - (d as f64 + 1.0) * spare;
    assert!(free > 0.0, "pulse number {d} does not fit");
    let weights: Vec<f64> = (0..=d).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = weights.iter().sum();
    let mut angles = Vec::with_capacity(d);
    let mut at = theta / 2.0;
    for (k, w) in weights[..d].iter().enumerate() {
        at += spare + free * w / total + if k > 0 { theta } else { 0.0 };
        angles.push(at);
    }
    angles
}

/// A random source-to-terminal path of the transition graph with random
/// interlock-feasible angles.
pub fn random_sequence<R: Rng>(rng: &mut R, prob: &ConverterProblem) -> SwitchingSequence {
    let graph = build_graph(prob.num_levels(), prob.pulse_number, prob.unipolar).unwrap();
    let paths = graph.enumerate_paths(100_000).unwrap();
    let path = paths.choose(rng).unwrap();
    SwitchingSequence::new(
        random_angles(rng, prob.pulse_number, prob.interlock),
        path_levels(path),
    )
}

/// `prob` with `b_1 = M` set to the sequence's own `b_1` and a `b_3` box
/// around its own `b_3`, so that the sequence is feasible.
pub fn problem_around(prob: &ConverterProblem, seq: &SwitchingSequence) -> ConverterProblem {
    let b1 = fourier_coefficient(seq, prob, 1);
    let b3 = fourier_coefficient(seq, prob, 3);
    let mut out = prob.clone();
    out.harmonics = vec![
        HarmonicBound::equality(1, b1),
        HarmonicBound::range(3, b3 - 0.05, b3 + 0.05),
    ];
    out.modulation_index = Some(b1);
    out.normalized().unwrap()
}
