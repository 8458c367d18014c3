//! Closed-form waveform quantities against quadrature and finite differences.

mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use oppsyn::oracle::{quadrature_energy, quadrature_fourier, quadrature_zero_mean_current};
use oppsyn::pattern::{
    fourier_coefficient, signal_energy, zero_mean_initial_current, ObjectiveMode,
};
use oppsyn::recovery::{fourier_gradient, objective_gradient, objective_value};

fn instance(seed: u64) -> (oppsyn::ConverterProblem, oppsyn::SwitchingSequence) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let num_levels = if seed.is_multiple_of(2) { 3 } else { 5 };
    let d = 1 + (seed / 2 % 8) as usize;
    let prob = common::bare_problem(num_levels, d, !seed.is_multiple_of(3));
    let seq = common::random_sequence(&mut rng, &prob);
    (prob, seq)
}

fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], k: usize, h: f64) -> f64 {
    let mut plus = x.to_vec();
    let mut minus = x.to_vec();
    plus[k] += h;
    minus[k] -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn energy_matches_quadrature(seed in any::<u64>()) {
        let (prob, seq) = instance(seed);
        let i0 = zero_mean_initial_current(&seq, &prob);
        let closed = signal_energy(&seq, &prob, i0);
        let quad = quadrature_energy(&seq, &prob, i0).unwrap();
        prop_assert!((closed - quad).abs() <= 1e-9, "closed {closed} quadrature {quad}");
        let i0_quad = quadrature_zero_mean_current(&seq, &prob).unwrap();
        prop_assert!((i0 - i0_quad).abs() <= 1e-9);
    }

    #[test]
    fn fourier_matches_quadrature(seed in any::<u64>()) {
        let (prob, seq) = instance(seed);
        for ell in [1, 3, 5, 7, 11] {
            let closed = fourier_coefficient(&seq, &prob, ell);
            let quad = quadrature_fourier(&seq, &prob, ell).unwrap();
            prop_assert!((closed - quad).abs() <= 1e-9, "b_{ell}: closed {closed} quadrature {quad}");
        }
    }

    #[test]
    fn gradients_match_finite_differences(seed in any::<u64>()) {
        let (prob, seq) = instance(seed);
        let values = seq.values(&prob);
        let a = &seq.angles;
        let h = 1e-6;
        for mode in [ObjectiveMode::Current, ObjectiveMode::Voltage] {
            let grad = objective_gradient(a, &values, mode);
            let scale = grad.iter().fold(1e-3_f64, |m, g| m.max(g.abs()));
            for k in 0..a.len() {
                let fd = central_difference(|x| objective_value(x, &values, mode), a, k, h);
                prop_assert!((grad[k] - fd).abs() <= 1e-5 * scale, "{mode:?} k={k}: {} vs {fd}", grad[k]);
            }
        }
        for ell in [1, 3, 5] {
            let grad = fourier_gradient(a, &values, ell);
            let scale = grad.iter().fold(1e-3_f64, |m, g| m.max(g.abs()));
            for k in 0..a.len() {
                let fd = central_difference(
                    |x| oppsyn::pattern::fourier_coefficient(&oppsyn::SwitchingSequence::new(x.to_vec(), seq.level_indices.clone()), &prob, ell),
                    a,
                    k,
                    h,
                );
                prop_assert!((grad[k] - fd).abs() <= 1e-5 * scale, "b_{ell} k={k}: {} vs {fd}", grad[k]);
            }
        }
    }
}
