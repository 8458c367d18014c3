//! Moments built from concrete trajectories are feasible points of the
//! assembled and compiled relaxations.

mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use oppsyn::oracle::{liouville_residual, trajectory_moments, JumpPattern};
use oppsyn::pattern::{signal_energy, zero_mean_initial_current, ObjectiveMode};
use oppsyn::relaxation::{assemble_with, AssembleOptions};
use oppsyn::{build_graph, compile};

fn check(seed: u64, beta: usize) -> Result<(), TestCaseError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let num_levels = if seed.is_multiple_of(2) { 3 } else { 5 };
    let d = 1 + (seed / 2 % 4) as usize;
    let bare = common::bare_problem(num_levels, d, !seed.is_multiple_of(3));
    let seq = common::random_sequence(&mut rng, &bare);
    let prob = common::problem_around(&bare, &seq);

    let graph = build_graph(prob.num_levels(), d, prob.unipolar).unwrap();
    let jp = JumpPattern::from_sequence(&seq, &graph).unwrap();
    let i0 = zero_mean_initial_current(&seq, &prob);
    let mm = trajectory_moments(&jp, i0, &prob, beta).unwrap();
    prop_assert!(liouville_residual(&mm, &prob, beta) <= 1e-8);

    let rel = assemble_with(
        &prob,
        beta,
        ObjectiveMode::Current,
        AssembleOptions::default(),
    )
    .unwrap();
    let y = rel.moment_vector(&mm).unwrap();
    let eq = rel.max_equality_residual(&y);
    prop_assert!(eq <= 1e-8, "equality residual {eq:e}");
    let energy = signal_energy(&seq, &prob, i0);
    let objective = rel.objective_value(&y);
    prop_assert!(
        (objective - energy).abs() <= 1e-8,
        "objective {objective} energy {energy}"
    );

    let cp = compile(&rel).unwrap();
    let x = cp.embedding.as_ref().unwrap().reduce(&rel, &y);
    let eq = cp.max_equality_residual(&x);
    prop_assert!(eq <= 1e-8, "compiled equality residual {eq:e}");
    let slack = cp.min_linear_slack(&x);
    prop_assert!(slack >= -1e-8, "linear slack {slack:e}");
    for (block, eig) in cp.psd.iter().zip(cp.block_min_eigenvalues(&x)) {
        prop_assert!(eig >= -1e-7, "block {} min eigenvalue {eig:e}", block.label);
    }
    prop_assert!((cp.objective_value(&x) - energy).abs() <= 1e-8);
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn trajectory_moments_are_feasible(seed in any::<u64>()) {
        check(seed, 2)?;
    }
}

#[test]
fn trajectory_moments_are_feasible_at_beta_three() {
    for seed in 0..6 {
        check(seed, 3).unwrap();
    }
}
