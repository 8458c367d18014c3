//! Occupancies of a known pattern recover that pattern.

mod common;

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use oppsyn::oracle::{trajectory_moments, JumpPattern};
use oppsyn::pattern::zero_mean_initial_current;
use oppsyn::recovery::{recover_sequence, OccupancyTable};
use oppsyn::{build_graph, ModeId};

fn segment_lengths(angles: &[f64]) -> Vec<f64> {
    let mut ext = vec![0.0];
    ext.extend_from_slice(angles);
    ext.push(FRAC_PI_2);
    ext.windows(2).map(|w| w[1] - w[0]).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn masses_of_a_path_recover_it(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let num_levels = if seed % 2 == 0 { 3 } else { 5 };
        let d = 1 + (seed / 2 % 10) as usize;
        let prob = common::bare_problem(num_levels, d, seed % 3 != 0);
        let seq = common::random_sequence(&mut rng, &prob);
        let graph = build_graph(prob.num_levels(), d, prob.unipolar).unwrap();

        // every mode of the graph gets an entry, zero off the path
        let mut masses: BTreeMap<ModeId, f64> = graph.vertices.iter().map(|&m| (m, 0.0)).collect();
        for (i, (len, &n)) in segment_lengths(&seq.angles).iter().zip(&seq.level_indices).enumerate() {
            masses.insert(ModeId::new(n, i), *len);
        }
        let table = OccupancyTable::from_masses(d, masses);
        let rec = recover_sequence(&table, &prob).unwrap();
        prop_assert_eq!(&rec.level_indices, &seq.level_indices);
        for (a, b) in rec.angles.iter().zip(&seq.angles) {
            prop_assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
        }
    }
}

#[test]
fn trajectory_occupancies_recover_the_pattern() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for d in 1..=6 {
        let prob = common::bare_problem(5, d, true);
        let seq = common::random_sequence(&mut rng, &prob);
        let graph = build_graph(5, d, true).unwrap();
        let jp = JumpPattern::from_sequence(&seq, &graph).unwrap();
        let i0 = zero_mean_initial_current(&seq, &prob);
        let mm = trajectory_moments(&jp, i0, &prob, 1).unwrap();
        let rec = recover_sequence(&OccupancyTable::from_measure_moments(&mm), &prob).unwrap();
        assert_eq!(rec.level_indices, seq.level_indices);
        for (a, b) in rec.angles.iter().zip(&seq.angles) {
            assert!((a - b).abs() <= 1e-10, "d={d}: {a} vs {b}");
        }
    }
}
