//! SDPA export of compiled relaxations reads back as the same problem.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use oppsyn::pattern::ConverterProblem;
use oppsyn::relaxation::{assemble_with, AssembleOptions, ExcessHarmonics};
use oppsyn::sdp::sdpa::{export_sdpa, parse_problem, read_problem, to_sdpa_string};
use oppsyn::{compile, ConicProblem};

fn compiled(d: usize, m: f64, beta: usize) -> ConicProblem {
    let prob = ConverterProblem::reference_five_level(d, m)
        .normalized()
        .unwrap();
    let opts = AssembleOptions {
        excess_harmonics: ExcessHarmonics::Drop,
        ..Default::default()
    };
    compile(&assemble_with(&prob, beta, prob.objective, opts).unwrap()).unwrap()
}

fn equality_values(cp: &ConicProblem, x: &[f64]) -> Vec<f64> {
    cp.equalities
        .iter()
        .map(|r| r.coeffs.iter().map(|&(k, c)| c * x[k]).sum::<f64>() - r.rhs)
        .collect()
}

fn linear_values(cp: &ConicProblem, x: &[f64]) -> Vec<f64> {
    cp.linear
        .iter()
        .map(|r| r.constant + r.coeffs.iter().map(|&(k, c)| c * x[k]).sum::<f64>())
        .collect()
}

fn assert_same_problem(a: &ConicProblem, b: &ConicProblem) {
    assert_eq!(a.num_vars, b.num_vars);
    assert_eq!(a.equalities.len(), b.equalities.len());
    assert_eq!(a.linear.len(), b.linear.len());
    assert_eq!(a.psd.len(), b.psd.len());
    let close = |u: f64, v: f64| (u - v).abs() <= 1e-12 * (1.0 + u.abs());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..3 {
        let x: Vec<f64> = (0..a.num_vars).map(|_| rng.gen_range(-1.0..1.0)).collect();
        assert!(close(a.objective_value(&x), b.objective_value(&x)));
        for (u, v) in equality_values(a, &x)
            .into_iter()
            .zip(equality_values(b, &x))
        {
            assert!(close(u, v), "equality {u} vs {v}");
        }
        for (u, v) in linear_values(a, &x).into_iter().zip(linear_values(b, &x)) {
            assert!(close(u, v), "inequality {u} vs {v}");
        }
        for k in 0..a.psd.len() {
            let diff = (a.block_matrix(k, &x) - b.block_matrix(k, &x)).amax();
            assert!(diff <= 1e-12, "block {k} differs by {diff:e}");
        }
    }
}

#[test]
fn relaxations_round_trip_through_text() {
    for (d, m, beta) in [(1, 0.6, 1), (2, 0.5, 2), (3, 0.8, 2), (4, 0.7, 3)] {
        let cp = compiled(d, m, beta);
        let back = parse_problem(&to_sdpa_string(&cp)).unwrap();
        assert_same_problem(&cp, &back);
    }
}

#[test]
fn relaxations_round_trip_through_files() {
    let cp = compiled(8, 0.9, 2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d8.dat-s");
    export_sdpa(&cp, &path).unwrap();
    let back = read_problem(&path).unwrap();
    back.validate().unwrap();
    assert_same_problem(&cp, &back);
}
