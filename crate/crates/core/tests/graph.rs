//! Transition graph structure on small cases enumerated by hand.

use oppsyn::build_graph;
use oppsyn::graph::path_levels;
use oppsyn::ModeId;

#[test]
fn three_levels_two_switches() {
    let g = build_graph(3, 2, false).unwrap();
    let mut vertices = g.vertices.clone();
    vertices.sort();
    let mut expect = vec![
        ModeId::new(2, 0),
        ModeId::new(1, 1),
        ModeId::new(3, 1),
        ModeId::new(2, 2),
    ];
    expect.sort();
    assert_eq!(vertices, expect);
    let c = g.counts();
    assert_eq!((c.vertices, c.edges), (4, 4));
    let mut paths: Vec<Vec<usize>> = g
        .enumerate_paths(10)
        .unwrap()
        .iter()
        .map(|p| path_levels(p))
        .collect();
    paths.sort();
    assert_eq!(paths, vec![vec![2, 1, 2], vec![2, 3, 2]]);

    let u = build_graph(3, 2, true).unwrap();
    let c = u.counts();
    assert_eq!((c.vertices, c.edges), (3, 2));
    assert_eq!(u.enumerate_paths(10).unwrap().len(), 1);
}

#[test]
fn every_vertex_is_on_a_path() {
    for n in [3, 5, 7] {
        for d in 1..=6 {
            for unipolar in [false, true] {
                let g = build_graph(n, d, unipolar).unwrap();
                let paths = g.enumerate_paths(1_000_000).unwrap();
                let mut seen = std::collections::BTreeSet::new();
                for p in &paths {
                    for (i, level) in path_levels(p).into_iter().enumerate() {
                        seen.insert(ModeId::new(level, i));
                    }
                }
                let all: std::collections::BTreeSet<ModeId> = g.vertices.iter().copied().collect();
                assert_eq!(seen, all, "N={n} d={d} unipolar={unipolar}");
                let c = g.counts();
                assert_eq!(c.edges, c.up_edges + c.down_edges);
                assert_eq!(c.edges, g.edges.len());
                assert!(g
                    .vertices
                    .iter()
                    .filter(|m| m.switches == d)
                    .all(|m| (m.level as i64 - g.center() as i64).abs() <= d as i64));
            }
        }
    }
}
