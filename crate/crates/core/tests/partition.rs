mod common;

use std::collections::BTreeSet;

use ktsafe::anonymize::Params;
use ktsafe::graph::hop_neighborhood;
use ktsafe::partition::*;

#[test]
fn cores_cover_and_balls_are_whole() {
    for seed in 0..8u64 {
        let g = common::random_graph(120, 0.03, 3, seed);
        for (gamma, s, n) in [(30, 2, 1), (25, 3, 2), (50, 4, 1), (500, 2, 1)] {
            let parts = partition_graph(&g, gamma, s, n);
            let mut seen = BTreeSet::new();
            for p in &parts {
                assert!(p.core_ids.len() <= gamma, "core of {} over {gamma}", p.core_ids.len());
                assert!(p.core_ids.is_disjoint(&p.halo_ids));
                for &v in &p.core_ids {
                    assert!(seen.insert(v), "vertex {v} in two cores");
                    let whole = hop_neighborhood(&g, v, n).unwrap();
                    let local = hop_neighborhood(&p.graph, v, n).unwrap();
                    assert_eq!(whole, local, "seed {seed} vertex {v}");
                }
                // the halo holds nothing farther than n hops from the core
                for &h in &p.halo_ids {
                    let near = p.core_ids.iter().any(|&c| hop_neighborhood(&g, c, n).unwrap().contains(h));
                    assert!(near);
                }
            }
            assert_eq!(seen.len(), g.len());
            if g.len() <= gamma {
                assert_eq!(parts.len(), 1);
                assert!(parts[0].halo_ids.is_empty());
            }
        }
    }
}

#[test]
fn cluster_counts() {
    assert_eq!(cluster_count(100, 1000, 4), 1);
    assert_eq!(cluster_count(1000, 1000, 4), 1);
    assert_eq!(cluster_count(1001, 1000, 4), 4);
    assert_eq!(cluster_count(10_000, 1000, 4), 16);
    assert_eq!(cluster_count(10_000, 500, 2), 32);
    assert_eq!(cluster_count(3, 1, 4), 3);
}

#[test]
fn bfs_sample_is_seeded() {
    let g = common::random_graph(100, 0.02, 2, 3);
    let a = bfs_sample(&g, 30, 5);
    assert_eq!(a.len(), 30);
    assert_eq!(a, bfs_sample(&g, 30, 5));
    assert_eq!(bfs_sample(&g, 500, 5).len(), 100);
}

#[test]
fn center_search_never_gets_worse() {
    let g = common::random_graph(150, 0.03, 3, 11);
    let params = Params { k: 2, gamma: 40, s: 2, ..Params::default() };
    let sample = calibrate_cost_sample(&g, 40, &params, 1).unwrap();
    assert_eq!(sample.sample_graph.len(), 40);
    assert!(!sample.per_vertex_kt_cost.is_empty());
    let (parts, trace) = select_partitioning_traced(&g, 40, 2, 1, 8, &sample, 2).unwrap();
    assert_eq!(trace.len(), 8);
    assert!(trace.windows(2).all(|w| w[1] <= w[0]));
    let cost = estimate_partition_cost(&parts, &sample, 1).unwrap();
    assert!((cost - trace[7]).abs() < 1e-9);
    let covered: usize = parts.iter().map(|p| p.core_ids.len()).sum();
    assert_eq!(covered, g.len());
    assert!(parts.iter().all(|p| p.core_ids.len() <= 40));
}

#[test]
fn empty_sample_is_a_calibration_error() {
    let g = common::random_graph(20, 0.1, 2, 0);
    let parts = partition_graph(&g, 5, 2, 1);
    let sample = CostSample {
        sample_graph: g.clone(),
        per_vertex_kt_cost: Default::default(),
        per_border_merge_cost: Default::default(),
        ball_sizes: Default::default(),
    };
    assert!(estimate_partition_cost(&parts, &sample, 1).is_err());
    assert!(select_partitioning(&g, 5, 2, 1, 0, &sample, 0).is_err());
}
