mod common;

use std::collections::BTreeSet;

use ktsafe::anonymize::{anonymize, sensitive_top_up, Edit, IndexMode, Params, PartitionStrategy};
use ktsafe::fixtures::demo_graph;
use ktsafe::graph::{AttributedGraph, Origin};
use ktsafe::verify::verify_kt_safe_graph;
use proptest::prelude::*;

fn small(k: usize, n: usize, gamma: usize) -> Params {
    Params {
        k,
        t: 0.4,
        epsilon: 3,
        alpha: 0.6,
        n,
        gamma,
        s: 2,
        seed: 7,
        partition: PartitionStrategy::Recursive,
        index: IndexMode::Scan,
        pivot_count: 3,
        pivot_iter: 10,
        pivot_sample: 40,
        workers: 0,
    }
}

/// Insertions only: every input vertex, attribute and edge survives, and no
/// edge is added between two input vertices.
fn assert_insert_only(input: &AttributedGraph, out: &AttributedGraph) {
    for v in input.vertices() {
        let o = out.vertex(v.id).expect("input vertex kept");
        assert_eq!(o.attrs, v.attrs);
        let a: BTreeSet<_> = input.neighbors(v.id).unwrap().into_iter().collect();
        let b: BTreeSet<_> = out.neighbors(v.id).unwrap().into_iter().filter(|w| input.contains(*w)).collect();
        assert_eq!(a, b, "vertex {}", v.id);
    }
    out.check_invariants().unwrap();
}

#[test]
fn demo_graph_becomes_safe() {
    let g = demo_graph();
    let p = Params { t: 0.5, alpha: 0.5, ..small(2, 1, 100) };
    let out = anonymize(&g, &p).unwrap();
    assert!(verify_kt_safe_graph(&out.graph, &p.thresholds()).unwrap().safe);
    assert_insert_only(&g, &out.graph);
    assert_eq!(out.log.replay(&g).unwrap(), out.graph);
}

#[test]
fn random_graphs_become_safe() {
    for seed in 0..6u64 {
        for n in [1, 2] {
            let g = common::random_graph(60, 0.05, 3, seed);
            let p = small(3, n, 20);
            let out = anonymize(&g, &p).unwrap();
            assert!(out.verdict.safe);
            assert!(verify_kt_safe_graph(&out.graph, &p.thresholds()).unwrap().safe, "seed {seed} n {n}");
            assert_insert_only(&g, &out.graph);
            assert_eq!(out.log.replay(&g).unwrap(), out.graph);
            assert!(out.partition_cores.len() > 1);
            assert_eq!(out.partition_cores.iter().sum::<usize>(), g.len());
        }
    }
}

#[test]
fn index_choice_does_not_change_output() {
    for seed in 0..3u64 {
        let g = common::random_graph(80, 0.04, 2, 100 + seed);
        let base = small(3, 1, 40);
        let scan = anonymize(&g, &base).unwrap();
        for index in [IndexMode::Pivots, IndexMode::KtTree] {
            let other = anonymize(&g, &Params { index, ..base.clone() }).unwrap();
            assert_eq!(other.graph, scan.graph, "seed {seed} {index:?}");
            assert_eq!(other.log, scan.log);
        }
    }
}

#[test]
fn deterministic_across_worker_counts() {
    let g = common::random_graph(90, 0.04, 3, 42);
    let p = Params { partition: PartitionStrategy::CostModel { sample_size: 30, ite: 3 }, ..small(2, 1, 30) };
    let a = anonymize(&g, &Params { workers: 1, ..p.clone() }).unwrap();
    let b = anonymize(&g, &Params { workers: 4, ..p.clone() }).unwrap();
    let c = anonymize(&g, &p).unwrap();
    assert_eq!(a.graph, b.graph);
    assert_eq!(a.graph, c.graph);
    assert_eq!(a.log, c.log);
}

#[test]
fn log_costs_add_up() {
    let g = common::random_graph(50, 0.06, 2, 9);
    let out = anonymize(&g, &small(3, 1, 25)).unwrap();
    let vertices = out.graph.len() - g.len();
    let edges = out.graph.edge_count() - g.edge_count();
    let total: f64 = out.log.kt_cost_by_owner().values().sum();
    assert!((total - (vertices + edges) as f64).abs() < 1e-9);
    let added = out.log.entries.iter().filter(|e| matches!(e.edit, Edit::AddVertex { .. })).count();
    assert_eq!(added, vertices);
    for v in out.graph.vertices() {
        if !g.contains(v.id) {
            assert_ne!(v.origin, Origin::Original);
        }
    }
}

#[test]
fn empty_graph_and_bad_params() {
    let g = AttributedGraph::new(demo_graph().schema().clone());
    let out = anonymize(&g, &Params::default()).unwrap();
    assert!(out.graph.is_empty() && out.log.is_empty());
    let d = demo_graph();
    assert!(anonymize(&d, &Params { k: 0, ..Params::default() }).is_err());
    assert!(anonymize(&d, &Params { alpha: 0.0, ..Params::default() }).is_err());
    assert!(anonymize(&d, &Params { t: -0.1, ..Params::default() }).is_err());
    assert!(anonymize(&d, &Params { s: 1, ..Params::default() }).is_err());
}

proptest! {
    #[test]
    fn top_up_reaches_alpha(n_sens in 0usize..40, size in 1usize..60, alpha in 0.05f64..1.0) {
        let n_sens = n_sens.min(size);
        let x = sensitive_top_up(n_sens, size, alpha);
        prop_assert!(n_sens as f64 / (size + x) as f64 <= alpha + 1e-12);
        if x > 0 {
            prop_assert!(n_sens as f64 / (size + x - 1) as f64 > alpha);
        }
    }

    #[test]
    fn small_random_graphs_are_made_safe(seed in 0u64..10_000, k in 1usize..5, n in 1usize..3) {
        let g = common::random_graph(24, 0.1, 2, seed);
        let p = small(k, n, 10);
        let out = anonymize(&g, &p).unwrap();
        prop_assert!(verify_kt_safe_graph(&out.graph, &p.thresholds()).unwrap().safe);
        prop_assert_eq!(out.log.replay(&g).unwrap(), out.graph);
    }
}
