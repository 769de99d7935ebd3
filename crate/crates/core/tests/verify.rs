mod common;

use ktsafe::fixtures::{demo_graph, demo_graph_patched};
use ktsafe::graph::{AttributedGraph, Origin};
use ktsafe::verify::{verify_kt_safe_graph, verify_kt_safe_vertex, Exclusion, Thresholds, Witness};

fn th(k: usize, t: f64, epsilon: u64, alpha: f64, n: usize) -> Thresholds {
    Thresholds { k, t, epsilon, alpha, n }
}

#[test]
fn demo_pair_is_unsafe_without_slack() {
    let g = demo_graph();
    let strict = th(2, 0.0, 0, 1.0, 1);
    for v in [1, 4] {
        let r = verify_kt_safe_vertex(&g, v, &strict).unwrap();
        assert!(!r.safe, "vertex {v}");
        assert!(r.witness.iter().any(|w| matches!(w, Witness::TooFewPeers { .. })));
    }
    let r = verify_kt_safe_vertex(&g, 1, &strict).unwrap();
    assert!(r
        .witness
        .iter()
        .any(|w| matches!(w, Witness::Excluded { vertex: 4, reason: Exclusion::Emd { radius: 1, .. } })));
}

#[test]
fn patched_demo_pairs_up() {
    let g = demo_graph_patched();
    let r = verify_kt_safe_vertex(&g, 1, &th(2, 0.0, 2, 0.5, 1)).unwrap();
    assert!(r.safe, "{r:?}");
    assert_eq!(r.protection_size, 2);
    assert_eq!(r.sensitive_fraction, 0.5);
    // one edit short
    let r = verify_kt_safe_vertex(&g, 1, &th(2, 0.0, 1, 0.5, 1)).unwrap();
    assert!(!r.safe);
    // a pair holding the only sensitive vertex fails alpha below one half
    let r = verify_kt_safe_vertex(&g, 4, &th(2, 0.0, 2, 0.4, 1)).unwrap();
    assert!(r.witness.iter().any(|w| matches!(w, Witness::SensitiveFraction { .. })));
}

#[test]
fn k_one_alpha_one_is_trivially_safe() {
    let g = common::random_graph(30, 0.1, 3, 5);
    let v = verify_kt_safe_graph(&g, &th(1, 0.0, 0, 1.0, 2)).unwrap();
    assert!(v.safe);
    assert_eq!(v.safe_fraction(), 1.0);
}

#[test]
fn graph_check_matches_vertex_scans() {
    for seed in 0..12u64 {
        let g = common::random_graph(28, 0.12, 2, seed);
        for (n, eps, t) in [(1, 2, 0.3), (2, 4, 0.5), (1, 0, 1.0)] {
            let thr = th(2, t, eps, 0.6, n);
            let whole = verify_kt_safe_graph(&g, &thr).unwrap();
            let failing = whole.failing_ids();
            for v in g.ids() {
                let one = verify_kt_safe_vertex(&g, v, &thr).unwrap();
                assert_eq!(one.safe, !failing.contains(&v), "seed {seed} vertex {v}");
                if let Some(f) = whole.failures.iter().find(|f| f.vertex == v) {
                    assert_eq!(f.protection_size, one.protection_size);
                }
            }
        }
    }
}

#[test]
fn rejects_bad_thresholds() {
    let g = demo_graph();
    assert!(verify_kt_safe_graph(&g, &th(0, 0.1, 1, 0.5, 1)).is_err());
    assert!(verify_kt_safe_graph(&g, &th(2, 1.5, 1, 0.5, 1)).is_err());
    assert!(verify_kt_safe_graph(&g, &th(2, 0.1, 1, 0.0, 1)).is_err());
    assert!(verify_kt_safe_vertex(&g, 99, &th(2, 0.1, 1, 0.5, 1)).is_err());
}

/// Appends `copies` copies of `g`, each with its own sensitive values.
fn with_copies(g: &AttributedGraph, copies: usize) -> AttributedGraph {
    let mut out = g.clone();
    let d = g.schema().d() - 1;
    for c in 0..copies {
        let mut map = std::collections::HashMap::new();
        for v in g.vertices() {
            let id = out.next_id();
            let mut attrs = v.attrs.clone();
            attrs[d] = ((v.id as usize + c) % 2) as u16;
            out.add_vertex(id, attrs, Origin::Fake).unwrap();
            map.insert(v.id, id);
        }
        for (a, b) in g.edges() {
            out.add_edge(map[&a], map[&b]).unwrap();
        }
    }
    out
}

#[test]
fn copied_components_match_vertex_scans() {
    for seed in 0..4u64 {
        let g = with_copies(&common::random_graph(14, 0.2, 2, 50 + seed), 3);
        for (n, thr) in [(1, th(3, 0.4, 1, 0.5, 1)), (2, th(4, 0.5, 3, 0.7, 2))] {
            let whole = verify_kt_safe_graph(&g, &thr).unwrap();
            for v in g.ids() {
                let one = verify_kt_safe_vertex(&g, v, &thr).unwrap();
                let f = whole.failures.iter().find(|f| f.vertex == v);
                assert_eq!(one.safe, f.is_none(), "seed {seed} n {n} vertex {v}");
                if let Some(f) = f {
                    assert_eq!((f.protection_size, f.sensitive_fraction), (one.protection_size, one.sensitive_fraction));
                }
            }
        }
    }
}
