//! Small hand-built graphs used by tests, docs and the CLI demo.

use crate::graph::{policy_below, AttributeSchema, AttributedGraph, Origin};

fn demo_schema() -> AttributeSchema {
    let a1: Vec<String> = ["0.4", "0.5", "0.6"].iter().map(|s| s.to_string()).collect();
    let a2: Vec<String> = ["0.1", "0.2", "0.3", "0.5", "0.6", "0.7"].iter().map(|s| s.to_string()).collect();
    let policy = policy_below(&a2, "0.2");
    AttributeSchema::new(vec!["A1".into(), "A2".into()], vec![a1, a2], policy).expect("valid demo schema")
}

/// Six vertices, seven edges; `A2 < 0.2` is sensitive, which flags vertex 4.
///
/// Vertices 1 and 4 share `A1 = 0.5` but their neighbors differ
/// (`{0.4, 0.5, 0.5}` against `{0.5, 0.6, 0.4}`).
pub fn demo_graph() -> AttributedGraph {
    let s = demo_schema();
    let rows = [
        (1, "0.5", "0.7"),
        (2, "0.4", "0.3"),
        (3, "0.5", "0.6"),
        (4, "0.5", "0.1"),
        (5, "0.6", "0.5"),
        (6, "0.4", "0.2"),
    ];
    let mut g = AttributedGraph::new(s.clone());
    for (id, a1, a2) in rows {
        let attrs = vec![s.code_of(0, a1).unwrap(), s.code_of(1, a2).unwrap()];
        g.add_vertex(id, attrs, Origin::Original).unwrap();
    }
    for (u, v) in [(1, 2), (1, 3), (1, 4), (2, 3), (4, 5), (4, 6), (5, 6)] {
        g.add_edge(u, v).unwrap();
    }
    g
}

/// [`demo_graph`] plus fake vertex 7 (`A1 = 0.6`) on vertex 1 and fake
/// vertex 8 (`A1 = 0.5`) on vertex 4, which gives 1 and 4 the same
/// neighbor attribute multiset.
pub fn demo_graph_patched() -> AttributedGraph {
    let mut g = demo_graph();
    let s = g.schema().clone();
    let na = s.code_of(1, "0.5").unwrap();
    g.add_vertex(7, vec![s.code_of(0, "0.6").unwrap(), na], Origin::Fake).unwrap();
    g.add_vertex(8, vec![s.code_of(0, "0.5").unwrap(), na], Origin::Fake).unwrap();
    g.add_edge(1, 7).unwrap();
    g.add_edge(4, 8).unwrap();
    g
}
