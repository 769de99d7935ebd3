//! Graph utility measures: degree distribution, sampled shortest-path
//! lengths, per-vertex transitivity and the largest component.

use std::collections::{BTreeMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KtError, Result};
use crate::graph::AttributedGraph;
use crate::verify::{verify_kt_safe_graph, Thresholds};

/// Draws per sampled pair before it is dropped as unreachable.
pub const PAIR_RETRIES: usize = 10;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub std_dev: f64,
}

impl Summary {
    pub fn of(xs: impl IntoIterator<Item = f64>) -> Self {
        let xs: Vec<f64> = xs.into_iter().collect();
        if xs.is_empty() {
            return Summary::default();
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Summary { count: xs.len(), mean, std_dev: var.sqrt() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UtilityReport {
    pub vertices: usize,
    pub edges: usize,
    pub degree_histogram: BTreeMap<usize, usize>,
    pub degree: Summary,
    pub spl_samples: Vec<u32>,
    pub spl: Summary,
    /// Sampled pairs given up after [`PAIR_RETRIES`] unreachable draws.
    pub spl_dropped: usize,
    /// Transitivity bin (`floor(10 c)`, 10 holds exactly 1.0) to vertex count.
    pub clustering_histogram: BTreeMap<usize, usize>,
    pub clustering: Summary,
    pub largest_component_size: usize,
    pub kt_safe_fraction: Option<f64>,
}

/// Component label of every position plus component sizes.
pub fn component_labels(g: &AttributedGraph) -> (Vec<usize>, Vec<usize>) {
    let mut label = vec![usize::MAX; g.len()];
    let mut sizes = Vec::new();
    for s in 0..g.len() {
        if label[s] != usize::MAX {
            continue;
        }
        let c = sizes.len();
        label[s] = c;
        let mut size = 0;
        let mut q = VecDeque::from([s]);
        while let Some(u) = q.pop_front() {
            size += 1;
            for &w in g.adj_idx(u) {
                if label[w] == usize::MAX {
                    label[w] = c;
                    q.push_back(w);
                }
            }
        }
        sizes.push(size);
    }
    (label, sizes)
}

fn hops_between(g: &AttributedGraph, a: usize, b: usize, dist: &mut [u32], touched: &mut Vec<usize>) -> Option<u32> {
    if a == b {
        return Some(0);
    }
    for &x in touched.iter() {
        dist[x] = u32::MAX;
    }
    touched.clear();
    dist[a] = 0;
    touched.push(a);
    let mut q = VecDeque::from([a]);
    while let Some(u) = q.pop_front() {
        for &w in g.adj_idx(u) {
            if dist[w] == u32::MAX {
                dist[w] = dist[u] + 1;
                touched.push(w);
                if w == b {
                    return Some(dist[w]);
                }
                q.push_back(w);
            }
        }
    }
    None
}

/// Closed-wedge fraction around the vertex at `pos`; 0 below degree 2.
pub fn transitivity(g: &AttributedGraph, pos: usize) -> f64 {
    let ns = g.adj_idx(pos);
    let d = ns.len();
    if d < 2 {
        return 0.0;
    }
    let mut closed = 0usize;
    for (i, &a) in ns.iter().enumerate() {
        let na = g.adj_idx(a);
        closed += ns[i + 1..].iter().filter(|b| na.binary_search(b).is_ok()).count();
    }
    closed as f64 / (d * (d - 1) / 2) as f64
}

/// Utility measures of one graph. `pair_count` vertex pairs are drawn for
/// shortest paths; a pair that lands in two components is redrawn.
pub fn graph_utility(g: &AttributedGraph, pair_count: usize, seed: u64) -> Result<UtilityReport> {
    if pair_count < 1 {
        return Err(KtError::Contract("pair_count must be at least 1".into()));
    }
    let mut r = UtilityReport { vertices: g.len(), edges: g.edge_count(), ..Default::default() };
    let degrees: Vec<usize> = (0..g.len()).map(|i| g.adj_idx(i).len()).collect();
    for &d in &degrees {
        *r.degree_histogram.entry(d).or_default() += 1;
    }
    r.degree = Summary::of(degrees.iter().map(|&d| d as f64));

    let tr: Vec<f64> = (0..g.len()).map(|i| transitivity(g, i)).collect();
    for &c in &tr {
        *r.clustering_histogram.entry(((c * 10.0 + 1e-9).floor() as usize).min(10)).or_default() += 1;
    }
    r.clustering = Summary::of(tr);

    let (label, sizes) = component_labels(g);
    r.largest_component_size = sizes.iter().copied().max().unwrap_or(0);
    if g.len() >= 2 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dist = vec![u32::MAX; g.len()];
        let mut touched = Vec::new();
        for _ in 0..pair_count {
            let mut got = None;
            for _ in 0..PAIR_RETRIES {
                let a = rng.random_range(0..g.len());
                let b = rng.random_range(0..g.len() - 1);
                let b = if b >= a { b + 1 } else { b };
                if label[a] == label[b] {
                    got = hops_between(g, a, b, &mut dist, &mut touched);
                    break;
                }
            }
            match got {
                Some(h) => r.spl_samples.push(h),
                None => r.spl_dropped += 1,
            }
        }
    } else {
        r.spl_dropped = pair_count;
    }
    r.spl = Summary::of(r.spl_samples.iter().map(|&x| x as f64));
    Ok(r)
}

/// Reports for the original and the anonymized graph under the same seed.
pub fn utility_report(
    original: &AttributedGraph,
    anonymized: &AttributedGraph,
    pair_count: usize,
    seed: u64,
) -> Result<(UtilityReport, UtilityReport)> {
    Ok((graph_utility(original, pair_count, seed)?, graph_utility(anonymized, pair_count, seed)?))
}

/// Fraction of vertices that pass the verifier.
pub fn kt_safe_fraction(g: &AttributedGraph, th: &Thresholds) -> Result<f64> {
    Ok(verify_kt_safe_graph(g, th)?.safe_fraction())
}
