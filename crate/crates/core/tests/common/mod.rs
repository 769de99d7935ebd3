//! Brute-force oracles and random fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use ktsafe::graph::{AttributeSchema, AttributedGraph, Code, NeighborhoodSubgraph, Origin, SensitivityPolicy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One quasi-identifier with `qi_codes` values plus a binary sensitive attribute
/// (code 0 sensitive).
pub fn random_graph(n: usize, p: f64, qi_codes: usize, seed: u64) -> AttributedGraph {
    let qi: Vec<String> = (0..qi_codes).map(|c| format!("q{c}")).collect();
    let sa = vec!["s".to_string(), "n".to_string()];
    let policy = SensitivityPolicy::Values([0 as Code].into_iter().collect());
    let schema = AttributeSchema::new(vec!["Q".into(), "S".into()], vec![qi, sa], policy).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = AttributedGraph::new(schema);
    for id in 1..=n as u64 {
        let attrs = vec![rng.random_range(0..qi_codes) as Code, rng.random_range(0..2) as Code];
        g.add_vertex(id, attrs, Origin::Original).unwrap();
    }
    for u in 1..=n as u64 {
        for v in u + 1..=n as u64 {
            if rng.random_bool(p) {
                g.add_edge(u, v).unwrap();
            }
        }
    }
    g
}

type Label = (usize, Vec<Code>);

fn labels(h: &NeighborhoodSubgraph) -> Vec<Label> {
    h.members
        .iter()
        .map(|m| (m.hop, m.attrs[..m.attrs.len() - 1].to_vec()))
        .collect()
}

fn edge_set(h: &NeighborhoodSubgraph) -> Vec<(usize, usize)> {
    let mut e = Vec::new();
    for (a, ns) in h.adj.iter().enumerate() {
        for &b in ns {
            if a < b {
                e.push((a, b));
            }
        }
    }
    e
}

/// Edit distance by enumerating every partial, label-preserving injection.
pub fn ged_by_mapping(h1: &NeighborhoodSubgraph, h2: &NeighborhoodSubgraph) -> u64 {
    let (l1, l2) = (labels(h1), labels(h2));
    let (e1, e2) = (edge_set(h1), edge_set(h2));
    let mut has2 = vec![vec![false; l2.len()]; l2.len()];
    for &(a, b) in &e2 {
        has2[a][b] = true;
        has2[b][a] = true;
    }
    let mut map: Vec<Option<usize>> = vec![None; l1.len()];
    let mut used = vec![false; l2.len()];
    let mut best = 0usize;
    fn rec(
        i: usize,
        l1: &[Label],
        l2: &[Label],
        e1: &[(usize, usize)],
        has2: &[Vec<bool>],
        map: &mut Vec<Option<usize>>,
        used: &mut Vec<bool>,
        best: &mut usize,
    ) {
        if i == l1.len() {
            let m = map.iter().flatten().count();
            let c = e1
                .iter()
                .filter(|&&(a, b)| matches!((map[a], map[b]), (Some(x), Some(y)) if has2[x][y]))
                .count();
            *best = (*best).max(m + c);
            return;
        }
        map[i] = None;
        rec(i + 1, l1, l2, e1, has2, map, used, best);
        for j in 0..l2.len() {
            if !used[j] && l1[i] == l2[j] {
                used[j] = true;
                map[i] = Some(j);
                rec(i + 1, l1, l2, e1, has2, map, used, best);
                used[j] = false;
                map[i] = None;
            }
        }
    }
    rec(0, &l1, &l2, &e1, &has2, &mut map, &mut used, &mut best);
    (l1.len() + l2.len() + e1.len() + e2.len() - 2 * best) as u64
}

/// Edit distance by enumerating insertion sequences of total length at most
/// `max`: grow `h1` into a supergraph `H`, then check that `h2` embeds into
/// `H` so the remaining insertions on the `h2` side close the gap.
/// Returns `None` when no sequence of length `max` or less exists.
pub fn ged_by_edits(h1: &NeighborhoodSubgraph, h2: &NeighborhoodSubgraph, max: usize) -> Option<u64> {
    let l1 = labels(h1);
    let l2 = labels(h2);
    let e1 = edge_set(h1);
    let e2 = edge_set(h2);
    let mut pool: Vec<Label> = l2.clone();
    pool.sort();
    pool.dedup();
    let mut best: Option<usize> = None;
    for nv in 0..=max {
        let mut combos = Vec::new();
        multisets(&pool, nv, 0, &mut Vec::new(), &mut combos);
        for extra in combos {
            let mut lh = l1.clone();
            lh.extend(extra.iter().cloned());
            let n = lh.len();
            if n < l2.len() {
                continue;
            }
            let mut adj = vec![vec![false; n]; n];
            for &(a, b) in &e1 {
                adj[a][b] = true;
                adj[b][a] = true;
            }
            let mut free = Vec::new();
            for a in 0..n {
                for b in a + 1..n {
                    if !adj[a][b] {
                        free.push((a, b));
                    }
                }
            }
            for ne in 0..=max.saturating_sub(nv) {
                let vh = n;
                let eh = e1.len() + ne;
                if eh < e2.len() {
                    continue;
                }
                let total = nv + ne + (vh - l2.len()) + (eh - e2.len());
                if total > max || best.is_some_and(|b| total >= b) {
                    continue;
                }
                let mut pick = Vec::new();
                if edge_subsets(&free, ne, 0, &mut pick, &mut adj, &mut |adj| embeds(&l2, &e2, &lh, adj)) {
                    best = Some(total);
                }
            }
        }
    }
    best.map(|b| b as u64)
}

fn multisets(pool: &[Label], k: usize, from: usize, cur: &mut Vec<Label>, out: &mut Vec<Vec<Label>>) {
    if k == 0 {
        out.push(cur.clone());
        return;
    }
    for i in from..pool.len() {
        cur.push(pool[i].clone());
        multisets(pool, k - 1, i, cur, out);
        cur.pop();
    }
}

fn edge_subsets(
    free: &[(usize, usize)],
    k: usize,
    from: usize,
    pick: &mut Vec<usize>,
    adj: &mut Vec<Vec<bool>>,
    check: &mut impl FnMut(&Vec<Vec<bool>>) -> bool,
) -> bool {
    if k == 0 {
        return check(adj);
    }
    for i in from..free.len() {
        let (a, b) = free[i];
        adj[a][b] = true;
        adj[b][a] = true;
        pick.push(i);
        let hit = edge_subsets(free, k - 1, i + 1, pick, adj, check);
        pick.pop();
        adj[a][b] = false;
        adj[b][a] = false;
        if hit {
            return true;
        }
    }
    false
}

fn embeds(l2: &[Label], e2: &[(usize, usize)], lh: &[Label], adj: &[Vec<bool>]) -> bool {
    fn rec(i: usize, l2: &[Label], e2: &[(usize, usize)], lh: &[Label], adj: &[Vec<bool>], m: &mut Vec<usize>, used: &mut Vec<bool>) -> bool {
        if i == l2.len() {
            return true;
        }
        for x in 0..lh.len() {
            if used[x] || lh[x] != l2[i] {
                continue;
            }
            let ok = e2.iter().all(|&(a, b)| {
                let other = if a == i { b } else if b == i { a } else { return true };
                other > i || adj[m[other]][x]
            });
            if ok {
                used[x] = true;
                m.push(x);
                if rec(i + 1, l2, e2, lh, adj, m, used) {
                    return true;
                }
                m.pop();
                used[x] = false;
            }
        }
        false
    }
    rec(0, l2, e2, lh, adj, &mut Vec::new(), &mut vec![false; lh.len()])
}

/// Transport form of the unit-ground-distance EMD: `1 - sum(min(p, q))`.
pub fn emd_by_overlap(a: &[Code], b: &[Code]) -> f64 {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => return 0.0,
        (true, false) | (false, true) => return 1.0,
        _ => {}
    }
    let mut pa: BTreeMap<Code, f64> = BTreeMap::new();
    let mut pb: BTreeMap<Code, f64> = BTreeMap::new();
    for &x in a {
        *pa.entry(x).or_default() += 1.0 / a.len() as f64;
    }
    for &x in b {
        *pb.entry(x).or_default() += 1.0 / b.len() as f64;
    }
    let overlap: f64 = pa.iter().map(|(k, &p)| p.min(pb.get(k).copied().unwrap_or(0.0))).sum();
    1.0 - overlap
}
