//! Neighborhood edit distance, attribute EMD and the anonymization cost.
//!
//! The edit distance counts vertex and edge insertions, applied to either
//! side, needed to make two balls isomorphic with center mapped to center.
//! It equals `|V1|+|V2|+|E1|+|E2| - 2(|M| + |C|)` for the best mapping `M`
//! between equally labelled vertices that preserves `C` edges. A vertex
//! label is its hop distance plus its quasi-identifier; the sensitive value
//! never takes part.

use std::collections::{BTreeSet, HashMap};

use crate::error::{KtError, Result};
use crate::graph::{attribute_counts, AttributedGraph, Code, NeighborhoodSubgraph, MISSING};

/// Node budget of the search for radius > 1.
pub const GED_NODE_BUDGET: u64 = 1_000_000;

/// Scale applied to the L1 distance between pdfs. 0.5 gives EMD over
/// categorical values; 1.0 would give the plain L1 (Hamming) variant.
pub const EMD_SCALE: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GedResult {
    pub distance: u64,
    /// False when the search ran out of budget and `distance` is only an upper bound.
    pub exact: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct EditDelta {
    pub vertices_added: usize,
    pub edges_added: usize,
}

impl EditDelta {
    pub fn total(&self) -> usize {
        self.vertices_added + self.edges_added
    }
}

/// Outcome of a thresholded edit-distance query.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundedGed {
    /// Exact distance, known to be within the bound.
    Within(u64),
    /// Proven to exceed the bound.
    Exceeds,
    /// Budget exhausted before a decision; carries the best upper bound seen.
    Unknown(u64),
}

/// A ball reduced to what the edit distance needs.
#[derive(Clone, Debug)]
pub struct PreparedBall {
    labels: Vec<u64>,
    adj: Vec<Vec<usize>>,
    edges: usize,
    radius: usize,
}

impl PreparedBall {
    /// `qi_id` maps a quasi-identifier to a small integer, consistently
    /// across every ball that will be compared.
    pub fn new(hn: &NeighborhoodSubgraph, qi_id: &mut impl FnMut(&[Code]) -> u32) -> Self {
        let labels = hn
            .members
            .iter()
            .map(|m| {
                let qi = &m.attrs[..m.attrs.len() - 1];
                ((m.hop as u64) << 32) | qi_id(qi) as u64
            })
            .collect();
        PreparedBall { labels, adj: hn.adj.clone(), edges: hn.edge_count(), radius: hn.radius }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.edges
    }

    fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adj[a].binary_search(&b).is_ok()
    }

    /// Sorted `(label, count)` pairs.
    pub fn label_counts(&self) -> Vec<(u64, u32)> {
        let mut ls = self.labels.clone();
        ls.sort_unstable();
        let mut out: Vec<(u64, u32)> = Vec::new();
        for l in ls {
            match out.last_mut() {
                Some((x, c)) if *x == l => *c += 1,
                _ => out.push((l, 1)),
            }
        }
        out
    }

    /// Within-ball degrees, descending.
    pub fn degree_sequence(&self) -> Vec<u32> {
        let mut d: Vec<u32> = self.adj.iter().map(|n| n.len() as u32).collect();
        d.sort_unstable_by(|a, b| b.cmp(a));
        d
    }
}

/// Interns quasi-identifiers into dense ids.
#[derive(Default, Debug, Clone)]
pub struct QiInterner {
    map: HashMap<Vec<Code>, u32>,
}

impl QiInterner {
    pub fn id(&mut self, qi: &[Code]) -> u32 {
        if let Some(&x) = self.map.get(qi) {
            return x;
        }
        let x = self.map.len() as u32;
        self.map.insert(qi.to_vec(), x);
        x
    }

    pub fn prepare(&mut self, hn: &NeighborhoodSubgraph) -> PreparedBall {
        PreparedBall::new(hn, &mut |q| self.id(q))
    }
}

/// Cheap admissible bound: unmatched labels plus the larger of the edge
/// count gap and half the degree-sequence L1 gap.
pub fn ged_lower_bound(a: &PreparedBall, b: &PreparedBall) -> u64 {
    label_gap(&a.label_counts(), &b.label_counts()) + edge_gap(a, b)
}

pub(crate) fn label_gap(la: &[(u64, u32)], lb: &[(u64, u32)]) -> u64 {
    let (mut i, mut j, mut gap) = (0, 0, 0u64);
    while i < la.len() || j < lb.len() {
        if j == lb.len() || (i < la.len() && la[i].0 < lb[j].0) {
            gap += la[i].1 as u64;
            i += 1;
        } else if i == la.len() || lb[j].0 < la[i].0 {
            gap += lb[j].1 as u64;
            j += 1;
        } else {
            gap += (la[i].1 as i64 - lb[j].1 as i64).unsigned_abs();
            i += 1;
            j += 1;
        }
    }
    gap
}

fn edge_gap(a: &PreparedBall, b: &PreparedBall) -> u64 {
    let da = a.degree_sequence();
    let db = b.degree_sequence();
    degree_gap(&da, &db).max((a.edges as i64 - b.edges as i64).unsigned_abs())
}

pub(crate) fn degree_gap(da: &[u32], db: &[u32]) -> u64 {
    let n = da.len().max(db.len());
    let mut s = 0u64;
    for i in 0..n {
        let x = da.get(i).copied().unwrap_or(0) as i64;
        let y = db.get(i).copied().unwrap_or(0) as i64;
        s += (x - y).unsigned_abs();
    }
    s.div_ceil(2)
}

/// Exact edit distance between two balls of equal radius.
pub fn ged_neighborhood(h1: &NeighborhoodSubgraph, h2: &NeighborhoodSubgraph) -> Result<GedResult> {
    check_radii(h1, h2)?;
    let mut qi = QiInterner::default();
    let a = qi.prepare(h1);
    let b = qi.prepare(h2);
    Ok(ged_prepared(&a, &b))
}

/// Edit distance when it is at most `bound`.
pub fn ged_bounded(h1: &NeighborhoodSubgraph, h2: &NeighborhoodSubgraph, bound: u64) -> Result<BoundedGed> {
    check_radii(h1, h2)?;
    let mut qi = QiInterner::default();
    let a = qi.prepare(h1);
    let b = qi.prepare(h2);
    Ok(ged_prepared_bounded(&a, &b, bound))
}

fn check_radii(h1: &NeighborhoodSubgraph, h2: &NeighborhoodSubgraph) -> Result<()> {
    if h1.radius != h2.radius {
        return Err(KtError::Contract(format!(
            "edit distance needs equal radii, got {} and {}",
            h1.radius, h2.radius
        )));
    }
    Ok(())
}

pub fn ged_prepared(a: &PreparedBall, b: &PreparedBall) -> GedResult {
    let mut s = Search::new(a, b, None);
    s.run();
    GedResult { distance: s.total - 2 * s.best, exact: !s.out_of_budget }
}

/// Bounds `(lower, upper)` on the edit distance from a search capped at
/// `budget` nodes at any radius; equal bounds mean the distance is exact.
pub fn ged_prepared_interval(a: &PreparedBall, b: &PreparedBall, budget: u64) -> (u64, u64) {
    let mut s = Search::new(a, b, None);
    s.budget = Some(budget);
    s.run();
    let hi = s.total - 2 * s.best;
    if s.out_of_budget {
        (ged_lower_bound(a, b).min(hi), hi)
    } else {
        (hi, hi)
    }
}

pub fn ged_prepared_bounded(a: &PreparedBall, b: &PreparedBall, bound: u64) -> BoundedGed {
    if ged_lower_bound(a, b) > bound {
        return BoundedGed::Exceeds;
    }
    let mut s = Search::new(a, b, Some(bound));
    s.run();
    let found = s.best_valid;
    let dist = s.total - 2 * s.best;
    match (found && dist <= bound, s.out_of_budget) {
        (true, false) => BoundedGed::Within(dist),
        (false, false) => BoundedGed::Exceeds,
        (_, true) => BoundedGed::Unknown(dist),
    }
}

/// Depth-first branch and bound over label-preserving partial mappings.
struct Search<'a> {
    a: &'a PreparedBall,
    b: &'a PreparedBall,
    total: u64,
    /// Best score (matched vertices plus preserved edges) found so far.
    best: u64,
    best_valid: bool,
    /// Minimum score worth reaching, from the bound.
    need: u64,
    budget: Option<u64>,
    nodes: u64,
    out_of_budget: bool,
    lab_a: Vec<usize>,
    lab_b: Vec<usize>,
    by_label_b: Vec<Vec<usize>>,
    rem_a: Vec<u32>,
    avail_b: Vec<u32>,
    earlier: Vec<Vec<usize>>,
    e1_rem_after: Vec<u64>,
    map: Vec<Option<usize>>,
    used_b: Vec<bool>,
}

impl<'a> Search<'a> {
    fn new(a: &'a PreparedBall, b: &'a PreparedBall, bound: Option<u64>) -> Self {
        let mut ids: HashMap<u64, usize> = HashMap::new();
        let mut intern = |l: u64| {
            let n = ids.len();
            *ids.entry(l).or_insert(n)
        };
        let lab_a: Vec<usize> = a.labels.iter().map(|&l| intern(l)).collect();
        let lab_b: Vec<usize> = b.labels.iter().map(|&l| intern(l)).collect();
        let nl = ids.len();
        let mut by_label_b = vec![Vec::new(); nl];
        let mut avail_b = vec![0u32; nl];
        for (j, &l) in lab_b.iter().enumerate() {
            by_label_b[l].push(j);
            avail_b[l] += 1;
        }
        let mut rem_a = vec![0u32; nl];
        for &l in &lab_a {
            rem_a[l] += 1;
        }
        let earlier: Vec<Vec<usize>> = a
            .adj
            .iter()
            .enumerate()
            .map(|(i, n)| n.iter().copied().filter(|&p| p < i).collect())
            .collect();
        let mut e1_rem_after = vec![0u64; a.len() + 1];
        let mut decided = 0u64;
        for i in 0..a.len() {
            decided += earlier[i].len() as u64;
            e1_rem_after[i + 1] = a.edges as u64 - decided;
        }
        e1_rem_after[0] = a.edges as u64;
        let total = (a.len() + b.len() + a.edges + b.edges) as u64;
        let need = bound.map_or(0, |bd| total.saturating_sub(bd).div_ceil(2));
        let budget = if a.radius.max(b.radius) > 1 { Some(GED_NODE_BUDGET) } else { None };
        Search {
            a,
            b,
            total,
            best: 0,
            best_valid: false,
            need,
            budget,
            nodes: 0,
            out_of_budget: false,
            lab_a,
            lab_b,
            by_label_b,
            rem_a,
            avail_b,
            earlier,
            e1_rem_after,
            map: vec![None; a.len()],
            used_b: vec![false; b.len()],
        }
    }

    fn run(&mut self) {
        let vb: u64 = self
            .rem_a
            .iter()
            .zip(&self.avail_b)
            .map(|(&x, &y)| x.min(y) as u64)
            .sum();
        let root_ub = vb + (self.a.edges.min(self.b.edges)) as u64;
        if root_ub < self.need {
            return;
        }
        self.dfs(0, 0, 0, vb, 0);
    }

    /// `matched`/`preserved`: vertices mapped and edges kept so far;
    /// `vb`: vertex bound for the rest; `dead_b`: edges of `b` between used
    /// vertices that were not preserved. Returns true to abort the search.
    fn dfs(&mut self, i: usize, matched: u64, preserved: u64, vb: u64, dead_b: u64) -> bool {
        self.nodes += 1;
        if let Some(bud) = self.budget {
            if self.nodes > bud {
                self.out_of_budget = true;
                return true;
            }
        }
        let score = matched + preserved;
        if i == self.a.len() {
            if !self.best_valid || score > self.best {
                self.best = score;
                self.best_valid = true;
            }
            return score >= self.cap();
        }
        let l = self.lab_a[i];
        let mut options: Vec<(u64, usize)> = Vec::new();
        for &j in &self.by_label_b[l] {
            if self.used_b[j] {
                continue;
            }
            let mut gain = 0u64;
            for &p in &self.earlier[i] {
                if let Some(q) = self.map[p] {
                    if self.b.has_edge(j, q) {
                        gain += 1;
                    }
                }
            }
            options.push((gain, j));
        }
        options.sort_by(|x, y| y.0.cmp(&x.0).then(x.1.cmp(&y.1)));
        let rem_edges_after = self.e1_rem_after[i + 1];
        for (gain, j) in options {
            let used_nbrs = self.b.adj[j].iter().filter(|&&q| self.used_b[q]).count() as u64;
            let dead2 = dead_b + used_nbrs - gain;
            let live_b = self.b.edges as u64 - (preserved + gain) - dead2;
            let ub = score + 1 + gain + (vb - 1) + rem_edges_after.min(live_b);
            if !self.worth(ub) {
                continue;
            }
            self.assign(i, Some(j));
            let stop = self.dfs(i + 1, matched + 1, preserved + gain, vb - 1, dead2);
            self.unassign(i, Some(j));
            if stop {
                return true;
            }
        }
        // Leave vertex i unmatched.
        let vb2 = if self.rem_a[l] <= self.avail_b[l] { vb - 1 } else { vb };
        let live_b = self.b.edges as u64 - preserved - dead_b;
        let ub = score + vb2 + rem_edges_after.min(live_b);
        if self.worth(ub) {
            self.rem_a[l] -= 1;
            let stop = self.dfs(i + 1, matched, preserved, vb2, dead_b);
            self.rem_a[l] += 1;
            if stop {
                return true;
            }
        }
        false
    }

    fn worth(&self, ub: u64) -> bool {
        ub >= self.need && (!self.best_valid || ub > self.best)
    }

    /// Largest score any mapping could reach.
    fn cap(&self) -> u64 {
        (self.a.len().min(self.b.len()) + self.a.edges.min(self.b.edges)) as u64
    }

    fn assign(&mut self, i: usize, j: Option<usize>) {
        let l = self.lab_a[i];
        self.rem_a[l] -= 1;
        if let Some(j) = j {
            self.used_b[j] = true;
            self.avail_b[self.lab_b[j]] -= 1;
        }
        self.map[i] = j;
    }

    fn unassign(&mut self, i: usize, j: Option<usize>) {
        let l = self.lab_a[i];
        self.rem_a[l] += 1;
        if let Some(j) = j {
            self.used_b[j] = false;
            self.avail_b[self.lab_b[j]] += 1;
        }
        self.map[i] = None;
    }
}

/// EMD between the attribute-`j` distributions of two balls.
pub fn emd_attribute_distance(h1: &NeighborhoodSubgraph, h2: &NeighborhoodSubgraph, j: usize) -> Result<f64> {
    let c1 = attribute_counts(h1, j)?;
    let c2 = attribute_counts(h2, j)?;
    let p1: Vec<(Code, usize)> = c1.into_iter().collect();
    let p2: Vec<(Code, usize)> = c2.into_iter().collect();
    Ok(emd_counts(&p1, &p2))
}

/// EMD over two sorted `(code, count)` histograms. An empty histogram is
/// at distance 0 from another empty one and 1 from anything else.
pub fn emd_counts(p1: &[(Code, usize)], p2: &[(Code, usize)]) -> f64 {
    let n1: usize = p1.iter().map(|x| x.1).sum();
    let n2: usize = p2.iter().map(|x| x.1).sum();
    match (n1, n2) {
        (0, 0) => return 0.0,
        (0, _) | (_, 0) => return 1.0,
        _ => {}
    }
    let (f1, f2) = (n1 as f64, n2 as f64);
    let (mut i, mut j, mut s) = (0, 0, 0.0f64);
    while i < p1.len() || j < p2.len() {
        if j == p2.len() || (i < p1.len() && p1[i].0 < p2[j].0) {
            s += p1[i].1 as f64 / f1;
            i += 1;
        } else if i == p1.len() || p2[j].0 < p1[i].0 {
            s += p2[j].1 as f64 / f2;
            j += 1;
        } else {
            s += (p1[i].1 as f64 / f1 - p2[j].1 as f64 / f2).abs();
            i += 1;
            j += 1;
        }
    }
    EMD_SCALE * s
}

/// EMD between two explicit pdfs keyed by code.
pub fn emd_pdfs(p1: &std::collections::BTreeMap<Code, f64>, p2: &std::collections::BTreeMap<Code, f64>) -> f64 {
    let keys: BTreeSet<Code> = p1.keys().chain(p2.keys()).copied().collect();
    EMD_SCALE
        * keys
            .into_iter()
            .filter(|&k| k != MISSING)
            .map(|k| (p1.get(&k).copied().unwrap_or(0.0) - p2.get(&k).copied().unwrap_or(0.0)).abs())
            .sum::<f64>()
}

/// Size of the symmetric difference of vertex ids plus that of edges.
pub fn anonymization_cost(g: &AttributedGraph, g_prime: &AttributedGraph) -> usize {
    let d1 = edit_delta(g, g_prime);
    let d2 = edit_delta(g_prime, g);
    d1.total() + d2.total()
}

/// What `to` has that `from` lacks.
pub fn edit_delta(from: &AttributedGraph, to: &AttributedGraph) -> EditDelta {
    let vertices_added = to.ids().filter(|&id| !from.contains(id)).count();
    let edges_added = to.edges().filter(|&(u, v)| !from.has_edge(u, v)).count();
    EditDelta { vertices_added, edges_added }
}

/// `|V(h1)| - |V(h2)|`.
pub fn neighborhood_size_diff(h1: &NeighborhoodSubgraph, h2: &NeighborhoodSubgraph) -> i64 {
    h1.len() as i64 - h2.len() as i64
}
