//! Candidate retrieval: exhaustive scan, pivot pruning and the kt-tree.
//!
//! Any two balls of the same radius satisfy the triangle inequality under
//! the edit distance, so `|d(v,p) - d(m,p)| > eps` rules `m` out for `v`
//! whatever the reference ball `p` is. Pivot balls are snapshots taken at
//! construction; distances cached against them stay valid for any vertex
//! whose own ball has not changed since.
//!
//! Pivot distances come from a budgeted search and are kept as
//! `(lower, upper)` bounds, so pruning stays sound when the search stops
//! early.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::RwLock;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::distances::{ged_prepared_bounded, ged_prepared_interval, BoundedGed, PreparedBall, QiInterner};
use crate::error::{KtError, Result};
use crate::graph::{ball_at, hop_neighborhood, AttributedGraph, Code, NeighborhoodSubgraph, VertexId};
use crate::partition::bfs_sample;

/// Default bit-vector width of kt-tree nodes.
pub const DEFAULT_BITS: usize = 64;

/// Search budget for one pivot distance.
pub const PIVOT_GED_BUDGET: u64 = 20_000;

/// Lower and upper bound on an edit distance.
pub type GedBounds = (u64, u64);

/// Reference balls plus a lazily filled distance cache.
#[derive(Debug)]
pub struct PivotSet {
    pub pivots: Vec<VertexId>,
    pub cached_balls: BTreeMap<VertexId, NeighborhoodSubgraph>,
    pub n: usize,
    // (pivot, vertex) -> distance bounds
    cached_dists: RwLock<HashMap<(VertexId, VertexId), GedBounds>>,
}

impl Clone for PivotSet {
    fn clone(&self) -> Self {
        PivotSet {
            pivots: self.pivots.clone(),
            cached_balls: self.cached_balls.clone(),
            n: self.n,
            cached_dists: RwLock::new(self.cached_dists.read().unwrap().clone()),
        }
    }
}

impl PivotSet {
    pub fn new(g: &AttributedGraph, pivots: Vec<VertexId>, n: usize) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut cached_balls = BTreeMap::new();
        for &p in &pivots {
            if !seen.insert(p) {
                return Err(KtError::Contract(format!("pivot {p} listed twice")));
            }
            cached_balls.insert(p, hop_neighborhood(g, p, n)?);
        }
        Ok(PivotSet { pivots, cached_balls, n, cached_dists: RwLock::new(HashMap::new()) })
    }

    /// Distance bounds from pivot `p` to `hn`, computed fresh.
    pub fn distance_to(&self, p: VertexId, hn: &NeighborhoodSubgraph) -> GedBounds {
        let pb = &self.cached_balls[&p];
        let mut qi = QiInterner::default();
        ged_prepared_interval(&qi.prepare(pb), &qi.prepare(hn), PIVOT_GED_BUDGET)
    }

    /// Distance bounds from pivot `p` to the ball of `v` in `g`, memoized.
    pub fn distance(&self, g: &AttributedGraph, p: VertexId, v: VertexId) -> Result<GedBounds> {
        if let Some(&d) = self.cached_dists.read().unwrap().get(&(p, v)) {
            return Ok(d);
        }
        let hn = hop_neighborhood(g, v, self.n)?;
        let d = self.distance_to(p, &hn);
        self.cached_dists.write().unwrap().entry((p, v)).or_insert(d);
        Ok(d)
    }

    pub fn cached(&self, p: VertexId, v: VertexId) -> Option<GedBounds> {
        self.cached_dists.read().unwrap().get(&(p, v)).copied()
    }
}

/// Pivot-gap test: `m` cannot be within `eps` of `v` when the two
/// distances to a common pivot differ by more than `eps`.
pub fn pivot_prunable(d_vp: u64, d_mp: u64, eps: u64) -> bool {
    d_vp.abs_diff(d_mp) > eps
}

/// [`pivot_prunable`] on bounds: true only when it holds for every pair of
/// distances the bounds allow.
pub fn bounds_prunable(v: GedBounds, m: GedBounds, eps: u64) -> bool {
    v.0 > m.1.saturating_add(eps) || m.0 > v.1.saturating_add(eps)
}

/// Hill climbing over pivot sets, maximizing how many ordered sample pairs
/// the pivots prune.
pub fn select_pivots(
    g: &AttributedGraph,
    sample_size: usize,
    iter: usize,
    pivot_count: usize,
    eps: u64,
    n: usize,
    seed: u64,
) -> Result<PivotSet> {
    select_pivots_traced(g, sample_size, iter, pivot_count, eps, n, seed).map(|(p, _)| p)
}

/// [`select_pivots`] plus the best pruned-pair count after each iteration.
pub fn select_pivots_traced(
    g: &AttributedGraph,
    sample_size: usize,
    iter: usize,
    pivot_count: usize,
    eps: u64,
    n: usize,
    seed: u64,
) -> Result<(PivotSet, Vec<usize>)> {
    if pivot_count == 0 || iter == 0 {
        return Err(KtError::Contract("pivot_count and iter must be at least 1".into()));
    }
    if g.is_empty() {
        return Err(KtError::EmptyTree);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample: Vec<VertexId> = bfs_sample(g, sample_size.max(1), rng.random()).into_iter().collect();
    let mut qi = QiInterner::default();
    let prepared: Vec<PreparedBall> = sample
        .iter()
        .map(|&v| qi.prepare(&hop_neighborhood(g, v, n).expect("sampled vertex exists")))
        .collect();
    let count = pivot_count.min(g.len());
    let ns = sample.len();
    let mut columns: HashMap<usize, Vec<GedBounds>> = HashMap::new();
    let mut column = |p: usize, qi: &mut QiInterner| -> Vec<GedBounds> {
        columns
            .entry(p)
            .or_insert_with(|| {
                let pb = qi.prepare(&ball_at(g, p, n));
                prepared.iter().map(|b| ged_prepared_interval(&pb, b, PIVOT_GED_BUDGET)).collect()
            })
            .clone()
    };
    // per ordered pair, how many current pivots prune it
    let add = |hits: &mut [u8], col: &[GedBounds], sign: i8| {
        for a in 0..ns {
            for b in 0..ns {
                if a != b && bounds_prunable(col[a], col[b], eps) {
                    let h = &mut hits[a * ns + b];
                    *h = if sign > 0 { *h + 1 } else { *h - 1 };
                }
            }
        }
    };
    let mut best: Vec<usize> = sample_indices(&mut rng, g.len(), count).into_vec();
    let mut hits = vec![0u8; ns * ns];
    for &p in &best {
        add(&mut hits, &column(p, &mut qi), 1);
    }
    let mut best_count = hits.iter().filter(|&&h| h > 0).count();
    let mut trace = vec![best_count];
    for _ in 1..iter {
        if count < g.len() {
            let slot = rng.random_range(0..count);
            let fresh = loop {
                let x = rng.random_range(0..g.len());
                if !best.contains(&x) {
                    break x;
                }
            };
            let mut cand_hits = hits.clone();
            add(&mut cand_hits, &column(best[slot], &mut qi), -1);
            add(&mut cand_hits, &column(fresh, &mut qi), 1);
            let c = cand_hits.iter().filter(|&&h| h > 0).count();
            if c > best_count {
                best[slot] = fresh;
                best_count = c;
                hits = cand_hits;
            }
        }
        trace.push(best_count);
    }
    let ids = best.iter().map(|&i| g.id_at(i)).collect();
    Ok((PivotSet::new(g, ids, n)?, trace))
}

/// Hash position of code `code` of attribute `j` in a `width`-bit vector.
pub fn hash_bit(code: Code, j: usize, width: usize) -> usize {
    ((code as u64 * 1_000_003 + j as u64 * 8191) % width as u64) as usize
}

/// One node of the kt-tree.
#[derive(Clone, Debug)]
pub struct KtTreeNode {
    pub children: Vec<KtTreeNode>,
    /// Set on leaves only.
    pub member_ids: Vec<VertexId>,
    /// Per quasi-identifier, `width` bits packed into words.
    pub bit_vectors: Vec<Vec<u64>>,
    pub pivot_id: VertexId,
    pub ged_interval: (u64, u64),
}

impl KtTreeNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// True unless some attribute's bit for `qi` is clear.
    pub fn bits_admit(&self, qi: &[Code], width: usize) -> bool {
        qi.iter().enumerate().all(|(j, &c)| {
            let b = hash_bit(c, j, width);
            self.bit_vectors[j][b / 64] >> (b % 64) & 1 == 1
        })
    }

    fn walk<'a>(&'a self, out: &mut Vec<&'a KtTreeNode>) {
        out.push(self);
        for c in &self.children {
            c.walk(out);
        }
    }

    pub fn leaves(&self) -> Vec<&KtTreeNode> {
        let mut all = Vec::new();
        self.walk(&mut all);
        all.into_iter().filter(|x| x.is_leaf()).collect()
    }
}

/// A built kt-tree together with the pivots it was clustered on.
#[derive(Clone, Debug)]
pub struct KtTree {
    pub root: KtTreeNode,
    pub pivots: PivotSet,
    pub width: usize,
    members: HashSet<VertexId>,
}

impl KtTree {
    pub fn n(&self) -> usize {
        self.pivots.n
    }

    pub fn contains(&self, v: VertexId) -> bool {
        self.members.contains(&v)
    }
}

/// Bottom-up clustering: leaves of identical quasi-identifiers, grouped
/// under their nearest pivot, then under `ceil(sqrt(count))` nodes per level
/// until a single root remains. Node intervals span the lower and upper
/// distance bounds of their members.
pub fn build_kt_tree(g: &AttributedGraph, pivots: PivotSet, width: usize, n: usize) -> Result<KtTree> {
    if g.is_empty() {
        return Err(KtError::EmptyTree);
    }
    if width < 8 {
        return Err(KtError::Contract(format!("bit-vector width {width} is below 8")));
    }
    if pivots.pivots.is_empty() {
        return Err(KtError::Contract("kt-tree needs at least one pivot".into()));
    }
    if pivots.n != n {
        return Err(KtError::Contract(format!("pivots built for radius {}, tree asked for {n}", pivots.n)));
    }
    let qd = g.schema().d() - 1;
    let words = width.div_ceil(64);
    let mut groups: BTreeMap<Vec<Code>, Vec<VertexId>> = BTreeMap::new();
    let mut members = HashSet::new();
    // distance bounds of every vertex to every pivot
    let mut dist: HashMap<VertexId, Vec<GedBounds>> = HashMap::new();
    let mut qi = QiInterner::default();
    let pballs: Vec<PreparedBall> = pivots.pivots.iter().map(|p| qi.prepare(&pivots.cached_balls[p])).collect();
    for i in 0..g.len() {
        let v = g.id_at(i);
        let b = qi.prepare(&ball_at(g, i, n));
        let row: Vec<GedBounds> = pballs.iter().map(|pb| ged_prepared_interval(pb, &b, PIVOT_GED_BUDGET)).collect();
        let mut cache = pivots.cached_dists.write().unwrap();
        for (pi, &d) in row.iter().enumerate() {
            cache.entry((pivots.pivots[pi], v)).or_insert(d);
        }
        drop(cache);
        dist.insert(v, row);
        members.insert(v);
        groups.entry(g.vertex_at(i).qi().to_vec()).or_default().push(v);
    }
    let bits_of = |ids: &[VertexId]| -> Vec<Vec<u64>> {
        let mut bv = vec![vec![0u64; words]; qd];
        for &v in ids {
            for (j, &c) in g.vertex(v).unwrap().qi().iter().enumerate() {
                let b = hash_bit(c, j, width);
                bv[j][b / 64] |= 1 << (b % 64);
            }
        }
        bv
    };
    let interval = |ids: &[VertexId], pi: usize| -> (u64, u64) {
        let lo = ids.iter().map(|v| dist[v][pi].0).min().unwrap();
        let hi = ids.iter().map(|v| dist[v][pi].1).max().unwrap();
        (lo, hi)
    };
    // every node keeps the full member list while building so intervals
    // against any pivot can be recomputed at the next level
    let mut level: Vec<(KtTreeNode, Vec<VertexId>, usize)> = Vec::new();
    let mut by_pivot: BTreeMap<usize, Vec<(KtTreeNode, Vec<VertexId>)>> = BTreeMap::new();
    for (_, ids) in groups {
        let pi = (0..pballs.len())
            .min_by_key(|&pi| (ids.iter().map(|v| dist[v][pi].0 + dist[v][pi].1).sum::<u64>(), pi))
            .unwrap();
        let leaf = KtTreeNode {
            children: Vec::new(),
            bit_vectors: bits_of(&ids),
            pivot_id: pivots.pivots[pi],
            ged_interval: interval(&ids, pi),
            member_ids: ids.clone(),
        };
        by_pivot.entry(pi).or_default().push((leaf, ids));
    }
    for (pi, kids) in by_pivot {
        let all: Vec<VertexId> = kids.iter().flat_map(|k| k.1.iter().copied()).collect();
        level.push((
            KtTreeNode {
                children: kids.into_iter().map(|k| k.0).collect(),
                member_ids: Vec::new(),
                bit_vectors: bits_of(&all),
                pivot_id: pivots.pivots[pi],
                ged_interval: interval(&all, pi),
            },
            all,
            pi,
        ));
    }
    let pivot_gap = |a: usize, b: usize| -> u64 {
        let ra = &pivots.cached_balls[&pivots.pivots[a]];
        pivots.distance_to(pivots.pivots[b], ra).1
    };
    while level.len() > 1 {
        // strictly fewer groups than nodes, so every level shrinks
        let groups_n = ((level.len() as f64).sqrt().ceil() as usize).min(level.len() - 1);
        let heads: Vec<usize> = level.iter().take(groups_n).map(|x| x.2).collect();
        let mut buckets: Vec<Vec<(KtTreeNode, Vec<VertexId>, usize)>> = vec![Vec::new(); groups_n];
        for node in level {
            let h = (0..groups_n).min_by_key(|&h| (pivot_gap(node.2, heads[h]), h)).unwrap();
            buckets[h].push(node);
        }
        level = buckets
            .into_iter()
            .zip(heads)
            .filter(|(b, _)| !b.is_empty())
            .map(|(kids, pi)| {
                let all: Vec<VertexId> = kids.iter().flat_map(|k| k.1.iter().copied()).collect();
                (
                    KtTreeNode {
                        children: kids.into_iter().map(|k| k.0).collect(),
                        member_ids: Vec::new(),
                        bit_vectors: bits_of(&all),
                        pivot_id: pivots.pivots[pi],
                        ged_interval: interval(&all, pi),
                    },
                    all,
                    pi,
                )
            })
            .collect();
    }
    let root = match level.pop() {
        Some((node, _, _)) => node,
        // nothing indexable: an empty root that admits no query
        None => KtTreeNode {
            children: Vec::new(),
            member_ids: Vec::new(),
            bit_vectors: vec![vec![0; words]; qd],
            pivot_id: pivots.pivots[0],
            ged_interval: (0, 0),
        },
    };
    Ok(KtTree { root, pivots, width, members })
}

/// Indexed members of `tree` that survive the bit and pivot-interval tests
/// for a query ball. Survivors still need the exact check.
pub fn tree_survivors(tree: &KtTree, hn_v: &NeighborhoodSubgraph, qi_v: &[Code], eps: u64) -> Vec<VertexId> {
    let mut memo: HashMap<VertexId, GedBounds> = HashMap::new();
    let mut out = Vec::new();
    let mut stack = vec![&tree.root];
    while let Some(node) = stack.pop() {
        if !node.bits_admit(qi_v, tree.width) {
            continue;
        }
        let d = *memo
            .entry(node.pivot_id)
            .or_insert_with(|| tree.pivots.distance_to(node.pivot_id, hn_v));
        let (lo, hi) = node.ged_interval;
        if d.1.saturating_add(eps) < lo || d.0 > hi.saturating_add(eps) {
            continue;
        }
        if node.is_leaf() {
            out.extend(node.member_ids.iter().copied());
        } else {
            stack.extend(node.children.iter());
        }
    }
    out
}

/// Acceleration structure for [`initial_candidate`].
#[derive(Clone, Copy, Debug)]
pub enum Index<'a> {
    Pivots(&'a PivotSet),
    Tree(&'a KtTree),
}

impl Index<'_> {
    fn n(&self) -> usize {
        match self {
            Index::Pivots(p) => p.n,
            Index::Tree(t) => t.n(),
        }
    }
}

/// Every other vertex with the same quasi-identifier whose ball is within
/// `eps` edits of `v`'s, ordered by id. Pairs whose distance could not be
/// settled exactly are left out. The index never changes the answer.
pub fn initial_candidate(
    g: &AttributedGraph,
    v: VertexId,
    eps: u64,
    n: usize,
    index: Option<Index<'_>>,
) -> Result<Vec<VertexId>> {
    if let Some(ix) = index {
        if ix.n() != n {
            return Err(KtError::Contract(format!("index built for radius {}, query radius {n}", ix.n())));
        }
    }
    let hn_v = hop_neighborhood(g, v, n)?;
    let qi_v = g.vertex(v).unwrap().qi().to_vec();
    let pool: Vec<VertexId> = g.vertices().iter().filter(|x| x.qi() == qi_v.as_slice()).map(|x| x.id).collect();
    Ok(filter_candidates(g, v, &hn_v, &qi_v, pool, eps, n, index, &|_| true))
}

/// Exact-checks `pool` against `hn_v`, using `index` to skip members whose
/// cached distances are still valid (`clean`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn filter_candidates(
    g: &AttributedGraph,
    v: VertexId,
    hn_v: &NeighborhoodSubgraph,
    qi_v: &[Code],
    pool: Vec<VertexId>,
    eps: u64,
    n: usize,
    index: Option<Index<'_>>,
    clean: &dyn Fn(VertexId) -> bool,
) -> Vec<VertexId> {
    let mut qi = QiInterner::default();
    let pv = qi.prepare(hn_v);
    let survivors: Option<HashSet<VertexId>> = match index {
        Some(Index::Tree(t)) => Some(tree_survivors(t, hn_v, qi_v, eps).into_iter().collect()),
        _ => None,
    };
    let piv_d: Vec<(VertexId, GedBounds)> = match index {
        Some(Index::Pivots(p)) => p.pivots.iter().map(|&x| (x, p.distance_to(x, hn_v))).collect(),
        _ => Vec::new(),
    };
    let mut out = Vec::new();
    for m in pool {
        if m == v {
            continue;
        }
        let Some(i) = g.position(m) else { continue };
        if g.vertex_at(i).qi() != qi_v {
            continue;
        }
        if clean(m) {
            match index {
                Some(Index::Tree(t)) if t.contains(m) => {
                    if !survivors.as_ref().unwrap().contains(&m) {
                        continue;
                    }
                }
                Some(Index::Pivots(p)) => {
                    let pruned = piv_d
                        .iter()
                        .any(|&(x, dv)| p.distance(g, x, m).is_ok_and(|dm| bounds_prunable(dv, dm, eps)));
                    if pruned {
                        continue;
                    }
                }
                _ => {}
            }
        }
        let pm = qi.prepare(&ball_at(g, i, n));
        if let BoundedGed::Within(_) = ged_prepared_bounded(&pv, &pm, eps) {
            out.push(m);
        }
    }
    out.sort_unstable();
    out
}

/// [`initial_candidate`] answered through the tree.
pub fn kt_tree_candidates(tree: &KtTree, g: &AttributedGraph, v: VertexId, eps: u64) -> Result<Vec<VertexId>> {
    initial_candidate(g, v, eps, tree.n(), Some(Index::Tree(tree)))
}
