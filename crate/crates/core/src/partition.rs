//! Size-bounded partitioning with n-hop halos, the sample-based cost model
//! and the center-replacement search over partitionings.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::anonymize::{anonymize, Params, PartitionStrategy};
use crate::error::{KtError, Result};
use crate::graph::{bfs_order, AttributedGraph, VertexId};

const NONE: usize = usize::MAX;

/// A core of owned vertices plus the duplicated halo needed to see every
/// core ball in full.
#[derive(Clone, Debug)]
pub struct PartitionedSubgraph {
    pub core_ids: BTreeSet<VertexId>,
    pub halo_ids: BTreeSet<VertexId>,
    pub graph: AttributedGraph,
}

impl PartitionedSubgraph {
    /// Core vertices with at least one neighbor outside the core.
    pub fn border_ids(&self) -> BTreeSet<VertexId> {
        self.core_ids
            .iter()
            .copied()
            .filter(|&v| {
                self.graph
                    .neighbors(v)
                    .map(|ns| ns.iter().any(|w| self.halo_ids.contains(w)))
                    .unwrap_or(false)
            })
            .collect()
    }

    pub fn is_core(&self, v: VertexId) -> bool {
        self.core_ids.contains(&v)
    }
}

/// Calibrated per-vertex costs from anonymizing a sample of the input.
#[derive(Clone, Debug, PartialEq)]
pub struct CostSample {
    pub sample_graph: AttributedGraph,
    pub per_vertex_kt_cost: BTreeMap<VertexId, f64>,
    pub per_border_merge_cost: BTreeMap<VertexId, f64>,
    pub ball_sizes: BTreeMap<VertexId, usize>,
}

/// Recursive split into pieces of at most `gamma` vertices, each expanded
/// by the vertices within `n` hops of its border.
pub fn partition_graph(g: &AttributedGraph, gamma: usize, s: usize, n: usize) -> Vec<PartitionedSubgraph> {
    let gamma = gamma.max(1);
    let s = s.max(2);
    if g.len() <= gamma {
        return vec![PartitionedSubgraph {
            core_ids: g.ids().collect(),
            halo_ids: BTreeSet::new(),
            graph: g.clone(),
        }];
    }
    let mut leaves = Vec::new();
    split(g, g.ids().collect(), gamma, s, &mut leaves);
    leaves.into_iter().map(|core| expand(g, core, n)).collect()
}

fn split(host: &AttributedGraph, part: BTreeSet<VertexId>, gamma: usize, s: usize, out: &mut Vec<BTreeSet<VertexId>>) {
    if part.len() <= gamma {
        out.push(part);
        return;
    }
    let sub = host.induced(&part);
    let seeds = spread_seeds(&sub, s.min(sub.len()));
    let cap = sub.len().div_ceil(s);
    let mut owner = grow(&sub, &seeds, cap);
    let mut sizes = vec![0usize; seeds.len()];
    for &o in &owner {
        if o != NONE {
            sizes[o] += 1;
        }
    }
    for o in owner.iter_mut().filter(|o| **o == NONE) {
        let smallest = (0..sizes.len()).min_by_key(|&c| (sizes[c], c)).unwrap();
        *o = smallest;
        sizes[smallest] += 1;
    }
    let mut groups = vec![BTreeSet::new(); seeds.len()];
    for (i, &o) in owner.iter().enumerate() {
        groups[o].insert(sub.id_at(i));
    }
    for grp in groups {
        split(host, grp, gamma, s, out);
    }
}

/// Farthest-first seeds: the lowest id, then repeatedly the vertex farthest
/// (in hops, unreachable counting as infinite) from every chosen seed.
fn spread_seeds(g: &AttributedGraph, count: usize) -> Vec<usize> {
    let mut seeds = vec![0usize];
    let mut dist = hop_distances(g, &[0]);
    while seeds.len() < count {
        let next = (0..g.len())
            .filter(|i| !seeds.contains(i))
            .max_by_key(|&i| (dist[i], std::cmp::Reverse(i)))
            .unwrap();
        seeds.push(next);
        let d2 = hop_distances(g, &[next]);
        for (a, b) in dist.iter_mut().zip(d2) {
            *a = (*a).min(b);
        }
    }
    seeds
}

fn hop_distances(g: &AttributedGraph, src: &[usize]) -> Vec<usize> {
    hop_distances_limited(g, src, usize::MAX)
}

/// Level-synchronous multi-source BFS; within a level lower seed positions
/// claim first, and a region stops growing at `cap` vertices.
fn grow(g: &AttributedGraph, seeds: &[usize], cap: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..seeds.len()).collect();
    order.sort_by_key(|&c| seeds[c]);
    let mut owner = vec![NONE; g.len()];
    let mut sizes = vec![0usize; seeds.len()];
    let mut frontier: Vec<Vec<usize>> = vec![Vec::new(); seeds.len()];
    for (c, &s) in seeds.iter().enumerate() {
        owner[s] = c;
        sizes[c] = 1;
        frontier[c].push(s);
    }
    while frontier.iter().any(|f| !f.is_empty()) {
        for &c in &order {
            let mut next = Vec::new();
            'grow: for &u in &frontier[c] {
                for &w in g.adj_idx(u) {
                    if sizes[c] >= cap {
                        break 'grow;
                    }
                    if owner[w] == NONE {
                        owner[w] = c;
                        sizes[c] += 1;
                        next.push(w);
                    }
                }
            }
            next.sort_unstable();
            frontier[c] = next;
        }
    }
    owner
}

fn expand(host: &AttributedGraph, core: BTreeSet<VertexId>, n: usize) -> PartitionedSubgraph {
    let mut border = Vec::new();
    for &v in &core {
        let i = host.position(v).expect("core vertex in host");
        if host.adj_idx(i).iter().any(|&w| !core.contains(&host.id_at(w))) {
            border.push(i);
        }
    }
    let mut halo = BTreeSet::new();
    if n > 0 && !border.is_empty() {
        let dist = hop_distances_limited(host, &border, n);
        for (i, d) in dist.into_iter().enumerate() {
            if d <= n && !core.contains(&host.id_at(i)) {
                halo.insert(host.id_at(i));
            }
        }
    }
    let all: BTreeSet<VertexId> = core.union(&halo).copied().collect();
    PartitionedSubgraph { graph: host.induced(&all), core_ids: core, halo_ids: halo }
}

fn hop_distances_limited(g: &AttributedGraph, src: &[usize], limit: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; g.len()];
    let mut q = VecDeque::new();
    for &s in src {
        dist[s] = 0;
        q.push_back(s);
    }
    while let Some(u) = q.pop_front() {
        if dist[u] == limit {
            continue;
        }
        for &w in g.adj_idx(u) {
            if dist[w] == usize::MAX {
                dist[w] = dist[u] + 1;
                q.push_back(w);
            }
        }
    }
    dist
}

/// Number of clusters the center search uses: `s^ceil(log_s(|V|/gamma))`.
pub fn cluster_count(v: usize, gamma: usize, s: usize) -> usize {
    let gamma = gamma.max(1);
    let s = s.max(2);
    let mut c = 1usize;
    while c.saturating_mul(gamma) < v {
        c = c.saturating_mul(s);
    }
    c.min(v.max(1))
}

/// Hill climbing over center sets, keeping whichever partitioning the cost
/// model rates lower.
pub fn select_partitioning(
    g: &AttributedGraph,
    gamma: usize,
    s: usize,
    n: usize,
    ite: usize,
    sample: &CostSample,
    seed: u64,
) -> Result<Vec<PartitionedSubgraph>> {
    select_partitioning_traced(g, gamma, s, n, ite, sample, seed).map(|(p, _)| p)
}

/// [`select_partitioning`] plus the best cost after every iteration.
pub fn select_partitioning_traced(
    g: &AttributedGraph,
    gamma: usize,
    s: usize,
    n: usize,
    ite: usize,
    sample: &CostSample,
    seed: u64,
) -> Result<(Vec<PartitionedSubgraph>, Vec<f64>)> {
    if ite == 0 {
        return Err(KtError::Contract("ite must be at least 1".into()));
    }
    let gamma = gamma.max(1);
    if g.len() <= gamma {
        let parts = partition_graph(g, gamma, s, n);
        let c = estimate_partition_cost(&parts, sample, n)?;
        return Ok((parts, vec![c; ite]));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = cluster_count(g.len(), gamma, s);
    let mut cts: Vec<usize> = sample_indices(&mut rng, g.len(), count).into_vec();
    let mut best = clusters_to_parts(g, &cts, gamma, n);
    let mut cost = estimate_partition_cost(&best, sample, n)?;
    let mut trace = vec![cost];
    for _ in 1..ite {
        let mut cand = cts.clone();
        if count < g.len() {
            let slot = rng.random_range(0..count);
            let repl = loop {
                let x = rng.random_range(0..g.len());
                if !cand.contains(&x) {
                    break x;
                }
            };
            cand[slot] = repl;
        }
        let parts = clusters_to_parts(g, &cand, gamma, n);
        let c = estimate_partition_cost(&parts, sample, n)?;
        if c < cost {
            cts = cand;
            cost = c;
            best = parts;
        }
        trace.push(cost);
    }
    Ok((best, trace))
}

fn clusters_to_parts(g: &AttributedGraph, centers: &[usize], gamma: usize, n: usize) -> Vec<PartitionedSubgraph> {
    let owner = cluster(g, centers, gamma);
    let mut groups = vec![BTreeSet::new(); centers.len()];
    for (i, &o) in owner.iter().enumerate() {
        groups[o].insert(g.id_at(i));
    }
    groups.into_iter().map(|core| expand(g, core, n)).collect()
}

/// Nearest-center clustering with capacity `cap`. Vertices cut off by full
/// clusters go to the nearest cluster with room; anything still unplaced
/// (a component without a center) goes to the smallest cluster.
fn cluster(g: &AttributedGraph, centers: &[usize], cap: usize) -> Vec<usize> {
    let mut owner = grow(g, centers, cap);
    let mut sizes = vec![0usize; centers.len()];
    for &o in &owner {
        if o != NONE {
            sizes[o] += 1;
        }
    }
    loop {
        let pending = owner.iter().filter(|&&o| o == NONE).count();
        if pending == 0 {
            break;
        }
        // BFS through assigned vertices from every cluster that has room
        let mut label = vec![NONE; g.len()];
        let mut q = VecDeque::new();
        let mut order: Vec<usize> = (0..g.len()).filter(|&i| owner[i] != NONE && sizes[owner[i]] < cap).collect();
        order.sort_by_key(|&i| (centers[owner[i]], i));
        for i in order {
            label[i] = owner[i];
            q.push_back(i);
        }
        let mut progress = false;
        while let Some(u) = q.pop_front() {
            for &w in g.adj_idx(u) {
                if label[w] != NONE {
                    continue;
                }
                label[w] = label[u];
                if owner[w] == NONE && sizes[label[u]] < cap {
                    owner[w] = label[u];
                    sizes[label[u]] += 1;
                    progress = true;
                }
                q.push_back(w);
            }
        }
        if !progress {
            for i in 0..g.len() {
                if owner[i] == NONE {
                    let c = (0..sizes.len()).min_by_key(|&c| (sizes[c], centers[c])).unwrap();
                    owner[i] = c;
                    sizes[c] += 1;
                }
            }
        }
    }
    owner
}

/// Nearest-ball-size lookup over sample costs; ties go to the smaller id.
struct Nearest {
    by_size: BTreeMap<usize, (VertexId, f64)>,
}

impl Nearest {
    fn new(costs: &BTreeMap<VertexId, f64>, sizes: &BTreeMap<VertexId, usize>) -> Self {
        let mut by_size: BTreeMap<usize, (VertexId, f64)> = BTreeMap::new();
        for (&u, &c) in costs {
            let sz = sizes.get(&u).copied().unwrap_or(1);
            by_size.entry(sz).and_modify(|e| if u < e.0 { *e = (u, c) }).or_insert((u, c));
        }
        Nearest { by_size }
    }

    fn cost(&self, size: usize) -> Option<f64> {
        let below = self.by_size.range(..=size).next_back();
        let above = self.by_size.range(size..).next();
        match (below, above) {
            (None, None) => None,
            (Some((_, b)), None) => Some(b.1),
            (None, Some((_, a))) => Some(a.1),
            (Some((&sb, b)), Some((&sa, a))) => {
                let (db, da) = (size - sb, sa - size);
                if db < da || (db == da && b.0 <= a.0) {
                    Some(b.1)
                } else {
                    Some(a.1)
                }
            }
        }
    }
}

/// Sample-based estimate of the anonymization cost of a partitioning: each
/// core vertex costs what its nearest-ball-size sample cost, and each halo
/// copy of a border vertex costs what the nearest border sample cost to merge.
pub fn estimate_partition_cost(parts: &[PartitionedSubgraph], sample: &CostSample, n: usize) -> Result<f64> {
    if sample.per_vertex_kt_cost.is_empty() {
        return Err(KtError::Calibration("cost sample is empty".into()));
    }
    let kt = Nearest::new(&sample.per_vertex_kt_cost, &sample.ball_sizes);
    let mer = Nearest::new(&sample.per_border_merge_cost, &sample.ball_sizes);
    let mut total = 0.0;
    for p in parts {
        for i in 0..p.graph.len() {
            let id = p.graph.id_at(i);
            let size = bfs_order(&p.graph, i, n).0.len();
            if p.core_ids.contains(&id) {
                total += kt.cost(size).unwrap_or(0.0);
            } else if p.halo_ids.contains(&id) {
                total += mer.cost(size).unwrap_or(0.0);
            }
        }
    }
    Ok(total)
}

/// Connected BFS sample of `size` vertices, restarting from a fresh random
/// vertex whenever a component runs out.
pub fn bfs_sample(g: &AttributedGraph, size: usize, seed: u64) -> BTreeSet<VertexId> {
    let size = size.min(g.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut taken = vec![false; g.len()];
    let mut count = 0;
    let mut q = VecDeque::new();
    while count < size {
        if q.is_empty() {
            let free: Vec<usize> = (0..g.len()).filter(|&i| !taken[i]).collect();
            let s = free[rng.random_range(0..free.len())];
            taken[s] = true;
            count += 1;
            q.push_back(s);
            continue;
        }
        let u = q.pop_front().unwrap();
        for &w in g.adj_idx(u) {
            if count == size {
                break;
            }
            if !taken[w] {
                taken[w] = true;
                count += 1;
                q.push_back(w);
            }
        }
    }
    (0..g.len()).filter(|&i| taken[i]).map(|i| g.id_at(i)).collect()
}

/// Anonymizes a BFS sample of `g` and records what each vertex cost.
pub fn calibrate_cost_sample(g: &AttributedGraph, sample_size: usize, params: &Params, seed: u64) -> Result<CostSample> {
    if sample_size < 1 {
        return Err(KtError::Contract("sample size must be at least 1".into()));
    }
    if g.is_empty() {
        return Err(KtError::Calibration("cannot sample an empty graph".into()));
    }
    let ids = bfs_sample(g, sample_size, seed);
    let s = if ids.len() == g.len() { g.clone() } else { g.induced(&ids) };
    let mut p = params.clone();
    p.partition = PartitionStrategy::Recursive;
    let out = anonymize(&s, &p)?;
    let mut per_vertex_kt_cost: BTreeMap<VertexId, f64> = s.ids().map(|v| (v, 0.0)).collect();
    for (owner, c) in out.log.kt_cost_by_owner() {
        if let Some(x) = per_vertex_kt_cost.get_mut(&owner) {
            *x += c;
        }
    }
    let ball_sizes = (0..s.len()).map(|i| (s.id_at(i), bfs_order(&s, i, p.n).0.len())).collect();
    Ok(CostSample {
        per_vertex_kt_cost,
        per_border_merge_cost: out.merge_costs,
        ball_sizes,
        sample_graph: s,
    })
}
