//! The anonymization pipeline: partition, make every core vertex kt-safe
//! inside its partition, merge, then top protection sets up with replica
//! layers and verify.
//!
//! Edits never touch the ball of a protected vertex. Inside a partition the
//! protected set holds the halo, every finalized vertex, its protection set
//! and, while a candidate is being rehearsed, the protection set under
//! construction. A new vertex may hang off `w` only if `w` is at least `n`
//! hops from everything protected.
//!
//! Duplicates requested by a vertex are realized after merging as replica
//! layers: a copy of the vertex's whole connected component with the
//! sensitive value replaced by a non-sensitive one. A replica of `u` has a
//! ball isomorphic to `u`'s, so it joins every protection set `u` is in,
//! and because it lives in its own component no existing ball changes.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::distances::{emd_attribute_distance, ged_bounded, BoundedGed};
use crate::error::{KtError, Result};
use crate::graph::{
    attribute_counts, ball_at, bfs_distances, hop_neighborhood, is_sensitive, AttributeVector, AttributedGraph, Code,
    NeighborhoodSubgraph, Origin, VertexId, MISSING,
};
use crate::index::{build_kt_tree, filter_candidates, select_pivots, Index, KtTree, PivotSet, DEFAULT_BITS};
use crate::partition::{calibrate_cost_sample, partition_graph, select_partitioning, PartitionedSubgraph};
use crate::verify::{protection_index, verify_kt_safe_graph, GraphVerdict, Thresholds, TOLERANCE};

/// How the input is split before anonymization.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PartitionStrategy {
    /// Recursive size-bounded split.
    Recursive,
    /// Center search guided by a cost sample of `sample_size` vertices.
    CostModel { sample_size: usize, ite: usize },
}

/// Acceleration used for candidate retrieval inside a partition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IndexMode {
    /// kt-tree when the average same-QI bucket holds at least
    /// [`AUTO_INDEX_BUCKET`] vertices, scan otherwise.
    Auto,
    Scan,
    Pivots,
    KtTree,
}

/// Bucket size from which [`IndexMode::Auto`] builds a kt-tree. Below it a
/// scan of the bucket is cheaper than selecting pivots.
pub const AUTO_INDEX_BUCKET: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub k: usize,
    pub t: f64,
    pub epsilon: u64,
    pub alpha: f64,
    pub n: usize,
    pub gamma: usize,
    pub s: usize,
    pub seed: u64,
    pub partition: PartitionStrategy,
    pub index: IndexMode,
    pub pivot_count: usize,
    pub pivot_iter: usize,
    pub pivot_sample: usize,
    /// Worker threads for per-partition processing; 0 lets rayon decide.
    pub workers: usize,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            k: 10,
            t: 0.1,
            epsilon: 5,
            alpha: 0.2,
            n: 1,
            gamma: 1000,
            s: 4,
            seed: 0,
            partition: PartitionStrategy::CostModel { sample_size: 1000, ite: 50 },
            index: IndexMode::Auto,
            pivot_count: 10,
            pivot_iter: 100,
            pivot_sample: 1000,
            workers: 0,
        }
    }
}

impl Params {
    pub fn thresholds(&self) -> Thresholds {
        Thresholds { k: self.k, t: self.t, epsilon: self.epsilon, alpha: self.alpha, n: self.n }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(KtError::Contract("k must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.t) {
            return Err(KtError::Contract(format!("t = {} is outside [0, 1]", self.t)));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(KtError::Contract(format!("alpha = {} is outside (0, 1]", self.alpha)));
        }
        if self.n < 1 {
            return Err(KtError::Contract("n must be at least 1".into()));
        }
        if self.gamma < 1 || self.s < 2 {
            return Err(KtError::Contract("need gamma >= 1 and s >= 2".into()));
        }
        Ok(())
    }
}

/// The peers found for one vertex, plus how many duplicates it still asked for.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProtectionSet {
    pub owner: VertexId,
    /// Includes the owner.
    pub members: BTreeSet<VertexId>,
    pub pending_duplicates: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Edit {
    AddVertex { id: VertexId, attrs: AttributeVector, origin: Origin },
    AddEdge { u: VertexId, v: VertexId },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LoggedEdit {
    pub edit: Edit,
    /// The vertex whose protection triggered the edit.
    pub owner: VertexId,
}

/// Every insertion in order, each tagged with the vertex it was made for.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EditLog {
    pub entries: Vec<LoggedEdit>,
}

impl EditLog {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn push(&mut self, edit: Edit, owner: VertexId) {
        self.entries.push(LoggedEdit { edit, owner });
    }

    /// Applies the log to `g`.
    pub fn replay(&self, g: &AttributedGraph) -> Result<AttributedGraph> {
        let mut out = g.clone();
        for e in &self.entries {
            match &e.edit {
                Edit::AddVertex { id, attrs, origin } => {
                    out.add_vertex(*id, attrs.clone(), *origin)?;
                }
                Edit::AddEdge { u, v } => {
                    out.add_edge(*u, *v)?;
                }
            }
        }
        Ok(out)
    }

    /// Per-owner cost: one per inserted vertex, half an edit per edge
    /// endpoint (an endpoint counts for the owner of the vertex it lands on
    /// when that vertex is new, else for the edge's owner).
    pub fn kt_cost_by_owner(&self) -> BTreeMap<VertexId, f64> {
        let mut vowner: HashMap<VertexId, VertexId> = HashMap::new();
        let mut cost: BTreeMap<VertexId, f64> = BTreeMap::new();
        for e in &self.entries {
            match &e.edit {
                Edit::AddVertex { id, .. } => {
                    vowner.insert(*id, e.owner);
                    *cost.entry(e.owner).or_default() += 1.0;
                }
                Edit::AddEdge { u, v } => {
                    for x in [u, v] {
                        let o = vowner.get(x).copied().unwrap_or(e.owner);
                        *cost.entry(o).or_default() += 0.5;
                    }
                }
            }
        }
        cost
    }
}

/// Which base graph the replica layers were computed on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// Partition edits kept.
    WithEdits,
    /// Partition edits dropped; replica layers over the input alone were cheaper.
    LayersOnly,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PhaseTimings {
    pub partition: Duration,
    pub generation: Duration,
    pub merge: Duration,
    pub layers: Duration,
    pub verify: Duration,
}

/// Result of a full run.
#[derive(Clone, Debug)]
pub struct Anonymized {
    pub graph: AttributedGraph,
    pub log: EditLog,
    pub partition_cores: Vec<usize>,
    pub protection_sets: Vec<ProtectionSet>,
    /// Merge edits per border vertex (keep-both copies only).
    pub merge_costs: BTreeMap<VertexId, f64>,
    /// Replica layers per component, keyed by the component's smallest id.
    pub layers: BTreeMap<VertexId, usize>,
    pub variant: Variant,
    pub verdict: GraphVerdict,
    pub timings: PhaseTimings,
}

/// Mutable state of one partition while its vertices are processed.
pub struct PartitionState<'p> {
    pub graph: AttributedGraph,
    pub params: &'p Params,
    pub protected: HashSet<VertexId>,
    pub finalized: Vec<VertexId>,
    pub log: EditLog,
    eligible: HashSet<VertexId>,
    buckets: HashMap<Vec<Code>, Vec<VertexId>>,
    dirty: HashSet<VertexId>,
    next_id: VertexId,
    fill_code: Code,
    new_vertices: Vec<VertexId>,
    tree: Option<KtTree>,
    pivots: Option<PivotSet>,
}

/// Most frequent non-sensitive sensitive-attribute code in `g`, ties by
/// code order; the first non-sensitive domain code when none occurs; MISSING
/// when the whole domain is sensitive.
pub fn fill_code(g: &AttributedGraph) -> Result<Code> {
    let s = g.schema();
    let d = s.d() - 1;
    let mut counts: BTreeMap<Code, usize> = BTreeMap::new();
    for v in g.vertices() {
        let c = v.attrs[d];
        if c != MISSING && !is_sensitive(c, s)? {
            *counts.entry(c).or_default() += 1;
        }
    }
    if let Some((&c, _)) = counts.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))) {
        return Ok(c);
    }
    for c in 0..s.domain(d).len() as Code {
        if !is_sensitive(c, s)? {
            return Ok(c);
        }
    }
    Ok(MISSING)
}

impl<'p> PartitionState<'p> {
    /// `first_new_id` must exceed every id that can appear in the final graph's input.
    pub fn new(part: &PartitionedSubgraph, params: &'p Params, first_new_id: VertexId, fill: Code) -> Result<Self> {
        let graph = part.graph.clone();
        let mut buckets: HashMap<Vec<Code>, Vec<VertexId>> = HashMap::new();
        for &v in &part.core_ids {
            buckets.entry(graph.vertex(v).unwrap().qi().to_vec()).or_default().push(v);
        }
        let mut st = PartitionState {
            params,
            protected: part.halo_ids.iter().copied().collect(),
            finalized: Vec::new(),
            log: EditLog::default(),
            eligible: part.core_ids.iter().copied().collect(),
            buckets,
            dirty: HashSet::new(),
            next_id: first_new_id.max(graph.next_id()),
            fill_code: fill,
            new_vertices: Vec::new(),
            tree: None,
            pivots: None,
            graph,
        };
        st.build_index()?;
        Ok(st)
    }

    fn build_index(&mut self) -> Result<()> {
        let p = self.params;
        let mode = match p.index {
            IndexMode::Auto if self.eligible.len() >= AUTO_INDEX_BUCKET * self.buckets.len().max(1) => IndexMode::KtTree,
            IndexMode::Auto => IndexMode::Scan,
            m => m,
        };
        if mode == IndexMode::Scan || self.eligible.len() < 4 * p.pivot_count.max(1) {
            return Ok(());
        }
        let pivots = select_pivots(&self.graph, p.pivot_sample, p.pivot_iter, p.pivot_count, p.epsilon, p.n, p.seed)?;
        if mode == IndexMode::Pivots {
            self.pivots = Some(pivots);
        } else {
            self.tree = Some(build_kt_tree(&self.graph, pivots, DEFAULT_BITS, p.n)?);
        }
        Ok(())
    }

    fn index(&self) -> Option<Index<'_>> {
        match (&self.tree, &self.pivots) {
            (Some(t), _) => Some(Index::Tree(t)),
            (_, Some(p)) => Some(Index::Pivots(p)),
            _ => None,
        }
    }

    fn ball(&self, v: VertexId) -> NeighborhoodSubgraph {
        hop_neighborhood(&self.graph, v, self.params.n).expect("vertex in partition")
    }

    /// Candidates for `v` among core and new vertices of this partition.
    pub fn candidates(&self, v: VertexId) -> Vec<VertexId> {
        let hn = self.ball(v);
        let qi = self.graph.vertex(v).unwrap().qi().to_vec();
        let pool: Vec<VertexId> = self
            .buckets
            .get(&qi)
            .map(|b| b.iter().copied().filter(|m| self.eligible.contains(m)).collect())
            .unwrap_or_default();
        let dirty = &self.dirty;
        filter_candidates(&self.graph, v, &hn, &qi, pool, self.params.epsilon, self.params.n, self.index(), &|m| {
            !dirty.contains(&m)
        })
    }

    /// True when a vertex hung off `w` would leave every protected ball
    /// (and every ball in `extra`) unchanged.
    fn can_attach(&self, w: VertexId, extra: &BTreeSet<VertexId>) -> bool {
        let Some(src) = self.graph.position(w) else { return false };
        bfs_distances(&self.graph, src, self.params.n - 1).keys().all(|&u| {
            let id = self.graph.id_at(u);
            !self.protected.contains(&id) && !extra.contains(&id)
        })
    }

    fn add_new_vertex(&mut self, attrs: AttributeVector, origin: Origin, owner: VertexId) -> Result<VertexId> {
        let id = self.next_id;
        self.next_id += 1;
        self.graph.add_vertex(id, attrs.clone(), origin)?;
        self.log.push(Edit::AddVertex { id, attrs, origin }, owner);
        self.new_vertices.push(id);
        Ok(id)
    }

    fn add_new_edge(&mut self, u: VertexId, v: VertexId, owner: VertexId) -> Result<()> {
        if self.graph.add_edge(u, v)? {
            self.log.push(Edit::AddEdge { u: u.min(v), v: u.max(v) }, owner);
        }
        Ok(())
    }

    /// Creates a copy of `v_a` wired only to neighbors whose new edge leaves
    /// every protected ball (and those of `extra`) untouched; later edits go
    /// to the copy. The copy keeps `v_a`'s quasi-identifier and gets the
    /// fill value on the sensitive attribute.
    pub fn duplicate_on_conflict(&mut self, v_a: VertexId, extra: &BTreeSet<VertexId>, owner: VertexId) -> Result<VertexId> {
        let src = self.graph.vertex(v_a).ok_or(KtError::UnknownVertex(v_a))?.clone();
        let mut attrs = src.attrs.clone();
        let d = attrs.len() - 1;
        attrs[d] = self.fill_code;
        let origin = match src.origin {
            Origin::Original => Origin::DuplicateOf(v_a),
            _ => Origin::Fake,
        };
        let nbrs: Vec<VertexId> = self
            .graph
            .neighbors(v_a)?
            .into_iter()
            .filter(|&x| self.can_attach(x, extra))
            .collect();
        let id = self.add_new_vertex(attrs, origin, owner)?;
        for x in nbrs {
            self.add_new_edge(id, x, owner)?;
        }
        Ok(id)
    }

    fn rollback(&mut self, log_mark: usize, vertex_mark: usize) {
        while self.new_vertices.len() > vertex_mark {
            let id = self.new_vertices.pop().unwrap();
            let popped = self.graph.pop_vertex();
            debug_assert_eq!(popped.map(|v| v.id), Some(id));
            self.next_id -= 1;
        }
        self.log.entries.truncate(log_mark);
    }

    fn t_close(&self, hv: &NeighborhoodSubgraph, hm: &NeighborhoodSubgraph) -> Result<bool> {
        let qd = self.graph.schema().d() - 1;
        for l in 1..=self.params.n {
            let (a, b) = (hv.restrict(l), hm.restrict(l));
            for j in 0..qd {
                if emd_attribute_distance(&a, &b, j)? > self.params.t + TOLERANCE {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }

    /// Rehearses fake-neighbor insertions that bring `v_m`'s attribute
    /// distributions within `t` of `v`'s; keeps them only if `v_m` stays
    /// within `epsilon` edits of `v` and the rehearsal used at most
    /// `2 * epsilon` insertions. `ps` is the protection set built so far.
    pub fn try_admit_candidate(&mut self, v: VertexId, v_m: VertexId, ps: &BTreeSet<VertexId>) -> Result<bool> {
        let p = self.params;
        let hv = self.ball(v);
        if self.t_close(&hv, &self.ball(v_m))? {
            return Ok(true);
        }
        let budget = 2 * p.epsilon as usize;
        let qd = self.graph.schema().d() - 1;
        let (log_mark, vertex_mark) = (self.log.len(), self.new_vertices.len());
        let mut used = 0usize;
        let mut ok = true;
        'levels: for l in 1..=p.n {
            let hv_l = hv.restrict(l);
            loop {
                let hm = self.ball(v_m);
                let hm_l = hm.restrict(l);
                let mut worst: Option<(usize, f64)> = None;
                for j in 0..qd {
                    let e = emd_attribute_distance(&hv_l, &hm_l, j)?;
                    if e > p.t + TOLERANCE && worst.is_none_or(|w| e > w.1) {
                        worst = Some((j, e));
                    }
                }
                let Some((j, _)) = worst else { break };
                let Some(code) = deficit_code(&hv_l, &hm_l, j)? else {
                    ok = false;
                    break 'levels;
                };
                let mut attrs = Vec::with_capacity(qd + 1);
                for jj in 0..qd {
                    attrs.push(if jj == j { code } else { modal_code(&hv_l, jj)?.unwrap_or(code) });
                }
                attrs.push(self.fill_code);
                let frontier: Vec<VertexId> = hm.members.iter().filter(|x| x.hop == l - 1).map(|x| x.id).collect();
                let anchor = match frontier.iter().copied().find(|&w| self.can_attach(w, ps)) {
                    Some(w) => Some(w),
                    None if l >= 2 => {
                        // copy a frontier vertex that still has an allowed link back toward v_m
                        let inner: HashSet<VertexId> =
                            hm.members.iter().filter(|x| x.hop == l - 2).map(|x| x.id).collect();
                        let mut pick = None;
                        for &w in &frontier {
                            let back = self.graph.neighbors(w)?;
                            if back.iter().any(|x| inner.contains(x) && self.can_attach(*x, ps)) {
                                pick = Some(w);
                                break;
                            }
                        }
                        match pick {
                            Some(w) => {
                                let before = self.log.len();
                                let dup = self.duplicate_on_conflict(w, ps, v)?;
                                used += self.log.len() - before;
                                Some(dup)
                            }
                            None => None,
                        }
                    }
                    None => None,
                };
                let Some(w) = anchor else {
                    ok = false;
                    break 'levels;
                };
                if used + 2 > budget {
                    ok = false;
                    break 'levels;
                }
                let f = self.add_new_vertex(attrs, Origin::Fake, v)?;
                self.add_new_edge(f, w, v)?;
                used += 2;
            }
        }
        if ok && used > budget {
            ok = false;
        }
        if ok {
            let hm = self.ball(v_m);
            ok = self.t_close(&hv, &hm)? && matches!(ged_bounded(&hv, &hm, p.epsilon)?, BoundedGed::Within(_));
        }
        if !ok {
            self.rollback(log_mark, vertex_mark);
            return Ok(false);
        }
        self.commit_new(vertex_mark)?;
        Ok(true)
    }

    fn commit_new(&mut self, vertex_mark: usize) -> Result<()> {
        let added: Vec<VertexId> = self.new_vertices[vertex_mark..].to_vec();
        for &id in &added {
            let qi = self.graph.vertex(id).unwrap().qi().to_vec();
            self.buckets.entry(qi).or_default().push(id);
            self.eligible.insert(id);
            let i = self.graph.position(id).unwrap();
            for m in ball_at(&self.graph, i, self.params.n).members {
                self.dirty.insert(m.id);
            }
        }
        Ok(())
    }

    /// Builds `v`'s protection set from its candidates, admitting more by
    /// rehearsal when short, and records how many duplicates are still owed
    /// for size and for the sensitive fraction. Finalizes `v`.
    pub fn kt_safety_vertex(&mut self, v: VertexId, cs: &[VertexId]) -> Result<ProtectionSet> {
        let p = self.params;
        let hv = self.ball(v);
        let mut ps: BTreeSet<VertexId> = BTreeSet::from([v]);
        for &m in cs {
            if self.t_close(&hv, &self.ball(m))? {
                ps.insert(m);
            }
        }
        if ps.len() < p.k {
            for &m in cs {
                if ps.len() >= p.k {
                    break;
                }
                if ps.contains(&m) || self.protected.contains(&m) {
                    continue;
                }
                if self.try_admit_candidate(v, m, &ps)? {
                    ps.insert(m);
                }
            }
        }
        let needed = p.k.saturating_sub(ps.len());
        let mut n_sens = 0usize;
        for &m in &ps {
            if is_sensitive(self.graph.vertex(m).unwrap().sensitive_code(), self.graph.schema())? {
                n_sens += 1;
            }
        }
        let size = ps.len() + needed;
        let extra = sensitive_top_up(n_sens, size, p.alpha);
        for &m in &ps {
            self.protected.insert(m);
        }
        self.finalized.push(v);
        Ok(ProtectionSet { owner: v, members: ps, pending_duplicates: needed + extra })
    }
}

/// Further non-sensitive peers needed so that `n_sens / (size + x) <= alpha`.
pub fn sensitive_top_up(n_sens: usize, size: usize, alpha: f64) -> usize {
    if n_sens as f64 <= alpha * size as f64 + TOLERANCE {
        return 0;
    }
    let x = (n_sens as f64 / alpha - size as f64 - 1e-9).ceil();
    x.max(0.0) as usize
}

fn deficit_code(hv: &NeighborhoodSubgraph, hm: &NeighborhoodSubgraph, j: usize) -> Result<Option<Code>> {
    let cv = attribute_counts(hv, j)?;
    let cm = attribute_counts(hm, j)?;
    let (nv, nm) = (cv.values().sum::<usize>() as f64, cm.values().sum::<usize>() as f64);
    if nv == 0.0 {
        return Ok(None);
    }
    let mut best: Option<(Code, f64)> = None;
    for (&c, &x) in &cv {
        let pm = if nm > 0.0 { cm.get(&c).copied().unwrap_or(0) as f64 / nm } else { 0.0 };
        let gap = x as f64 / nv - pm;
        if gap > 0.0 && best.is_none_or(|b| gap > b.1) {
            best = Some((c, gap));
        }
    }
    Ok(best.map(|b| b.0))
}

fn modal_code(h: &NeighborhoodSubgraph, j: usize) -> Result<Option<Code>> {
    let c = attribute_counts(h, j)?;
    Ok(c.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|x| *x.0))
}

/// A partition after its generation phase.
#[derive(Clone, Debug)]
pub struct AnonymizedPart {
    pub part: PartitionedSubgraph,
    pub graph: AttributedGraph,
    pub log: EditLog,
    pub protection_sets: Vec<ProtectionSet>,
}

/// Processes one partition in ascending ball-size order; fakes created on
/// the way are queued behind the original vertices.
pub fn anonymize_partition(part: &PartitionedSubgraph, params: &Params, first_new_id: VertexId, fill: Code) -> Result<AnonymizedPart> {
    let mut st = PartitionState::new(part, params, first_new_id, fill)?;
    let by_size = |st: &PartitionState, ids: &mut Vec<VertexId>| {
        let mut keyed: Vec<(usize, VertexId)> = ids.iter().map(|&v| (st.ball(v).len(), v)).collect();
        keyed.sort_unstable();
        *ids = keyed.into_iter().map(|x| x.1).collect();
    };
    let mut queue: Vec<VertexId> = part.core_ids.iter().copied().collect();
    by_size(&st, &mut queue);
    let mut queue: VecDeque<VertexId> = queue.into();
    let mut sets = Vec::new();
    while let Some(v) = queue.pop_front() {
        let mark = st.new_vertices.len();
        let cs = st.candidates(v);
        sets.push(st.kt_safety_vertex(v, &cs)?);
        let mut fresh: Vec<VertexId> = st.new_vertices[mark..].to_vec();
        by_size(&st, &mut fresh);
        queue.extend(fresh);
    }
    Ok(AnonymizedPart { part: part.clone(), graph: st.graph, log: st.log, protection_sets: sets })
}

/// Merged graph plus the edits that produced it from the input.
#[derive(Clone, Debug)]
pub struct Merged {
    pub graph: AttributedGraph,
    pub log: EditLog,
    pub merge_costs: BTreeMap<VertexId, f64>,
}

/// Folds anonymized partitions back into the input. A halo copy collapses
/// into its owner when its ball is as it was before generation; otherwise
/// it is kept as a separate duplicate carrying the partition's edits. New
/// vertices receive fresh ids in partition order.
pub fn merge_subgraphs(parts: &[AnonymizedPart], original: &AttributedGraph, n: usize) -> Result<Merged> {
    let mut out = original.clone();
    let mut log = EditLog::default();
    let mut merge_costs = BTreeMap::new();
    for ap in parts {
        let mut map: HashMap<VertexId, VertexId> = HashMap::new();
        for &h in &ap.part.halo_ids {
            let before = hop_neighborhood(&ap.part.graph, h, n)?;
            let after = hop_neighborhood(&ap.graph, h, n)?;
            if before != after {
                let src = ap.graph.vertex(h).unwrap();
                let origin = match src.origin {
                    Origin::Original => Origin::DuplicateOf(h),
                    _ => Origin::Fake,
                };
                let id = out.next_id();
                out.add_vertex(id, src.attrs.clone(), origin)?;
                log.push(Edit::AddVertex { id, attrs: src.attrs.clone(), origin }, h);
                map.insert(h, id);
                merge_costs.insert(h, 1.0);
            }
        }
        let mut keep_both_edges = Vec::new();
        for (&h, &copy) in &map {
            for w in ap.graph.neighbors(h)? {
                keep_both_edges.push((copy, w, h));
            }
        }
        for e in &ap.log.entries {
            match &e.edit {
                Edit::AddVertex { id, attrs, origin } => {
                    let gid = out.next_id();
                    let origin = match origin {
                        Origin::DuplicateOf(x) => Origin::DuplicateOf(*map.get(x).unwrap_or(x)),
                        o => *o,
                    };
                    out.add_vertex(gid, attrs.clone(), origin)?;
                    map.insert(*id, gid);
                    log.push(Edit::AddVertex { id: gid, attrs: attrs.clone(), origin }, *map.get(&e.owner).unwrap_or(&e.owner));
                }
                Edit::AddEdge { .. } => {}
            }
        }
        let remap = |x: VertexId| *map.get(&x).unwrap_or(&x);
        for e in &ap.log.entries {
            if let Edit::AddEdge { u, v } = e.edit {
                let (a, b) = (remap(u), remap(v));
                if out.add_edge(a, b)? {
                    log.push(Edit::AddEdge { u: a.min(b), v: a.max(b) }, remap(e.owner));
                }
            }
        }
        keep_both_edges.sort_unstable();
        for (copy, w, h) in keep_both_edges {
            let w = remap(w);
            if copy != w && out.add_edge(copy, w)? {
                log.push(Edit::AddEdge { u: copy.min(w), v: copy.max(w) }, h);
                *merge_costs.entry(h).or_default() += 1.0;
            }
        }
    }
    // log entries were appended vertex-first per partition; reorder so the
    // log replays in id order
    let mut vertices: Vec<LoggedEdit> = Vec::new();
    let mut edges: Vec<LoggedEdit> = Vec::new();
    for e in log.entries {
        match e.edit {
            Edit::AddVertex { .. } => vertices.push(e),
            Edit::AddEdge { .. } => edges.push(e),
        }
    }
    vertices.sort_by_key(|e| match e.edit {
        Edit::AddVertex { id, .. } => id,
        _ => unreachable!(),
    });
    vertices.extend(edges);
    Ok(Merged { graph: out, log: EditLog { entries: vertices }, merge_costs })
}

/// Connected components as position lists, ordered by smallest position.
fn components(g: &AttributedGraph) -> (Vec<usize>, Vec<Vec<usize>>) {
    let mut comp = vec![usize::MAX; g.len()];
    let mut list = Vec::new();
    for s in 0..g.len() {
        if comp[s] != usize::MAX {
            continue;
        }
        let c = list.len();
        let mut members = vec![s];
        comp[s] = c;
        let mut q = VecDeque::from([s]);
        while let Some(u) = q.pop_front() {
            for &w in g.adj_idx(u) {
                if comp[w] == usize::MAX {
                    comp[w] = c;
                    members.push(w);
                    q.push_back(w);
                }
            }
        }
        members.sort_unstable();
        list.push(members);
    }
    (comp, list)
}

/// Smallest per-component layer counts that make every vertex of `base`
/// kt-safe once each component is replicated that many times.
pub fn layer_plan(base: &AttributedGraph, params: &Params) -> Result<(Vec<usize>, Vec<Vec<usize>>)> {
    let ix = protection_index(base, &params.thresholds())?;
    let (comp, comps) = components(base);
    let mut m = vec![0usize; comps.len()];
    // members of each class per component
    let mut class_comp: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); ix.class_count()];
    for i in 0..base.len() {
        *class_comp[ix.class_of(i)].entry(comp[i]).or_default() += 1;
    }
    let mut changed = true;
    while changed {
        changed = false;
        for c in 0..ix.class_count() {
            let related = ix.related(c);
            let n_sens: usize = related.iter().map(|&r| ix.class_sensitive(r)).sum();
            let need = params.k.max(required_for_alpha(n_sens, params.alpha));
            let have: usize = related
                .iter()
                .flat_map(|&r| class_comp[r].iter())
                .map(|(&q, &cnt)| cnt * (1 + m[q]))
                .sum();
            if have >= need {
                continue;
            }
            for &q in class_comp[c].keys() {
                let have: usize = related
                    .iter()
                    .flat_map(|&r| class_comp[r].iter())
                    .map(|(&q2, &cnt)| cnt * (1 + m[q2]))
                    .sum();
                if have >= need {
                    break;
                }
                let a: usize = related.iter().filter_map(|&r| class_comp[r].get(&q)).sum();
                m[q] += (need - have).div_ceil(a);
                changed = true;
            }
        }
    }
    Ok((m, comps))
}

fn required_for_alpha(n_sens: usize, alpha: f64) -> usize {
    if n_sens == 0 {
        return 0;
    }
    (n_sens as f64 / alpha - 1e-9).ceil() as usize
}

fn layer_cost(base: &AttributedGraph, m: &[usize], comps: &[Vec<usize>]) -> usize {
    comps
        .iter()
        .zip(m)
        .map(|(c, &k)| {
            let deg: usize = c.iter().map(|&i| base.adj_idx(i).len()).sum();
            k * (c.len() + deg / 2)
        })
        .sum()
}

/// Appends `m[c]` replicas of every component `c` to `base`, logging each
/// insertion under the owner of the vertex it copies.
fn materialize(
    base: &AttributedGraph,
    base_log: &EditLog,
    m: &[usize],
    comps: &[Vec<usize>],
    fill: Code,
) -> Result<(AttributedGraph, EditLog)> {
    let mut out = base.clone();
    let mut log = base_log.clone();
    let mut owner: HashMap<VertexId, VertexId> = HashMap::new();
    for e in &base_log.entries {
        if let Edit::AddVertex { id, .. } = e.edit {
            owner.insert(id, e.owner);
        }
    }
    let d = base.schema().d() - 1;
    for (c, members) in comps.iter().enumerate() {
        for _ in 0..m[c] {
            let mut map: HashMap<usize, VertexId> = HashMap::with_capacity(members.len());
            for &i in members {
                let src = base.vertex_at(i);
                let mut attrs = src.attrs.clone();
                attrs[d] = fill;
                let id = out.next_id();
                out.add_vertex(id, attrs.clone(), Origin::Fake)?;
                let o = owner.get(&src.id).copied().unwrap_or(src.id);
                log.push(Edit::AddVertex { id, attrs, origin: Origin::Fake }, o);
                map.insert(i, id);
            }
            for &i in members {
                for &j in base.adj_idx(i) {
                    if i < j {
                        let (a, b) = (map[&i], map[&j]);
                        out.add_edge(a, b)?;
                        let o = owner.get(&base.id_at(i)).copied().unwrap_or(base.id_at(i));
                        log.push(Edit::AddEdge { u: a, v: b }, o);
                    }
                }
            }
        }
    }
    Ok((out, log))
}

/// Splits `g` according to `params.partition`.
pub fn partition_for(g: &AttributedGraph, params: &Params) -> Result<Vec<PartitionedSubgraph>> {
    match params.partition {
        PartitionStrategy::Recursive => Ok(partition_graph(g, params.gamma, params.s, params.n)),
        PartitionStrategy::CostModel { sample_size, ite } => {
            if g.len() <= params.gamma {
                return Ok(partition_graph(g, params.gamma, params.s, params.n));
            }
            let sample = calibrate_cost_sample(g, sample_size.min(g.len()), params, params.seed)?;
            select_partitioning(g, params.gamma, params.s, params.n, ite.max(1), &sample, params.seed)
        }
    }
}

/// Full pipeline; the result always passes the verifier or an error is returned.
pub fn anonymize(g: &AttributedGraph, params: &Params) -> Result<Anonymized> {
    params.validate()?;
    if params.workers > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(params.workers)
            .build()
            .map_err(|e| KtError::Contract(format!("thread pool: {e}")))?;
        return pool.install(|| run(g, params));
    }
    run(g, params)
}

fn run(g: &AttributedGraph, params: &Params) -> Result<Anonymized> {
    let mut timings = PhaseTimings::default();
    let th = params.thresholds();
    if g.is_empty() {
        return Ok(Anonymized {
            graph: g.clone(),
            log: EditLog::default(),
            partition_cores: Vec::new(),
            protection_sets: Vec::new(),
            merge_costs: BTreeMap::new(),
            layers: BTreeMap::new(),
            variant: Variant::WithEdits,
            verdict: verify_kt_safe_graph(g, &th)?,
            timings,
        });
    }
    let clock = Instant::now();
    let parts = partition_for(g, params)?;
    timings.partition = clock.elapsed();

    let clock = Instant::now();
    let fill = fill_code(g)?;
    let first_new = g.next_id();
    let done: Vec<AnonymizedPart> = parts
        .par_iter()
        .map(|p| anonymize_partition(p, params, first_new, fill))
        .collect::<Result<_>>()?;
    timings.generation = clock.elapsed();

    let clock = Instant::now();
    let merged = merge_subgraphs(&done, g, params.n)?;
    timings.merge = clock.elapsed();

    let clock = Instant::now();
    let (m_a, comps_a) = layer_plan(&merged.graph, params)?;
    let cost_a = merged.log.len() + layer_cost(&merged.graph, &m_a, &comps_a);
    let (base, base_log, mut m, comps, variant) = if merged.log.is_empty() {
        (merged.graph, merged.log, m_a, comps_a, Variant::WithEdits)
    } else {
        let (m_b, comps_b) = layer_plan(g, params)?;
        if layer_cost(g, &m_b, &comps_b) < cost_a {
            (g.clone(), EditLog::default(), m_b, comps_b, Variant::LayersOnly)
        } else {
            (merged.graph, merged.log, m_a, comps_a, Variant::WithEdits)
        }
    };
    let (mut out, mut log) = materialize(&base, &base_log, &m, &comps, fill)?;
    timings.layers = clock.elapsed();

    let clock = Instant::now();
    let mut verdict = verify_kt_safe_graph(&out, &th)?;
    let mut rounds = 0;
    while !verdict.safe && rounds < 3 {
        // safety net: one more layer for every component holding a failure
        let (comp, _) = components(&base);
        let mut bumped = BTreeSet::new();
        for f in &verdict.failures {
            let src = match out.vertex(f.vertex).map(|v| v.origin) {
                Some(_) if base.contains(f.vertex) => f.vertex,
                _ => continue,
            };
            bumped.insert(comp[base.position(src).unwrap()]);
        }
        if bumped.is_empty() {
            break;
        }
        for c in bumped {
            m[c] += 1;
        }
        (out, log) = materialize(&base, &base_log, &m, &comps, fill)?;
        verdict = verify_kt_safe_graph(&out, &th)?;
        rounds += 1;
    }
    timings.verify = clock.elapsed();
    if !verdict.safe {
        return Err(KtError::Verification(verdict.failing_ids()));
    }
    let layers = comps
        .iter()
        .zip(&m)
        .filter(|(_, &k)| k > 0)
        .map(|(c, &k)| (base.id_at(c[0]), k))
        .collect();
    Ok(Anonymized {
        graph: out,
        log,
        partition_cores: parts.iter().map(|p| p.core_ids.len()).collect(),
        protection_sets: done.into_iter().flat_map(|p| p.protection_sets).collect(),
        merge_costs: merged.merge_costs,
        layers,
        variant,
        verdict,
        timings,
    })
}
