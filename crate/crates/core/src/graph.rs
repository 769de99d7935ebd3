//! Attributed graph model, n-hop balls and the sensitivity policy.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{KtError, Result};

pub type VertexId = u64;

/// Index of a value inside its attribute domain.
pub type Code = u16;

/// The "-" token. Equal to itself, never sensitive, skipped by pdfs.
pub const MISSING: Code = Code::MAX;

/// Attribute values of one vertex; the last entry is the sensitive attribute.
pub type AttributeVector = Vec<Code>;

/// Which codes of the sensitive attribute count as sensitive.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SensitivityPolicy {
    /// An explicit set of sensitive codes.
    Values(BTreeSet<Code>),
    /// Every code ordered strictly before this domain position.
    Below(Code),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSchema {
    names: Vec<String>,
    domains: Vec<Vec<String>>,
    policy: SensitivityPolicy,
}

impl AttributeSchema {
    pub fn new(
        names: Vec<String>,
        domains: Vec<Vec<String>>,
        policy: SensitivityPolicy,
    ) -> Result<Self> {
        if domains.len() < 2 {
            return Err(KtError::Schema(format!(
                "need at least 2 attributes, got {}",
                domains.len()
            )));
        }
        if names.len() != domains.len() {
            return Err(KtError::Schema("attribute names and domains differ in length".into()));
        }
        for (j, dom) in domains.iter().enumerate() {
            if dom.is_empty() {
                return Err(KtError::Schema(format!("domain of {} is empty", names[j])));
            }
            if dom.len() >= MISSING as usize {
                return Err(KtError::Schema(format!("domain of {} is too large", names[j])));
            }
            let mut seen = BTreeSet::new();
            for code in dom {
                if code == "-" {
                    return Err(KtError::Schema("\"-\" is reserved for missing values".into()));
                }
                if !seen.insert(code) {
                    return Err(KtError::Schema(format!(
                        "duplicate code {code:?} in domain of {}",
                        names[j]
                    )));
                }
            }
        }
        let sens_len = domains[domains.len() - 1].len();
        match &policy {
            SensitivityPolicy::Values(set) => {
                if let Some(c) = set.iter().find(|&&c| c as usize >= sens_len) {
                    return Err(KtError::Schema(format!("sensitive code {c} outside domain")));
                }
            }
            SensitivityPolicy::Below(c) => {
                if *c as usize > sens_len {
                    return Err(KtError::Schema(format!("threshold position {c} outside domain")));
                }
            }
        }
        Ok(AttributeSchema { names, domains, policy })
    }

    /// Schema with attributes `A1..Ad`, all sharing one domain.
    pub fn uniform(d: usize, codes: &[&str], policy: SensitivityPolicy) -> Result<Self> {
        let names = (1..=d).map(|j| format!("A{j}")).collect();
        let dom: Vec<String> = codes.iter().map(|s| s.to_string()).collect();
        Self::new(names, vec![dom; d], policy)
    }

    pub fn d(&self) -> usize {
        self.domains.len()
    }

    pub fn sensitive_index(&self) -> usize {
        self.domains.len() - 1
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn domain(&self, j: usize) -> &[String] {
        &self.domains[j]
    }

    pub fn domains(&self) -> &[Vec<String>] {
        &self.domains
    }

    pub fn policy(&self) -> &SensitivityPolicy {
        &self.policy
    }

    /// Parses a textual value of attribute `j`; "-" maps to [`MISSING`].
    pub fn code_of(&self, j: usize, text: &str) -> Result<Code> {
        if text == "-" {
            return Ok(MISSING);
        }
        self.domains[j]
            .iter()
            .position(|c| c == text)
            .map(|p| p as Code)
            .ok_or_else(|| {
                KtError::Domain(format!("{text:?} is not in the domain of {}", self.names[j]))
            })
    }

    pub fn label(&self, j: usize, code: Code) -> &str {
        if code == MISSING {
            "-"
        } else {
            &self.domains[j][code as usize]
        }
    }

    /// Checks one attribute vector against the domains.
    pub fn validate(&self, attrs: &[Code]) -> Result<()> {
        if attrs.len() != self.d() {
            return Err(KtError::Domain(format!(
                "expected {} attribute values, got {}",
                self.d(),
                attrs.len()
            )));
        }
        for (j, &c) in attrs.iter().enumerate() {
            if c != MISSING && c as usize >= self.domains[j].len() {
                return Err(KtError::Domain(format!("code {c} outside the domain of {}", self.names[j])));
            }
        }
        Ok(())
    }
}

/// Builds a `Below` policy from a threshold value, comparing numerically
/// when both sides parse as numbers and lexically otherwise.
pub fn policy_below(domain: &[String], threshold: &str) -> SensitivityPolicy {
    let pos = domain
        .iter()
        .position(|c| match (c.parse::<f64>(), threshold.parse::<f64>()) {
            (Ok(a), Ok(b)) => a >= b,
            _ => c.as_str() >= threshold,
        })
        .unwrap_or(domain.len());
    SensitivityPolicy::Below(pos as Code)
}

/// True when the policy flags `code`. MISSING is never sensitive.
pub fn is_sensitive(code: Code, schema: &AttributeSchema) -> Result<bool> {
    if code == MISSING {
        return Ok(false);
    }
    let len = schema.domain(schema.sensitive_index()).len();
    if code as usize >= len {
        return Err(KtError::Domain(format!("code {code} outside the sensitive domain")));
    }
    Ok(match schema.policy() {
        SensitivityPolicy::Values(set) => set.contains(&code),
        SensitivityPolicy::Below(c) => code < *c,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Origin {
    Original,
    DuplicateOf(VertexId),
    Fake,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vertex {
    pub id: VertexId,
    pub attrs: AttributeVector,
    pub origin: Origin,
}

impl Vertex {
    pub fn qi(&self) -> &[Code] {
        &self.attrs[..self.attrs.len() - 1]
    }

    pub fn sensitive_code(&self) -> Code {
        self.attrs[self.attrs.len() - 1]
    }
}

/// Undirected simple graph with attributed vertices.
///
/// Vertices are stored in ascending id order, so positional indices are
/// stable and every iteration order is deterministic. New vertices must
/// carry an id larger than every existing one (see [`AttributedGraph::next_id`]).
#[derive(Clone, Debug)]
pub struct AttributedGraph {
    schema: Arc<AttributeSchema>,
    vertices: Vec<Vertex>,
    adj: Vec<Vec<usize>>,
    edge_count: usize,
}

impl PartialEq for AttributedGraph {
    fn eq(&self, other: &Self) -> bool {
        self.schema == other.schema && self.vertices == other.vertices && self.adj == other.adj
    }
}

impl AttributedGraph {
    pub fn new(schema: AttributeSchema) -> Self {
        Self::with_schema(Arc::new(schema))
    }

    pub fn with_schema(schema: Arc<AttributeSchema>) -> Self {
        AttributedGraph { schema, vertices: Vec::new(), adj: Vec::new(), edge_count: 0 }
    }

    pub fn schema(&self) -> &AttributeSchema {
        &self.schema
    }

    pub fn schema_arc(&self) -> Arc<AttributeSchema> {
        Arc::clone(&self.schema)
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    /// Smallest id that may be inserted next.
    pub fn next_id(&self) -> VertexId {
        self.vertices.last().map_or(0, |v| v.id + 1)
    }

    pub fn add_vertex(&mut self, id: VertexId, attrs: AttributeVector, origin: Origin) -> Result<usize> {
        self.schema.validate(&attrs)?;
        if let Some(last) = self.vertices.last() {
            if id <= last.id {
                return Err(KtError::Contract(format!(
                    "vertex ids must be inserted in ascending order ({id} after {})",
                    last.id
                )));
            }
        }
        self.vertices.push(Vertex { id, attrs, origin });
        self.adj.push(Vec::new());
        Ok(self.vertices.len() - 1)
    }

    /// Inserts an undirected edge; returns false if it was already present.
    pub fn add_edge(&mut self, u: VertexId, v: VertexId) -> Result<bool> {
        if u == v {
            return Err(KtError::Contract(format!("self-loop on vertex {u}")));
        }
        let a = self.index_of(u)?;
        let b = self.index_of(v)?;
        Ok(self.add_edge_idx(a, b))
    }

    pub(crate) fn add_edge_idx(&mut self, a: usize, b: usize) -> bool {
        debug_assert_ne!(a, b);
        match self.adj[a].binary_search(&b) {
            Ok(_) => false,
            Err(pos) => {
                self.adj[a].insert(pos, b);
                let pos_b = self.adj[b].binary_search(&a).unwrap_err();
                self.adj[b].insert(pos_b, a);
                self.edge_count += 1;
                debug_assert!(self.adj[b].binary_search(&a).is_ok());
                true
            }
        }
    }

    pub fn index_of(&self, id: VertexId) -> Result<usize> {
        self.position(id).ok_or(KtError::UnknownVertex(id))
    }

    pub fn position(&self, id: VertexId) -> Option<usize> {
        self.vertices.binary_search_by_key(&id, |v| v.id).ok()
    }

    pub fn contains(&self, id: VertexId) -> bool {
        self.position(id).is_some()
    }

    pub fn vertex(&self, id: VertexId) -> Option<&Vertex> {
        self.position(id).map(|i| &self.vertices[i])
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn ids(&self) -> impl Iterator<Item = VertexId> + '_ {
        self.vertices.iter().map(|v| v.id)
    }

    pub fn id_at(&self, i: usize) -> VertexId {
        self.vertices[i].id
    }

    pub fn vertex_at(&self, i: usize) -> &Vertex {
        &self.vertices[i]
    }

    pub(crate) fn adj_idx(&self, i: usize) -> &[usize] {
        &self.adj[i]
    }

    pub fn neighbors(&self, id: VertexId) -> Result<Vec<VertexId>> {
        let i = self.index_of(id)?;
        Ok(self.adj[i].iter().map(|&j| self.vertices[j].id).collect())
    }

    pub fn degree(&self, id: VertexId) -> Result<usize> {
        Ok(self.adj[self.index_of(id)?].len())
    }

    pub fn has_edge(&self, u: VertexId, v: VertexId) -> bool {
        match (self.position(u), self.position(v)) {
            (Some(a), Some(b)) => self.adj[a].binary_search(&b).is_ok(),
            _ => false,
        }
    }

    /// Edges as `(u, v)` with `u < v`, in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (VertexId, VertexId)> + '_ {
        self.adj.iter().enumerate().flat_map(move |(a, nbrs)| {
            nbrs.iter()
                .filter(move |&&b| b > a)
                .map(move |&b| (self.vertices[a].id, self.vertices[b].id))
        })
    }

    /// Removes the vertex with the largest id and its edges (undo of the
    /// latest insertion).
    pub(crate) fn pop_vertex(&mut self) -> Option<Vertex> {
        let a = self.vertices.len().checked_sub(1)?;
        let nbrs = std::mem::take(&mut self.adj[a]);
        for &b in &nbrs {
            if let Ok(p) = self.adj[b].binary_search(&a) {
                self.adj[b].remove(p);
            }
        }
        self.edge_count -= nbrs.len();
        self.adj.pop();
        self.vertices.pop()
    }

    /// Overwrites the sensitive value of one vertex.
    pub fn set_sensitive(&mut self, id: VertexId, code: Code) -> Result<()> {
        let i = self.index_of(id)?;
        let d = self.schema.d();
        let mut attrs = self.vertices[i].attrs.clone();
        attrs[d - 1] = code;
        self.schema.validate(&attrs)?;
        self.vertices[i].attrs = attrs;
        Ok(())
    }

    /// Subgraph induced by `ids` (unknown ids are ignored).
    pub fn induced(&self, ids: &BTreeSet<VertexId>) -> AttributedGraph {
        let mut out = AttributedGraph::with_schema(self.schema_arc());
        let mut map = HashMap::with_capacity(ids.len());
        for &id in ids {
            if let Some(i) = self.position(id) {
                let v = &self.vertices[i];
                let ni = out.add_vertex(v.id, v.attrs.clone(), v.origin).expect("ascending ids");
                map.insert(i, ni);
            }
        }
        for (&i, &ni) in &map {
            for &j in &self.adj[i] {
                if let Some(&nj) = map.get(&j) {
                    if ni < nj {
                        out.add_edge_idx(ni, nj);
                    }
                }
            }
        }
        out
    }

    /// Full structural check: symmetric sorted adjacency, no loops, valid attributes.
    pub fn check_invariants(&self) -> Result<()> {
        let mut count = 0usize;
        for (a, nbrs) in self.adj.iter().enumerate() {
            if a > 0 && self.vertices[a - 1].id >= self.vertices[a].id {
                return Err(KtError::Contract("vertex ids not strictly ascending".into()));
            }
            self.schema.validate(&self.vertices[a].attrs)?;
            if let Origin::DuplicateOf(x) = self.vertices[a].origin {
                match self.vertex(x) {
                    Some(src) if src.origin == Origin::Original => {}
                    _ => {
                        return Err(KtError::Contract(format!(
                            "vertex {} duplicates {x}, which is not an original vertex",
                            self.vertices[a].id
                        )))
                    }
                }
            }
            for w in nbrs.windows(2) {
                if w[0] >= w[1] {
                    return Err(KtError::Contract("adjacency not sorted or has parallel edges".into()));
                }
            }
            for &b in nbrs {
                if b == a {
                    return Err(KtError::Contract("self-loop".into()));
                }
                if self.adj[b].binary_search(&a).is_err() {
                    return Err(KtError::Contract("asymmetric adjacency".into()));
                }
                if b > a {
                    count += 1;
                }
            }
        }
        if count != self.edge_count {
            return Err(KtError::Contract("edge counter out of sync".into()));
        }
        Ok(())
    }
}

/// One vertex of a ball, with its hop distance from the center.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BallMember {
    pub id: VertexId,
    pub hop: usize,
    pub attrs: AttributeVector,
}

/// Induced ball `HN(v, n)`: every vertex within `radius` hops of `center`.
///
/// `members[0]` is the center; members are ordered by `(hop, id)` and
/// `adj` holds the induced edges over member positions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborhoodSubgraph {
    pub center: VertexId,
    pub radius: usize,
    pub members: Vec<BallMember>,
    pub adj: Vec<Vec<usize>>,
    /// Whether the center's own values enter attribute distributions.
    pub center_in_pdf: bool,
}

impl NeighborhoodSubgraph {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn edges(&self) -> Vec<(VertexId, VertexId)> {
        let mut out = Vec::new();
        for (a, nbrs) in self.adj.iter().enumerate() {
            for &b in nbrs {
                if b > a {
                    let (x, y) = (self.members[a].id, self.members[b].id);
                    out.push((x.min(y), x.max(y)));
                }
            }
        }
        out.sort_unstable();
        out
    }

    pub fn member_ids(&self) -> Vec<VertexId> {
        self.members.iter().map(|m| m.id).collect()
    }

    pub fn hop_of(&self, id: VertexId) -> Option<usize> {
        self.members.iter().find(|m| m.id == id).map(|m| m.hop)
    }

    pub fn contains(&self, id: VertexId) -> bool {
        self.members.iter().any(|m| m.id == id)
    }

    /// The sub-ball of radius `l` (members are a prefix because of the hop order).
    pub fn restrict(&self, l: usize) -> NeighborhoodSubgraph {
        if l >= self.radius {
            return self.clone();
        }
        let cut = self.members.partition_point(|m| m.hop <= l);
        NeighborhoodSubgraph {
            center: self.center,
            radius: l,
            members: self.members[..cut].to_vec(),
            adj: self.adj[..cut]
                .iter()
                .map(|n| n.iter().copied().filter(|&b| b < cut).collect())
                .collect(),
            center_in_pdf: self.center_in_pdf,
        }
    }

    /// Same ball with the center left out of attribute distributions.
    pub fn without_center_in_pdf(mut self) -> Self {
        self.center_in_pdf = false;
        self
    }
}

/// Breadth-first ball of radius `n` around `v`, with induced edges.
pub fn hop_neighborhood(g: &AttributedGraph, v: VertexId, n: usize) -> Result<NeighborhoodSubgraph> {
    let c = g.index_of(v)?;
    Ok(ball_at(g, c, n))
}

pub(crate) fn ball_at(g: &AttributedGraph, c: usize, n: usize) -> NeighborhoodSubgraph {
    let (order, hops) = bfs_order(g, c, n);
    let mut local: HashMap<usize, usize> = HashMap::with_capacity(order.len());
    for (li, &gi) in order.iter().enumerate() {
        local.insert(gi, li);
    }
    let mut adj = vec![Vec::new(); order.len()];
    for (li, &gi) in order.iter().enumerate() {
        for &gj in g.adj_idx(gi) {
            if let Some(&lj) = local.get(&gj) {
                adj[li].push(lj);
            }
        }
        adj[li].sort_unstable();
    }
    let members = order
        .iter()
        .zip(&hops)
        .map(|(&gi, &hop)| {
            let vx = g.vertex_at(gi);
            BallMember { id: vx.id, hop, attrs: vx.attrs.clone() }
        })
        .collect();
    NeighborhoodSubgraph { center: g.id_at(c), radius: n, members, adj, center_in_pdf: true }
}

/// Positions within `n` hops of `c`, ordered by `(hop, id)`, with their hops.
pub(crate) fn bfs_order(g: &AttributedGraph, c: usize, n: usize) -> (Vec<usize>, Vec<usize>) {
    let mut order = vec![c];
    let mut hops = vec![0usize];
    let mut seen: HashMap<usize, ()> = HashMap::new();
    seen.insert(c, ());
    let mut start = 0;
    for h in 1..=n {
        let end = order.len();
        let mut layer = Vec::new();
        for idx in start..end {
            for &w in g.adj_idx(order[idx]) {
                if seen.insert(w, ()).is_none() {
                    layer.push(w);
                }
            }
        }
        if layer.is_empty() {
            break;
        }
        layer.sort_unstable();
        hops.extend(std::iter::repeat(h).take(layer.len()));
        order.extend(layer);
        start = end;
    }
    (order, hops)
}

/// Hop distances from `src` to every reachable position, up to `limit` hops.
pub(crate) fn bfs_distances(g: &AttributedGraph, src: usize, limit: usize) -> HashMap<usize, usize> {
    let mut dist = HashMap::new();
    dist.insert(src, 0);
    let mut queue = VecDeque::from([src]);
    while let Some(u) = queue.pop_front() {
        let du = dist[&u];
        if du == limit {
            continue;
        }
        for &w in g.adj_idx(u) {
            if let std::collections::hash_map::Entry::Vacant(e) = dist.entry(w) {
                e.insert(du + 1);
                queue.push_back(w);
            }
        }
    }
    dist
}

/// Normalized frequencies of attribute `j` over the ball; MISSING is skipped.
pub fn attribute_pdf(hn: &NeighborhoodSubgraph, j: usize) -> Result<BTreeMap<Code, f64>> {
    let counts = attribute_counts(hn, j)?;
    let total: usize = counts.values().sum();
    Ok(counts
        .into_iter()
        .map(|(c, n)| (c, n as f64 / total as f64))
        .collect())
}

/// Raw counts behind [`attribute_pdf`].
pub fn attribute_counts(hn: &NeighborhoodSubgraph, j: usize) -> Result<BTreeMap<Code, usize>> {
    let d = hn.members.first().map_or(0, |m| m.attrs.len());
    if j + 1 >= d {
        return Err(KtError::Policy(format!(
            "attribute {j} is not a quasi-identifier (d = {d})"
        )));
    }
    let skip = usize::from(!hn.center_in_pdf);
    let mut counts = BTreeMap::new();
    for m in &hn.members[skip..] {
        let c = m.attrs[j];
        if c != MISSING {
            *counts.entry(c).or_insert(0) += 1;
        }
    }
    Ok(counts)
}
