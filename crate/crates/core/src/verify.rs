//! Independent kt-safety checker. Uses only the graph model and the
//! distance kernels, so it shares no state or logic with the anonymizer.

use std::collections::{BTreeMap, HashMap, VecDeque};

use rayon::prelude::*;

use crate::distances::{
    emd_counts, ged_lower_bound, ged_prepared_bounded, BoundedGed, PreparedBall, QiInterner,
};
use crate::error::{KtError, Result};
use crate::graph::{ball_at, is_sensitive, AttributedGraph, Code, NeighborhoodSubgraph, VertexId};

/// Slack on floating comparisons against `t` and `alpha`.
pub const TOLERANCE: f64 = 1e-12;

/// The privacy thresholds a graph is checked against.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Thresholds {
    pub k: usize,
    pub t: f64,
    pub epsilon: u64,
    pub alpha: f64,
    pub n: usize,
}

/// Why a same-QI vertex is not in the protection set.
#[derive(Clone, Debug, PartialEq)]
pub enum Exclusion {
    /// Edit distance above epsilon (the value is a lower bound when not exact).
    Ged(u64),
    /// The search budget ran out before the distance was settled.
    GedUnknown,
    Emd { radius: usize, attribute: usize, distance: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Witness {
    TooFewPeers { found: usize, required: usize },
    SensitiveFraction { fraction: f64, alpha: f64 },
    Excluded { vertex: VertexId, reason: Exclusion },
}

#[derive(Clone, Debug, PartialEq)]
pub struct VertexVerdict {
    pub vertex: VertexId,
    pub safe: bool,
    pub protection_size: usize,
    pub sensitive_fraction: f64,
    pub witness: Vec<Witness>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphVerdict {
    pub safe: bool,
    pub checked: usize,
    pub failures: Vec<VertexVerdict>,
}

impl GraphVerdict {
    pub fn safe_fraction(&self) -> f64 {
        if self.checked == 0 {
            1.0
        } else {
            (self.checked - self.failures.len()) as f64 / self.checked as f64
        }
    }

    pub fn failing_ids(&self) -> Vec<VertexId> {
        self.failures.iter().map(|f| f.vertex).collect()
    }
}

fn check_thresholds(th: &Thresholds) -> Result<()> {
    if th.k < 1 || !(0.0..=1.0).contains(&th.t) || !(th.alpha > 0.0 && th.alpha <= 1.0) || th.n < 1 {
        return Err(KtError::Contract(format!("invalid thresholds {th:?}")));
    }
    Ok(())
}

/// Everything the protection-set test needs from one ball.
struct Profile {
    ball: PreparedBall,
    // [radius - 1][attribute] -> sorted histogram
    hist: Vec<Vec<Vec<(Code, usize)>>>,
}

fn profile(hn: &NeighborhoodSubgraph, n: usize, qd: usize, qi: &mut QiInterner) -> Profile {
    let mut hist = Vec::with_capacity(n);
    for l in 1..=n {
        let cut = hn.members.partition_point(|m| m.hop <= l);
        let skip = usize::from(!hn.center_in_pdf);
        let mut per_attr = Vec::with_capacity(qd);
        for j in 0..qd {
            let mut counts: BTreeMap<Code, usize> = BTreeMap::new();
            for m in &hn.members[skip..cut] {
                if m.attrs[j] != crate::graph::MISSING {
                    *counts.entry(m.attrs[j]).or_default() += 1;
                }
            }
            per_attr.push(counts.into_iter().collect());
        }
        hist.push(per_attr);
    }
    Profile { ball: qi.prepare(hn), hist }
}

/// First attribute distribution that differs by more than `t`.
fn emd_violation(a: &Profile, b: &Profile, t: f64) -> Option<Exclusion> {
    for (l, (ha, hb)) in a.hist.iter().zip(&b.hist).enumerate() {
        for (j, (x, y)) in ha.iter().zip(hb).enumerate() {
            let d = emd_counts(x, y);
            if d > t + TOLERANCE {
                return Some(Exclusion::Emd { radius: l + 1, attribute: j, distance: d });
            }
        }
    }
    None
}

fn relation(a: &Profile, b: &Profile, th: &Thresholds) -> std::result::Result<(), Exclusion> {
    if let Some(e) = emd_violation(a, b, th.t) {
        return Err(e);
    }
    match ged_prepared_bounded(&a.ball, &b.ball, th.epsilon) {
        BoundedGed::Within(_) => Ok(()),
        BoundedGed::Exceeds => Err(Exclusion::Ged(ged_lower_bound(&a.ball, &b.ball).max(th.epsilon + 1))),
        BoundedGed::Unknown(_) => Err(Exclusion::GedUnknown),
    }
}

fn verdict(vertex: VertexId, size: usize, sens: usize, th: &Thresholds, mut witness: Vec<Witness>) -> VertexVerdict {
    let fraction = sens as f64 / size.max(1) as f64;
    let mut safe = true;
    if size < th.k {
        safe = false;
        witness.insert(0, Witness::TooFewPeers { found: size, required: th.k });
    }
    if fraction > th.alpha + TOLERANCE {
        safe = false;
        witness.insert(0, Witness::SensitiveFraction { fraction, alpha: th.alpha });
    }
    VertexVerdict { vertex, safe, protection_size: size, sensitive_fraction: fraction, witness }
}

/// Recomputes `v`'s protection set by scanning every vertex and reports
/// whether `v` is kt-safe. Same-QI vertices that fall out are listed in
/// the witness with the failing condition.
pub fn verify_kt_safe_vertex(g: &AttributedGraph, v: VertexId, th: &Thresholds) -> Result<VertexVerdict> {
    check_thresholds(th)?;
    let vi = g.index_of(v)?;
    let qd = g.schema().d() - 1;
    let mut qi = QiInterner::default();
    let pv = profile(&ball_at(g, vi, th.n), th.n, qd, &mut qi);
    let qi_v = g.vertex_at(vi).qi().to_vec();
    let (mut size, mut sens) = (0, 0);
    let mut witness = Vec::new();
    for (i, u) in g.vertices().iter().enumerate() {
        if u.qi() != qi_v.as_slice() {
            continue;
        }
        let ok = if i == vi {
            Ok(())
        } else {
            relation(&pv, &profile(&ball_at(g, i, th.n), th.n, qd, &mut qi), th)
        };
        match ok {
            Ok(()) => {
                size += 1;
                if is_sensitive(u.sensitive_code(), g.schema())? {
                    sens += 1;
                }
            }
            Err(reason) => witness.push(Witness::Excluded { vertex: u.id, reason }),
        }
    }
    Ok(verdict(v, size, sens, th, witness))
}

/// Protection-set sizes for every vertex at once. Vertices with isomorphic
/// balls (same labels, same structure) have identical protection sets, so
/// distances are only computed between one representative per class.
#[derive(Clone, Debug)]
pub struct ProtectionIndex {
    class_of: Vec<usize>,
    class_size: Vec<usize>,
    class_sensitive: Vec<usize>,
    related: Vec<Vec<usize>>,
}

impl ProtectionIndex {
    pub fn class_of(&self, pos: usize) -> usize {
        self.class_of[pos]
    }

    pub fn class_count(&self) -> usize {
        self.class_size.len()
    }

    /// Classes whose members belong to the protection set of class `c`, including `c`.
    pub fn related(&self, c: usize) -> &[usize] {
        &self.related[c]
    }

    pub fn class_size(&self, c: usize) -> usize {
        self.class_size[c]
    }

    pub fn class_sensitive(&self, c: usize) -> usize {
        self.class_sensitive[c]
    }

    /// `(|PS|, sensitive members of PS)` of the vertex at position `pos`.
    pub fn protection(&self, pos: usize) -> (usize, usize) {
        let c = self.class_of[pos];
        self.related[c]
            .iter()
            .fold((0, 0), |(s, x), &r| (s + self.class_size[r], x + self.class_sensitive[r]))
    }
}

/// For each vertex of a component that equals an earlier component under
/// the id-rank bijection (same quasi-identifiers rank by rank, same edges),
/// the matching vertex of the earlier one. The bijection is an isomorphism,
/// so matched vertices have isomorphic balls.
fn component_aliases(g: &AttributedGraph) -> Vec<Option<usize>> {
    let mut seen = vec![false; g.len()];
    let mut rank = vec![0u32; g.len()];
    let mut alias = vec![None; g.len()];
    let mut firsts: HashMap<Vec<(&[Code], Vec<u32>)>, Vec<usize>> = HashMap::new();
    for s in 0..g.len() {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut members = vec![s];
        let mut q = VecDeque::from([s]);
        while let Some(u) = q.pop_front() {
            for &w in g.adj_idx(u) {
                if !seen[w] {
                    seen[w] = true;
                    members.push(w);
                    q.push_back(w);
                }
            }
        }
        members.sort_unstable();
        for (r, &i) in members.iter().enumerate() {
            rank[i] = r as u32;
        }
        let key: Vec<(&[Code], Vec<u32>)> = members
            .iter()
            .map(|&i| {
                let mut ns: Vec<u32> = g.adj_idx(i).iter().map(|&w| rank[w]).collect();
                ns.sort_unstable();
                (g.vertex_at(i).qi(), ns)
            })
            .collect();
        match firsts.get(&key) {
            Some(first) => {
                for (&i, &j) in members.iter().zip(first) {
                    alias[i] = Some(j);
                }
            }
            None => {
                firsts.insert(key, members);
            }
        }
    }
    alias
}

/// Builds the class structure of `g` under `th`.
pub fn protection_index(g: &AttributedGraph, th: &Thresholds) -> Result<ProtectionIndex> {
    check_thresholds(th)?;
    let qd = g.schema().d() - 1;
    let mut groups: HashMap<&[Code], Vec<usize>> = HashMap::new();
    for (i, v) in g.vertices().iter().enumerate() {
        groups.entry(v.qi()).or_default().push(i);
    }
    let mut groups: Vec<Vec<usize>> = groups.into_values().collect();
    groups.sort_by_key(|m| m[0]);
    let sens: Vec<bool> = g
        .vertices()
        .iter()
        .map(|v| is_sensitive(v.sensitive_code(), g.schema()))
        .collect::<Result<_>>()?;
    let alias = component_aliases(g);

    // per group: (classes as member lists, relation over local classes)
    let results: Vec<(Vec<Vec<usize>>, Vec<Vec<usize>>)> = groups
        .par_iter()
        .map(|members| {
            let mut qi = QiInterner::default();
            let mut reps: Vec<Profile> = Vec::new();
            let mut classes: Vec<Vec<usize>> = Vec::new();
            let mut buckets: HashMap<(Vec<(u64, u32)>, Vec<u32>), Vec<usize>> = HashMap::new();
            let mut local: HashMap<usize, usize> = HashMap::new();
            for &i in members.iter().filter(|&&i| alias[i].is_none()) {
                let p = profile(&ball_at(g, i, th.n), th.n, qd, &mut qi);
                let key = (p.ball.label_counts(), p.ball.degree_sequence());
                let bucket = buckets.entry(key).or_default();
                let hit = bucket.iter().copied().find(|&c| {
                    reps[c].hist == p.hist
                        && ged_prepared_bounded(&reps[c].ball, &p.ball, 0) == BoundedGed::Within(0)
                });
                let c = match hit {
                    Some(c) => c,
                    None => {
                        bucket.push(reps.len());
                        reps.push(p);
                        classes.push(Vec::new());
                        reps.len() - 1
                    }
                };
                classes[c].push(i);
                local.insert(i, c);
            }
            for &i in members {
                if let Some(j) = alias[i] {
                    classes[local[&j]].push(i);
                }
            }
            let c = reps.len();
            let mut rel = vec![Vec::new(); c];
            for a in 0..c {
                rel[a].push(a);
                for b in a + 1..c {
                    if relation(&reps[a], &reps[b], th).is_ok() {
                        rel[a].push(b);
                        rel[b].push(a);
                    }
                }
            }
            (classes, rel)
        })
        .collect();

    let mut class_of = vec![0usize; g.len()];
    let mut class_size = Vec::new();
    let mut class_sensitive = Vec::new();
    let mut related = Vec::new();
    for (classes, rel) in results {
        let base = class_size.len();
        for members in &classes {
            let c = class_size.len();
            for &i in members {
                class_of[i] = c;
            }
            class_size.push(members.len());
            class_sensitive.push(members.iter().filter(|&&i| sens[i]).count());
        }
        for mut r in rel {
            for x in r.iter_mut() {
                *x += base;
            }
            r.sort_unstable();
            related.push(r);
        }
    }
    Ok(ProtectionIndex { class_of, class_size, class_sensitive, related })
}

/// Checks every vertex; the graph is safe iff no vertex fails.
pub fn verify_kt_safe_graph(g: &AttributedGraph, th: &Thresholds) -> Result<GraphVerdict> {
    let ix = protection_index(g, th)?;
    let mut failures = Vec::new();
    for i in 0..g.len() {
        let (size, sens) = ix.protection(i);
        let v = verdict(g.id_at(i), size, sens, th, Vec::new());
        if !v.safe {
            failures.push(v);
        }
    }
    Ok(GraphVerdict { safe: failures.is_empty(), checked: g.len(), failures })
}
