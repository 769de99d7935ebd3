//! Tab-separated graph files and report output.
//!
//! Vertex file: optional `#` header lines declaring the schema, then one
//! `id<TAB>A_1<TAB>...<TAB>A_d` line per vertex, `-` for a missing value.
//!
//! ```text
//! #attribute	A1	0.4,0.5,0.6
//! #attribute	A2	0.1,0.2,0.3
//! #sensitive	below	1
//! 1	0.5	0.3
//! ```
//!
//! `#sensitive` takes `below <domain position>` or `values <code>,<code>`.
//! Edge file: one `u<TAB>v` line per edge; repeats collapse, self-loops are
//! rejected. Saved graphs carry no origin column and get fresh ids drawn
//! under the run seed.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{KtError, Result};
use crate::graph::{AttributeSchema, AttributedGraph, Code, Origin, SensitivityPolicy, VertexId};

fn parse_err(path: &str, line: usize, msg: impl Into<String>) -> KtError {
    KtError::Parse { path: path.to_string(), line, msg: msg.into() }
}

fn parse_header(lines: &[(usize, String)], path: &str) -> Result<Option<AttributeSchema>> {
    let mut names = Vec::new();
    let mut domains: Vec<Vec<String>> = Vec::new();
    let mut sensitive = None;
    for (no, l) in lines {
        let f: Vec<&str> = l[1..].split('\t').collect();
        match (f[0], f.len()) {
            ("attribute", 3) => {
                names.push(f[1].to_string());
                domains.push(f[2].split(',').map(str::to_string).collect());
            }
            ("sensitive", 3) => sensitive = Some((*no, f[1].to_string(), f[2].to_string())),
            ("attribute" | "sensitive", _) => return Err(parse_err(path, *no, "malformed header line")),
            _ => {}
        }
    }
    if names.is_empty() {
        return Ok(None);
    }
    let (no, kind, arg) = sensitive.ok_or_else(|| KtError::Schema(format!("{path}: header declares no #sensitive line")))?;
    let policy = match kind.as_str() {
        "below" => SensitivityPolicy::Below(arg.parse().map_err(|_| parse_err(path, no, "bad threshold position"))?),
        "values" => {
            let dom = domains.last().unwrap();
            let mut set = BTreeSet::new();
            for t in arg.split(',').filter(|t| !t.is_empty()) {
                let c = dom
                    .iter()
                    .position(|x| x == t)
                    .ok_or_else(|| KtError::Schema(format!("{path}: sensitive value {t:?} outside the domain")))?;
                set.insert(c as Code);
            }
            SensitivityPolicy::Values(set)
        }
        other => return Err(parse_err(path, no, format!("unknown policy {other:?}"))),
    };
    AttributeSchema::new(names, domains, policy).map(Some)
}

/// Parses a vertex and an edge stream. `schema` overrides any header.
pub fn read_graph(
    vertices: impl BufRead,
    edges: impl BufRead,
    schema: Option<&AttributeSchema>,
    vertex_name: &str,
    edge_name: &str,
) -> Result<AttributedGraph> {
    let mut header = Vec::new();
    let mut rows = Vec::new();
    for (i, line) in vertices.lines().enumerate() {
        let line = line?;
        let no = i + 1;
        let t = line.trim_end_matches('\r');
        if t.trim().is_empty() {
            continue;
        }
        if t.starts_with('#') {
            if rows.is_empty() {
                header.push((no, t.to_string()));
            }
            continue;
        }
        rows.push((no, t.to_string()));
    }
    let schema = match schema {
        Some(s) => s.clone(),
        None => parse_header(&header, vertex_name)?
            .ok_or_else(|| KtError::Schema(format!("{vertex_name}: no schema header and none supplied")))?,
    };
    let d = schema.d();
    let mut parsed: BTreeMap<VertexId, (usize, Vec<Code>)> = BTreeMap::new();
    for (no, t) in rows {
        let f: Vec<&str> = t.split('\t').collect();
        if f.len() != d + 1 {
            return Err(parse_err(vertex_name, no, format!("expected {} fields, got {}", d + 1, f.len())));
        }
        let id: VertexId = f[0].trim().parse().map_err(|_| parse_err(vertex_name, no, format!("bad id {:?}", f[0])))?;
        let mut attrs = Vec::with_capacity(d);
        for (j, x) in f[1..].iter().enumerate() {
            attrs.push(schema.code_of(j, x.trim()).map_err(|e| KtError::Schema(format!("{vertex_name}:{no}: {e}")))?);
        }
        if parsed.insert(id, (no, attrs)).is_some() {
            return Err(parse_err(vertex_name, no, format!("vertex {id} listed twice")));
        }
    }
    let mut g = AttributedGraph::new(schema);
    for (id, (_, attrs)) in parsed {
        g.add_vertex(id, attrs, Origin::Original)?;
    }
    for (i, line) in edges.lines().enumerate() {
        let line = line?;
        let no = i + 1;
        let t = line.trim_end_matches('\r');
        if t.trim().is_empty() || t.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = t.split('\t').collect();
        if f.len() != 2 {
            return Err(parse_err(edge_name, no, format!("expected 2 fields, got {}", f.len())));
        }
        let mut ends = [0u64; 2];
        for (k, x) in f.iter().enumerate() {
            ends[k] = x.trim().parse().map_err(|_| parse_err(edge_name, no, format!("bad id {x:?}")))?;
        }
        let [u, v] = ends;
        if u == v {
            return Err(parse_err(edge_name, no, format!("self-loop on {u}")));
        }
        for x in [u, v] {
            if !g.contains(x) {
                return Err(KtError::Referential(format!("{edge_name}:{no}: unknown vertex {x}")));
            }
        }
        g.add_edge(u, v)?;
    }
    Ok(g)
}

/// Loads a graph from a vertex file and an edge file.
pub fn load_graph(vertex_path: &Path, edge_path: &Path, schema: Option<&AttributeSchema>) -> Result<AttributedGraph> {
    let v = BufReader::new(File::open(vertex_path)?);
    let e = BufReader::new(File::open(edge_path)?);
    read_graph(v, e, schema, &vertex_path.display().to_string(), &edge_path.display().to_string())
}

fn header_lines(s: &AttributeSchema) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for (name, dom) in s.names().iter().zip(s.domains()) {
        if name.contains(['\t', '\n']) || dom.iter().any(|c| c.contains([',', '\t', '\n'])) {
            return Err(KtError::Schema(format!("attribute {name:?} cannot be written as TSV")));
        }
        out.push(format!("#attribute\t{name}\t{}", dom.join(",")));
    }
    let dom = s.domain(s.sensitive_index());
    out.push(match s.policy() {
        SensitivityPolicy::Below(c) => format!("#sensitive\tbelow\t{c}"),
        SensitivityPolicy::Values(set) => format!(
            "#sensitive\tvalues\t{}",
            set.iter().map(|&c| dom[c as usize].as_str()).collect::<Vec<_>>().join(",")
        ),
    });
    Ok(out)
}

/// Writes `g` with ids replaced by a seeded permutation of `1..=|V|`.
/// Returns the old-to-new id map.
pub fn write_graph(
    g: &AttributedGraph,
    mut vertices: impl Write,
    mut edges: impl Write,
    seed: u64,
) -> Result<BTreeMap<VertexId, VertexId>> {
    let s = g.schema();
    let mut fresh: Vec<VertexId> = (1..=g.len() as u64).collect();
    fresh.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let map: BTreeMap<VertexId, VertexId> = g.ids().zip(fresh.iter().copied()).collect();
    for h in header_lines(s)? {
        writeln!(vertices, "{h}")?;
    }
    writeln!(vertices, "#id\t{}", s.names().join("\t"))?;
    writeln!(edges, "#u\tv")?;
    let mut rows: Vec<(VertexId, usize)> = (0..g.len()).map(|i| (map[&g.id_at(i)], i)).collect();
    rows.sort_unstable();
    for (id, i) in rows {
        let v = g.vertex_at(i);
        let vals: Vec<&str> = v.attrs.iter().enumerate().map(|(j, &c)| s.label(j, c)).collect();
        writeln!(vertices, "{id}\t{}", vals.join("\t"))?;
    }
    let mut es: Vec<(VertexId, VertexId)> = g
        .edges()
        .map(|(a, b)| {
            let (x, y) = (map[&a], map[&b]);
            (x.min(y), x.max(y))
        })
        .collect();
    es.sort_unstable();
    for (a, b) in es {
        writeln!(edges, "{a}\t{b}")?;
    }
    vertices.flush()?;
    edges.flush()?;
    Ok(map)
}

pub fn save_graph(g: &AttributedGraph, vertex_path: &Path, edge_path: &Path, seed: u64) -> Result<BTreeMap<VertexId, VertexId>> {
    let v = BufWriter::new(File::create(vertex_path)?);
    let e = BufWriter::new(File::create(edge_path)?);
    write_graph(g, v, e, seed)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(std::io::Error::other)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Two-column CSV of a histogram.
pub fn write_histogram_csv(path: &Path, key: &str, hist: &BTreeMap<usize, usize>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{key},count")?;
    for (k, c) in hist {
        writeln!(w, "{k},{c}")?;
    }
    w.flush()?;
    Ok(())
}
