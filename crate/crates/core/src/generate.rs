//! Synthetic attributed graphs with uniform, Gaussian or Zipf degrees.
//!
//! Each vertex draws a target degree; edges come from a configuration-model
//! pairing of degree stubs. Self-loops and repeated pairs are rejected and
//! their stubs re-paired, for at most [`REPAIR_ROUNDS`] rounds; whatever is
//! left over is dropped. Four attributes over the codes `1..5` follow the
//! same distribution family as the degrees. The last attribute is the
//! sensitive one, with values below 2 sensitive.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Zipf};
use serde::{Deserialize, Serialize};

use crate::error::{KtError, Result};
use crate::graph::{policy_below, AttributeSchema, AttributedGraph, Code, Origin};

pub const MAX_DEGREE: u32 = 40;
pub const GAUSSIAN_MEAN: f64 = 20.0;
pub const GAUSSIAN_SIGMA: f64 = 8.0;
pub const ZIPF_EXPONENT: f64 = 0.8;
pub const REPAIR_ROUNDS: usize = 100;
pub const ATTRIBUTES: usize = 4;
pub const CODES: [&str; 5] = ["1", "2", "3", "4", "5"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorKind {
    Uniform,
    Gaussian,
    Zipf,
}

/// Schema shared by all generated graphs.
pub fn synthetic_schema() -> AttributeSchema {
    let dom: Vec<String> = CODES.iter().map(|s| s.to_string()).collect();
    let policy = policy_below(&dom, "2");
    let names = (1..=ATTRIBUTES).map(|j| format!("A{j}")).collect();
    AttributeSchema::new(names, vec![dom; ATTRIBUTES], policy).expect("valid synthetic schema")
}

struct Sampler {
    kind: GeneratorKind,
    normal: Normal<f64>,
    zipf_degree: Zipf<f64>,
    zipf_code: Zipf<f64>,
}

impl Sampler {
    fn new(kind: GeneratorKind) -> Self {
        Sampler {
            kind,
            normal: Normal::new(0.0, 1.0).unwrap(),
            zipf_degree: Zipf::new(MAX_DEGREE as f64, ZIPF_EXPONENT).unwrap(),
            zipf_code: Zipf::new(CODES.len() as f64, ZIPF_EXPONENT).unwrap(),
        }
    }

    fn degree(&self, rng: &mut ChaCha8Rng) -> u32 {
        match self.kind {
            GeneratorKind::Uniform => rng.random_range(0..=MAX_DEGREE),
            GeneratorKind::Gaussian => {
                let x = GAUSSIAN_MEAN + GAUSSIAN_SIGMA * self.normal.sample(rng);
                x.round().max(0.0) as u32
            }
            GeneratorKind::Zipf => self.zipf_degree.sample(rng) as u32,
        }
    }

    // code index in 0..5
    fn code(&self, rng: &mut ChaCha8Rng) -> Code {
        let top = CODES.len() as f64 - 1.0;
        match self.kind {
            GeneratorKind::Uniform => rng.random_range(0..CODES.len()) as Code,
            GeneratorKind::Gaussian => {
                // same shape as the degrees, rescaled onto the code range
                let x = top / 2.0 + top * GAUSSIAN_SIGMA / (2.0 * GAUSSIAN_MEAN) * self.normal.sample(rng);
                x.round().clamp(0.0, top) as Code
            }
            GeneratorKind::Zipf => (self.zipf_code.sample(rng) as usize - 1) as Code,
        }
    }
}

/// Draws a graph of `node_count` vertices with ids `1..=node_count`.
pub fn generate_synthetic(kind: GeneratorKind, node_count: usize, seed: u64) -> Result<AttributedGraph> {
    if node_count == 0 {
        return Err(KtError::Contract("node_count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sampler = Sampler::new(kind);
    let mut g = AttributedGraph::new(synthetic_schema());
    let mut degrees = Vec::with_capacity(node_count);
    for id in 1..=node_count as u64 {
        degrees.push(sampler.degree(&mut rng));
        let attrs = (0..ATTRIBUTES).map(|_| sampler.code(&mut rng)).collect();
        g.add_vertex(id, attrs, Origin::Original)?;
    }
    for (a, b) in configuration_pairs(&degrees, &mut rng) {
        g.add_edge(a as u64 + 1, b as u64 + 1)?;
    }
    Ok(g)
}

/// Simple-graph edges realizing `degrees` as closely as the pairing allows.
pub fn configuration_pairs(degrees: &[u32], rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let mut stubs: Vec<usize> = degrees
        .iter()
        .enumerate()
        .flat_map(|(i, &d)| std::iter::repeat_n(i, d as usize))
        .collect();
    let mut seen: HashSet<(usize, usize)> = HashSet::new();
    let mut edges = Vec::new();
    for _ in 0..=REPAIR_ROUNDS {
        if stubs.len() < 2 {
            break;
        }
        stubs.shuffle(rng);
        let mut rejected = Vec::new();
        for pair in stubs.chunks(2) {
            let &[a, b] = pair else {
                rejected.push(pair[0]);
                continue;
            };
            let key = (a.min(b), a.max(b));
            if a == b || !seen.insert(key) {
                rejected.extend([a, b]);
            } else {
                edges.push(key);
            }
        }
        if rejected.len() == stubs.len() && rejected.iter().all(|&x| x == rejected[0]) {
            break;
        }
        stubs = rejected;
    }
    edges
}
