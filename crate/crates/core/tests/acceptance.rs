//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! `KT_ACCEPT=1,4,9` runs a subset. `KT_ACCEPT_STRICT=1` makes a failing
//! criterion fail the process; otherwise the exit code is 0 so the numbers
//! stay visible under `cargo test`.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use ktsafe::anonymize::{anonymize, partition_for, Anonymized, Params};
use ktsafe::cli;
use ktsafe::distances::{anonymization_cost, emd_counts, emd_pdfs, ged_neighborhood};
use ktsafe::fixtures::demo_graph;
use ktsafe::generate::{generate_synthetic, GeneratorKind};
use ktsafe::graph::{hop_neighborhood, AttributedGraph, Code};
use ktsafe::index::{build_kt_tree, initial_candidate, kt_tree_candidates, select_pivots, Index, DEFAULT_BITS};
use ktsafe::metrics::graph_utility;
use ktsafe::partition::{calibrate_cost_sample, estimate_partition_cost, select_partitioning};
use ktsafe::verify::verify_kt_safe_graph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const C1_RUNTIME: Duration = Duration::from_secs(1);
const C2_GRAPHS: usize = 50;
const C2_COMBOS: usize = 10;
const C2_RUNTIME: Duration = Duration::from_secs(600);
const C4_GRAPHS: usize = 200;
const C4_TRIANGLE_GRAPHS: usize = 20;
const C4_EDIT_ORACLE_MAX: usize = 4;
const C5_TOLERANCE: f64 = 0.30;
const C5_RUNTIME: Duration = Duration::from_secs(900);
const C6_TOLERANCE: f64 = 0.05;
const C6_PAIRS: usize = 2000;
const BIG_NODES: usize = 10_000;
const C7_TARGETS: [(GeneratorKind, f64, f64); 3] = [
    (GeneratorKind::Uniform, 97_779.0, 0.10),
    (GeneratorKind::Gaussian, 163_973.0, 0.10),
    (GeneratorKind::Zipf, 56_067.0, 0.25),
];
const C9_PAIRS: usize = 10_000;
const C9_TOLERANCE: f64 = 1e-12;
const KINDS: [GeneratorKind; 3] = [GeneratorKind::Uniform, GeneratorKind::Gaussian, GeneratorKind::Zipf];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn demo_params() -> Params {
    Params { k: 2, t: 0.0, epsilon: 0, n: 1, alpha: 0.5, gamma: 3, s: 2, ..Params::default() }
}

fn c1() -> Outcome {
    let g = demo_graph();
    let p = demo_params();
    let start = Instant::now();
    let out = match anonymize(&g, &p) {
        Ok(o) => o,
        Err(e) => return outcome(false, format!("anonymize failed: {e}")),
    };
    let took = start.elapsed();
    let safe = verify_kt_safe_graph(&out.graph, &p.thresholds()).map(|v| v.safe).unwrap_or(false);
    let cores_ok = out.partition_cores == [3, 3];
    outcome(
        safe && cores_ok && took < C1_RUNTIME,
        format!("safe={safe} cores={:?} |V'|={} time={took:.2?}", out.partition_cores, out.graph.len()),
    )
}

/// Parameter grid: k, alpha, epsilon, t, n, gamma, s.
fn grid_combos(count: usize, seed: u64) -> Vec<Params> {
    let ks = [5, 10, 15, 20];
    let alphas = [0.1, 0.2, 0.3];
    let epss = [3, 4, 5, 6, 7];
    let ts = [0.1, 0.2, 0.3, 0.4];
    let ns = [1, 2];
    let gammas = [500, 1000, 1500, 2000];
    let ss = [2, 3, 4, 5, 6];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| Params {
            k: ks[rng.random_range(0..ks.len())],
            alpha: alphas[rng.random_range(0..alphas.len())],
            epsilon: epss[rng.random_range(0..epss.len())],
            t: ts[rng.random_range(0..ts.len())],
            n: ns[rng.random_range(0..ns.len())],
            gamma: gammas[rng.random_range(0..gammas.len())],
            s: ss[rng.random_range(0..ss.len())],
            seed: i as u64,
            ..Params::default()
        })
        .collect()
}

struct GridRun {
    label: String,
    k: usize,
    vertices: usize,
    edges: usize,
    result: Result<(bool, usize, usize), String>,
}

fn grid_runs() -> (Vec<GridRun>, Duration) {
    let combos = grid_combos(C2_COMBOS, 2024);
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let graphs: Vec<(usize, GeneratorKind, u64)> =
        (0..C2_GRAPHS).map(|i| (rng.random_range(50..=500), KINDS[i % 3], 1000 + i as u64)).collect();
    let jobs: Vec<(usize, usize)> = (0..graphs.len()).flat_map(|g| (0..combos.len()).map(move |c| (g, c))).collect();
    let start = Instant::now();
    let runs = jobs
        .par_iter()
        .map(|&(gi, ci)| {
            let (nv, kind, seed) = graphs[gi];
            let g = generate_synthetic(kind, nv, seed).unwrap();
            let p = &combos[ci];
            let label = format!("graph {gi} ({kind:?}, {nv}) combo {ci}");
            let result = anonymize(&g, p).map_err(|e| e.to_string()).and_then(|out| {
                let safe = verify_kt_safe_graph(&out.graph, &p.thresholds()).map_err(|e| e.to_string())?.safe;
                Ok((safe, anonymization_cost(&g, &out.graph), out.log.len()))
            });
            GridRun { label, k: p.k, vertices: g.len(), edges: g.edge_count(), result }
        })
        .collect();
    (runs, start.elapsed())
}

fn c2(runs: &[GridRun], took: Duration) -> Outcome {
    let bad: Vec<String> = runs
        .iter()
        .filter_map(|r| match &r.result {
            Ok((true, _, _)) => None,
            Ok((false, _, _)) => Some(format!("{}: unsafe", r.label)),
            Err(e) => Some(format!("{}: {e}", r.label)),
        })
        .collect();
    let pass = bad.is_empty() && took < C2_RUNTIME;
    let mut detail = format!("{} runs, {} not safe, time={took:.1?}", runs.len(), bad.len());
    if let Some(first) = bad.first() {
        detail.push_str(&format!("; first: {first}"));
    }
    outcome(pass, detail)
}

fn c3(runs: &[GridRun]) -> Outcome {
    let mut over = Vec::new();
    let mut log_mismatch = 0;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for r in runs {
        let Ok((_, cost, log_len)) = r.result else { continue };
        checked += 1;
        let bound = (r.k - 1) * (r.vertices + r.edges);
        worst = worst.max(cost as f64 / bound.max(1) as f64);
        if cost > bound {
            over.push(format!("{} cost {cost} > {bound}", r.label));
        }
        if cost != log_len {
            log_mismatch += 1;
        }
    }
    let mut detail = format!(
        "{checked} runs, {} above (k-1)(|V|+|E|), worst ratio {worst:.3}, {log_mismatch} log/cost mismatches",
        over.len()
    );
    if let Some(first) = over.first() {
        detail.push_str(&format!("; first: {first}"));
    }
    outcome(checked == runs.len() && over.is_empty() && log_mismatch == 0, detail)
}

fn c4() -> Outcome {
    let start = Instant::now();
    let mismatches: usize = (0..C4_GRAPHS as u64)
        .into_par_iter()
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let nv = rng.random_range(30..=100);
            let p = 3.0 / nv as f64;
            let g = common::random_graph(nv, p, rng.random_range(1..=3), 4000 + seed);
            let n = if seed % 4 == 3 { 2 } else { 1 };
            let eps = rng.random_range(1..=5);
            let piv = select_pivots(&g, 30, 10, 3, eps, n, seed).unwrap();
            let tree = build_kt_tree(&g, piv.clone(), DEFAULT_BITS, n).unwrap();
            g.ids()
                .filter(|&v| {
                    let scan = initial_candidate(&g, v, eps, n, None).unwrap();
                    initial_candidate(&g, v, eps, n, Some(Index::Pivots(&piv))).unwrap() != scan
                        || kt_tree_candidates(&tree, &g, v, eps).unwrap() != scan
                })
                .count()
        })
        .sum();

    let mut triangle = 0usize;
    let mut oracle = 0usize;
    let mut triples = 0usize;
    for seed in 0..C4_TRIANGLE_GRAPHS as u64 {
        let g = common::random_graph(8, 0.3, 2, 9000 + seed);
        let balls: Vec<_> = g.ids().map(|v| hop_neighborhood(&g, v, 1).unwrap()).collect();
        let m = balls.len();
        let mut d = vec![vec![0u64; m]; m];
        for i in 0..m {
            for j in 0..m {
                let got = ged_neighborhood(&balls[i], &balls[j]).unwrap();
                let brute = common::ged_by_mapping(&balls[i], &balls[j]);
                let edits = common::ged_by_edits(&balls[i], &balls[j], C4_EDIT_ORACLE_MAX);
                let edits_ok = if brute as usize <= C4_EDIT_ORACLE_MAX { edits == Some(brute) } else { edits.is_none() };
                if !got.exact || got.distance != brute || !edits_ok {
                    oracle += 1;
                }
                d[i][j] = got.distance;
            }
        }
        for a in 0..m {
            for b in 0..m {
                for c in 0..m {
                    triples += 1;
                    if d[a][c] > d[a][b] + d[b][c] {
                        triangle += 1;
                    }
                }
            }
        }
    }
    outcome(
        mismatches == 0 && triangle == 0 && oracle == 0,
        format!(
            "{C4_GRAPHS} graphs: {mismatches} index/scan mismatches; {triples} triples: {triangle} triangle violations, \
             {oracle} oracle disagreements; time={:.1?}",
            start.elapsed()
        ),
    )
}

struct BigRun {
    kind: GeneratorKind,
    original: AttributedGraph,
    estimate: Result<f64, String>,
    out: Result<Anonymized, String>,
    took: Duration,
}

fn big_run(kind: GeneratorKind) -> BigRun {
    let g = generate_synthetic(kind, BIG_NODES, 1).unwrap();
    let p = Params::default();
    let start = Instant::now();
    let estimate = (|| {
        let ktsafe::anonymize::PartitionStrategy::CostModel { sample_size, ite } = p.partition else {
            unreachable!()
        };
        let sample = calibrate_cost_sample(&g, sample_size, &p, p.seed)?;
        let parts = select_partitioning(&g, p.gamma, p.s, p.n, ite, &sample, p.seed)?;
        debug_assert_eq!(parts.len(), partition_for(&g, &p)?.len());
        estimate_partition_cost(&parts, &sample, p.n)
    })()
    .map_err(|e| e.to_string());
    let out = anonymize(&g, &p).map_err(|e| e.to_string());
    BigRun { kind, original: g, estimate, out, took: start.elapsed() }
}

fn c5(runs: &[BigRun]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for r in runs {
        match (&r.estimate, &r.out) {
            (Ok(est), Ok(out)) => {
                let real = anonymization_cost(&r.original, &out.graph) as f64;
                let ok = rel(*est, real) <= C5_TOLERANCE && r.took < C5_RUNTIME;
                pass &= ok;
                parts.push(format!("{:?} est {est:.0} real {real:.0} ratio {:.3} time {:.0?}", r.kind, est / real, r.took));
            }
            (e, o) => {
                pass = false;
                parts.push(format!("{:?} error: {:?} {:?}", r.kind, e.as_ref().err(), o.as_ref().err()));
            }
        }
    }
    outcome(pass, parts.join("; "))
}

fn c6(runs: &[BigRun]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for r in runs {
        let Ok(out) = &r.out else {
            pass = false;
            parts.push(format!("{:?} anonymize failed", r.kind));
            continue;
        };
        let a = graph_utility(&r.original, C6_PAIRS, 11).unwrap();
        let b = graph_utility(&out.graph, C6_PAIRS, 11).unwrap();
        let (dd, ds) = (rel(b.degree.mean, a.degree.mean), rel(b.spl.mean, a.spl.mean));
        pass &= dd <= C6_TOLERANCE && ds <= C6_TOLERANCE;
        parts.push(format!(
            "{:?} degree {:.3}->{:.3} ({:+.1}%) spl {:.3}->{:.3} ({:+.1}%)",
            r.kind,
            a.degree.mean,
            b.degree.mean,
            100.0 * (b.degree.mean / a.degree.mean - 1.0),
            a.spl.mean,
            b.spl.mean,
            100.0 * (b.spl.mean / a.spl.mean - 1.0),
        ));
    }
    outcome(pass, parts.join("; "))
}

fn c7() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (kind, target, tol) in C7_TARGETS {
        let e = generate_synthetic(kind, BIG_NODES, 1).unwrap().edge_count() as f64;
        let ok = rel(e, target) <= tol;
        pass &= ok;
        parts.push(format!("{kind:?} |E|={e} target {target} ±{:.0}% {}", tol * 100.0, if ok { "ok" } else { "off" }));
    }
    outcome(pass, parts.join("; "))
}

fn cli_anonymize(dir: &Path, input: &[&str]) -> (i32, Vec<u8>, Vec<u8>, serde_json::Value) {
    let s = |n: &str| dir.join(n).display().to_string();
    let (v, e, r) = (s("v.tsv"), s("e.tsv"), s("r.json"));
    let mut args = vec!["ktsafe", "anonymize", "--seed", "17"];
    args.extend(input);
    args.extend(["--out-vertices", &v, "--out-edges", &e, "--report", &r]);
    let code = cli::run(args);
    let read = |p: &str| std::fs::read(p).unwrap_or_default();
    let mut report: serde_json::Value = serde_json::from_slice(&read(&r)).unwrap_or_default();
    if let Some(m) = report.as_object_mut() {
        m.remove("timings");
    }
    (code, read(&v), read(&e), report)
}

fn c8() -> Outcome {
    let inputs: [&[&str]; 2] = [
        &["--demo", "--k", "2", "--t", "0", "--epsilon", "0", "--n", "1", "--alpha", "0.5", "--gamma", "3", "--s", "2"],
        &["--generate", "zipf", "--nodes", "400", "--k", "4", "--alpha", "0.3", "--workers", "3"],
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (i, input) in inputs.iter().enumerate() {
        let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let a = cli_anonymize(d1.path(), input);
        let b = cli_anonymize(d2.path(), input);
        let ok = a.0 == cli::EXIT_OK && a == b && !a.1.is_empty() && a.3.is_object();
        pass &= ok;
        parts.push(format!("config {i}: exit {} identical={}", a.0, a == b));
    }
    outcome(pass, parts.join("; "))
}

fn histogram(rng: &mut ChaCha8Rng) -> Vec<Code> {
    let len = rng.random_range(1..40);
    let width = rng.random_range(1..8u16);
    (0..len).map(|_| rng.random_range(0..width)).collect()
}

fn counts(xs: &[Code]) -> Vec<(Code, usize)> {
    let mut m: BTreeMap<Code, usize> = BTreeMap::new();
    for &x in xs {
        *m.entry(x).or_default() += 1;
    }
    m.into_iter().collect()
}

fn same_distribution(a: &[(Code, usize)], na: usize, b: &[(Code, usize)], nb: usize) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.0 == y.0 && x.1 * nb == y.1 * na)
}

/// Plain half-L1 over a dense code range.
fn half_l1(a: &[Code], b: &[Code]) -> f64 {
    let mut pa = [0.0f64; 8];
    let mut pb = [0.0f64; 8];
    a.iter().for_each(|&x| pa[x as usize] += 1.0 / a.len() as f64);
    b.iter().for_each(|&x| pb[x as usize] += 1.0 / b.len() as f64);
    0.5 * pa.iter().zip(&pb).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

fn c9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    let mut axioms = 0usize;
    for _ in 0..C9_PAIRS {
        let (a, b, c) = (histogram(&mut rng), histogram(&mut rng), histogram(&mut rng));
        let (ca, cb, cc) = (counts(&a), counts(&b), counts(&c));
        let ab = emd_counts(&ca, &cb);
        let pdf = |h: &[(Code, usize)], n: usize| -> BTreeMap<Code, f64> {
            h.iter().map(|&(k, c)| (k, c as f64 / n as f64)).collect()
        };
        let via_pdfs = emd_pdfs(&pdf(&ca, a.len()), &pdf(&cb, b.len()));
        worst = worst
            .max((ab - half_l1(&a, &b)).abs())
            .max((ab - common::emd_by_overlap(&a, &b)).abs())
            .max((via_pdfs - half_l1(&a, &b)).abs());
        let (ba, bc, ac) = (emd_counts(&cb, &ca), emd_counts(&cb, &cc), emd_counts(&ca, &cc));
        let ok = emd_counts(&ca, &ca) == 0.0
            && ab == ba
            && (0.0..=1.0 + C9_TOLERANCE).contains(&ab)
            && ac <= ab + bc + C9_TOLERANCE
            && (ab == 0.0) == same_distribution(&ca, a.len(), &cb, b.len());
        if !ok {
            axioms += 1;
        }
    }
    outcome(
        worst <= C9_TOLERANCE && axioms == 0,
        format!("{C9_PAIRS} pairs, max |diff| {worst:.2e}, {axioms} axiom violations"),
    )
}

fn main() {
    let selected: Option<Vec<u32>> =
        std::env::var("KT_ACCEPT").ok().map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let want = |c: u32| selected.as_ref().is_none_or(|s| s.contains(&c));
    let strict = std::env::var("KT_ACCEPT_STRICT").is_ok_and(|v| v == "1");

    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut report = |c: u32, name: &'static str, o: Outcome| {
        println!("criterion {c} {name}: {} ({})", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((c, name, o));
    };
    if want(1) {
        report(1, "demo graph", c1());
    }
    if want(2) || want(3) {
        let (runs, took) = grid_runs();
        if want(2) {
            report(2, "grid safety", c2(&runs, took));
        }
        if want(3) {
            report(3, "cost bound", c3(&runs));
        }
    }
    if want(4) {
        report(4, "index soundness", c4());
    }
    if want(5) || want(6) {
        let runs: Vec<BigRun> = KINDS.iter().map(|&k| big_run(k)).collect();
        if want(5) {
            report(5, "cost model", c5(&runs));
        }
        if want(6) {
            report(6, "utility", c6(&runs));
        }
    }
    if want(7) {
        report(7, "generators", c7());
    }
    if want(8) {
        report(8, "determinism", c8());
    }
    if want(9) {
        report(9, "emd kernel", c9());
    }
    let failed = results.iter().filter(|r| !r.2.pass).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if strict && failed > 0 {
        std::process::exit(1);
    }
}
