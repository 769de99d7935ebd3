//! Command-line front end. Exit codes: 0 success, 1 usage or contract
//! error, 2 verification failed, 3 input/output error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::anonymize::{anonymize, IndexMode, Params, PartitionStrategy};
use crate::distances::anonymization_cost;
use crate::error::KtError;
use crate::fixtures::demo_graph;
use crate::generate::{generate_synthetic, GeneratorKind};
use crate::graph::AttributedGraph;
use crate::io::{load_graph, save_graph, write_histogram_csv, write_json};
use crate::metrics::{graph_utility, UtilityReport};
use crate::partition::calibrate_cost_sample;
use crate::verify::{verify_kt_safe_graph, Thresholds};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_UNSAFE: i32 = 2;
pub const EXIT_IO: i32 = 3;

/// Version of the JSON report layout.
pub const REPORT_VERSION: u32 = 1;

#[derive(Parser, Debug)]
#[command(name = "ktsafe", version, about = "kt-safe anonymization of attributed graphs", arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Anonymize a graph, verify the result and write it out.
    Anonymize(AnonymizeArgs),
    /// Check a graph for kt-safety; exits 2 when any vertex fails.
    Verify(VerifyArgs),
    /// Utility measures of an original and an anonymized graph.
    Report(ReportArgs),
    /// Write a synthetic graph.
    Generate(GenerateArgs),
    /// Build the cost sample the partitioner calibrates on.
    Calibrate(CalibrateArgs),
}

#[derive(Args, Debug, Clone)]
struct InputArgs {
    /// Vertex TSV file.
    #[arg(long, requires = "edges")]
    vertices: Option<PathBuf>,
    /// Edge TSV file.
    #[arg(long, requires = "vertices")]
    edges: Option<PathBuf>,
    /// Use the built-in six-vertex demo graph.
    #[arg(long, conflicts_with_all = ["vertices", "generate"])]
    demo: bool,
    /// Generate the input instead of loading it.
    #[arg(long, value_enum, conflicts_with = "vertices")]
    generate: Option<GeneratorKind>,
    /// Vertex count for --generate.
    #[arg(long, default_value_t = 10_000)]
    nodes: usize,
}

#[derive(Args, Debug, Clone)]
struct ThresholdArgs {
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 0.1)]
    t: f64,
    #[arg(long, default_value_t = 5)]
    epsilon: u64,
    #[arg(long, default_value_t = 0.2)]
    alpha: f64,
    #[arg(long, default_value_t = 1)]
    n: usize,
}

impl ThresholdArgs {
    fn thresholds(&self) -> Thresholds {
        Thresholds { k: self.k, t: self.t, epsilon: self.epsilon, alpha: self.alpha, n: self.n }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum PartitionArg {
    Cost,
    Recursive,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum IndexArg {
    Auto,
    Scan,
    Pivots,
    Tree,
}

#[derive(Args, Debug, Clone)]
struct SearchArgs {
    /// Largest partition core.
    #[arg(long, default_value_t = 1000)]
    gamma: usize,
    /// Branching factor of the partitioner.
    #[arg(long, default_value_t = 4)]
    s: usize,
    #[arg(long, value_enum, default_value_t = PartitionArg::Cost)]
    partition: PartitionArg,
    /// Calibration sample size for the cost model.
    #[arg(long, default_value_t = 1000)]
    sample_size: usize,
    /// Center-search iterations.
    #[arg(long, default_value_t = 50)]
    ite: usize,
    #[arg(long, value_enum, default_value_t = IndexArg::Auto)]
    index: IndexArg,
    #[arg(long, default_value_t = 10)]
    pivots: usize,
    #[arg(long, default_value_t = 100)]
    pivot_iter: usize,
    #[arg(long, default_value_t = 1000)]
    pivot_sample: usize,
    /// Worker threads, 0 for one per core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Args, Debug)]
struct AnonymizeArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    th: ThresholdArgs,
    #[command(flatten)]
    search: SearchArgs,
    /// Falls back to KT_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, requires = "out_edges")]
    out_vertices: Option<PathBuf>,
    #[arg(long, requires = "out_vertices")]
    out_edges: Option<PathBuf>,
    /// JSON report path.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Directory for histogram CSV files.
    #[arg(long)]
    csv_dir: Option<PathBuf>,
    /// Vertex pairs sampled for path lengths.
    #[arg(long, default_value_t = 1000)]
    pairs: usize,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    th: ThresholdArgs,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long)]
    original_vertices: PathBuf,
    #[arg(long)]
    original_edges: PathBuf,
    #[arg(long)]
    anonymized_vertices: PathBuf,
    #[arg(long)]
    anonymized_edges: PathBuf,
    #[command(flatten)]
    th: ThresholdArgs,
    #[arg(long, default_value_t = 1000)]
    pairs: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long)]
    csv_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    kind: GeneratorKind,
    #[arg(long, default_value_t = 10_000)]
    nodes: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_vertices: PathBuf,
    #[arg(long)]
    out_edges: PathBuf,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    th: ThresholdArgs,
    #[command(flatten)]
    search: SearchArgs,
    #[arg(long)]
    seed: Option<u64>,
    /// JSON output path.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Unsafe(String),
    Io(String),
}

impl From<KtError> for Failure {
    fn from(e: KtError) -> Self {
        match e {
            KtError::Verification(_) => Failure::Unsafe(e.to_string()),
            KtError::Io(_) | KtError::Parse { .. } | KtError::Schema(_) | KtError::Referential(_) | KtError::Domain(_) => {
                Failure::Io(e.to_string())
            }
            _ => Failure::Usage(e.to_string()),
        }
    }
}

fn resolve_seed(seed: Option<u64>) -> Result<u64, Failure> {
    if let Some(s) = seed {
        return Ok(s);
    }
    match std::env::var("KT_SEED") {
        Ok(v) => v.trim().parse().map_err(|_| Failure::Usage(format!("KT_SEED={v:?} is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

fn load_input(input: &InputArgs, seed: u64) -> Result<AttributedGraph, Failure> {
    if input.demo {
        return Ok(demo_graph());
    }
    if let Some(kind) = input.generate {
        return Ok(generate_synthetic(kind, input.nodes, seed)?);
    }
    match (&input.vertices, &input.edges) {
        (Some(v), Some(e)) => Ok(load_graph(v, e, None)?),
        _ => Err(Failure::Usage("give --vertices and --edges, --generate or --demo".into())),
    }
}

fn params_from(th: &ThresholdArgs, search: &SearchArgs, seed: u64) -> Params {
    Params {
        k: th.k,
        t: th.t,
        epsilon: th.epsilon,
        alpha: th.alpha,
        n: th.n,
        gamma: search.gamma,
        s: search.s,
        seed,
        partition: match search.partition {
            PartitionArg::Cost => PartitionStrategy::CostModel { sample_size: search.sample_size, ite: search.ite },
            PartitionArg::Recursive => PartitionStrategy::Recursive,
        },
        index: match search.index {
            IndexArg::Auto => IndexMode::Auto,
            IndexArg::Scan => IndexMode::Scan,
            IndexArg::Pivots => IndexMode::Pivots,
            IndexArg::Tree => IndexMode::KtTree,
        },
        pivot_count: search.pivots,
        pivot_iter: search.pivot_iter,
        pivot_sample: search.pivot_sample,
        workers: search.workers,
    }
}

#[derive(Serialize)]
struct ParamsReport {
    k: usize,
    t: f64,
    epsilon: u64,
    alpha: f64,
    n: usize,
    gamma: usize,
    s: usize,
    seed: u64,
    partition: String,
    index: String,
}

#[derive(Serialize)]
struct GraphSize {
    vertices: usize,
    edges: usize,
}

#[derive(Serialize)]
struct Timings {
    partition_s: f64,
    generation_s: f64,
    merge_s: f64,
    layers_s: f64,
    verify_s: f64,
}

#[derive(Serialize)]
struct Utility {
    original: UtilityReport,
    anonymized: UtilityReport,
}

/// Everything except `timings` is reproducible under a fixed seed.
#[derive(Serialize)]
struct RunReport {
    report_version: u32,
    params: ParamsReport,
    input: GraphSize,
    output: GraphSize,
    anonymization_cost: usize,
    edit_log_length: usize,
    partition_cores: Vec<usize>,
    replica_layers: usize,
    partition_edits_kept: bool,
    safe: bool,
    kt_safe_fraction: f64,
    utility: Utility,
    timings: Timings,
}

fn write_csvs(dir: &Path, tag: &str, u: &UtilityReport) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(KtError::from)?;
    write_histogram_csv(&dir.join(format!("{tag}_degree.csv")), "degree", &u.degree_histogram)?;
    write_histogram_csv(&dir.join(format!("{tag}_clustering.csv")), "transitivity_bin", &u.clustering_histogram)?;
    let mut spl: BTreeMap<usize, usize> = BTreeMap::new();
    for &h in &u.spl_samples {
        *spl.entry(h as usize).or_default() += 1;
    }
    write_histogram_csv(&dir.join(format!("{tag}_spl.csv")), "path_length", &spl)?;
    Ok(())
}

fn cmd_anonymize(a: AnonymizeArgs) -> Result<(), Failure> {
    let seed = resolve_seed(a.seed)?;
    let g = load_input(&a.input, seed)?;
    let p = params_from(&a.th, &a.search, seed);
    let out = anonymize(&g, &p)?;
    if let (Some(v), Some(e)) = (&a.out_vertices, &a.out_edges) {
        save_graph(&out.graph, v, e, seed)?;
    }
    let cost = anonymization_cost(&g, &out.graph);
    println!(
        "safe: {} vertices, {} edges -> {} vertices, {} edges; cost {cost}",
        g.len(),
        g.edge_count(),
        out.graph.len(),
        out.graph.edge_count()
    );
    if a.report.is_some() || a.csv_dir.is_some() {
        let orig = graph_utility(&g, a.pairs, seed)?;
        let mut anon = graph_utility(&out.graph, a.pairs, seed)?;
        anon.kt_safe_fraction = Some(out.verdict.safe_fraction());
        if let Some(dir) = &a.csv_dir {
            write_csvs(dir, "original", &orig)?;
            write_csvs(dir, "anonymized", &anon)?;
        }
        if let Some(path) = &a.report {
            let t = &out.timings;
            let r = RunReport {
                report_version: REPORT_VERSION,
                params: ParamsReport {
                    k: p.k,
                    t: p.t,
                    epsilon: p.epsilon,
                    alpha: p.alpha,
                    n: p.n,
                    gamma: p.gamma,
                    s: p.s,
                    seed,
                    partition: format!("{:?}", p.partition),
                    index: format!("{:?}", p.index),
                },
                input: GraphSize { vertices: g.len(), edges: g.edge_count() },
                output: GraphSize { vertices: out.graph.len(), edges: out.graph.edge_count() },
                anonymization_cost: cost,
                edit_log_length: out.log.len(),
                partition_cores: out.partition_cores.clone(),
                replica_layers: out.layers.values().sum(),
                partition_edits_kept: out.variant == crate::anonymize::Variant::WithEdits,
                safe: out.verdict.safe,
                kt_safe_fraction: out.verdict.safe_fraction(),
                utility: Utility { original: orig, anonymized: anon },
                timings: Timings {
                    partition_s: t.partition.as_secs_f64(),
                    generation_s: t.generation.as_secs_f64(),
                    merge_s: t.merge.as_secs_f64(),
                    layers_s: t.layers.as_secs_f64(),
                    verify_s: t.verify.as_secs_f64(),
                },
            };
            write_json(path, &r)?;
        }
    }
    Ok(())
}

fn cmd_verify(a: VerifyArgs) -> Result<(), Failure> {
    let seed = resolve_seed(a.seed)?;
    let g = load_input(&a.input, seed)?;
    let v = verify_kt_safe_graph(&g, &a.th.thresholds())?;
    println!("checked {} vertices, {} unsafe", v.checked, v.failures.len());
    if v.safe {
        return Ok(());
    }
    for f in &v.failures {
        println!(
            "unsafe {}: protection set {}, sensitive fraction {:.4}",
            f.vertex, f.protection_size, f.sensitive_fraction
        );
    }
    Err(Failure::Unsafe(format!("{} unsafe vertices", v.failures.len())))
}

fn cmd_report(a: ReportArgs) -> Result<(), Failure> {
    let seed = resolve_seed(a.seed)?;
    let orig = load_graph(&a.original_vertices, &a.original_edges, None)?;
    let anon_g = load_graph(&a.anonymized_vertices, &a.anonymized_edges, None)?;
    let o = graph_utility(&orig, a.pairs, seed)?;
    let mut an = graph_utility(&anon_g, a.pairs, seed)?;
    an.kt_safe_fraction = Some(verify_kt_safe_graph(&anon_g, &a.th.thresholds())?.safe_fraction());
    println!(
        "mean degree {:.4} -> {:.4}; mean path length {:.4} -> {:.4}; kt-safe fraction {:.4}",
        o.degree.mean,
        an.degree.mean,
        o.spl.mean,
        an.spl.mean,
        an.kt_safe_fraction.unwrap()
    );
    if let Some(dir) = &a.csv_dir {
        write_csvs(dir, "original", &o)?;
        write_csvs(dir, "anonymized", &an)?;
    }
    if let Some(path) = &a.json {
        #[derive(Serialize)]
        struct Out {
            report_version: u32,
            original: UtilityReport,
            anonymized: UtilityReport,
        }
        write_json(path, &Out { report_version: REPORT_VERSION, original: o, anonymized: an })?;
    }
    Ok(())
}

fn cmd_generate(a: GenerateArgs) -> Result<(), Failure> {
    let seed = resolve_seed(a.seed)?;
    let g = generate_synthetic(a.kind, a.nodes, seed)?;
    save_graph(&g, &a.out_vertices, &a.out_edges, seed)?;
    println!("{} vertices, {} edges", g.len(), g.edge_count());
    Ok(())
}

fn cmd_calibrate(a: CalibrateArgs) -> Result<(), Failure> {
    let seed = resolve_seed(a.seed)?;
    let g = load_input(&a.input, seed)?;
    let p = params_from(&a.th, &a.search, seed);
    let sample = calibrate_cost_sample(&g, a.search.sample_size.min(g.len()), &p, seed)?;
    let total: f64 = sample.per_vertex_kt_cost.values().sum();
    let mean = total / sample.ball_sizes.len().max(1) as f64;
    println!("sample of {} vertices, mean cost {mean:.4}", sample.sample_graph.len());
    if let Some(path) = &a.out {
        #[derive(Serialize)]
        struct Out {
            report_version: u32,
            sample_vertices: usize,
            sample_edges: usize,
            per_vertex_kt_cost: BTreeMap<u64, f64>,
            per_border_merge_cost: BTreeMap<u64, f64>,
            ball_sizes: BTreeMap<u64, usize>,
        }
        write_json(
            path,
            &Out {
                report_version: REPORT_VERSION,
                sample_vertices: sample.sample_graph.len(),
                sample_edges: sample.sample_graph.edge_count(),
                per_vertex_kt_cost: sample.per_vertex_kt_cost,
                per_border_merge_cost: sample.per_border_merge_cost,
                ball_sizes: sample.ball_sizes,
            },
        )?;
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    let res = match cli.command {
        Command::Anonymize(a) => cmd_anonymize(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Report(a) => cmd_report(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Calibrate(a) => cmd_calibrate(a),
    };
    match res {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            EXIT_USAGE
        }
        Err(Failure::Unsafe(m)) => {
            eprintln!("error: {m}");
            EXIT_UNSAFE
        }
        Err(Failure::Io(m)) => {
            eprintln!("error: {m}");
            EXIT_IO
        }
    }
}
