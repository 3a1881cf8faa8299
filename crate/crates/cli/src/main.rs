//! `dyngraph`: benchmark and verification front end.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dyngraph::harness::{run_workload, BlockSizeChoice, HarnessError, InputSource, OpsMix, RunReport, WorkloadSpec};
use dyngraph::io::{BatchSize, EdgeOrder, GraphFormat};
use dyngraph::verify::{run_random_workload, VerifyConfig};
use dyngraph::{Error, GrowthPolicy};
use log::info;
use serde::Deserialize;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_ENGINE: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "dyngraph", version, about = "Batched dynamic graph benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load or generate a graph, run insert/delete batches and report timings
    /// and memory as CSV.
    Bench(BenchArgs),
    /// Run randomized workloads against the reference model.
    Verify(VerifyArgs),
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Graph file; omit when using --synthetic.
    #[arg(long, required_unless_present = "synthetic")]
    input: Option<PathBuf>,
    #[arg(long, default_value = "mtx", value_parser = parse_from_str::<GraphFormat>)]
    format: GraphFormat,
    /// Add the reverse of every non-loop edge (undirected inputs).
    #[arg(long)]
    symmetrize: bool,
    /// Generate the input instead of reading a file.
    #[arg(long, value_enum, conflicts_with = "input")]
    synthetic: Option<Synthetic>,
    #[arg(long, default_value_t = 100_000)]
    vertices: usize,
    #[arg(long, default_value_t = 1_000_000)]
    edges: usize,
    /// Out-degree skew of the power-law generator.
    #[arg(long, default_value_t = 1.0)]
    exponent: f64,
    /// Edges per batch (e.g. 100000, 1M) or `bulk`.
    #[arg(long, value_parser = parse_from_str::<BatchSize>)]
    batch_size: Option<BatchSize>,
    #[arg(long, value_enum, default_value = "insert")]
    ops: Ops,
    /// `auto` or entries per edge block.
    #[arg(long)]
    block_size: Option<String>,
    #[arg(long)]
    arena_bytes: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Edge order fed to batches; `shuffled` uses --seed.
    #[arg(long, value_enum)]
    order: Option<Order>,
    /// Worker threads; 0 uses all cores.
    #[arg(long)]
    threads: Option<usize>,
    /// Keep emptied blocks in their trees after deletes.
    #[arg(long)]
    no_reclaim: bool,
    /// Query pairs issued after the updates.
    #[arg(long)]
    queries: Option<usize>,
    /// TOML file with defaults for the options above and a [policy] table.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output path; stdout if omitted.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long, default_value_t = 1_000)]
    workloads: u64,
    /// First seed; workloads use consecutive seeds.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4_096)]
    max_vertices: usize,
    #[arg(long, default_value_t = 100_000)]
    max_edges: usize,
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Synthetic {
    Uniform,
    PowerLaw,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Ops {
    Insert,
    /// Insert all batches, then delete them in the same order.
    Delete,
    /// Delete a random half of each batch right after inserting it.
    Mixed,
}

#[derive(Clone, Copy, Debug, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Order {
    Prefix,
    Shuffled,
}

/// Defaults read from `--config`; command-line flags win.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    batch_size: Option<String>,
    block_size: Option<String>,
    arena_bytes: Option<u64>,
    seed: Option<u64>,
    order: Option<Order>,
    threads: Option<usize>,
    reclaim_on_delete: Option<bool>,
    queries: Option<usize>,
    policy: Option<GrowthPolicy>,
}

fn parse_from_str<T: FromStr<Err = String>>(s: &str) -> Result<T, String> {
    s.parse()
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        let code = match e {
            HarnessError::Load(_) | HarnessError::Output(_) => EXIT_DATA,
            HarnessError::Engine(Error::InvalidArgument(_)) => EXIT_USAGE,
            HarnessError::Engine(_) => EXIT_ENGINE,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn parse_block_size(s: &str) -> Result<BlockSizeChoice, Failure> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(BlockSizeChoice::Auto);
    }
    match s.parse::<usize>() {
        Ok(b) if b > 0 => Ok(BlockSizeChoice::Fixed(b)),
        _ => Err(Failure::usage(format!(
            "block size {s:?} must be 'auto' or a positive integer"
        ))),
    }
}

fn load_config(path: &PathBuf) -> Result<FileConfig, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure {
        code: EXIT_DATA,
        message: format!("{}: {e}", path.display()),
    })?;
    toml::from_str(&text).map_err(|e| Failure {
        code: EXIT_DATA,
        message: format!("{}: {e}", path.display()),
    })
}

fn workload_spec(args: &BenchArgs) -> Result<WorkloadSpec, Failure> {
    let file = match &args.config {
        Some(path) => load_config(path)?,
        None => FileConfig::default(),
    };
    let (name, input) = match (&args.input, args.synthetic) {
        (Some(path), _) => (
            path.file_stem()
                .map_or("input".into(), |s| s.to_string_lossy().into_owned()),
            InputSource::File {
                path: path.clone(),
                format: args.format,
                symmetrize: args.symmetrize,
            },
        ),
        (None, Some(Synthetic::Uniform)) => (
            "uniform".to_string(),
            InputSource::Uniform {
                vertices: args.vertices,
                edges: args.edges,
            },
        ),
        (None, Some(Synthetic::PowerLaw)) => (
            "power-law".to_string(),
            InputSource::PowerLaw {
                vertices: args.vertices,
                edges: args.edges,
                exponent: args.exponent,
            },
        ),
        (None, None) => return Err(Failure::usage("either --input or --synthetic is required")),
    };
    if matches!(input, InputSource::Uniform { vertices: 0, edges } | InputSource::PowerLaw { vertices: 0, edges, .. } if edges > 0)
    {
        return Err(Failure::usage("--edges > 0 needs --vertices > 0"));
    }

    let mut spec = WorkloadSpec::new(name, input);
    spec.batch_size = match (args.batch_size, &file.batch_size) {
        (Some(b), _) => b,
        (None, Some(s)) => s.parse().map_err(Failure::usage)?,
        (None, None) => BatchSize::Bulk,
    };
    spec.ops = match args.ops {
        Ops::Insert => OpsMix::Insert,
        Ops::Delete => OpsMix::InsertThenDelete,
        Ops::Mixed => OpsMix::Mixed,
    };
    spec.block_size = match args.block_size.as_ref().or(file.block_size.as_ref()) {
        Some(s) => parse_block_size(s)?,
        None => BlockSizeChoice::Auto,
    };
    if let Some(bytes) = args.arena_bytes.or(file.arena_bytes) {
        spec.arena_bytes = bytes;
    }
    spec.seed = args.seed.or(file.seed).unwrap_or(0);
    spec.order = match args.order.or(file.order).unwrap_or(Order::Prefix) {
        Order::Prefix => EdgeOrder::Prefix,
        Order::Shuffled => EdgeOrder::Shuffled(spec.seed),
    };
    spec.threads = args.threads.or(file.threads).unwrap_or(0);
    spec.reclaim_on_delete = !args.no_reclaim && file.reclaim_on_delete.unwrap_or(true);
    spec.query_samples = args.queries.or(file.queries).unwrap_or(0);
    if let Some(policy) = file.policy {
        policy.validate().map_err(|e| Failure::usage(e.to_string()))?;
        spec.policy = policy;
    }
    Ok(spec)
}

fn summarize(report: &RunReport) {
    let (insert_ms, inserted) = report.insert_totals();
    let (delete_ms, deleted) = report.delete_totals();
    let s = &report.stats;
    info!(
        "{}: {} vertices, {} input edges, block size {}",
        report.graph, report.vertices, report.input_edges, report.block_size
    );
    info!(
        "init {:.3} ms, {inserted} inserted in {insert_ms:.3} ms, {deleted} deleted in {delete_ms:.3} ms",
        report.init_ms()
    );
    info!(
        "{} live edges in {} blocks, hole ratio {:.3}; {}/{} queries hit",
        report.final_edges, s.blocks, s.hole_ratio, report.query_hits, report.query_count
    );
}

fn bench(args: &BenchArgs) -> Result<(), Failure> {
    let spec = workload_spec(args)?;
    let report = run_workload(&spec)?;
    summarize(&report);
    let out: Box<dyn Write> = match &args.csv {
        Some(path) => Box::new(BufWriter::new(File::create(path).map_err(|e| Failure {
            code: EXIT_DATA,
            message: format!("{}: {e}", path.display()),
        })?)),
        None => Box::new(io::stdout().lock()),
    };
    report.write_csv(out)?;
    Ok(())
}

fn verify(args: &VerifyArgs) -> Result<(), Failure> {
    let config = VerifyConfig {
        max_vertices: args.max_vertices.max(1),
        max_edges: args.max_edges.max(1),
        threads: args.threads,
        ..VerifyConfig::default()
    };
    let start = Instant::now();
    let mut failed = 0u64;
    let mut edges = 0usize;
    for seed in args.seed..args.seed + args.workloads {
        let outcome = run_random_workload(seed, &config).map_err(|e| Failure {
            code: EXIT_ENGINE,
            message: format!("seed {seed}: {e}"),
        })?;
        edges += outcome.edges_inserted;
        if !outcome.passed() {
            failed += 1;
            println!(
                "seed {seed}: {} mismatches, {} violations",
                outcome.mismatches.mismatches.len(),
                outcome.violations.len()
            );
            for v in outcome.violations.iter().take(3) {
                println!("  {v}");
            }
            for m in outcome.mismatches.mismatches.iter().take(3) {
                println!("  {m:?}");
            }
        }
    }
    println!(
        "{} workloads (seeds {}..{}), {edges} edges, {failed} failed, {:.1} s",
        args.workloads,
        args.seed,
        args.seed + args.workloads,
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        return Err(Failure {
            code: EXIT_ENGINE,
            message: format!("{failed} workloads disagree with the reference model"),
        });
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Bench(args) => bench(args),
        Command::Verify(args) => verify(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
