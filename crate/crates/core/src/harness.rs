//! Workload driver producing per-phase timings and memory snapshots.
//!
//! Loading, batch slicing and query-pair generation are not timed; only the
//! engine calls are.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::batch::{compute_block_size, BatchKind, CsrBatch};
use crate::engine::{DynGraph, EngineConfig, GraphStats, MemoryReport, DEFAULT_ARENA_BYTES};
use crate::error::Error;
use crate::graph::VertexId;
use crate::io::{
    load_graph, make_batches_ordered, power_law_graph, uniform_graph, BatchSize, Csr, EdgeOrder, GraphFormat, LoadError,
};
use crate::pool::GrowthPolicy;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error(transparent)]
    Engine(#[from] Error),
    #[error("writing report: {0}")]
    Output(String),
}

#[derive(Clone, Debug, PartialEq)]
pub enum InputSource {
    File {
        path: PathBuf,
        format: GraphFormat,
        symmetrize: bool,
    },
    Uniform {
        vertices: usize,
        edges: usize,
    },
    PowerLaw {
        vertices: usize,
        edges: usize,
        exponent: f64,
    },
    /// An already loaded graph.
    Csr(Csr),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpsMix {
    /// Insert every batch.
    Insert,
    /// Insert every batch, then delete the same batches.
    InsertThenDelete,
    /// After each insert batch, delete a random half of it.
    Mixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockSizeChoice {
    /// Average degree of the non-zero-degree vertices of the first batch.
    Auto,
    Fixed(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorkloadSpec {
    pub name: String,
    pub input: InputSource,
    pub batch_size: BatchSize,
    pub ops: OpsMix,
    pub order: EdgeOrder,
    pub seed: u64,
    pub block_size: BlockSizeChoice,
    pub arena_bytes: u64,
    pub policy: GrowthPolicy,
    pub reclaim_on_delete: bool,
    pub threads: usize,
    /// Query pairs issued after the updates, half known edges, half random.
    pub query_samples: usize,
}

impl WorkloadSpec {
    pub fn new(name: impl Into<String>, input: InputSource) -> Self {
        Self {
            name: name.into(),
            input,
            batch_size: BatchSize::Bulk,
            ops: OpsMix::Insert,
            order: EdgeOrder::Prefix,
            seed: 0,
            block_size: BlockSizeChoice::Auto,
            arena_bytes: DEFAULT_ARENA_BYTES,
            policy: GrowthPolicy::default(),
            reclaim_on_delete: true,
            threads: 0,
            query_samples: 0,
        }
    }

    fn load(&self) -> Result<Csr, LoadError> {
        Ok(match &self.input {
            InputSource::File {
                path,
                format,
                symmetrize,
            } => load_graph(path, *format, *symmetrize)?,
            InputSource::Uniform { vertices, edges } => uniform_graph(*vertices, *edges, self.seed),
            InputSource::PowerLaw {
                vertices,
                edges,
                exponent,
            } => power_law_graph(*vertices, *edges, *exponent, self.seed),
            InputSource::Csr(csr) => csr.clone(),
        })
    }
}

/// Source of phase timings.
pub trait Clock {
    fn now(&self) -> f64;

    /// Milliseconds taken by `op`.
    fn time<R>(&self, op: impl FnOnce() -> R) -> (R, f64) {
        let start = self.now();
        let out = op();
        (out, self.now() - start)
    }
}

pub struct WallClock {
    origin: Instant,
}

impl Default for WallClock {
    fn default() -> Self {
        Self { origin: Instant::now() }
    }
}

impl Clock for WallClock {
    fn now(&self) -> f64 {
        self.origin.elapsed().as_secs_f64() * 1e3
    }
}

/// Always reads zero; makes reports byte-for-byte reproducible.
pub struct FrozenClock;

impl Clock for FrozenClock {
    fn now(&self) -> f64 {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseRow {
    pub phase: String,
    pub ms: f64,
    pub edges: u64,
    pub memory: MemoryReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub graph: String,
    pub batch_size: BatchSize,
    pub block_size: usize,
    pub vertices: usize,
    pub input_edges: usize,
    pub rows: Vec<PhaseRow>,
    pub stats: GraphStats,
    pub final_edges: u64,
    pub query_count: usize,
    pub query_hits: usize,
    /// Arena reservations made by initialization alone.
    pub init_reservations: u64,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    graph: &'a str,
    batch_size: String,
    phase: &'a str,
    ms: String,
    bytes_dict: u64,
    bytes_sentinel: u64,
    bytes_pool: u64,
    bytes_total: u64,
}

impl RunReport {
    pub fn init_ms(&self) -> f64 {
        self.rows.iter().find(|r| r.phase == "init").map_or(0.0, |r| r.ms)
    }

    fn phase_total(&self, prefix: &str) -> (f64, u64) {
        self.rows
            .iter()
            .filter(|r| r.phase.starts_with(prefix))
            .fold((0.0, 0), |(ms, e), r| (ms + r.ms, e + r.edges))
    }

    /// Total milliseconds and edges over the insert phases.
    pub fn insert_totals(&self) -> (f64, u64) {
        self.phase_total("insert:")
    }

    pub fn delete_totals(&self) -> (f64, u64) {
        self.phase_total("delete:")
    }

    /// One row per phase: graph, batch_size, phase, ms, bytes_dict,
    /// bytes_sentinel, bytes_pool (blocks in use plus queue), bytes_total.
    pub fn write_csv(&self, out: impl Write) -> Result<(), HarnessError> {
        let mut writer = csv::Writer::from_writer(out);
        for row in &self.rows {
            let m = &row.memory;
            writer
                .serialize(CsvRow {
                    graph: &self.graph,
                    batch_size: self.batch_size.to_string(),
                    phase: &row.phase,
                    ms: format!("{:.6}", row.ms),
                    bytes_dict: m.dictionary,
                    bytes_sentinel: m.sentinels,
                    bytes_pool: m.blocks + m.queue,
                    bytes_total: m.total,
                })
                .map_err(|e| HarnessError::Output(e.to_string()))?;
        }
        writer.flush().map_err(|e| HarnessError::Output(e.to_string()))
    }
}

pub fn run_workload(spec: &WorkloadSpec) -> Result<RunReport, HarnessError> {
    run_workload_with(spec, &WallClock::default())
}

pub fn run_workload_with(spec: &WorkloadSpec, clock: &impl Clock) -> Result<RunReport, HarnessError> {
    let csr = spec.load()?;
    let n = csr.vertex_count();
    let inserts = make_batches_ordered(&csr, spec.batch_size, spec.order, BatchKind::Insert);
    let deletes: Vec<CsrBatch> = match spec.ops {
        OpsMix::Insert => Vec::new(),
        OpsMix::InsertThenDelete => inserts.iter().map(as_delete).collect(),
        OpsMix::Mixed => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x6d_6978_6564);
            inserts.iter().map(|b| random_half(b, &mut rng)).collect()
        }
    };

    let mut rows = Vec::new();
    let (graph, init_ms) = clock.time(|| -> Result<DynGraph, Error> {
        let block_size = match spec.block_size {
            BlockSizeChoice::Fixed(b) => b,
            BlockSizeChoice::Auto => inserts
                .first()
                .map_or(Err(Error::EmptyFirstBatch), compute_block_size)
                .unwrap_or(1),
        };
        let config = EngineConfig {
            block_size,
            arena_bytes: spec.arena_bytes,
            policy: spec.policy,
            reclaim_on_delete: spec.reclaim_on_delete,
            threads: spec.threads,
        };
        DynGraph::new(n, config)
    });
    let mut graph = graph?;
    let init_reservations = graph.arena().reservation_count();
    rows.push(PhaseRow {
        phase: "init".into(),
        ms: init_ms,
        edges: 0,
        memory: graph.memory(),
    });

    let mut run = |graph: &mut DynGraph, phase: String, batch: &CsrBatch| -> Result<(), Error> {
        let (res, ms) = clock.time(|| match batch.kind() {
            BatchKind::Insert => graph.insert_batch(batch).map(drop),
            BatchKind::Delete => graph.delete_batch(batch).map(drop),
        });
        res?;
        rows.push(PhaseRow {
            phase,
            ms,
            edges: batch.edge_count() as u64,
            memory: graph.memory(),
        });
        Ok(())
    };
    match spec.ops {
        OpsMix::Insert => {
            for (i, b) in inserts.iter().enumerate() {
                run(&mut graph, format!("insert:{i}"), b)?;
            }
        }
        OpsMix::InsertThenDelete => {
            for (i, b) in inserts.iter().enumerate() {
                run(&mut graph, format!("insert:{i}"), b)?;
            }
            for (i, b) in deletes.iter().enumerate() {
                run(&mut graph, format!("delete:{i}"), b)?;
            }
        }
        OpsMix::Mixed => {
            for (i, (ins, del)) in inserts.iter().zip(&deletes).enumerate() {
                run(&mut graph, format!("insert:{i}"), ins)?;
                run(&mut graph, format!("delete:{i}"), del)?;
            }
        }
    }

    let (query_count, query_hits) = if spec.query_samples > 0 && n > 0 {
        let pairs = query_pairs(&csr, spec.query_samples, spec.seed);
        let (answers, ms) = clock.time(|| graph.query_batch(&pairs));
        rows.push(PhaseRow {
            phase: "query".into(),
            ms,
            edges: pairs.len() as u64,
            memory: graph.memory(),
        });
        (pairs.len(), answers.iter().filter(|&&a| a).count())
    } else {
        (0, 0)
    };

    Ok(RunReport {
        graph: spec.name.clone(),
        batch_size: spec.batch_size,
        block_size: graph.block_size(),
        vertices: n,
        input_edges: csr.edge_count(),
        rows,
        stats: graph.stats(),
        final_edges: graph.edge_count(),
        query_count,
        query_hits,
        init_reservations,
    })
}

fn as_delete(batch: &CsrBatch) -> CsrBatch {
    CsrBatch::new(
        BatchKind::Delete,
        batch.offsets().to_vec(),
        batch.destinations().to_vec(),
    )
    .expect("same layout as a valid batch")
}

fn random_half(batch: &CsrBatch, rng: &mut impl Rng) -> CsrBatch {
    let pairs: Vec<_> = batch.pairs().filter(|_| rng.gen_bool(0.5)).collect();
    CsrBatch::from_pairs(BatchKind::Delete, batch.vertex_count(), &pairs).expect("sources inside the batch")
}

fn query_pairs(csr: &Csr, count: usize, seed: u64) -> Vec<(VertexId, VertexId)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x71_7565_7279);
    let n = csr.vertex_count();
    let known: Vec<_> = csr.pairs().collect();
    (0..count)
        .map(|i| {
            if i % 2 == 0 && !known.is_empty() {
                known[rng.gen_range(0..known.len())]
            } else {
                (rng.gen_range(0..n) as VertexId, rng.gen_range(0..n) as VertexId)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(vertices: usize, edges: usize) -> WorkloadSpec {
        WorkloadSpec::new("synthetic", InputSource::Uniform { vertices, edges })
    }

    #[test]
    fn empty_graph_workload() {
        let spec = synthetic(10, 0);
        let report = run_workload(&spec).unwrap();
        assert_eq!(report.final_edges, 0);
        assert_eq!(report.input_edges, 0);
        assert!(report.init_ms() > 0.0);
        assert_eq!(report.init_reservations, 3);
    }

    #[test]
    fn insert_then_delete_empties_graph() {
        let mut spec = synthetic(200, 3000);
        spec.batch_size = BatchSize::Edges(500);
        spec.ops = OpsMix::InsertThenDelete;
        spec.query_samples = 100;
        let report = run_workload(&spec).unwrap();
        assert_eq!(report.final_edges, 0);
        assert_eq!(report.insert_totals().1, 3000);
        assert_eq!(report.delete_totals().1, 3000);
        assert_eq!(report.query_hits, 0);
        assert_eq!(report.rows.len(), 1 + 6 + 6 + 1);
    }

    #[test]
    fn mixed_keeps_the_other_half() {
        let mut spec = synthetic(100, 2000);
        spec.batch_size = BatchSize::Edges(400);
        spec.ops = OpsMix::Mixed;
        spec.order = EdgeOrder::Shuffled(5);
        spec.query_samples = 50;
        let report = run_workload(&spec).unwrap();
        assert!(report.final_edges > 0 && report.final_edges < 2000);
        assert!(report.query_hits > 0);
    }

    #[test]
    fn memory_parts_sum_to_total() {
        let mut spec = synthetic(300, 5000);
        spec.batch_size = BatchSize::Edges(1000);
        let report = run_workload(&spec).unwrap();
        for row in &report.rows {
            let m = row.memory;
            assert_eq!(m.dictionary + m.sentinels + m.blocks + m.queue, m.total);
        }
    }

    #[test]
    fn frozen_clock_csv_is_stable() {
        let mut spec = synthetic(20, 50);
        spec.batch_size = BatchSize::Edges(20);
        spec.arena_bytes = 1 << 20;
        let render = || {
            let report = run_workload_with(&spec, &FrozenClock).unwrap();
            let mut out = Vec::new();
            report.write_csv(&mut out).unwrap();
            String::from_utf8(out).unwrap()
        };
        let csv = render();
        assert_eq!(csv, render());
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "graph,batch_size,phase,ms,bytes_dict,bytes_sentinel,bytes_pool,bytes_total"
        );
        assert!(lines.next().unwrap().starts_with("synthetic,20,init,0.000000,"));
        assert_eq!(csv.lines().count(), 1 + 1 + 3);
    }
}
