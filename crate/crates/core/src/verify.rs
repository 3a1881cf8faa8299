//! Randomized workloads checked against the oracle after every step.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::batch::{BatchKind, CsrBatch};
use crate::engine::{DynGraph, EngineConfig, Violation};
use crate::error::{Error, Result};
use crate::graph::{bytes_per_block, VertexId, SENTINEL_BYTES, SLOT_BYTES};
use crate::oracle::{oracle_compare, MismatchReport, OracleGraph};
use crate::pool::GrowthPolicy;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VerifyConfig {
    pub max_vertices: usize,
    pub max_edges: usize,
    pub negative_samples: usize,
    /// Worker threads inside each graph; 0 uses the global pool.
    pub threads: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            max_vertices: 4096,
            max_edges: 100_000,
            negative_samples: 2_000,
            threads: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct WorkloadOutcome {
    pub seed: u64,
    pub vertices: usize,
    pub block_size: usize,
    pub edges_inserted: usize,
    pub insert_batches: usize,
    pub delete_batches: usize,
    pub vertex_batches: usize,
    /// Edge or vertex batches refused for lack of arena; the graph must be
    /// unchanged.
    pub rejected_batches: usize,
    pub growth_events: u64,
    pub reclaim_on_delete: bool,
    pub mismatches: MismatchReport,
    /// Structural violations, tagged with the step they appeared after.
    pub violations: Vec<String>,
}

impl WorkloadOutcome {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty() && self.violations.is_empty()
    }
}

enum Step {
    Insert(CsrBatch),
    Delete(CsrBatch),
    AddVertices(usize),
    RemoveVertices(Vec<VertexId>),
}

struct Generator {
    rng: ChaCha8Rng,
    hot: Vec<VertexId>,
    inserted: Vec<(VertexId, VertexId)>,
}

impl Generator {
    fn pick_source(&mut self, oracle: &OracleGraph) -> Option<VertexId> {
        let n = oracle.vertex_count();
        for _ in 0..16 {
            let v = if self.rng.gen_bool(0.15) && !self.hot.is_empty() {
                self.hot[self.rng.gen_range(0..self.hot.len())]
            } else {
                self.rng.gen_range(0..n) as VertexId
            };
            if oracle.is_alive(v) {
                return Some(v);
            }
        }
        (0..n as VertexId).find(|&v| oracle.is_alive(v))
    }

    fn next(&mut self, oracle: &OracleGraph, edge_budget: usize, max_vertices: usize) -> Step {
        let n = oracle.vertex_count();
        let roll: f64 = self.rng.gen();
        if roll < 0.08 && n < max_vertices {
            let room = max_vertices - n;
            return Step::AddVertices(self.rng.gen_range(1..=room.min(64)));
        }
        if roll < 0.14 {
            let k = self.rng.gen_range(1..=4);
            let ids = (0..k).map(|_| self.rng.gen_range(0..n) as VertexId).collect();
            return Step::RemoveVertices(ids);
        }
        if roll < 0.40 && !self.inserted.is_empty() {
            let k = self.rng.gen_range(1..=self.inserted.len().min(4000));
            let mut pairs: Vec<_> = (0..k)
                .map(|_| self.inserted[self.rng.gen_range(0..self.inserted.len())])
                .collect();
            // a few edges that were never inserted
            for _ in 0..self.rng.gen_range(0..8) {
                pairs.push((
                    self.rng.gen_range(0..n) as VertexId,
                    self.rng.gen_range(0..n) as VertexId,
                ));
            }
            return Step::Delete(CsrBatch::from_pairs(BatchKind::Delete, n, &pairs).unwrap());
        }
        let k = self.rng.gen_range(1..=edge_budget.clamp(1, 6000));
        let mut pairs = Vec::with_capacity(k);
        for _ in 0..k {
            let Some(u) = self.pick_source(oracle) else { break };
            let v = self.rng.gen_range(0..n) as VertexId;
            pairs.push((u, v));
        }
        self.inserted.extend_from_slice(&pairs);
        Step::Insert(CsrBatch::from_pairs(BatchKind::Insert, n, &pairs).unwrap())
    }
}

fn check(graph: &DynGraph, oracle: &OracleGraph) -> std::result::Result<(), Violation> {
    graph.check_invariants()?;
    let expected = oracle.edge_count() as u64;
    if graph.edge_count() != expected {
        return Err(Violation {
            vertex: None,
            message: format!("graph holds {} edges, oracle {expected}", graph.edge_count()),
        });
    }
    Ok(())
}

/// Build a random workload from `seed`, replay it on the engine and the
/// oracle side by side, and compare after every step.
pub fn run_random_workload(seed: u64, config: &VerifyConfig) -> Result<WorkloadOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let initial = rng.gen_range(1..=(config.max_vertices / 2).max(1));
    let block_size = rng.gen_range(1..=16usize);
    let edge_target = rng.gen_range(1..=config.max_edges.max(1));
    let reclaim = rng.gen_bool(0.7);
    // A third of the runs get an arena sized near the edge target, so growth
    // and refused batches show up.
    let arena_bytes = if rng.gen_bool(1.0 / 3.0) {
        let fixed = 2 * config.max_vertices as u64 * (SLOT_BYTES + SENTINEL_BYTES);
        let per_edge = rng.gen_range(0.4..3.0) * bytes_per_block(block_size) as f64 / block_size as f64;
        fixed + (per_edge * edge_target as f64) as u64 + 64 * bytes_per_block(block_size)
    } else {
        64 << 20
    };
    let policy = GrowthPolicy::default();
    let engine_config = EngineConfig {
        block_size,
        arena_bytes,
        policy,
        reclaim_on_delete: reclaim,
        threads: config.threads,
    };

    let mut graph = DynGraph::new(initial, engine_config)?;
    let mut oracle = OracleGraph::new(initial);
    let mut generator = Generator {
        hot: (0..4).map(|_| rng.gen_range(0..initial) as VertexId).collect(),
        rng,
        inserted: Vec::new(),
    };
    let mut outcome = WorkloadOutcome {
        seed,
        block_size,
        reclaim_on_delete: reclaim,
        ..Default::default()
    };

    let mut budget = edge_target;
    let mut step_no = 0usize;
    while budget > 0 && step_no < 400 {
        step_no += 1;
        match generator.next(&oracle, budget, config.max_vertices) {
            Step::Insert(batch) => {
                let planned = graph.plan_batch(&batch)?.total();
                match graph.insert_batch(&batch) {
                    Ok(stats) => {
                        if stats.blocks_filled != planned {
                            outcome.violations.push(format!(
                                "step {step_no}: planned {planned} blocks, filled {}",
                                stats.blocks_filled
                            ));
                        }
                        oracle.apply(&batch)?;
                        outcome.insert_batches += 1;
                        outcome.edges_inserted += batch.edge_count();
                    }
                    Err(Error::PoolUnderflow { .. }) => outcome.rejected_batches += 1,
                    Err(e) => return Err(e),
                }
                budget = budget.saturating_sub(batch.edge_count().max(1));
            }
            Step::Delete(batch) => {
                let before = graph.edge_count();
                let matched = graph.delete_batch(&batch)?.matched;
                if before - graph.edge_count() != matched {
                    outcome.violations.push(format!("step {step_no}: delete count drift"));
                }
                oracle.apply(&batch)?;
                outcome.delete_batches += 1;
            }
            Step::AddVertices(k) => match graph.insert_vertices(k) {
                Ok(_) => {
                    oracle.insert_vertices(k);
                    outcome.vertex_batches += 1;
                }
                Err(Error::InsufficientCapacity { .. }) => outcome.rejected_batches += 1,
                Err(e) => return Err(e),
            },
            Step::RemoveVertices(ids) => {
                graph.delete_vertices(&ids)?;
                oracle.delete_vertices(&ids);
                outcome.vertex_batches += 1;
            }
        }
        if let Err(v) = check(&graph, &oracle) {
            outcome.violations.push(format!("step {step_no}: {v}"));
            break;
        }
    }
    if let Err(v) = graph.check_conservation() {
        outcome.violations.push(format!("end: {v}"));
    }
    outcome.vertices = graph.vertex_count();
    outcome.growth_events = graph.pool().growth_events();
    outcome.mismatches = oracle_compare(&oracle, &graph, config.negative_samples, seed);
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_workloads_pass() {
        let config = VerifyConfig {
            max_vertices: 64,
            max_edges: 2_000,
            negative_samples: 200,
            threads: 2,
        };
        for seed in 0..20 {
            let outcome = run_random_workload(seed, &config).unwrap();
            assert!(outcome.passed(), "seed {seed}: {outcome:?}");
        }
    }

    #[test]
    fn same_seed_same_outcome() {
        let config = VerifyConfig {
            max_vertices: 128,
            max_edges: 5_000,
            ..Default::default()
        };
        assert_eq!(
            run_random_workload(11, &config).unwrap(),
            run_random_workload(11, &config).unwrap()
        );
    }
}
