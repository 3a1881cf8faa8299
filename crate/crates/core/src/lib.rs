//! Dynamic graph store with batched CSR updates.
//!
//! Each vertex owns an edge sentinel that roots a complete binary tree of
//! fixed-size edge blocks. Blocks come from a pre-allocated queue; a batch
//! computes a prefix sum of per-vertex block needs so every vertex worker
//! takes a disjoint range of the queue without synchronization.

pub mod batch;
pub mod cbt;
pub mod engine;
pub mod error;
pub mod graph;
pub mod harness;
pub mod io;
pub mod oracle;
pub mod pool;
pub mod verify;

pub use batch::{compute_block_size, BatchKind, BatchPlan, CsrBatch};
pub use engine::{BatchStats, DynGraph, EngineConfig, GraphStats, MemoryReport, Violation, DEFAULT_ARENA_BYTES};
pub use error::{Error, Result};
pub use graph::{BlockHandle, EdgeEntry, EdgeSentinel, VertexId};
pub use oracle::OracleGraph;
pub use pool::{pool_init, Arena, BlockPool, GrowthPolicy, QueuedRun};
