//! Batched edge and vertex updates over the dynamic graph.
//!
//! Every edge batch runs in three phases: sequential planning, a parallel
//! phase with one logical worker per source vertex, and a sequential commit
//! that moves the queue front, grows the pool and reclaims blocks. Workers
//! only touch their own sentinel, their own tree blocks and the queue range
//! the prefix sum assigned to them, so the outcome does not depend on the
//! number of threads.

use std::collections::BTreeMap;
use std::ops::Range;
use std::sync::Arc;

use log::warn;
use rayon::prelude::*;

use crate::batch::{BatchKind, BatchPlan, CsrBatch};
use crate::cbt::{block_at, cbt_attach, cbt_detach_tail, cbt_height, closest_pow2, for_each_in_order, in_order_blocks};
use crate::error::{Error, Result};
use crate::graph::{
    BlockHandle, Blocks, EdgeBlock, EdgeEntry, EdgeSentinel, VertexDictionary, VertexId, SENTINEL_BYTES, SLOT_BYTES,
};
use crate::pool::{pool_init, Arena, BlockPool, Growth, GrowthPolicy, QueuedRun};

/// Default simulated device budget: 8 GiB.
pub const DEFAULT_ARENA_BYTES: u64 = 8 << 30;

const PAR_MIN_VERTICES: usize = 64;
const PAR_QUERY_SLOTS: usize = 1 << 14;

#[derive(Clone, Debug, PartialEq)]
pub struct EngineConfig {
    /// Edge entries per block.
    pub block_size: usize,
    pub arena_bytes: u64,
    pub policy: GrowthPolicy,
    /// Return emptied tail blocks to the queue after deletes.
    pub reclaim_on_delete: bool,
    /// Worker threads; 0 uses the global rayon pool.
    pub threads: usize,
}

impl EngineConfig {
    pub fn new(block_size: usize) -> Self {
        Self {
            block_size,
            arena_bytes: DEFAULT_ARENA_BYTES,
            policy: GrowthPolicy::default(),
            reclaim_on_delete: true,
            threads: 0,
        }
    }
}

/// What the last edge batch did.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BatchStats {
    pub edges: u64,
    /// Blocks the plan asked for.
    pub blocks_planned: u64,
    /// Fresh blocks that received at least one entry.
    pub blocks_filled: u64,
    /// Entries tombstoned by a delete batch.
    pub matched: u64,
    pub reclaimed: u64,
    pub growth: Vec<Growth>,
}

/// Accounting snapshot. `total` is the sum of the four parts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MemoryReport {
    pub dictionary: u64,
    pub sentinels: u64,
    /// Blocks currently handed out to adjacencies.
    pub blocks: u64,
    pub queue: u64,
    pub total: u64,
    pub arena_reserved: u64,
    pub arena_capacity: u64,
    pub reservations: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GraphStats {
    pub vertices: usize,
    pub logical_size: usize,
    pub dictionary_capacity: usize,
    pub edges: u64,
    pub blocks: u64,
    pub occupied_slots: u64,
    pub tombstones: u64,
    /// Tombstoned share of written slots.
    pub hole_ratio: f64,
    /// CBT height -> number of alive vertices.
    pub height_histogram: BTreeMap<u32, usize>,
}

/// A broken structural invariant.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub vertex: Option<VertexId>,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.vertex {
            Some(v) => write!(f, "vertex {v}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

fn violation(vertex: Option<VertexId>, message: impl Into<String>) -> Violation {
    Violation {
        vertex,
        message: message.into(),
    }
}

pub struct DynGraph {
    config: EngineConfig,
    arena: Arena,
    dictionary: VertexDictionary,
    sentinels: Vec<EdgeSentinel>,
    sentinel_capacity: usize,
    pool: BlockPool,
    executor: Option<Arc<rayon::ThreadPool>>,
    last_batch: BatchStats,
}

impl std::fmt::Debug for DynGraph {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DynGraph")
            .field("config", &self.config)
            .field("vertices", &self.dictionary.logical_size())
            .field("capacity", &self.dictionary.capacity())
            .field("blocks_in_use", &self.pool.blocks_in_use())
            .finish_non_exhaustive()
    }
}

/// Equal when the whole persistent state matches; the thread pool is ignored.
impl PartialEq for DynGraph {
    fn eq(&self, other: &Self) -> bool {
        self.arena == other.arena
            && self.dictionary == other.dictionary
            && self.sentinels == other.sentinels
            && self.sentinel_capacity == other.sentinel_capacity
            && self.pool == other.pool
            && self.last_batch == other.last_batch
    }
}

fn install<R: Send>(executor: Option<&rayon::ThreadPool>, op: impl FnOnce() -> R + Send) -> R {
    match executor {
        Some(pool) => pool.install(op),
        None => op(),
    }
}

impl DynGraph {
    /// Set up the dictionary, the sentinel table and the block pool, one
    /// arena reservation each.
    pub fn new(vertex_count: usize, config: EngineConfig) -> Result<Self> {
        if config.block_size == 0 {
            return Err(Error::InvalidArgument("block size must be at least 1".into()));
        }
        if vertex_count > u32::MAX as usize {
            return Err(Error::InvalidArgument(format!(
                "{vertex_count} vertices exceed the id space"
            )));
        }
        config.policy.validate()?;
        let capacity = closest_pow2(vertex_count.max(1) as u64)? as usize;
        let mut arena = Arena::new(config.arena_bytes);
        arena.reserve(capacity as u64 * SLOT_BYTES)?;
        arena.reserve(capacity as u64 * SENTINEL_BYTES)?;
        let pool = pool_init(&mut arena, config.policy, config.block_size)?;

        let executor = match config.threads {
            0 => None,
            n => Some(Arc::new(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?,
            )),
        };

        let mut graph = Self {
            config,
            arena,
            dictionary: VertexDictionary::with_capacity(capacity),
            sentinels: Vec::with_capacity(capacity),
            sentinel_capacity: capacity,
            pool,
            executor,
            last_batch: BatchStats::default(),
        };
        graph.attach_sentinels(vertex_count);
        Ok(graph)
    }

    fn attach_sentinels(&mut self, count: usize) {
        for _ in 0..count {
            let sentinel = self.sentinels.len() as u32;
            self.sentinels.push(EdgeSentinel::default());
            self.dictionary.push(sentinel);
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn block_size(&self) -> usize {
        self.config.block_size
    }

    pub fn arena(&self) -> &Arena {
        &self.arena
    }

    pub fn pool(&self) -> &BlockPool {
        &self.pool
    }

    pub fn dictionary(&self) -> &VertexDictionary {
        &self.dictionary
    }

    pub fn last_batch(&self) -> &BatchStats {
        &self.last_batch
    }

    /// Slots in the dictionary, alive or deleted.
    pub fn vertex_count(&self) -> usize {
        self.dictionary.logical_size()
    }

    pub fn is_alive(&self, v: VertexId) -> bool {
        self.dictionary.is_alive(v)
    }

    /// Sentinel of an alive vertex.
    pub fn sentinel(&self, v: VertexId) -> Option<&EdgeSentinel> {
        let slot = self.dictionary.slot(v).filter(|s| s.alive)?;
        Some(&self.sentinels[slot.sentinel as usize])
    }

    pub fn block(&self, handle: BlockHandle) -> EdgeBlock<'_> {
        let store = self.pool.store();
        EdgeBlock {
            handle,
            header: store.header(handle),
            entries: store.entries(handle),
        }
    }

    /// In-order block handles of an alive vertex's adjacency.
    pub fn in_order_blocks(&self, v: VertexId) -> Vec<BlockHandle> {
        match self.sentinel(v) {
            Some(s) => in_order_blocks(self.pool.store(), s),
            None => Vec::new(),
        }
    }

    /// Live destinations of `v`, sorted.
    pub fn active_destinations(&self, v: VertexId) -> Vec<VertexId> {
        let Some(sentinel) = self.sentinel(v) else {
            return Vec::new();
        };
        let store = self.pool.store();
        let mut out = Vec::with_capacity(sentinel.active_edge_count as usize);
        for_each_in_order(store, sentinel, |h| {
            let occupied = store.header(h).occupied_count as usize;
            out.extend(
                store.entries(h)[..occupied]
                    .iter()
                    .filter(|e| !e.tombstone)
                    .map(|e| e.destination),
            );
        });
        out.sort_unstable();
        out
    }

    /// Active edges over alive vertices.
    pub fn edge_count(&self) -> u64 {
        self.dictionary
            .slots()
            .iter()
            .filter(|s| s.alive)
            .map(|s| self.sentinels[s.sentinel as usize].active_edge_count)
            .sum()
    }

    fn validate(&self, batch: &CsrBatch, kind: BatchKind) -> Result<()> {
        if batch.kind() != kind {
            return Err(Error::MalformedBatch(format!(
                "expected a {kind:?} batch, got {:?}",
                batch.kind()
            )));
        }
        batch.validate(self.vertex_count(), |v| self.dictionary.is_alive(v))
    }

    /// Blocks each vertex needs for `batch`, given the space left in its
    /// last-insert block.
    pub fn plan_batch(&self, batch: &CsrBatch) -> Result<BatchPlan> {
        self.validate(batch, BatchKind::Insert)?;
        let b = self.config.block_size;
        let degrees: Vec<u64> = (0..batch.vertex_count()).map(|v| batch.degree(v) as u64).collect();
        let space = self
            .dictionary
            .slots()
            .iter()
            .map(|slot| self.sentinels[slot.sentinel as usize].space_remaining(b) as u64)
            .collect();
        Ok(BatchPlan::build(b, &degrees, space))
    }

    pub fn insert_batch(&mut self, batch: &CsrBatch) -> Result<&BatchStats> {
        let plan = self.plan_batch(batch)?;
        let total = plan.total();
        let mut growth: Vec<Growth> = self
            .pool
            .ensure_available(&mut self.arena, total)?
            .into_iter()
            .collect();
        let front = self.pool.queue().front();
        self.pool.materialize_range(front, total)?;

        let executor = self.executor.clone();
        let Self {
            dictionary,
            sentinels,
            pool,
            ..
        } = self;
        let (queue, store) = pool.split_mut();
        let shared = store.shared();
        let plan = &plan;
        let filled: u64 = install(executor.as_deref(), || {
            sentinels
                .par_iter_mut()
                .enumerate()
                .with_min_len(PAR_MIN_VERTICES)
                .map(|(v, sentinel)| {
                    let edges = batch.edges_of(v);
                    if edges.is_empty() {
                        return 0;
                    }
                    debug_assert!(dictionary.is_alive(v as VertexId));
                    let fresh = queue
                        .pop_range(front + plan.range_start(v), plan.blocks_required[v])
                        .expect("range inside the materialized batch interval");
                    // SAFETY: the sentinel is exclusively ours, its tree blocks
                    // belong to no other adjacency, and `fresh` is this
                    // vertex's private slice of the popped interval.
                    let mut blocks = unsafe { shared.worker() };
                    insert_into_adjacency(&mut blocks, sentinel, edges, &fresh)
                })
                .sum()
        });

        growth.extend(self.pool.commit_front(&mut self.arena, total)?);
        self.last_batch = BatchStats {
            edges: batch.edge_count() as u64,
            blocks_planned: total,
            blocks_filled: filled,
            matched: 0,
            reclaimed: 0,
            growth,
        };
        Ok(&self.last_batch)
    }

    pub fn delete_batch(&mut self, batch: &CsrBatch) -> Result<&BatchStats> {
        self.validate(batch, BatchKind::Delete)?;
        let reclaim = self.config.reclaim_on_delete;
        let executor = self.executor.clone();
        let Self {
            dictionary,
            sentinels,
            pool,
            ..
        } = self;
        let shared = pool.store_mut().shared();
        let results: Vec<(u64, Vec<BlockHandle>)> = install(executor.as_deref(), || {
            sentinels
                .par_iter_mut()
                .enumerate()
                .with_min_len(PAR_MIN_VERTICES)
                .map(|(v, sentinel)| {
                    let targets = batch.edges_of(v);
                    if targets.is_empty() || !dictionary.is_alive(v as VertexId) {
                        return (0, Vec::new());
                    }
                    // SAFETY: only this vertex's tree blocks are touched.
                    let mut blocks = unsafe { shared.worker() };
                    delete_from_adjacency(&mut blocks, sentinel, targets, reclaim)
                })
                .collect()
        });

        let matched = results.iter().map(|(m, _)| m).sum();
        let detached: Vec<BlockHandle> = results.into_iter().flat_map(|(_, d)| d).collect();
        self.pool.reclaim(&detached)?;
        self.last_batch = BatchStats {
            edges: batch.edge_count() as u64,
            matched,
            reclaimed: detached.len() as u64,
            ..Default::default()
        };
        Ok(&self.last_batch)
    }

    /// Whether `source -> destination` is a live edge. Unknown or deleted
    /// sources answer false.
    pub fn query_edge(&self, source: VertexId, destination: VertexId) -> bool {
        let Some(sentinel) = self.sentinel(source) else {
            return false;
        };
        let store = self.pool.store();
        // one traversal collects the blocks, then one probe per (block, slot)
        let search_blocks = in_order_blocks(store, sentinel);
        let b = self.config.block_size;
        let probe = |i: usize| {
            let handle = search_blocks[i / b];
            let slot = i % b;
            slot < store.header(handle).occupied_count as usize && {
                let entry = store.entries(handle)[slot];
                !entry.tombstone && entry.destination == destination
            }
        };
        let slots = search_blocks.len() * b;
        if slots >= PAR_QUERY_SLOTS {
            install(self.executor.as_deref(), || (0..slots).into_par_iter().any(probe))
        } else {
            (0..slots).any(probe)
        }
    }

    pub fn query_batch(&self, pairs: &[(VertexId, VertexId)]) -> Vec<bool> {
        install(self.executor.as_deref(), || {
            pairs.par_iter().map(|&(u, v)| self.query_edge(u, v)).collect()
        })
    }

    /// Append `count` vertices, doubling the dictionary as needed. Returns the
    /// new ids.
    pub fn insert_vertices(&mut self, count: usize) -> Result<Range<VertexId>> {
        let old_size = self.vertex_count();
        let new_size = old_size + count;
        if new_size > u32::MAX as usize {
            return Err(Error::InvalidArgument(format!(
                "{new_size} vertices exceed the id space"
            )));
        }
        let capacity = self.dictionary.capacity();
        if new_size > capacity {
            let mut new_capacity = capacity;
            while new_capacity < new_size {
                new_capacity *= 2;
            }
            let dict_bytes = new_capacity as u64 * SLOT_BYTES;
            let sentinel_bytes = new_capacity as u64 * SENTINEL_BYTES;
            if dict_bytes + sentinel_bytes > self.arena.available() {
                return Err(Error::InsufficientCapacity {
                    requested: dict_bytes + sentinel_bytes,
                    available: self.arena.available(),
                });
            }
            self.arena.reserve(dict_bytes)?;
            self.dictionary.migrate(new_capacity);
            self.arena.release(capacity as u64 * SLOT_BYTES);

            self.arena.reserve(sentinel_bytes)?;
            let mut sentinels = Vec::with_capacity(new_capacity);
            sentinels.extend_from_slice(&self.sentinels);
            self.sentinels = sentinels;
            self.arena.release(self.sentinel_capacity as u64 * SENTINEL_BYTES);
            self.sentinel_capacity = new_capacity;
        }
        self.attach_sentinels(count);
        Ok(old_size as VertexId..new_size as VertexId)
    }

    /// Mark vertices deleted. The dictionary never shrinks; the adjacency is
    /// released to the pool only when `reclaim_on_delete` is set. Returns how
    /// many vertices were actually deleted.
    pub fn delete_vertices(&mut self, ids: &[VertexId]) -> Result<usize> {
        let mut deleted = 0;
        for &id in ids {
            if !self.dictionary.retire(id) {
                warn!("delete of unknown or already deleted vertex {id} ignored");
                continue;
            }
            deleted += 1;
            if self.config.reclaim_on_delete {
                let index = self.dictionary.slot(id).expect("just retired").sentinel as usize;
                let blocks = in_order_blocks(self.pool.store(), &self.sentinels[index]);
                self.sentinels[index] = EdgeSentinel::default();
                self.pool.release(&blocks)?;
            }
        }
        Ok(deleted)
    }

    pub fn memory(&self) -> MemoryReport {
        let dictionary = self.dictionary.bytes();
        let sentinels = self.sentinel_capacity as u64 * SENTINEL_BYTES;
        let blocks = self.pool.in_use_bytes();
        let queue = self.pool.queue_bytes();
        MemoryReport {
            dictionary,
            sentinels,
            blocks,
            queue,
            total: dictionary + sentinels + blocks + queue,
            arena_reserved: self.arena.reserved_bytes(),
            arena_capacity: self.arena.capacity_bytes(),
            reservations: self.arena.reservation_count(),
        }
    }

    pub fn stats(&self) -> GraphStats {
        let store = self.pool.store();
        let mut stats = GraphStats {
            logical_size: self.dictionary.logical_size(),
            dictionary_capacity: self.dictionary.capacity(),
            ..Default::default()
        };
        for slot in self.dictionary.slots().iter().filter(|s| s.alive) {
            let sentinel = &self.sentinels[slot.sentinel as usize];
            stats.vertices += 1;
            stats.edges += sentinel.active_edge_count;
            stats.blocks += u64::from(sentinel.block_count);
            *stats
                .height_histogram
                .entry(cbt_height(sentinel.block_count))
                .or_default() += 1;
            for_each_in_order(store, sentinel, |h| {
                let header = store.header(h);
                stats.occupied_slots += u64::from(header.occupied_count);
                stats.tombstones += u64::from(header.occupied_count - header.active_count);
            });
        }
        if stats.occupied_slots > 0 {
            stats.hole_ratio = stats.tombstones as f64 / stats.occupied_slots as f64;
        }
        stats
    }

    /// Check every adjacency: complete tree shape, exclusive block ownership,
    /// count consistency and gap-free insertion order.
    pub fn check_invariants(&self) -> std::result::Result<(), Violation> {
        let store = self.pool.store();
        let b = self.config.block_size;
        let mut owner: Vec<bool> = vec![false; store.len()];
        if !self.dictionary.capacity().is_power_of_two() || self.dictionary.capacity() < self.vertex_count() {
            return Err(violation(None, "dictionary capacity is not a covering power of two"));
        }
        for slot in self.dictionary.slots() {
            let v = Some(slot.vertex_id);
            let sentinel = &self.sentinels[slot.sentinel as usize];
            // level-order walk assigning heap positions
            let mut frontier = Vec::new();
            let mut by_position: Vec<Option<BlockHandle>> = Vec::new();
            if let Some(root) = sentinel.cbt_root {
                frontier.push((root, 1usize));
            }
            let mut active_sum = 0u64;
            while let Some((h, position)) = frontier.pop() {
                if !store.contains(h) {
                    return Err(violation(v, format!("handle {} was never handed out", h.0)));
                }
                if std::mem::replace(&mut owner[h.index()], true) {
                    return Err(violation(v, format!("block {} reachable twice", h.0)));
                }
                if position > sentinel.block_count as usize {
                    return Err(violation(
                        v,
                        format!(
                            "block at position {position} beyond block_count {}",
                            sentinel.block_count
                        ),
                    ));
                }
                if by_position.len() < position {
                    by_position.resize(position, None);
                }
                by_position[position - 1] = Some(h);
                let header = store.header(h);
                let occupied = header.occupied_count as usize;
                if header.active_count > header.occupied_count || occupied > b {
                    return Err(violation(v, format!("block {} counts out of range", h.0)));
                }
                let live = store.entries(h)[..occupied].iter().filter(|e| !e.tombstone).count();
                if live != header.active_count as usize {
                    return Err(violation(
                        v,
                        format!("block {} active_count disagrees with entries", h.0),
                    ));
                }
                active_sum += u64::from(header.active_count);
                if let Some(l) = header.left {
                    frontier.push((l, 2 * position));
                }
                if let Some(r) = header.right {
                    frontier.push((r, 2 * position + 1));
                }
            }
            let n = sentinel.block_count as usize;
            if by_position.len() != n || by_position.iter().any(Option::is_none) {
                return Err(violation(v, format!("positions are not exactly 1..={n}")));
            }
            if slot.alive && active_sum != sentinel.active_edge_count {
                return Err(violation(
                    v,
                    format!(
                        "active_edge_count {} but blocks hold {active_sum}",
                        sentinel.active_edge_count
                    ),
                ));
            }
            if n == 0 {
                if sentinel.last_insert_block.is_some() {
                    return Err(violation(v, "empty adjacency with a last-insert block"));
                }
                continue;
            }
            let tail = by_position[n - 1].unwrap();
            if sentinel.last_insert_block != Some(tail) {
                return Err(violation(v, "last-insert block is not the tail block"));
            }
            if store.header(tail).occupied_count != sentinel.last_insert_offset {
                return Err(violation(v, "last-insert offset disagrees with tail occupancy"));
            }
            if let Some(p) = by_position[..n - 1]
                .iter()
                .position(|h| store.header(h.unwrap()).occupied_count as usize != b)
            {
                return Err(violation(v, format!("gap before the tail at position {}", p + 1)));
            }
        }
        Ok(())
    }

    /// Every minted handle is either in a tree or queued, never both.
    pub fn check_conservation(&self) -> std::result::Result<(), Violation> {
        let store = self.pool.store();
        let queue = self.pool.queue();
        let mut in_tree = vec![false; store.len()];
        let mut reachable = 0u64;
        for sentinel in &self.sentinels {
            for_each_in_order(store, sentinel, |h| {
                in_tree[h.index()] = true;
                reachable += 1;
            });
        }
        if reachable != queue.in_use() {
            return Err(violation(
                None,
                format!("{reachable} blocks in trees but {} handed out", queue.in_use()),
            ));
        }
        // Fresh runs can be huge; only their materialized prefix needs a
        // per-handle look, the rest is checked as intervals.
        let materialized = store.len() as u32;
        let mut intervals = Vec::new();
        let mut seen = vec![false; store.len()];
        let mut check = |h: BlockHandle| {
            if !store.contains(h) {
                return Err(violation(
                    None,
                    format!("recycled handle {} was never materialized", h.0),
                ));
            }
            if std::mem::replace(&mut seen[h.index()], true) {
                return Err(violation(None, format!("handle {} queued twice", h.0)));
            }
            if in_tree[h.index()] {
                return Err(violation(None, format!("handle {} both queued and in use", h.0)));
            }
            let header = store.header(h);
            if header.active_count != 0 || header.has_children() {
                return Err(violation(None, format!("queued block {} is not clean", h.0)));
            }
            Ok(())
        };
        for run in queue.queued_runs() {
            match run {
                QueuedRun::Fresh(range) => {
                    for h in range.start..range.end.min(materialized) {
                        check(BlockHandle(h))?;
                    }
                    if range.end > materialized {
                        intervals.push(range.start.max(materialized)..range.end);
                    }
                }
                QueuedRun::Recycled(handles) => {
                    for &h in handles {
                        check(h)?;
                    }
                }
            }
        }
        intervals.sort_by_key(|r| r.start);
        if let Some(w) = intervals.windows(2).find(|w| w[0].end > w[1].start) {
            return Err(violation(None, format!("fresh handle {} queued twice", w[1].start)));
        }
        if intervals
            .last()
            .is_some_and(|r| u64::from(r.end) > queue.total_capacity())
        {
            return Err(violation(None, "queued handle beyond the minted range"));
        }
        Ok(())
    }

    /// Tombstone one live copy of `destination` without touching counts.
    #[cfg(test)]
    pub(crate) fn corrupt_tombstone(&mut self, source: VertexId, destination: VertexId) -> bool {
        let Some(sentinel) = self.sentinel(source).copied() else {
            return false;
        };
        let order = in_order_blocks(self.pool.store(), &sentinel);
        let store = self.pool.store_mut();
        for h in order {
            let occupied = store.header(h).occupied_count as usize;
            if let Some(e) = store.entries_mut(h)[..occupied]
                .iter_mut()
                .find(|e| !e.tombstone && e.destination == destination)
            {
                e.tombstone = true;
                return true;
            }
        }
        false
    }
}

/// Append `edges` to one adjacency: attach `fresh` at the next level-order
/// positions, fill the last-insert block's free slots, then the fresh blocks
/// in order. Returns the number of fresh blocks that received entries.
pub(crate) fn insert_into_adjacency<S: Blocks + ?Sized>(
    blocks: &mut S,
    sentinel: &mut EdgeSentinel,
    edges: &[VertexId],
    fresh: &[BlockHandle],
) -> u64 {
    let b = blocks.block_size();
    let resume = match sentinel.last_insert_block {
        Some(h) if (sentinel.last_insert_offset as usize) < b => Some((h, sentinel.last_insert_offset as usize)),
        _ => None,
    };
    let base = u64::from(sentinel.block_count);
    for (j, &h) in fresh.iter().enumerate() {
        cbt_attach(blocks, sentinel, h, base + j as u64 + 1).expect("positions follow block_count");
    }

    let mut rest = edges;
    let mut fill = |blocks: &mut S, sentinel: &mut EdgeSentinel, h: BlockHandle, offset: usize| {
        let take = (b - offset).min(rest.len());
        for (slot, &d) in blocks.entries_mut(h)[offset..offset + take].iter_mut().zip(rest) {
            *slot = EdgeEntry::new(d);
        }
        let header = blocks.header_mut(h);
        header.occupied_count += take as u32;
        header.active_count += take as u32;
        sentinel.last_insert_block = Some(h);
        sentinel.last_insert_offset = (offset + take) as u32;
        rest = &rest[take..];
        take
    };
    if let Some((h, offset)) = resume {
        fill(blocks, sentinel, h, offset);
    }
    let mut filled = 0;
    for &h in fresh {
        if fill(blocks, sentinel, h, 0) > 0 {
            filled += 1;
        }
    }
    assert!(rest.is_empty(), "plan under-provisioned the adjacency");
    sentinel.active_edge_count += edges.len() as u64;
    filled
}

/// Tombstone every live entry whose destination is in `targets`; optionally
/// detach emptied tail blocks. Returns the match count and detached blocks.
pub(crate) fn delete_from_adjacency<S: Blocks + ?Sized>(
    blocks: &mut S,
    sentinel: &mut EdgeSentinel,
    targets: &[VertexId],
    reclaim: bool,
) -> (u64, Vec<BlockHandle>) {
    let mut targets = targets.to_vec();
    targets.sort_unstable();
    targets.dedup();

    let mut matched = 0u64;
    for h in in_order_blocks(blocks, sentinel) {
        let occupied = blocks.header(h).occupied_count as usize;
        let mut removed = 0u32;
        for entry in &mut blocks.entries_mut(h)[..occupied] {
            if !entry.tombstone && targets.binary_search(&entry.destination).is_ok() {
                entry.tombstone = true;
                removed += 1;
            }
        }
        blocks.header_mut(h).active_count -= removed;
        matched += u64::from(removed);
    }
    sentinel.active_edge_count -= matched;

    let mut detached = Vec::new();
    if reclaim && matched > 0 {
        while let Some(tail) = block_at(blocks, sentinel, u64::from(sentinel.block_count)) {
            if blocks.header(tail).active_count != 0 {
                break;
            }
            cbt_detach_tail(blocks, sentinel);
            detached.push(tail);
        }
        if !detached.is_empty() {
            match block_at(blocks, sentinel, u64::from(sentinel.block_count)) {
                Some(tail) => {
                    sentinel.last_insert_block = Some(tail);
                    sentinel.last_insert_offset = blocks.header(tail).occupied_count;
                }
                None => {
                    sentinel.last_insert_block = None;
                    sentinel.last_insert_offset = 0;
                }
            }
        }
    }
    (matched, detached)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::bytes_per_block;

    fn insert(n: usize, pairs: &[(VertexId, VertexId)]) -> CsrBatch {
        CsrBatch::from_pairs(BatchKind::Insert, n, pairs).unwrap()
    }

    fn delete(n: usize, pairs: &[(VertexId, VertexId)]) -> CsrBatch {
        CsrBatch::from_pairs(BatchKind::Delete, n, pairs).unwrap()
    }

    #[test]
    fn fresh_vertex_six_edges_block_four() {
        let mut g = DynGraph::new(2, EngineConfig::new(4)).unwrap();
        let pairs: Vec<_> = (0..6).map(|d| (0, d % 2)).collect();
        let stats = g.insert_batch(&insert(2, &pairs)).unwrap().clone();
        assert_eq!((stats.blocks_planned, stats.blocks_filled), (2, 2));
        let s = *g.sentinel(0).unwrap();
        assert_eq!(s.block_count, 2);
        assert_eq!(s.last_insert_offset, 2);
        let root = g.block(s.cbt_root.unwrap()).header;
        assert_eq!(root.left, s.last_insert_block);
        assert_eq!(root.right, None);
        assert_eq!(root.occupied_count, 4);
        g.check_invariants().unwrap();
    }

    #[test]
    fn ninth_block_goes_left_left_right() {
        let mut g = DynGraph::new(1, EngineConfig::new(1)).unwrap();
        for _ in 0..3 {
            // 3 batches of 3 exercise resume-then-attach
            g.insert_batch(&insert(1, &[(0, 0), (0, 0), (0, 0)])).unwrap();
        }
        let s = *g.sentinel(0).unwrap();
        assert_eq!(s.block_count, 9);
        let root = g.block(s.cbt_root.unwrap()).header;
        let l = g.block(root.left.unwrap()).header;
        let ll = g.block(l.left.unwrap()).header;
        assert_eq!(ll.right, s.last_insert_block);
        assert_eq!(ll.left.map(|h| g.block(h).header.has_children()), Some(false));
        g.check_invariants().unwrap();
        g.check_conservation().unwrap();
    }

    #[test]
    fn resume_fills_partial_block_first() {
        let mut g = DynGraph::new(1, EngineConfig::new(4)).unwrap();
        g.insert_batch(&insert(1, &[(0, 0)])).unwrap();
        let stats = g.insert_batch(&insert(1, &[(0, 0), (0, 0), (0, 0)])).unwrap();
        assert_eq!(stats.blocks_planned, 0);
        let s = *g.sentinel(0).unwrap();
        assert_eq!((s.block_count, s.last_insert_offset), (1, 4));
        let stats = g.insert_batch(&insert(1, &[(0, 0)])).unwrap();
        assert_eq!(stats.blocks_planned, 1);
    }

    #[test]
    fn empty_batch_changes_nothing() {
        let mut g = DynGraph::new(8, EngineConfig::new(3)).unwrap();
        g.insert_batch(&insert(8, &[(1, 2), (3, 4)])).unwrap();
        let mut h = DynGraph::new(8, EngineConfig::new(3)).unwrap();
        h.insert_batch(&insert(8, &[(1, 2), (3, 4)])).unwrap();
        let front = g.pool().queue().front();
        let stats = g.insert_batch(&CsrBatch::empty(BatchKind::Insert, 8)).unwrap();
        assert_eq!((stats.edges, stats.blocks_planned), (0, 0));
        g.delete_batch(&CsrBatch::empty(BatchKind::Delete, 8)).unwrap();
        assert_eq!(g.pool().queue().front(), front);
        assert_eq!(g.active_destinations(1), h.active_destinations(1));
        assert_eq!(g.memory(), h.memory());
    }

    #[test]
    fn delete_one_of_two() {
        let mut g = DynGraph::new(4, EngineConfig::new(2)).unwrap();
        g.insert_batch(&insert(4, &[(1, 2), (1, 3)])).unwrap();
        let stats = g.delete_batch(&delete(4, &[(1, 2)])).unwrap();
        assert_eq!(stats.matched, 1);
        assert_eq!(g.sentinel(1).unwrap().active_edge_count, 1);
        assert!(!g.query_edge(1, 2));
        assert!(g.query_edge(1, 3));
        let stats = g.delete_batch(&delete(4, &[(1, 0), (2, 3)])).unwrap();
        assert_eq!(stats.matched, 0);
        assert_eq!(g.active_destinations(1), vec![3]);
        g.check_invariants().unwrap();
    }

    #[test]
    fn delete_removes_duplicates_and_reclaims_tail() {
        let mut g = DynGraph::new(2, EngineConfig::new(2)).unwrap();
        g.insert_batch(&insert(2, &[(0, 1), (0, 0), (0, 1), (0, 1)])).unwrap();
        let in_use = g.pool().blocks_in_use();
        let stats = g.delete_batch(&delete(2, &[(0, 1)])).unwrap().clone();
        assert_eq!(stats.matched, 3);
        // second block held [1, 1] and is now empty
        assert_eq!(stats.reclaimed, 1);
        assert_eq!(g.pool().blocks_in_use(), in_use - 1);
        let s = *g.sentinel(0).unwrap();
        assert_eq!((s.block_count, s.last_insert_offset), (1, 2));
        g.check_invariants().unwrap();
        g.check_conservation().unwrap();
        g.insert_batch(&insert(2, &[(0, 1)])).unwrap();
        assert_eq!(g.active_destinations(0), vec![0, 1]);
        g.check_invariants().unwrap();
    }

    #[test]
    fn no_reclaim_keeps_blocks() {
        let mut config = EngineConfig::new(2);
        config.reclaim_on_delete = false;
        let mut g = DynGraph::new(2, config).unwrap();
        g.insert_batch(&insert(2, &[(0, 1), (0, 1), (0, 1)])).unwrap();
        let in_use = g.pool().blocks_in_use();
        g.delete_batch(&delete(2, &[(0, 1)])).unwrap();
        assert_eq!(g.pool().blocks_in_use(), in_use);
        assert_eq!(g.edge_count(), 0);
        g.check_invariants().unwrap();
    }

    #[test]
    fn vertex_insert_fills_then_doubles() {
        let mut g = DynGraph::new(453, EngineConfig::new(4)).unwrap();
        assert_eq!(g.dictionary().capacity(), 512);
        assert_eq!(g.insert_vertices(59).unwrap(), 453..512);
        assert_eq!((g.vertex_count(), g.dictionary().capacity()), (512, 512));
        assert_eq!(g.insert_vertices(1).unwrap(), 512..513);
        assert_eq!(g.dictionary().capacity(), 1024);
        assert_eq!(g.insert_vertices(0).unwrap(), 513..513);
        assert_eq!(g.dictionary().capacity(), 1024);
        // old regions were released: dictionary + sentinels at 1024
        assert_eq!(
            g.arena().reserved_bytes(),
            1024 * (SLOT_BYTES + SENTINEL_BYTES) + g.pool().reserved_bytes()
        );
    }

    #[test]
    fn vertex_delete_and_reinsert() {
        let mut g = DynGraph::new(4, EngineConfig::new(2)).unwrap();
        g.insert_batch(&insert(4, &[(0, 1), (0, 2), (0, 3), (1, 0)])).unwrap();
        assert_eq!(g.delete_vertices(&[0, 0, 9]).unwrap(), 1);
        assert!(!g.query_edge(0, 1));
        assert!(g.query_edge(1, 0));
        assert_eq!(g.edge_count(), 1);
        g.check_conservation().unwrap();
        assert!(g.insert_batch(&insert(4, &[(0, 1)])).is_err());
        g.delete_batch(&delete(4, &[(0, 1)])).unwrap();

        g.delete_vertices(&[1, 2, 3]).unwrap();
        assert_eq!(g.dictionary().capacity(), 4);
        assert_eq!(g.edge_count(), 0);
        let ids = g.insert_vertices(1).unwrap();
        assert_eq!(ids, 4..5);
        assert!(g.active_destinations(4).is_empty());
        g.insert_batch(&insert(5, &[(4, 0)])).unwrap();
        assert!(g.query_edge(4, 0));
        g.check_invariants().unwrap();
    }

    #[test]
    fn malformed_batches_rejected() {
        let mut g = DynGraph::new(3, EngineConfig::new(2)).unwrap();
        assert!(g.insert_batch(&insert(4, &[(0, 1)])).is_err());
        assert!(g.insert_batch(&insert(3, &[(0, 3)])).is_err());
        assert!(g.insert_batch(&delete(3, &[(0, 1)])).is_err());
        assert!(matches!(
            DynGraph::new(3, EngineConfig::new(0)),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn underflow_leaves_graph_untouched() {
        let mut config = EngineConfig::new(1);
        let bpb = bytes_per_block(1);
        config.arena_bytes = 8 * (SLOT_BYTES + SENTINEL_BYTES) + 20 * bpb;
        let build = || {
            let mut g = DynGraph::new(8, config.clone()).unwrap();
            g.insert_batch(&insert(8, &[(0, 1), (2, 3)])).unwrap();
            g
        };
        let mut g = build();
        let pairs: Vec<_> = (0..40).map(|i| (i % 8, 0)).collect();
        let err = g.insert_batch(&insert(8, &pairs)).unwrap_err();
        assert!(matches!(err, Error::PoolUnderflow { .. }), "{err}");
        assert_eq!(g, build());
        g.insert_batch(&insert(8, &pairs[..10])).unwrap();
        g.check_invariants().unwrap();
    }

    #[test]
    fn thread_count_does_not_change_result() {
        let pairs: Vec<(VertexId, VertexId)> = (0..20_000u32)
            .map(|i| ((i * 7919) % 500, (i * 104_729) % 500))
            .collect();
        let run = |threads| {
            let mut config = EngineConfig::new(5);
            config.threads = threads;
            let mut g = DynGraph::new(500, config).unwrap();
            g.insert_batch(&insert(500, &pairs[..12_000])).unwrap();
            g.delete_batch(&delete(500, &pairs[3_000..4_000])).unwrap();
            g.insert_batch(&insert(500, &pairs[12_000..])).unwrap();
            g
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a, b);
        a.check_invariants().unwrap();
    }

    #[test]
    fn init_uses_three_reservations() {
        let g = DynGraph::new(100, EngineConfig::new(6)).unwrap();
        assert_eq!(g.memory().reservations, 3);
        assert_eq!(g.memory().dictionary, 128 * SLOT_BYTES);
    }

    #[test]
    fn invariants_catch_corruption() {
        let mut g = DynGraph::new(2, EngineConfig::new(2)).unwrap();
        g.insert_batch(&insert(2, &[(0, 1), (0, 0), (0, 1)])).unwrap();
        assert!(g.corrupt_tombstone(0, 0));
        assert!(g.check_invariants().is_err());
    }
}
