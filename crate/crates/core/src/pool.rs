//! Simulated device arena and the pre-allocated edge-block queue.
//!
//! The queue is addressed in unwrapped positions: `front` is the next
//! position to serve and `rear` is one past the last pushed handle. Batch
//! workers read disjoint position ranges computed from a prefix sum and the
//! front moves once per batch in [`BlockPool::commit_front`].
//!
//! Freshly minted handles are stored as ranges, so a multi-gigabyte arena does
//! not cost host memory until its blocks are actually handed out.

use std::collections::VecDeque;
use std::marker::PhantomData;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{bytes_per_block, BlockHandle, BlockHeader, Blocks, EdgeEntry, HANDLE_BYTES};

/// Byte budget standing in for device memory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Arena {
    capacity_bytes: u64,
    reserved_bytes: u64,
    reservation_count: u64,
}

impl Arena {
    pub fn new(capacity_bytes: u64) -> Self {
        Self {
            capacity_bytes,
            reserved_bytes: 0,
            reservation_count: 0,
        }
    }

    pub fn capacity_bytes(&self) -> u64 {
        self.capacity_bytes
    }

    pub fn reserved_bytes(&self) -> u64 {
        self.reserved_bytes
    }

    pub fn reservation_count(&self) -> u64 {
        self.reservation_count
    }

    pub fn available(&self) -> u64 {
        self.capacity_bytes - self.reserved_bytes
    }

    /// One allocation call of `bytes`.
    pub fn reserve(&mut self, bytes: u64) -> Result<()> {
        if bytes == 0 || bytes > self.available() {
            return Err(Error::InsufficientCapacity {
                requested: bytes,
                available: self.available(),
            });
        }
        self.reserved_bytes += bytes;
        self.reservation_count += 1;
        Ok(())
    }

    pub fn release(&mut self, bytes: u64) {
        assert!(bytes <= self.reserved_bytes, "releasing more than reserved");
        self.reserved_bytes -= bytes;
    }
}

/// Launch reservation and growth rule for the edge queue.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrowthPolicy {
    pub initial_fraction: f64,
    pub trigger_fraction: f64,
    pub growth_fraction: f64,
}

impl Default for GrowthPolicy {
    fn default() -> Self {
        Self {
            initial_fraction: 0.5,
            trigger_fraction: 0.8,
            growth_fraction: 0.25,
        }
    }
}

impl GrowthPolicy {
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("initial_fraction", self.initial_fraction),
            ("trigger_fraction", self.trigger_fraction),
            ("growth_fraction", self.growth_fraction),
        ] {
            if !(value > 0.0 && value <= 1.0) {
                return Err(Error::InvalidArgument(format!("{name} = {value} not in (0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Run {
    Fresh { first: u32, len: u64 },
    Recycled(Vec<BlockHandle>),
}

impl Run {
    fn len(&self) -> u64 {
        match self {
            Run::Fresh { len, .. } => *len,
            Run::Recycled(v) => v.len() as u64,
        }
    }

    fn get(&self, i: u64) -> BlockHandle {
        match self {
            Run::Fresh { first, .. } => BlockHandle(*first + i as u32),
            Run::Recycled(v) => v[i as usize],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Segment {
    start: u64,
    run: Run,
}

impl Segment {
    fn end(&self) -> u64 {
        self.start + self.run.len()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum QueuedRun<'a> {
    /// Consecutive never-used handles.
    Fresh(std::ops::Range<u32>),
    Recycled(&'a [BlockHandle]),
}

/// Ring of free block handles.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EdgeQueue {
    segments: VecDeque<Segment>,
    front: u64,
    rear: u64,
    minted: u64,
}

impl EdgeQueue {
    pub fn front(&self) -> u64 {
        self.front
    }

    pub fn rear(&self) -> u64 {
        self.rear
    }

    /// Handles currently queued.
    pub fn len(&self) -> u64 {
        self.rear - self.front
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Handles ever created.
    pub fn total_capacity(&self) -> u64 {
        self.minted
    }

    /// Handles created but not queued.
    pub fn in_use(&self) -> u64 {
        self.minted - self.len()
    }

    fn push_fresh(&mut self, count: u64) -> Result<()> {
        if self.minted + count > u64::from(u32::MAX) {
            return Err(Error::InvalidArgument(format!(
                "queue would exceed {} handles",
                u32::MAX
            )));
        }
        let first = self.minted as u32;
        self.minted += count;
        let rear = self.rear;
        self.rear += count;
        if let Some(Segment {
            run: Run::Fresh { first: f, len },
            ..
        }) = self.segments.back_mut()
        {
            if u64::from(*f) + *len == u64::from(first) {
                *len += count;
                return Ok(());
            }
        }
        self.segments.push_back(Segment {
            start: rear,
            run: Run::Fresh { first, len: count },
        });
        Ok(())
    }

    fn push_recycled(&mut self, handles: &[BlockHandle]) {
        if handles.is_empty() {
            return;
        }
        let rear = self.rear;
        self.rear += handles.len() as u64;
        if let Some(Segment {
            run: Run::Recycled(v), ..
        }) = self.segments.back_mut()
        {
            v.extend_from_slice(handles);
            return;
        }
        self.segments.push_back(Segment {
            start: rear,
            run: Run::Recycled(handles.to_vec()),
        });
    }

    fn check_range(&self, start: u64, count: u64) -> Result<()> {
        if start < self.front || start.saturating_add(count) > self.rear {
            return Err(Error::RangeExceedsQueue {
                start,
                count,
                front: self.front,
                rear: self.rear,
            });
        }
        Ok(())
    }

    fn for_each_in(&self, start: u64, count: u64, mut f: impl FnMut(BlockHandle)) {
        let end = start + count;
        let mut idx = self.segments.partition_point(|s| s.end() <= start);
        let mut pos = start;
        while pos < end {
            let seg = &self.segments[idx];
            let stop = seg.end().min(end);
            for p in pos..stop {
                f(seg.run.get(p - seg.start));
            }
            pos = stop;
            idx += 1;
        }
    }

    /// Handles at positions `[start, start + count)`. Does not move the front.
    pub fn pop_range(&self, start: u64, count: u64) -> Result<Vec<BlockHandle>> {
        self.check_range(start, count)?;
        let mut out = Vec::with_capacity(count as usize);
        self.for_each_in(start, count, |h| out.push(h));
        Ok(out)
    }

    /// One past the highest freshly minted handle in the range.
    fn fresh_high_water(&self, start: u64, count: u64) -> u32 {
        let end = start + count;
        let first_idx = self.segments.partition_point(|s| s.end() <= start);
        let mut high = 0;
        for seg in self.segments.range(first_idx..) {
            if seg.start >= end {
                break;
            }
            if let Run::Fresh { first, .. } = seg.run {
                let last_pos = seg.end().min(end) - 1;
                high = high.max(first + (last_pos - seg.start) as u32 + 1);
            }
        }
        high
    }

    fn advance(&mut self, by: u64) -> Result<()> {
        if by > self.len() {
            return Err(Error::FrontPastRear { by, queued: self.len() });
        }
        self.front += by;
        while self.segments.front().is_some_and(|s| s.end() <= self.front) {
            self.segments.pop_front();
        }
        Ok(())
    }

    /// Queued handles front to rear, fresh runs kept as ranges.
    pub fn queued_runs(&self) -> Vec<QueuedRun<'_>> {
        self.segments
            .iter()
            .map(|seg| {
                let skip = self.front.saturating_sub(seg.start);
                match &seg.run {
                    Run::Fresh { first, len } => QueuedRun::Fresh(first + skip as u32..first + *len as u32),
                    Run::Recycled(v) => QueuedRun::Recycled(&v[skip as usize..]),
                }
            })
            .collect()
    }

    /// Every queued handle, front to rear.
    pub fn queued(&self) -> Vec<BlockHandle> {
        let mut out = Vec::with_capacity(self.len() as usize);
        self.for_each_in(self.front, self.len(), |h| out.push(h));
        out
    }
}

/// Headers and entries of every materialized block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockStore {
    block_size: usize,
    headers: Vec<BlockHeader>,
    entries: Vec<EdgeEntry>,
}

impl BlockStore {
    pub fn new(block_size: usize) -> Self {
        assert!(block_size > 0);
        Self {
            block_size,
            headers: Vec::new(),
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.headers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.headers.is_empty()
    }

    /// Back handles `0..upto` with storage.
    pub fn materialize(&mut self, upto: u32) {
        let upto = upto as usize;
        if upto > self.headers.len() {
            self.headers.resize(upto, BlockHeader::default());
            self.entries.resize(upto * self.block_size, EdgeEntry::default());
        }
    }

    pub fn contains(&self, handle: BlockHandle) -> bool {
        handle.index() < self.headers.len()
    }

    fn reset(&mut self, handle: BlockHandle) {
        self.headers[handle.index()] = BlockHeader::default();
        self.entries_mut(handle).fill(EdgeEntry::default());
    }

    pub(crate) fn shared(&mut self) -> SharedBlocks<'_> {
        SharedBlocks {
            headers: self.headers.as_mut_ptr(),
            entries: self.entries.as_mut_ptr(),
            len: self.headers.len(),
            block_size: self.block_size,
            _store: PhantomData,
        }
    }
}

impl Blocks for BlockStore {
    fn block_size(&self) -> usize {
        self.block_size
    }

    fn header(&self, handle: BlockHandle) -> &BlockHeader {
        &self.headers[handle.index()]
    }

    fn header_mut(&mut self, handle: BlockHandle) -> &mut BlockHeader {
        &mut self.headers[handle.index()]
    }

    fn entries(&self, handle: BlockHandle) -> &[EdgeEntry] {
        let at = handle.index() * self.block_size;
        &self.entries[at..at + self.block_size]
    }

    fn entries_mut(&mut self, handle: BlockHandle) -> &mut [EdgeEntry] {
        let at = handle.index() * self.block_size;
        &mut self.entries[at..at + self.block_size]
    }
}

/// Block storage shared by the per-vertex workers of one batch.
///
/// Workers never touch the same block: each adjacency owns its tree blocks
/// and fresh blocks come from disjoint queue ranges.
pub(crate) struct SharedBlocks<'a> {
    headers: *mut BlockHeader,
    entries: *mut EdgeEntry,
    len: usize,
    block_size: usize,
    _store: PhantomData<&'a mut BlockStore>,
}

// SAFETY: access goes through `WorkerBlocks`, whose constructor requires
// disjoint block ownership between concurrently live workers.
unsafe impl Send for SharedBlocks<'_> {}
unsafe impl Sync for SharedBlocks<'_> {}

impl<'a> SharedBlocks<'a> {
    /// # Safety
    /// While the returned view is alive, no other view may access any block
    /// this one accesses.
    pub(crate) unsafe fn worker(&self) -> WorkerBlocks<'_, 'a> {
        WorkerBlocks { shared: self }
    }
}

pub(crate) struct WorkerBlocks<'s, 'a> {
    shared: &'s SharedBlocks<'a>,
}

impl WorkerBlocks<'_, '_> {
    fn check(&self, handle: BlockHandle) -> usize {
        let i = handle.index();
        assert!(i < self.shared.len, "block handle {i} out of range");
        i
    }
}

impl Blocks for WorkerBlocks<'_, '_> {
    fn block_size(&self) -> usize {
        self.shared.block_size
    }

    fn header(&self, handle: BlockHandle) -> &BlockHeader {
        let i = self.check(handle);
        // SAFETY: in bounds; exclusivity per the `worker` contract.
        unsafe { &*self.shared.headers.add(i) }
    }

    fn header_mut(&mut self, handle: BlockHandle) -> &mut BlockHeader {
        let i = self.check(handle);
        // SAFETY: as above.
        unsafe { &mut *self.shared.headers.add(i) }
    }

    fn entries(&self, handle: BlockHandle) -> &[EdgeEntry] {
        let i = self.check(handle);
        let b = self.shared.block_size;
        // SAFETY: as above.
        unsafe { std::slice::from_raw_parts(self.shared.entries.add(i * b), b) }
    }

    fn entries_mut(&mut self, handle: BlockHandle) -> &mut [EdgeEntry] {
        let i = self.check(handle);
        let b = self.shared.block_size;
        // SAFETY: as above.
        unsafe { std::slice::from_raw_parts_mut(self.shared.entries.add(i * b), b) }
    }
}

/// Outcome of one growth attempt.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Growth {
    pub requested: u64,
    pub pushed: u64,
}

/// Edge queue plus the block storage its handles index.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockPool {
    policy: GrowthPolicy,
    block_size: usize,
    bytes_per_block: u64,
    queue: EdgeQueue,
    store: BlockStore,
    reserved_bytes: u64,
    growth_events: u64,
}

/// Reserve the launch fraction of the arena in one call and queue every block
/// that fits.
pub fn pool_init(arena: &mut Arena, policy: GrowthPolicy, block_size: usize) -> Result<BlockPool> {
    policy.validate()?;
    if block_size == 0 {
        return Err(Error::InvalidArgument("block size must be at least 1".into()));
    }
    let bpb = bytes_per_block(block_size);
    let target = ((arena.capacity_bytes() as f64 * policy.initial_fraction) as u64).min(arena.available());
    let handles = (target / bpb).min(u64::from(u32::MAX));
    if handles == 0 {
        return Err(Error::InsufficientCapacity {
            requested: bpb,
            available: target,
        });
    }
    arena.reserve(handles * bpb)?;
    let mut queue = EdgeQueue::default();
    queue.push_fresh(handles)?;
    Ok(BlockPool {
        policy,
        block_size,
        bytes_per_block: bpb,
        queue,
        store: BlockStore::new(block_size),
        reserved_bytes: handles * bpb,
        growth_events: 0,
    })
}

impl BlockPool {
    pub fn policy(&self) -> &GrowthPolicy {
        &self.policy
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn bytes_per_block(&self) -> u64 {
        self.bytes_per_block
    }

    pub fn queue(&self) -> &EdgeQueue {
        &self.queue
    }

    pub fn store(&self) -> &BlockStore {
        &self.store
    }

    pub(crate) fn store_mut(&mut self) -> &mut BlockStore {
        &mut self.store
    }

    pub(crate) fn split_mut(&mut self) -> (&EdgeQueue, &mut BlockStore) {
        (&self.queue, &mut self.store)
    }

    pub fn reserved_bytes(&self) -> u64 {
        self.reserved_bytes
    }

    pub fn growth_events(&self) -> u64 {
        self.growth_events
    }

    /// Fraction of all handles currently out of the queue.
    pub fn occupancy(&self) -> f64 {
        if self.queue.total_capacity() == 0 {
            return 0.0;
        }
        self.queue.in_use() as f64 / self.queue.total_capacity() as f64
    }

    pub fn pop_range(&self, start: u64, count: u64) -> Result<Vec<BlockHandle>> {
        self.queue.pop_range(start, count)
    }

    /// Make sure blocks at queue positions `[start, start + count)` have storage.
    pub fn materialize_range(&mut self, start: u64, count: u64) -> Result<()> {
        self.queue.check_range(start, count)?;
        let high = self.queue.fresh_high_water(start, count);
        self.store.materialize(high);
        Ok(())
    }

    /// Push up to `wanted` fresh handles with a single arena reservation,
    /// fewer if the arena cannot host them all.
    pub fn grow(&mut self, arena: &mut Arena, wanted: u64) -> Result<Growth> {
        let room = u64::from(u32::MAX) - self.queue.total_capacity();
        let pushed = wanted.min(arena.available() / self.bytes_per_block).min(room);
        if pushed > 0 {
            arena.reserve(pushed * self.bytes_per_block)?;
            self.queue.push_fresh(pushed)?;
            self.reserved_bytes += pushed * self.bytes_per_block;
            self.growth_events += 1;
        }
        Ok(Growth {
            requested: wanted,
            pushed,
        })
    }

    fn growth_step(&self) -> u64 {
        ((self.queue.total_capacity() as f64 * self.policy.growth_fraction) as u64).max(1)
    }

    /// Grow ahead of a batch that needs more blocks than are queued. Fails
    /// without touching anything if the arena cannot cover the deficit.
    pub fn ensure_available(&mut self, arena: &mut Arena, needed: u64) -> Result<Option<Growth>> {
        let queued = self.queue.len();
        if needed <= queued {
            return Ok(None);
        }
        let deficit = needed - queued;
        let affordable = arena.available() / self.bytes_per_block;
        if affordable < deficit {
            return Err(Error::PoolUnderflow {
                needed,
                available: queued + affordable,
            });
        }
        let growth = self.grow(arena, deficit.max(self.growth_step()))?;
        Ok(Some(growth))
    }

    /// Advance the front past a batch's pops, then grow if occupancy reached
    /// the trigger.
    pub fn commit_front(&mut self, arena: &mut Arena, total_popped: u64) -> Result<Option<Growth>> {
        self.queue.advance(total_popped)?;
        if self.occupancy() >= self.policy.trigger_fraction {
            let step = self.growth_step();
            return self.grow(arena, step).map(Some);
        }
        Ok(None)
    }

    /// Return emptied, detached blocks to the rear of the queue.
    pub fn reclaim(&mut self, handles: &[BlockHandle]) -> Result<()> {
        for &handle in handles {
            if !self.store.contains(handle) {
                return Err(Error::ReclaimRejected {
                    handle,
                    reason: "never handed out",
                });
            }
            let header = self.store.header(handle);
            if header.active_count != 0 {
                return Err(Error::ReclaimRejected {
                    handle,
                    reason: "block has active entries",
                });
            }
            if header.has_children() {
                return Err(Error::ReclaimRejected {
                    handle,
                    reason: "block still has children",
                });
            }
        }
        for &handle in handles {
            self.store.reset(handle);
        }
        self.queue.push_recycled(handles);
        Ok(())
    }

    /// Clear blocks regardless of content and reclaim them.
    pub(crate) fn release(&mut self, handles: &[BlockHandle]) -> Result<()> {
        for &handle in handles {
            self.store.reset(handle);
        }
        self.reclaim(handles)
    }

    pub fn blocks_in_use(&self) -> u64 {
        self.queue.in_use()
    }

    pub fn in_use_bytes(&self) -> u64 {
        self.blocks_in_use() * self.bytes_per_block
    }

    /// Storage for the queue's handle ring.
    pub fn queue_bytes(&self) -> u64 {
        self.queue.total_capacity() * HANDLE_BYTES
    }
}
