//! Persistent layout: vertex dictionary, per-vertex edge sentinels and edge
//! blocks.
//!
//! Blocks are addressed by [`BlockHandle`], a stable index into the pool's
//! block storage. Byte sizes below are the accounting sizes of the packed
//! device layout, not the Rust in-memory sizes.

/// Dense vertex identifier.
pub type VertexId = u32;

/// Bytes per edge entry: destination plus flag word.
pub const ENTRY_BYTES: u64 = 8;
/// Bytes per block header: two child links, active and occupied counts.
pub const BLOCK_HEADER_BYTES: u64 = 16;
/// Bytes per vertex-dictionary slot: vertex id and sentinel pointer.
pub const SLOT_BYTES: u64 = 8;
/// Bytes per edge sentinel.
pub const SENTINEL_BYTES: u64 = 24;
/// Bytes per queued block handle.
pub const HANDLE_BYTES: u64 = 4;

pub fn bytes_per_block(block_size: usize) -> u64 {
    block_size as u64 * ENTRY_BYTES + BLOCK_HEADER_BYTES
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockHandle(pub u32);

impl BlockHandle {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EdgeEntry {
    pub destination: VertexId,
    pub tombstone: bool,
}

impl EdgeEntry {
    pub fn new(destination: VertexId) -> Self {
        Self {
            destination,
            tombstone: false,
        }
    }
}

/// Per-block metadata. Entries live in a separate flat array.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BlockHeader {
    pub active_count: u32,
    pub occupied_count: u32,
    pub left: Option<BlockHandle>,
    pub right: Option<BlockHandle>,
}

impl BlockHeader {
    pub fn has_children(&self) -> bool {
        self.left.is_some() || self.right.is_some()
    }
}

/// Read-only view of one edge block.
#[derive(Clone, Copy, Debug)]
pub struct EdgeBlock<'a> {
    pub handle: BlockHandle,
    pub header: &'a BlockHeader,
    /// All `B` slots; only the first `occupied_count` have been written.
    pub entries: &'a [EdgeEntry],
}

impl<'a> EdgeBlock<'a> {
    pub fn occupied(&self) -> &'a [EdgeEntry] {
        &self.entries[..self.header.occupied_count as usize]
    }
}

/// Per-vertex adjacency metadata.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EdgeSentinel {
    pub active_edge_count: u64,
    pub block_count: u32,
    pub cbt_root: Option<BlockHandle>,
    pub last_insert_block: Option<BlockHandle>,
    /// Next free slot in `last_insert_block`, in `[0, B]`.
    pub last_insert_offset: u32,
}

impl EdgeSentinel {
    pub fn is_empty(&self) -> bool {
        self.block_count == 0
    }

    /// Free slots left in the last-insert block.
    pub fn space_remaining(&self, block_size: usize) -> usize {
        match self.last_insert_block {
            Some(_) => block_size - self.last_insert_offset as usize,
            None => 0,
        }
    }
}

/// Storage access used by the CBT routines and the batch workers.
pub trait Blocks {
    fn block_size(&self) -> usize;
    fn header(&self, handle: BlockHandle) -> &BlockHeader;
    fn header_mut(&mut self, handle: BlockHandle) -> &mut BlockHeader;
    fn entries(&self, handle: BlockHandle) -> &[EdgeEntry];
    fn entries_mut(&mut self, handle: BlockHandle) -> &mut [EdgeEntry];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VertexSlot {
    pub vertex_id: VertexId,
    pub alive: bool,
    /// Index into the sentinel table.
    pub sentinel: u32,
}

/// Contiguous power-of-two array of vertex slots.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VertexDictionary {
    slots: Vec<VertexSlot>,
    capacity: usize,
}

impl VertexDictionary {
    pub(crate) fn with_capacity(capacity: usize) -> Self {
        debug_assert!(capacity.is_power_of_two());
        Self {
            slots: Vec::with_capacity(capacity),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Slots in use, alive or deleted.
    pub fn logical_size(&self) -> usize {
        self.slots.len()
    }

    pub fn alive_count(&self) -> usize {
        self.slots.iter().filter(|s| s.alive).count()
    }

    pub fn slot(&self, id: VertexId) -> Option<&VertexSlot> {
        self.slots.get(id as usize)
    }

    pub fn slots(&self) -> &[VertexSlot] {
        &self.slots
    }

    pub fn is_alive(&self, id: VertexId) -> bool {
        self.slot(id).is_some_and(|s| s.alive)
    }

    pub fn bytes(&self) -> u64 {
        self.capacity as u64 * SLOT_BYTES
    }

    /// Append a slot; the caller has already grown capacity.
    pub(crate) fn push(&mut self, sentinel: u32) -> VertexId {
        assert!(self.slots.len() < self.capacity, "dictionary full");
        let vertex_id = self.slots.len() as VertexId;
        self.slots.push(VertexSlot {
            vertex_id,
            alive: true,
            sentinel,
        });
        vertex_id
    }

    pub(crate) fn retire(&mut self, id: VertexId) -> bool {
        match self.slots.get_mut(id as usize) {
            Some(slot) if slot.alive => {
                slot.alive = false;
                true
            }
            _ => false,
        }
    }

    /// Copy every slot into fresh storage of `new_capacity`.
    pub(crate) fn migrate(&mut self, new_capacity: usize) {
        debug_assert!(new_capacity.is_power_of_two() && new_capacity >= self.slots.len());
        let mut slots = Vec::with_capacity(new_capacity);
        slots.extend_from_slice(&self.slots);
        self.slots = slots;
        self.capacity = new_capacity;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dictionary_push_retire_migrate() {
        let mut dict = VertexDictionary::with_capacity(2);
        assert_eq!(dict.push(0), 0);
        assert_eq!(dict.push(1), 1);
        dict.migrate(4);
        assert_eq!(dict.capacity(), 4);
        assert_eq!(dict.logical_size(), 2);
        assert!(dict.retire(1));
        assert!(!dict.retire(1));
        assert!(!dict.retire(7));
        assert_eq!(dict.alive_count(), 1);
        assert_eq!(dict.bytes(), 4 * SLOT_BYTES);
    }

    #[test]
    fn block_bytes() {
        assert_eq!(bytes_per_block(6), 64);
        assert_eq!(bytes_per_block(1), 24);
    }

    #[test]
    fn sentinel_space() {
        let mut s = EdgeSentinel::default();
        assert_eq!(s.space_remaining(4), 0);
        s.last_insert_block = Some(BlockHandle(0));
        s.last_insert_offset = 1;
        assert_eq!(s.space_remaining(4), 3);
        s.last_insert_offset = 4;
        assert_eq!(s.space_remaining(4), 0);
    }
}
