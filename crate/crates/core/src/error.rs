use thiserror::Error;

use crate::graph::BlockHandle;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the graph engine and its block pool.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient arena capacity: requested {requested} bytes, {available} available")]
    InsufficientCapacity { requested: u64, available: u64 },

    #[error("queue range [{start}, {start}+{count}) outside live interval [{front}, {rear})")]
    RangeExceedsQueue {
        start: u64,
        count: u64,
        front: u64,
        rear: u64,
    },

    #[error("cannot advance queue front by {by}: only {queued} handles queued")]
    FrontPastRear { by: u64, queued: u64 },

    #[error("CBT attach at position {got}, next free position is {expected}")]
    CbtPosition { expected: u64, got: u64 },

    #[error("block {handle:?} cannot be reclaimed: {reason}")]
    ReclaimRejected { handle: BlockHandle, reason: &'static str },

    #[error("edge queue underflow: batch needs {needed} blocks, {available} obtainable")]
    PoolUnderflow { needed: u64, available: u64 },

    #[error("malformed batch: {0}")]
    MalformedBatch(String),

    #[error("first batch has no edges; block size cannot be derived")]
    EmptyFirstBatch,
}
