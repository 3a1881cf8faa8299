//! Complete-binary-tree layout of an adjacency's edge blocks.
//!
//! Blocks are numbered by 1-based level-order position. The children of
//! position `k` sit at `2k` and `2k + 1`, so the path from the root to `k` is
//! the binary representation of `k` with its leading one removed, read from
//! the most significant bit: `0` descends left, `1` descends right.

use std::fmt;

use crate::error::{Error, Result};
use crate::graph::{BlockHandle, Blocks, EdgeSentinel};

/// Smallest power of two that is `>= n`.
pub fn closest_pow2(n: u64) -> Result<u64> {
    if n == 0 {
        return Err(Error::InvalidArgument("closest_pow2 of 0".into()));
    }
    n.checked_next_power_of_two()
        .ok_or_else(|| Error::InvalidArgument(format!("{n} has no representable power-of-two ceiling")))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// Root-to-node path of a level-order position.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CbtPath {
    bits: u64,
    len: u32,
}

impl CbtPath {
    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Steps from the root, first step first.
    pub fn steps(&self) -> impl Iterator<Item = Side> + '_ {
        (0..self.len).rev().map(move |i| {
            if (self.bits >> i) & 1 == 1 {
                Side::Right
            } else {
                Side::Left
            }
        })
    }

    /// The final step, i.e. which child of the parent the node is.
    pub fn last(&self) -> Option<Side> {
        if self.len == 0 {
            None
        } else if self.bits & 1 == 1 {
            Some(Side::Right)
        } else {
            Some(Side::Left)
        }
    }

    /// The path to the parent node.
    pub fn parent(&self) -> Option<CbtPath> {
        (self.len > 0).then(|| CbtPath {
            bits: self.bits >> 1,
            len: self.len - 1,
        })
    }
}

impl fmt::Display for CbtPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for side in self.steps() {
            f.write_str(match side {
                Side::Left => "0",
                Side::Right => "1",
            })?;
        }
        Ok(())
    }
}

/// Bit string locating level-order position `position` (>= 1).
pub fn cbt_position_bits(position: u64) -> CbtPath {
    assert!(position >= 1, "CBT positions are 1-based");
    let len = 63 - position.leading_zeros();
    CbtPath {
        bits: position & !(1u64 << len),
        len,
    }
}

/// Follow `path` from `root`. Returns `None` if a link along the way is missing.
pub fn cbt_locate<S: Blocks + ?Sized>(store: &S, root: BlockHandle, path: CbtPath) -> Option<BlockHandle> {
    let mut node = root;
    for side in path.steps() {
        let header = store.header(node);
        node = match side {
            Side::Left => header.left?,
            Side::Right => header.right?,
        };
    }
    Some(node)
}

/// Handle of the block at level-order `position` in the sentinel's tree.
pub fn block_at<S: Blocks + ?Sized>(store: &S, sentinel: &EdgeSentinel, position: u64) -> Option<BlockHandle> {
    if position == 0 || position > u64::from(sentinel.block_count) {
        return None;
    }
    cbt_locate(store, sentinel.cbt_root?, cbt_position_bits(position))
}

/// Link `block` into the sentinel's tree at level-order `position`, which must
/// be the next free one.
pub fn cbt_attach<S: Blocks + ?Sized>(
    store: &mut S,
    sentinel: &mut EdgeSentinel,
    block: BlockHandle,
    position: u64,
) -> Result<()> {
    let expected = u64::from(sentinel.block_count) + 1;
    if position != expected {
        return Err(Error::CbtPosition {
            expected,
            got: position,
        });
    }
    if position == 1 {
        sentinel.cbt_root = Some(block);
    } else {
        let path = cbt_position_bits(position);
        let root = sentinel.cbt_root.expect("non-empty adjacency always has a root");
        let parent = cbt_locate(store, root, path.parent().expect("position > 1"))
            .expect("complete tree has every position below block_count");
        let header = store.header_mut(parent);
        match path.last().expect("position > 1") {
            Side::Left => header.left = Some(block),
            Side::Right => header.right = Some(block),
        }
    }
    sentinel.block_count += 1;
    Ok(())
}

/// Unlink the block at the tail position (`block_count`) and return it.
pub fn cbt_detach_tail<S: Blocks + ?Sized>(store: &mut S, sentinel: &mut EdgeSentinel) -> Option<BlockHandle> {
    let position = u64::from(sentinel.block_count);
    let tail = block_at(store, sentinel, position)?;
    if position == 1 {
        sentinel.cbt_root = None;
    } else {
        let path = cbt_position_bits(position);
        let parent = cbt_locate(store, sentinel.cbt_root?, path.parent()?)?;
        let header = store.header_mut(parent);
        match path.last()? {
            Side::Left => header.left = None,
            Side::Right => header.right = None,
        }
    }
    sentinel.block_count -= 1;
    Some(tail)
}

/// Visit every block of the adjacency in in-order sequence.
pub fn for_each_in_order<S: Blocks + ?Sized>(store: &S, sentinel: &EdgeSentinel, mut visit: impl FnMut(BlockHandle)) {
    // A CBT of 2^32 blocks is at most 33 levels deep.
    let mut stack: Vec<BlockHandle> = Vec::with_capacity(34);
    let mut cursor = sentinel.cbt_root;
    loop {
        while let Some(node) = cursor {
            stack.push(node);
            cursor = store.header(node).left;
        }
        let Some(node) = stack.pop() else { break };
        visit(node);
        cursor = store.header(node).right;
    }
}

pub fn in_order_blocks<S: Blocks + ?Sized>(store: &S, sentinel: &EdgeSentinel) -> Vec<BlockHandle> {
    let mut out = Vec::with_capacity(sentinel.block_count as usize);
    for_each_in_order(store, sentinel, |h| out.push(h));
    out
}

/// Height of a complete binary tree holding `block_count` nodes.
pub fn cbt_height(block_count: u32) -> u32 {
    32 - block_count.leading_zeros()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pool::BlockStore;

    #[test]
    fn pow2_examples() {
        assert_eq!(closest_pow2(453).unwrap(), 512);
        assert_eq!(closest_pow2(512).unwrap(), 512);
        assert_eq!(closest_pow2(1).unwrap(), 1);
        assert!(matches!(closest_pow2(0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn pow2_idempotent() {
        for n in 1..5000u64 {
            let p = closest_pow2(n).unwrap();
            assert_eq!(closest_pow2(p).unwrap(), p);
            assert!(p.is_power_of_two() && p >= n && p / 2 < n);
        }
    }

    #[test]
    fn position_bits_examples() {
        assert_eq!(cbt_position_bits(9).to_string(), "001");
        assert_eq!(cbt_position_bits(1).to_string(), "");
        assert_eq!(cbt_position_bits(12).to_string(), "100");
        assert_eq!(cbt_position_bits(9).last(), Some(Side::Right));
        assert_eq!(cbt_position_bits(9).parent().unwrap().to_string(), "00");
    }

    fn store_with(n: usize) -> BlockStore {
        let mut store = BlockStore::new(2);
        store.materialize(n as u32);
        store
    }

    fn build(store: &mut BlockStore, n: u32) -> EdgeSentinel {
        let mut sentinel = EdgeSentinel::default();
        for k in 0..n {
            cbt_attach(store, &mut sentinel, BlockHandle(k), u64::from(k) + 1).unwrap();
        }
        sentinel
    }

    #[test]
    fn attach_positions() {
        let mut store = store_with(16);
        let sentinel = build(&mut store, 9);
        assert_eq!(sentinel.cbt_root, Some(BlockHandle(0)));
        // ninth block is the right child of left-left
        let left_left = store.header(store.header(BlockHandle(0)).left.unwrap()).left.unwrap();
        assert_eq!(store.header(left_left).right, Some(BlockHandle(8)));
        // fourth block is the left child of position 2
        assert_eq!(store.header(BlockHandle(1)).left, Some(BlockHandle(3)));
    }

    #[test]
    fn attach_out_of_order_rejected() {
        let mut store = store_with(4);
        let mut sentinel = build(&mut store, 2);
        let err = cbt_attach(&mut store, &mut sentinel, BlockHandle(3), 4).unwrap_err();
        assert_eq!(err, Error::CbtPosition { expected: 3, got: 4 });
        assert_eq!(sentinel.block_count, 2);
    }

    #[test]
    fn in_order_examples() {
        let mut store = store_with(4);
        assert!(in_order_blocks(&store, &EdgeSentinel::default()).is_empty());
        let one = build(&mut store, 1);
        assert_eq!(in_order_blocks(&store, &one), vec![BlockHandle(0)]);

        let mut store = store_with(4);
        let three = build(&mut store, 3);
        assert_eq!(
            in_order_blocks(&store, &three),
            vec![BlockHandle(1), BlockHandle(0), BlockHandle(2)]
        );
    }

    #[test]
    fn detach_tail_restores_shape() {
        let mut store = store_with(8);
        let mut sentinel = build(&mut store, 6);
        assert_eq!(cbt_detach_tail(&mut store, &mut sentinel), Some(BlockHandle(5)));
        assert_eq!(sentinel.block_count, 5);
        assert_eq!(store.header(BlockHandle(2)).left, None);
        for _ in 0..5 {
            cbt_detach_tail(&mut store, &mut sentinel).unwrap();
        }
        assert_eq!(sentinel.cbt_root, None);
        assert_eq!(cbt_detach_tail(&mut store, &mut sentinel), None);
    }

    #[test]
    fn heights() {
        assert_eq!(cbt_height(0), 0);
        assert_eq!(cbt_height(1), 1);
        assert_eq!(cbt_height(3), 2);
        assert_eq!(cbt_height(4), 3);
        assert_eq!(cbt_height(9), 4);
    }
}
