//! CSR update batches and the per-batch block plan.

use crate::error::{Error, Result};
use crate::graph::VertexId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BatchKind {
    Insert,
    Delete,
}

/// One update batch in CSR form. `offsets` has one entry per vertex plus one.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CsrBatch {
    kind: BatchKind,
    offsets: Vec<usize>,
    destinations: Vec<VertexId>,
}

impl CsrBatch {
    pub fn new(kind: BatchKind, offsets: Vec<usize>, destinations: Vec<VertexId>) -> Result<Self> {
        match offsets.first() {
            None => return Err(Error::MalformedBatch("offsets array is empty".into())),
            Some(&first) if first != 0 => {
                return Err(Error::MalformedBatch(format!("offsets[0] = {first}, expected 0")))
            }
            _ => {}
        }
        if let Some(i) = offsets.windows(2).position(|w| w[0] > w[1]) {
            return Err(Error::MalformedBatch(format!(
                "offsets decrease at index {}: {} > {}",
                i + 1,
                offsets[i],
                offsets[i + 1]
            )));
        }
        let last = *offsets.last().unwrap();
        if last != destinations.len() {
            return Err(Error::MalformedBatch(format!(
                "offsets end at {last} but {} destinations given",
                destinations.len()
            )));
        }
        Ok(Self {
            kind,
            offsets,
            destinations,
        })
    }

    /// Batch touching no edges.
    pub fn empty(kind: BatchKind, vertex_count: usize) -> Self {
        Self {
            kind,
            offsets: vec![0; vertex_count + 1],
            destinations: Vec::new(),
        }
    }

    /// Group `(source, destination)` pairs by source, keeping the pair order
    /// within each source.
    pub fn from_pairs(kind: BatchKind, vertex_count: usize, pairs: &[(VertexId, VertexId)]) -> Result<Self> {
        let mut offsets = vec![0usize; vertex_count + 1];
        for &(src, _) in pairs {
            let src = src as usize;
            if src >= vertex_count {
                return Err(Error::MalformedBatch(format!(
                    "source {src} outside {vertex_count} vertices"
                )));
            }
            offsets[src + 1] += 1;
        }
        for i in 0..vertex_count {
            offsets[i + 1] += offsets[i];
        }
        let mut cursor = offsets.clone();
        let mut destinations = vec![0; pairs.len()];
        for &(src, dst) in pairs {
            let slot = &mut cursor[src as usize];
            destinations[*slot] = dst;
            *slot += 1;
        }
        Ok(Self {
            kind,
            offsets,
            destinations,
        })
    }

    pub fn kind(&self) -> BatchKind {
        self.kind
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn destinations(&self) -> &[VertexId] {
        &self.destinations
    }

    pub fn vertex_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn edge_count(&self) -> usize {
        self.destinations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.destinations.is_empty()
    }

    pub fn degree(&self, vertex: usize) -> usize {
        self.offsets[vertex + 1] - self.offsets[vertex]
    }

    pub fn edges_of(&self, vertex: usize) -> &[VertexId] {
        &self.destinations[self.offsets[vertex]..self.offsets[vertex + 1]]
    }

    /// `(source, destination)` pairs in CSR order.
    pub fn pairs(&self) -> impl Iterator<Item = (VertexId, VertexId)> + '_ {
        (0..self.vertex_count()).flat_map(move |v| self.edges_of(v).iter().map(move |&d| (v as VertexId, d)))
    }

    /// Check the batch against a graph of `vertex_count` slots, where
    /// `alive(v)` says whether vertex `v` still exists.
    pub fn validate(&self, vertex_count: usize, alive: impl Fn(VertexId) -> bool) -> Result<()> {
        if self.vertex_count() != vertex_count {
            return Err(Error::MalformedBatch(format!(
                "batch spans {} vertices, graph has {vertex_count}",
                self.vertex_count()
            )));
        }
        if let Some(&d) = self.destinations.iter().find(|&&d| d as usize >= vertex_count) {
            return Err(Error::MalformedBatch(format!(
                "destination {d} outside {vertex_count} vertices"
            )));
        }
        if self.kind == BatchKind::Insert {
            if let Some(v) = (0..vertex_count).find(|&v| self.degree(v) > 0 && !alive(v as VertexId)) {
                return Err(Error::MalformedBatch(format!("insert into deleted vertex {v}")));
            }
        }
        Ok(())
    }
}

/// Average degree over vertices with at least one edge, rounded.
pub fn compute_block_size(first_batch: &CsrBatch) -> Result<usize> {
    let nonzero = (0..first_batch.vertex_count())
        .filter(|&v| first_batch.degree(v) > 0)
        .count();
    if nonzero == 0 {
        return Err(Error::EmptyFirstBatch);
    }
    let avg = first_batch.edge_count() as f64 / nonzero as f64;
    Ok((avg.round() as usize).max(1))
}

/// Per-vertex block requirements of one insert batch.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BatchPlan {
    pub blocks_required: Vec<u64>,
    /// Inclusive prefix sum of `blocks_required`.
    pub prefix_sum: Vec<u64>,
    pub space_remaining: Vec<u64>,
}

impl BatchPlan {
    pub fn build(block_size: usize, degrees: &[u64], space_remaining: Vec<u64>) -> Self {
        assert_eq!(degrees.len(), space_remaining.len());
        let b = block_size as u64;
        let blocks_required: Vec<u64> = degrees
            .iter()
            .zip(&space_remaining)
            .map(|(&deg, &space)| deg.saturating_sub(space).div_ceil(b))
            .collect();
        let prefix_sum = blocks_required
            .iter()
            .scan(0u64, |acc, &n| {
                *acc += n;
                Some(*acc)
            })
            .collect();
        Self {
            blocks_required,
            prefix_sum,
            space_remaining,
        }
    }

    /// Blocks popped by the whole batch.
    pub fn total(&self) -> u64 {
        self.prefix_sum.last().copied().unwrap_or(0)
    }

    /// Offset of vertex `v`'s range relative to the queue front.
    pub fn range_start(&self, v: usize) -> u64 {
        self.prefix_sum[v] - self.blocks_required[v]
    }
}
