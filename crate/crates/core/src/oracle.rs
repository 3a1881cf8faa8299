//! Brute-force reference model: a multiset of destinations per vertex.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::batch::{BatchKind, CsrBatch};
use crate::engine::DynGraph;
use crate::error::Result;
use crate::graph::VertexId;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OracleGraph {
    vertex_count: usize,
    /// destination -> multiplicity, per source
    adjacency: BTreeMap<VertexId, BTreeMap<VertexId, usize>>,
    retired: BTreeSet<VertexId>,
}

impl OracleGraph {
    pub fn new(vertex_count: usize) -> Self {
        Self {
            vertex_count,
            ..Default::default()
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn is_alive(&self, v: VertexId) -> bool {
        (v as usize) < self.vertex_count && !self.retired.contains(&v)
    }

    pub fn apply(&mut self, batch: &CsrBatch) -> Result<()> {
        batch.validate(self.vertex_count, |v| !self.retired.contains(&v))?;
        for v in 0..batch.vertex_count() {
            let source = v as VertexId;
            let edges = batch.edges_of(v);
            if edges.is_empty() {
                continue;
            }
            match batch.kind() {
                BatchKind::Insert => {
                    let bag = self.adjacency.entry(source).or_default();
                    for &d in edges {
                        *bag.entry(d).or_default() += 1;
                    }
                }
                BatchKind::Delete => {
                    if let Some(bag) = self.adjacency.get_mut(&source) {
                        for d in edges {
                            bag.remove(d);
                        }
                        if bag.is_empty() {
                            self.adjacency.remove(&source);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn insert_vertices(&mut self, count: usize) {
        self.vertex_count += count;
    }

    pub fn delete_vertices(&mut self, ids: &[VertexId]) {
        for &id in ids {
            if self.is_alive(id) {
                self.retired.insert(id);
                self.adjacency.remove(&id);
            }
        }
    }

    pub fn contains(&self, source: VertexId, destination: VertexId) -> bool {
        self.adjacency
            .get(&source)
            .is_some_and(|bag| bag.contains_key(&destination))
    }

    /// Sorted destinations of `v`, with repeats.
    pub fn destinations(&self, v: VertexId) -> Vec<VertexId> {
        self.adjacency
            .get(&v)
            .map(|bag| bag.iter().flat_map(|(&d, &n)| std::iter::repeat_n(d, n)).collect())
            .unwrap_or_default()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.values().flat_map(|bag| bag.values()).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Mismatch {
    VertexCount {
        expected: usize,
        actual: usize,
    },
    Liveness {
        vertex: VertexId,
        expected: bool,
    },
    Adjacency {
        vertex: VertexId,
        expected: Vec<VertexId>,
        actual: Vec<VertexId>,
    },
    Query {
        source: VertexId,
        destination: VertexId,
        expected: bool,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MismatchReport {
    pub mismatches: Vec<Mismatch>,
    pub queries_checked: usize,
}

impl MismatchReport {
    pub fn is_empty(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Compare per-vertex multisets, then query answers on every oracle edge and
/// on `negative_samples` random pairs. A vertex whose multiset already
/// differs is reported once and skipped for queries.
pub fn oracle_compare(oracle: &OracleGraph, graph: &DynGraph, negative_samples: usize, seed: u64) -> MismatchReport {
    let mut report = MismatchReport::default();
    let n = oracle.vertex_count();
    if graph.vertex_count() != n {
        report.mismatches.push(Mismatch::VertexCount {
            expected: n,
            actual: graph.vertex_count(),
        });
        return report;
    }
    let mut flagged = BTreeSet::new();
    for v in 0..n as VertexId {
        let alive = oracle.is_alive(v);
        if graph.is_alive(v) != alive {
            report.mismatches.push(Mismatch::Liveness {
                vertex: v,
                expected: alive,
            });
            flagged.insert(v);
            continue;
        }
        let expected = oracle.destinations(v);
        let actual = graph.active_destinations(v);
        if expected != actual {
            report.mismatches.push(Mismatch::Adjacency {
                vertex: v,
                expected,
                actual,
            });
            flagged.insert(v);
            continue;
        }
        let mut distinct = expected;
        distinct.dedup();
        for d in distinct {
            report.queries_checked += 1;
            if !graph.query_edge(v, d) {
                report.mismatches.push(Mismatch::Query {
                    source: v,
                    destination: d,
                    expected: true,
                });
            }
        }
    }
    if n > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..negative_samples {
            let u = rng.gen_range(0..n) as VertexId;
            let v = rng.gen_range(0..n) as VertexId;
            if flagged.contains(&u) {
                continue;
            }
            report.queries_checked += 1;
            let expected = oracle.contains(u, v);
            if graph.query_edge(u, v) != expected {
                report.mismatches.push(Mismatch::Query {
                    source: u,
                    destination: v,
                    expected,
                });
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::EngineConfig;

    fn batch(kind: BatchKind, n: usize, pairs: &[(VertexId, VertexId)]) -> CsrBatch {
        CsrBatch::from_pairs(kind, n, pairs).unwrap()
    }

    #[test]
    fn delete_removes_all_copies() {
        let mut o = OracleGraph::new(3);
        o.apply(&batch(BatchKind::Insert, 3, &[(1, 2), (1, 2)])).unwrap();
        assert_eq!(o.destinations(1), vec![2, 2]);
        o.apply(&batch(BatchKind::Delete, 3, &[(1, 2)])).unwrap();
        assert!(o.destinations(1).is_empty());
        assert_eq!(o.edge_count(), 0);
    }

    #[test]
    fn empty_and_single() {
        let mut o = OracleGraph::new(3);
        o.apply(&CsrBatch::empty(BatchKind::Insert, 3)).unwrap();
        assert_eq!(o, OracleGraph::new(3));
        o.apply(&batch(BatchKind::Insert, 3, &[(1, 2)])).unwrap();
        assert_eq!(o.destinations(1), vec![2]);
        assert!(o.contains(1, 2) && !o.contains(2, 1));
    }

    #[test]
    fn rejects_like_engine() {
        let mut o = OracleGraph::new(3);
        o.delete_vertices(&[0]);
        assert!(o.apply(&batch(BatchKind::Insert, 3, &[(0, 1)])).is_err());
        assert!(o.apply(&batch(BatchKind::Insert, 4, &[(1, 1)])).is_err());
        o.apply(&batch(BatchKind::Delete, 3, &[(0, 1)])).unwrap();
    }

    #[test]
    fn retired_vertices_stay_retired() {
        let mut o = OracleGraph::new(2);
        o.apply(&batch(BatchKind::Insert, 2, &[(0, 1)])).unwrap();
        o.delete_vertices(&[0, 0, 5]);
        assert!(!o.is_alive(0));
        assert!(!o.contains(0, 1));
        o.insert_vertices(1);
        assert!(o.is_alive(2));
        assert!(o.destinations(2).is_empty());
    }

    #[test]
    fn compare_empty_structures() {
        let o = OracleGraph::new(4);
        let g = DynGraph::new(4, EngineConfig::new(2)).unwrap();
        assert!(oracle_compare(&o, &g, 32, 1).is_empty());
    }

    #[test]
    fn compare_flags_injected_tombstone_once() {
        let pairs = [(0, 1), (0, 2), (1, 3), (2, 0), (3, 3), (0, 3)];
        let mut o = OracleGraph::new(4);
        let mut g = DynGraph::new(4, EngineConfig::new(2)).unwrap();
        let b = batch(BatchKind::Insert, 4, &pairs);
        o.apply(&b).unwrap();
        g.insert_batch(&b).unwrap();
        assert!(oracle_compare(&o, &g, 64, 7).is_empty());

        assert!(g.corrupt_tombstone(0, 2));
        let report = oracle_compare(&o, &g, 64, 7);
        assert_eq!(report.mismatches.len(), 1, "{report:?}");
        assert!(matches!(report.mismatches[0], Mismatch::Adjacency { vertex: 0, .. }));
    }

    #[test]
    fn compare_vertex_count() {
        let o = OracleGraph::new(3);
        let g = DynGraph::new(4, EngineConfig::new(2)).unwrap();
        assert_eq!(
            oracle_compare(&o, &g, 0, 0).mismatches,
            vec![Mismatch::VertexCount { expected: 3, actual: 4 }]
        );
    }
}
