//! Graph loaders, batch slicing and synthetic inputs.

use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::batch::{BatchKind, CsrBatch};
use crate::graph::VertexId;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

fn parse_err(line: usize, message: impl Into<String>) -> LoadError {
    LoadError::Parse {
        line,
        message: message.into(),
    }
}

/// A whole graph in CSR form.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Csr {
    pub offsets: Vec<usize>,
    pub destinations: Vec<VertexId>,
}

impl Csr {
    /// Stable grouping of `(source, destination)` pairs by source.
    pub fn from_pairs(vertex_count: usize, pairs: &[(VertexId, VertexId)]) -> Self {
        let batch =
            CsrBatch::from_pairs(BatchKind::Insert, vertex_count, pairs).expect("pair sources inside vertex_count");
        Self {
            offsets: batch.offsets().to_vec(),
            destinations: batch.destinations().to_vec(),
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn edge_count(&self) -> usize {
        self.destinations.len()
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn pairs(&self) -> impl Iterator<Item = (VertexId, VertexId)> + '_ {
        (0..self.vertex_count()).flat_map(move |v| {
            self.destinations[self.offsets[v]..self.offsets[v + 1]]
                .iter()
                .map(move |&d| (v as VertexId, d))
        })
    }

    /// Plain-text dump used by the golden fixtures.
    pub fn write_text(&self, mut out: impl Write) -> io::Result<()> {
        writeln!(out, "vertices {}", self.vertex_count())?;
        writeln!(out, "edges {}", self.edge_count())?;
        write!(out, "offsets")?;
        for o in &self.offsets {
            write!(out, " {o}")?;
        }
        writeln!(out)?;
        write!(out, "destinations")?;
        for d in &self.destinations {
            write!(out, " {d}")?;
        }
        writeln!(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GraphFormat {
    MatrixMarket,
    EdgeList,
}

impl FromStr for GraphFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mtx" => Ok(Self::MatrixMarket),
            "el" => Ok(Self::EdgeList),
            other => Err(format!("unknown format {other:?}, expected mtx or el")),
        }
    }
}

pub fn load_graph(path: &Path, format: GraphFormat, symmetrize: bool) -> Result<Csr, LoadError> {
    let file = File::open(path).map_err(|source| LoadError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);
    match format {
        GraphFormat::MatrixMarket => parse_matrix_market(reader, symmetrize),
        GraphFormat::EdgeList => parse_edge_list(reader, symmetrize),
    }
}

fn push_edge(pairs: &mut Vec<(VertexId, VertexId)>, u: VertexId, v: VertexId, symmetrize: bool) {
    pairs.push((u, v));
    if symmetrize && u != v {
        pairs.push((v, u));
    }
}

fn lines(reader: impl BufRead) -> impl Iterator<Item = (usize, io::Result<String>)> {
    reader.lines().enumerate().map(|(i, l)| (i + 1, l))
}

fn read_line(line_no: usize, line: io::Result<String>) -> Result<String, LoadError> {
    line.map_err(|e| parse_err(line_no, format!("read failed: {e}")))
}

fn parse_id(token: Option<&str>, line: usize, what: &str) -> Result<u64, LoadError> {
    let token = token.ok_or_else(|| parse_err(line, format!("missing {what}")))?;
    token
        .parse::<u64>()
        .map_err(|_| parse_err(line, format!("{what} {token:?} is not a non-negative integer")))
}

/// Coordinate-format Matrix Market. Entry `i j` becomes edge `i-1 -> j-1`.
pub fn parse_matrix_market(reader: impl BufRead, symmetrize: bool) -> Result<Csr, LoadError> {
    let mut lines = lines(reader);
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let header = read_line(1, header)?;
    let fields: Vec<String> = header.split_whitespace().map(str::to_ascii_lowercase).collect();
    if fields.first().map(String::as_str) != Some("%%matrixmarket") {
        return Err(parse_err(1, "missing %%MatrixMarket banner"));
    }
    if fields.get(1).map(String::as_str) != Some("matrix") || fields.get(2).map(String::as_str) != Some("coordinate") {
        return Err(parse_err(1, "only 'matrix coordinate' files are supported"));
    }

    let mut size: Option<(u64, u64, u64)> = None;
    let mut pairs = Vec::new();
    let mut entries = 0u64;
    let mut last_line = 1;
    for (line_no, line) in lines {
        last_line = line_no;
        let line = read_line(line_no, line)?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('%') {
            continue;
        }
        let mut tokens = trimmed.split_whitespace();
        match size {
            None => {
                let rows = parse_id(tokens.next(), line_no, "row count")?;
                let cols = parse_id(tokens.next(), line_no, "column count")?;
                let nnz = parse_id(tokens.next(), line_no, "entry count")?;
                if rows.max(cols) > u64::from(u32::MAX) {
                    return Err(parse_err(line_no, "dimension exceeds the vertex id space"));
                }
                size = Some((rows, cols, nnz));
                pairs.reserve(nnz as usize * if symmetrize { 2 } else { 1 });
            }
            Some((rows, cols, nnz)) => {
                if entries == nnz {
                    return Err(parse_err(line_no, format!("more than the declared {nnz} entries")));
                }
                let i = parse_id(tokens.next(), line_no, "row index")?;
                let j = parse_id(tokens.next(), line_no, "column index")?;
                if i == 0 || i > rows || j == 0 || j > cols {
                    return Err(parse_err(line_no, format!("entry ({i}, {j}) outside {rows}x{cols}")));
                }
                push_edge(&mut pairs, (i - 1) as VertexId, (j - 1) as VertexId, symmetrize);
                entries += 1;
            }
        }
    }
    let (rows, cols, nnz) = size.ok_or_else(|| parse_err(last_line, "missing size line"))?;
    if entries != nnz {
        return Err(parse_err(last_line, format!("declared {nnz} entries, found {entries}")));
    }
    Ok(Csr::from_pairs(rows.max(cols) as usize, &pairs))
}

/// Whitespace-separated `u v` lines; `#` and `%` start comments. Ids are
/// remapped to dense ranks of the distinct ids seen.
pub fn parse_edge_list(reader: impl BufRead, symmetrize: bool) -> Result<Csr, LoadError> {
    let mut raw = Vec::new();
    for (line_no, line) in lines(reader) {
        let line = read_line(line_no, line)?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with('%') {
            continue;
        }
        let mut tokens = trimmed.split_whitespace();
        let u = parse_id(tokens.next(), line_no, "source id")?;
        let v = parse_id(tokens.next(), line_no, "destination id")?;
        raw.push((u, v));
    }
    let mut ids: Vec<u64> = raw.iter().flat_map(|&(u, v)| [u, v]).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() > u32::MAX as usize {
        return Err(parse_err(0, "too many distinct vertex ids"));
    }
    let rank = |id: u64| ids.binary_search(&id).unwrap() as VertexId;
    let mut pairs = Vec::with_capacity(raw.len() * if symmetrize { 2 } else { 1 });
    for (u, v) in raw {
        push_edge(&mut pairs, rank(u), rank(v), symmetrize);
    }
    Ok(Csr::from_pairs(ids.len(), &pairs))
}

/// Edges per update batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchSize {
    Edges(usize),
    Bulk,
}

impl FromStr for BatchSize {
    type Err = String;

    /// `bulk`, a plain count, or a count with a `K` or `M` suffix.
    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("bulk") {
            return Ok(Self::Bulk);
        }
        let (digits, scale) = match s.chars().last() {
            Some('k' | 'K') => (&s[..s.len() - 1], 1_000),
            Some('m' | 'M') => (&s[..s.len() - 1], 1_000_000),
            _ => (s, 1),
        };
        match digits.parse::<usize>() {
            Ok(n) if n > 0 => Ok(Self::Edges(n * scale)),
            _ => Err(format!("batch size {s:?} must be a positive count or 'bulk'")),
        }
    }
}

impl fmt::Display for BatchSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Edges(n) => write!(f, "{n}"),
            Self::Bulk => f.write_str("bulk"),
        }
    }
}

/// Order in which the input's edges are fed to batches.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeOrder {
    /// CSR order of the input.
    Prefix,
    /// Seeded random permutation of the input's edges.
    Shuffled(u64),
}

/// Slice the input's edges into consecutive batches spanning every vertex.
pub fn make_batches(csr: &Csr, size: BatchSize, kind: BatchKind) -> Vec<CsrBatch> {
    make_batches_ordered(csr, size, EdgeOrder::Prefix, kind)
}

pub fn make_batches_ordered(csr: &Csr, size: BatchSize, order: EdgeOrder, kind: BatchKind) -> Vec<CsrBatch> {
    let n = csr.vertex_count();
    let mut pairs: Vec<(VertexId, VertexId)> = csr.pairs().collect();
    if let EdgeOrder::Shuffled(seed) = order {
        pairs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let chunk = match size {
        BatchSize::Bulk => pairs.len().max(1),
        BatchSize::Edges(k) => k,
    };
    if pairs.is_empty() {
        return match size {
            BatchSize::Bulk => vec![CsrBatch::empty(kind, n)],
            BatchSize::Edges(_) => Vec::new(),
        };
    }
    pairs
        .chunks(chunk)
        .map(|c| CsrBatch::from_pairs(kind, n, c).expect("sources inside the input"))
        .collect()
}

/// `edges` uniformly random directed edges over `vertices` vertices.
pub fn uniform_graph(vertices: usize, edges: usize, seed: u64) -> Csr {
    assert!(vertices > 0 || edges == 0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs: Vec<_> = (0..edges)
        .map(|_| {
            (
                rng.gen_range(0..vertices) as VertexId,
                rng.gen_range(0..vertices) as VertexId,
            )
        })
        .collect();
    Csr::from_pairs(vertices, &pairs)
}

/// Skewed out-degrees: source `i` is drawn with weight `(i + 1)^-exponent`,
/// destinations uniformly.
pub fn power_law_graph(vertices: usize, edges: usize, exponent: f64, seed: u64) -> Csr {
    assert!(vertices > 0 || edges == 0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if edges == 0 {
        return Csr::from_pairs(vertices, &[]);
    }
    let weights = (0..vertices).map(|i| ((i + 1) as f64).powf(-exponent));
    let sources = WeightedIndex::new(weights).expect("positive weights");
    let pairs: Vec<_> = (0..edges)
        .map(|_| {
            (
                sources.sample(&mut rng) as VertexId,
                rng.gen_range(0..vertices) as VertexId,
            )
        })
        .collect();
    Csr::from_pairs(vertices, &pairs)
}
