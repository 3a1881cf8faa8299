#![allow(dead_code)]

use std::path::PathBuf;

use dyngraph::harness::{run_workload_with, BlockSizeChoice, FrozenClock, InputSource, OpsMix, WorkloadSpec};
use dyngraph::io::{load_graph, BatchSize, GraphFormat};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

/// (stem, symmetrize) for every Matrix Market fixture.
pub const FIXTURES: [(&str, bool); 3] = [("tiny", false), ("weighted", false), ("symmetric", true)];

pub fn csr_text(stem: &str, symmetrize: bool) -> String {
    let csr = load_graph(&fixture(&format!("{stem}.mtx")), GraphFormat::MatrixMarket, symmetrize).unwrap();
    let mut out = Vec::new();
    csr.write_text(&mut out).unwrap();
    String::from_utf8(out).unwrap()
}

pub fn csr_golden_name(stem: &str, symmetrize: bool) -> String {
    if symmetrize {
        format!("{stem}.sym.csr.txt")
    } else {
        format!("{stem}.csr.txt")
    }
}

/// Insert in batches of two edges, then delete the same batches, with a
/// frozen clock so the output is reproducible.
pub fn csv_text(stem: &str, symmetrize: bool) -> String {
    let mut spec = WorkloadSpec::new(
        stem,
        InputSource::File {
            path: fixture(&format!("{stem}.mtx")),
            format: GraphFormat::MatrixMarket,
            symmetrize,
        },
    );
    spec.batch_size = BatchSize::Edges(2);
    spec.ops = OpsMix::InsertThenDelete;
    spec.block_size = BlockSizeChoice::Fixed(2);
    spec.arena_bytes = 1 << 16;
    let report = run_workload_with(&spec, &FrozenClock).unwrap();
    let mut out = Vec::new();
    report.write_csv(&mut out).unwrap();
    String::from_utf8(out).unwrap()
}

pub fn read_fixture(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// Regenerate CSV goldens with `DYNGRAPH_BLESS=1`.
pub fn bless_enabled() -> bool {
    std::env::var_os("DYNGRAPH_BLESS").is_some()
}
