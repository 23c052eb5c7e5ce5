//! Benchmark-only crate; see `benches/weights.rs`.
