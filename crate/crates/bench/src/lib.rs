//! Criterion benchmarks for the tracking pipeline live in `benches/`.
