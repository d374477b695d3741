//! Criterion benchmarks for `vaspnet-core`; see `benches/`.
