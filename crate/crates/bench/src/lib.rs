//! Criterion benchmarks for the `foldlab-core` operator kernels; see `benches/`.
