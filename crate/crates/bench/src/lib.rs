//! Criterion benchmarks for the `hclnet` kernels live in `benches/`.
