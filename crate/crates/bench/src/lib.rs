//! Criterion benchmarks for the vulnwatch kernels live in `benches/`.
