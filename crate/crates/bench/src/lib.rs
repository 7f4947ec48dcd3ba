//! Criterion benchmarks for fitting and jackknife inference; see `benches/`.
