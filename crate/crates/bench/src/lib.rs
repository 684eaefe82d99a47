//! Criterion benchmarks for the heatbench solvers live under `benches/`.
