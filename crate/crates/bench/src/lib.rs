//! Criterion benchmarks for `cevae-core`; see `benches/`.
