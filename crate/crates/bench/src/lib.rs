//! Criterion benchmarks for assembly, cell solves and table lookups; see `benches/`.
