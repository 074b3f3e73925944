//! Benchmarks live in `benches/`; run `cargo bench -p hilc-bench`.
