//! Benchmarks live in `benches/`; run them with `cargo bench -p framot-bench --bench core`.
