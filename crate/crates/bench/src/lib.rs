//! Benchmarks for the scheduler live in `benches/`; run them with
//! `cargo bench -p persched-bench`.
