//! Command-line front end for chunkforge: service entry points, synthetic
//! workloads and the benchmark harness.

pub mod bench;
pub mod config;
pub mod report;
pub mod workload;
