//! Launcher, run configuration, timing-protocol enforcement and report
//! emission.

pub mod config;
pub mod launch;
pub mod report;
pub mod sweep;

pub use config::{Benchmark, DelayProbeConfig, ReportFormat, RunConfig, TransportChoice};
pub use launch::{collect_outcomes, launch, run_benchmark_on_rank, worker_main, BenchOutcome};
pub use report::{assemble_report, BenchMetrics, BenchmarkReport};
pub use sweep::{run_sweep, SweepKind, SweepReport};
