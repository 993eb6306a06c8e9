//! Experiment orchestration behind the `sutse` binary.

pub mod bench;
pub mod pipeline;
pub mod report;
pub mod verify;

pub use bench::{run_simulation_benchmark, BenchConfig, BenchReport, Method};
pub use pipeline::{run_pipeline, CovChoice, PipelineOptions, PipelineReport};
pub use report::{emit_bench_report, emit_pipeline_report, emit_verify_report};
pub use verify::{run_verify, VerifyConfig, VerifyReport};
