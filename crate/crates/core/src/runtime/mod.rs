//! Static execution plans over a reused arena, and the throughput bench.

mod bench;
mod plan;

pub use bench::{
    export_bench_csv, fps_bench, fps_bench_model, fps_bench_suite, normalize_reports, read_bench_csv, BenchConfig,
    BenchMode, FpsReport, BENCH_HEADER,
};
pub use plan::{execute_planned, BufferSlot, CanaryReport, ExecutionPlan, PlanInstance, PlannedOp, Storage};

#[cfg(test)]
mod tests;
