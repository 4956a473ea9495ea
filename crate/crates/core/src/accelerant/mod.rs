//! Batch-oriented task pipeline for the hashing primitives.
//!
//! Clients stage input in pooled buffers, submit [`Task`]s and wait on
//! [`Ticket`]s (or register callbacks). A dispatcher hands tasks to device
//! managers in round-robin order; each device runs a pluggable [`Backend`].

mod backend;
mod pipeline;
mod pool;
mod stats;
mod task;

pub use backend::{
    compute_on, Backend, CpuParallelBackend, DeviceBuffer, InstantOracleBackend, OracleMemo, SimCosts,
    SimulatedBackend, StageCost,
};
pub use pipeline::{BackendKind, Pipeline, PipelineConfig};
pub use pool::{BufferHandle, BufferPool, PoolConfig, PoolCounters};
pub use stats::{PipelineStats, QueueDepths, Stage, StageTimes};
pub use task::{Task, TaskId, TaskKind, TaskOutput, TaskParams, TaskResult, Ticket, WindowEval};
