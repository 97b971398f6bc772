//! Batching strategies, simulated multi-worker gradient accumulation,
//! deterministic reduction, and the optimizer step.

mod accumulate;
mod batching;
mod optimizer;
mod reduce;

pub use accumulate::{accumulate_heterogeneous, AccumulateCfg, AccumulateOutcome};
pub use batching::{BatchStream, BatchingStrategy, HeterogeneousBatch, SubBatch};
pub use optimizer::{optimizer_step, OptimizerState};
pub use reduce::{reduce_deterministic, reduce_mean};
