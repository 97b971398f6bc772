//! Desk-scale multi-task pre-finetuning engine.
//!
//! Massively multi-task training with per-family losses, log-normalized
//! loss scaling, heterogeneous-batch gradient accumulation, and
//! deterministic bookkeeping, built on a minimal fp64 reverse-mode
//! autodiff core and a toy transformer.

pub mod battery;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod gradient;
pub mod heads;
pub mod losses;
pub mod model;
pub mod params;
pub mod pipeline;
pub mod rng;
pub mod scheduler;
pub mod tape;
pub mod taskdata;
pub mod tensor;

pub use error::{Error, Result};
pub use gradient::Gradient;
pub use params::ParamSet;
pub use tape::{NodeId, Tape};
pub use tensor::Tensor;
