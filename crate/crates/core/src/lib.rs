//! Lightweight speech quality assessment.
//!
//! Downstream MOS and room-acoustics models over framewise embeddings
//! (transformer or BiLSTM with attention pooling) or mean+max pooled
//! utterance vectors (MLP), trained with a masked multi-task MSE, scored
//! with PCC / RMSE / RMSE after cubic mapping, and profiled for parameters,
//! memory, latency and FLOPs.

pub mod audio;
pub mod autodiff;
pub mod error;
pub mod features;
pub mod metrics;
pub mod models;
pub mod profiler;
pub mod task;
pub mod training;

pub use error::{Error, Result};
pub use task::{Task, TaskLabels};

#[cfg(test)]
#[global_allocator]
static ALLOC: profiler::CountingAllocator = profiler::CountingAllocator;
