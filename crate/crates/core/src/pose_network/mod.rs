//! Network assembly for every ablation variant, forward passes, parameter
//! statistics and the optimisation step.

mod config;
mod network;
mod stats;
mod trainer;

pub use config::{NetworkConfig, Variant, DEFAULT_DECODER_CHANNELS};
pub use network::{Architecture, ForwardTrace, PoseNetwork};
pub use stats::NetworkStats;
pub use trainer::{evaluate_loss, train_step, Batch};
