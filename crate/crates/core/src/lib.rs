//! Full-resolution encoder-decoder pose estimation: tensor engine, network
//! blocks, heatmap codec, OKS evaluation and data pipeline.

// negated float comparisons are how NaN gets rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data_pipeline;
pub mod error;
pub mod heatmap_codec;
pub mod metrics_oks;
pub mod nn_blocks;
pub mod pose_network;
pub mod sa_mfcd;
pub mod tensor_core;
pub mod testing;

pub use error::{Error, Result};
pub use tensor_core::{Graph, Mode, ParamId, ParamStore, Real, Session, Shape, Tensor, Var};
