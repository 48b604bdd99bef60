//! Dense 4-D tensors, a recording graph with reverse-mode differentiation,
//! parameter storage, Adam and checkpoints.

mod adam;
mod checkpoint;
mod graph;
pub(crate) mod kernels;
mod params;
mod tensor;

pub use adam::AdamState;
pub use checkpoint::{Checkpoint, Entry, EntryKind};
pub use graph::{BatchNormConfig, BinaryOp, Graph, Reduction, RunningStats, Var, LAYER_NORM_EPS};
pub use params::{Mode, ParamId, ParamStore, Session, StatsId};
pub use tensor::{Real, Shape, Tensor};
