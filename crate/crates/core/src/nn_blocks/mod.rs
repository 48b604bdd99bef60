//! Composite blocks: residual encoder, global context block, decoders.

mod decoder;
mod gcb;
mod layers;
mod resnet;

pub use decoder::{Decoder, DecoderSpec};
pub use gcb::{Gcb, GcbOutput};
pub use layers::{BatchNorm, Conv, ConvBn, ConvSpec, Deconv, DeconvGeometry, Init, LayerNorm, SMALL_INIT_BOUND};
pub use resnet::{BlockType, ResBlock, ResStage, StageSpec, Stem, INPUT_DIVISOR};
