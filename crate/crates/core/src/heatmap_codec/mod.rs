//! Heatmap targets and loss, keypoint decoding, crop transforms, flip
//! averaging and the stride quantization analyzer.

mod codec;
mod dump;
mod flip;
mod joints;
mod quantization;
mod transform;

pub use codec::{
    argmax_cell, decode_keypoints, encode_targets, heatmap_mse, sigma_for_input_height, Alignment, DecodeMode,
    HeatmapStack, SUBPIXEL_SHIFT, TRUNCATION_SIGMAS,
};
pub use dump::{decode_dump, encode_dump, read_dump, write_dump};
pub use flip::{flip_average, mirror_horizontal, unflip_heatmaps};
pub use joints::{Frame, Joint, JointSet, Visibility};
pub use quantization::{
    analyze, analyze_grid, flip_displacement, ideal_prediction, sample_joints, FlipDisplacement, QuantizationConfig,
    QuantizationRow, ANALYZED_STRIDES,
};
pub use transform::{CropParams, CropTransform};
