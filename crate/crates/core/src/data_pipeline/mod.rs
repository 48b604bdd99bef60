//! Synthetic stick-figure data, COCO keypoint annotations, person cropping
//! with augmentation, and batching.

mod annotations;
mod crop;
mod dataset;
mod image_io;
mod skeleton;
mod synthetic;

pub use annotations::{
    annotations_to_json, load_annotations, parse_annotations, write_annotations, AnnotationSet, ImageRecord,
    PersonInstance,
};
pub use crop::{
    expand_box, make_crop, make_crop_with, sample_augmentation, AugmentDraw, AugmentPolicy, Crop, BOX_MARGIN,
};
pub use dataset::{collate, Dataset, Sample, SampleSettings};
pub use image_io::{load_image, save_ppm, PixelNorm};
pub use skeleton::Skeleton;
pub use synthetic::{generate_synthetic, joint_colors, render_scene, RenderStyle, SyntheticSceneSpec};
