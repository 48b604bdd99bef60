//! Person crops with optional flip/rotation/scale augmentation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heatmap_codec::{CropParams, CropTransform, Frame, Joint, JointSet};
use crate::tensor_core::Tensor;

/// Margin applied after padding the box to the target aspect ratio.
pub const BOX_MARGIN: f64 = 1.25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentPolicy {
    pub enabled: bool,
    pub flip_prob: f64,
    /// Rotations are drawn uniformly from `[-rotation_deg, rotation_deg]`.
    pub rotation_deg: f64,
    pub scale_range: (f64, f64),
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            enabled: true,
            flip_prob: 0.5,
            rotation_deg: 40.0,
            scale_range: (0.7, 1.3),
        }
    }
}

impl AugmentPolicy {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }
}

/// One draw of augmentation parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentDraw {
    pub scale: f64,
    pub rotation_deg: f64,
    pub flip: bool,
}

impl AugmentDraw {
    pub const NONE: Self = Self {
        scale: 1.0,
        rotation_deg: 0.0,
        flip: false,
    };
}

pub fn sample_augmentation<R: Rng + ?Sized>(policy: &AugmentPolicy, rng: &mut R) -> AugmentDraw {
    if !policy.enabled {
        return AugmentDraw::NONE;
    }
    let (lo, hi) = policy.scale_range;
    AugmentDraw {
        scale: if hi > lo { rng.gen_range(lo..=hi) } else { lo },
        rotation_deg: if policy.rotation_deg > 0.0 {
            rng.gen_range(-policy.rotation_deg..=policy.rotation_deg)
        } else {
            0.0
        },
        flip: rng.gen_bool(policy.flip_prob.clamp(0.0, 1.0)),
    }
}

/// Centre and width of `bbox = [x, y, w, h]` padded to `out_w : out_h`, then
/// enlarged by [`BOX_MARGIN`].
pub fn expand_box(bbox: [f64; 4], out_w: usize, out_h: usize) -> Result<((f64, f64), f64)> {
    let [x, y, w, h] = bbox;
    if !(w > 0.0 && h > 0.0) {
        return Err(Error::Invalid(format!("box {bbox:?} has non-positive extents")));
    }
    let aspect = out_w as f64 / out_h as f64;
    let width = if w > aspect * h { w } else { h * aspect };
    Ok(((x + w / 2.0, y + h / 2.0), width * BOX_MARGIN))
}

#[derive(Clone, Debug)]
pub struct Crop {
    /// (1, C, out_h, out_w), unnormalised.
    pub image: Tensor<f32>,
    /// Crop frame; joints that land outside the crop are unlabeled.
    pub joints: JointSet,
    pub transform: CropTransform,
}

/// Crops the person in `bbox` to `out_w × out_h` with an explicit
/// augmentation draw.
#[allow(clippy::too_many_arguments)]
pub fn make_crop_with(
    image: &Tensor<f32>,
    joints: &JointSet,
    bbox: [f64; 4],
    out_w: usize,
    out_h: usize,
    draw: AugmentDraw,
    pairs: &[(usize, usize)],
) -> Result<Crop> {
    let (center, box_width) = expand_box(bbox, out_w, out_h)?;
    let transform = CropTransform::from_params(&CropParams {
        center,
        box_width,
        out_width: out_w,
        out_height: out_h,
        scale: draw.scale,
        rotation_deg: draw.rotation_deg,
        flip: draw.flip,
    })?;
    let warped = transform.warp_image(image)?;
    let mut mapped = transform.apply(joints, pairs, Frame::Crop)?;
    for j in &mut mapped.joints {
        let inside = j.x >= 0.0 && j.y >= 0.0 && j.x <= (out_w - 1) as f64 && j.y <= (out_h - 1) as f64;
        if !inside {
            *j = Joint::unlabeled();
        }
    }
    Ok(Crop {
        image: warped,
        joints: mapped,
        transform,
    })
}

/// Crops with a draw sampled from `policy`.
#[allow(clippy::too_many_arguments)]
pub fn make_crop<R: Rng + ?Sized>(
    image: &Tensor<f32>,
    joints: &JointSet,
    bbox: [f64; 4],
    out_w: usize,
    out_h: usize,
    policy: &AugmentPolicy,
    rng: &mut R,
    pairs: &[(usize, usize)],
) -> Result<Crop> {
    let draw = sample_augmentation(policy, rng);
    make_crop_with(image, joints, bbox, out_w, out_h, draw, pairs)
}
