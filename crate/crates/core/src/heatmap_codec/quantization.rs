//! Monte-Carlo measurement of the localisation error introduced by encoding
//! a joint on a stride-s grid and decoding it again, optionally through flip
//! averaging with an ideal (exact-target) predictor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::codec::{decode_keypoints, encode_targets, Alignment, DecodeMode, HeatmapStack};
use super::flip::unflip_heatmaps;
use super::joints::{Frame, Joint, JointSet};
use crate::error::Result;
use crate::metrics_oks::{oks, OksParams, UNIFORM_TOY_K};
use crate::tensor_core::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuantizationConfig {
    pub crop_height: usize,
    pub crop_width: usize,
    /// Gaussian width in crop pixels.
    pub sigma: f64,
    pub samples: usize,
    pub seed: u64,
    /// OKS constant used for the degradation column.
    pub oks_k: f64,
}

impl Default for QuantizationConfig {
    fn default() -> Self {
        Self {
            crop_height: 256,
            crop_width: 192,
            sigma: 8.0,
            samples: 1000,
            seed: 0,
            oks_k: UNIFORM_TOY_K,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantizationRow {
    pub stride: usize,
    pub mode: DecodeMode,
    pub flip: bool,
    pub alignment: Alignment,
    pub samples: usize,
    /// Mean Euclidean error, crop pixels.
    pub mean_error: f64,
    pub max_error_x: f64,
    pub max_error_y: f64,
    /// Mean of `1 − OKS` with the crop area as object area.
    pub mean_oks_drop: f64,
}

pub const ANALYZED_STRIDES: [usize; 3] = [4, 2, 1];

impl QuantizationRow {
    pub const CSV_HEADER: &'static str =
        "stride,mode,flip,alignment,samples,mean_error_px,max_error_x_px,max_error_y_px,mean_oks_drop";

    pub fn to_csv(&self) -> String {
        let mode = match self.mode {
            DecodeMode::Argmax => "argmax",
            DecodeMode::Subpixel => "subpixel",
        };
        let alignment = match self.alignment {
            Alignment::HalfPixel => "half_pixel",
            Alignment::Corner => "corner",
        };
        format!(
            "{},{mode},{},{alignment},{},{:.6},{:.6},{:.6},{:.6}",
            self.stride,
            if self.flip { "on" } else { "off" },
            self.samples,
            self.mean_error,
            self.max_error_x,
            self.max_error_y,
            self.mean_oks_drop
        )
    }
}

/// Random joint positions at least 3σ from every border.
pub fn sample_joints(cfg: &QuantizationConfig) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let margin = (3.0 * cfg.sigma).min((cfg.crop_width.min(cfg.crop_height) as f64 - 1.0) / 2.0);
    (0..cfg.samples)
        .map(|_| {
            (
                rng.gen_range(margin..=cfg.crop_width as f64 - 1.0 - margin),
                rng.gen_range(margin..=cfg.crop_height as f64 - 1.0 - margin),
            )
        })
        .collect()
}

fn encode_one(cfg: &QuantizationConfig, x: f64, y: f64, stride: usize, alignment: Alignment) -> HeatmapStack {
    let set = JointSet::new(vec![Joint::visible(x, y)], Frame::Crop);
    encode_targets(
        &set,
        cfg.crop_height / stride,
        cfg.crop_width / stride,
        stride,
        cfg.sigma,
        alignment,
    )
    .0
}

/// Heatmaps an exact predictor would produce for a joint at `(x, y)`, with
/// optional flip averaging (`shift` = cells of unflip offset correction).
pub fn ideal_prediction(
    cfg: &QuantizationConfig,
    x: f64,
    y: f64,
    stride: usize,
    alignment: Alignment,
    flip: bool,
    shift: usize,
) -> Result<HeatmapStack> {
    let plain = encode_one(cfg, x, y, stride, alignment);
    if !flip {
        return Ok(plain);
    }
    let mirrored = encode_one(cfg, cfg.crop_width as f64 - 1.0 - x, y, stride, alignment);
    let back = unflip_heatmaps(&mirrored.maps, &[], shift)?;
    let data = plain.maps.data().iter().zip(back.data()).map(|(a, b)| 0.5 * (a + b)).collect();
    Ok(HeatmapStack {
        maps: Tensor::from_vec(plain.maps.shape(), data)?,
        ..plain
    })
}

pub fn analyze(
    cfg: &QuantizationConfig,
    stride: usize,
    mode: DecodeMode,
    flip: bool,
    alignment: Alignment,
) -> Result<QuantizationRow> {
    let params = OksParams::uniform(1, cfg.oks_k);
    let area = (cfg.crop_width * cfg.crop_height) as f64;
    let joints = sample_joints(cfg);
    let (mut sum_err, mut max_x, mut max_y, mut sum_drop) = (0.0, 0.0f64, 0.0f64, 0.0);
    for &(x, y) in &joints {
        let stack = ideal_prediction(cfg, x, y, stride, alignment, flip, 0)?;
        let (decoded, _) = decode_keypoints(&stack, mode);
        let j = decoded.joints[0];
        let (ex, ey) = ((j.x - x).abs(), (j.y - y).abs());
        sum_err += ex.hypot(ey);
        max_x = max_x.max(ex);
        max_y = max_y.max(ey);
        let gt = JointSet::new(vec![Joint::visible(x, y)], Frame::Crop);
        sum_drop += 1.0 - oks(&decoded, &gt, area, &params)?;
    }
    let n = joints.len().max(1) as f64;
    Ok(QuantizationRow {
        stride,
        mode,
        flip,
        alignment,
        samples: joints.len(),
        mean_error: sum_err / n,
        max_error_x: max_x,
        max_error_y: max_y,
        mean_oks_drop: sum_drop / n,
    })
}

/// Every combination of stride {4, 2, 1}, decode mode, flip off/on and
/// alignment.
pub fn analyze_grid(cfg: &QuantizationConfig) -> Result<Vec<QuantizationRow>> {
    let mut rows = Vec::new();
    for alignment in [Alignment::HalfPixel, Alignment::Corner] {
        for stride in ANALYZED_STRIDES {
            for mode in [DecodeMode::Argmax, DecodeMode::Subpixel] {
                for flip in [false, true] {
                    rows.push(analyze(cfg, stride, mode, flip, alignment)?);
                }
            }
        }
    }
    Ok(rows)
}

/// Peak displacement caused by flip averaging, in heatmap cells: the argmax of
/// the flip-averaged map versus that of the plain map.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlipDisplacement {
    pub stride: usize,
    pub alignment: Alignment,
    pub shift: usize,
    pub mean_cells: f64,
    pub max_cells: f64,
}

pub fn flip_displacement(
    cfg: &QuantizationConfig,
    stride: usize,
    alignment: Alignment,
    shift: usize,
) -> Result<FlipDisplacement> {
    let joints = sample_joints(cfg);
    let (mut sum, mut max) = (0.0, 0.0f64);
    for &(x, y) in &joints {
        let plain = ideal_prediction(cfg, x, y, stride, alignment, false, 0)?;
        let avg = ideal_prediction(cfg, x, y, stride, alignment, true, shift)?;
        let a = decode_keypoints(&plain, DecodeMode::Argmax).0.joints[0];
        let b = decode_keypoints(&avg, DecodeMode::Argmax).0.joints[0];
        let d = (a.x - b.x).hypot(a.y - b.y) / stride as f64;
        sum += d;
        max = max.max(d);
    }
    Ok(FlipDisplacement {
        stride,
        alignment,
        shift,
        mean_cells: sum / joints.len().max(1) as f64,
        max_cells: max,
    })
}
