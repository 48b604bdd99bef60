//! Gaussian heatmap targets, the weighted heatmap loss, and peak decoding.

use serde::{Deserialize, Serialize};

use super::joints::{Frame, Joint, JointSet, Visibility};
use crate::error::{shape_err, Result};
use crate::tensor_core::{Reduction, Shape, Tensor};

/// Where heatmap cell `j` sits in crop pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    /// `j·s + s/2 − 0.5`: the cell centre of the pixels it covers.
    #[default]
    HalfPixel,
    /// `j·s`: the cell's top-left pixel.
    Corner,
}

impl Alignment {
    pub fn cell_to_px(self, cell: f64, stride: usize) -> f64 {
        let s = stride as f64;
        match self {
            Alignment::HalfPixel => cell * s + s / 2.0 - 0.5,
            Alignment::Corner => cell * s,
        }
    }

    pub fn px_to_cell(self, px: f64, stride: usize) -> f64 {
        let s = stride as f64;
        match self {
            Alignment::HalfPixel => (px + 0.5 - s / 2.0) / s,
            Alignment::Corner => px / s,
        }
    }
}

/// Gaussian width for a crop height: 8 px at 256 rows, proportional otherwise.
pub fn sigma_for_input_height(height: usize) -> f64 {
    8.0 * height as f64 / 256.0
}

/// Radius of the truncated Gaussian, in multiples of σ.
pub const TRUNCATION_SIGMAS: f64 = 3.0;

/// K score maps at a stated stride relative to the crop.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapStack {
    /// Shape (1, K, H, W).
    pub maps: Tensor<f32>,
    pub stride: usize,
    /// Gaussian width in crop pixels.
    pub sigma: f64,
    pub alignment: Alignment,
}

impl HeatmapStack {
    pub fn num_joints(&self) -> usize {
        self.maps.shape().c
    }

    pub fn height(&self) -> usize {
        self.maps.shape().h
    }

    pub fn width(&self) -> usize {
        self.maps.shape().w
    }

    pub fn map(&self, k: usize) -> &[f32] {
        let s = self.maps.shape();
        &self.maps.data()[k * s.plane()..(k + 1) * s.plane()]
    }

    /// Sample `n` of a batched network output.
    pub fn from_batch(batch: &Tensor<f32>, n: usize, stride: usize, sigma: f64, alignment: Alignment) -> Self {
        Self {
            maps: batch.sample(n),
            stride,
            sigma,
            alignment,
        }
    }
}

/// Encodes one person's joints (crop frame) as Gaussian maps on an
/// `out_h × out_w` grid at `stride`. Unlabeled joints and joints whose nearest
/// cell lies off the grid give all-zero maps and weight `false`.
pub fn encode_targets(
    joints: &JointSet,
    out_h: usize,
    out_w: usize,
    stride: usize,
    sigma: f64,
    alignment: Alignment,
) -> (HeatmapStack, Vec<bool>) {
    assert!(sigma > 0.0, "sigma must be positive");
    let k = joints.len();
    let shape = Shape::new(1, k.max(1), out_h, out_w);
    let mut data = vec![0.0f32; shape.numel()];
    let mut weights = vec![false; k];
    let radius = TRUNCATION_SIGMAS * sigma;
    let two_s2 = 2.0 * sigma * sigma;
    for (idx, j) in joints.joints.iter().enumerate() {
        if !j.is_labeled() {
            continue;
        }
        let cx = alignment.px_to_cell(j.x, stride).round();
        let cy = alignment.px_to_cell(j.y, stride).round();
        if cx < 0.0 || cy < 0.0 || cx >= out_w as f64 || cy >= out_h as f64 {
            continue;
        }
        weights[idx] = true;
        let r_cells = (radius / stride as f64).ceil() as i64 + 1;
        let map = &mut data[idx * out_h * out_w..(idx + 1) * out_h * out_w];
        let (cx, cy) = (cx as i64, cy as i64);
        for gy in (cy - r_cells).max(0)..=(cy + r_cells).min(out_h as i64 - 1) {
            let py = alignment.cell_to_px(gy as f64, stride);
            for gx in (cx - r_cells).max(0)..=(cx + r_cells).min(out_w as i64 - 1) {
                let px = alignment.cell_to_px(gx as f64, stride);
                let d2 = (px - j.x).powi(2) + (py - j.y).powi(2);
                if d2 <= radius * radius {
                    map[gy as usize * out_w + gx as usize] = (-d2 / two_s2).exp() as f32;
                }
            }
        }
    }
    let maps = Tensor::from_vec(shape, data).expect("sized above");
    (
        HeatmapStack {
            maps,
            stride,
            sigma,
            alignment,
        },
        weights,
    )
}

/// Weighted heatmap loss `(1/K) Σ_k w_k · r(‖pred_k − target_k‖²)` where `r`
/// averages over pixels under [`Reduction::Mean`].
pub fn heatmap_mse(pred: &Tensor<f32>, target: &Tensor<f32>, weights: &[bool], reduction: Reduction) -> Result<f64> {
    let s = pred.shape();
    if target.shape() != s {
        return shape_err("heatmap_mse", format!("prediction {s} vs target {}", target.shape()));
    }
    if weights.len() != s.n * s.c {
        return shape_err("heatmap_mse", format!("{} weights for {} maps", weights.len(), s.n * s.c));
    }
    let mut total = 0.0;
    for ((p, t), w) in pred.data().chunks(s.plane()).zip(target.data().chunks(s.plane())).zip(weights) {
        if *w {
            let sq: f64 = p.iter().zip(t).map(|(a, b)| (*a as f64 - *b as f64).powi(2)).sum();
            total += match reduction {
                Reduction::Mean => sq / s.plane() as f64,
                Reduction::Sum => sq,
            };
        }
    }
    Ok(total / (s.n * s.c) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    #[default]
    Argmax,
    /// Argmax shifted a quarter cell towards the larger neighbour per axis.
    Subpixel,
}

/// Quarter-cell refinement step of [`DecodeMode::Subpixel`].
pub const SUBPIXEL_SHIFT: f64 = 0.25;

/// Peak location of one map in grid cells plus its value. Ties resolve to the
/// smallest row, then the smallest column.
pub fn argmax_cell(map: &[f32], width: usize) -> (usize, usize, f32) {
    let mut best = (0, f32::NEG_INFINITY);
    for (i, v) in map.iter().enumerate() {
        if *v > best.1 {
            best = (i, *v);
        }
    }
    (best.0 / width, best.0 % width, best.1)
}

/// Decodes every map to a crop-frame joint; confidences are the peak values.
pub fn decode_keypoints(stack: &HeatmapStack, mode: DecodeMode) -> (JointSet, Vec<f32>) {
    let (h, w) = (stack.height(), stack.width());
    let mut joints = Vec::with_capacity(stack.num_joints());
    let mut conf = Vec::with_capacity(stack.num_joints());
    for k in 0..stack.num_joints() {
        let map = stack.map(k);
        let (row, col, peak) = argmax_cell(map, w);
        let (mut fx, mut fy) = (col as f64, row as f64);
        if mode == DecodeMode::Subpixel {
            if col > 0 && col + 1 < w {
                let (l, r) = (map[row * w + col - 1], map[row * w + col + 1]);
                fx += SUBPIXEL_SHIFT * sign(r - l);
            }
            if row > 0 && row + 1 < h {
                let (u, d) = (map[(row - 1) * w + col], map[(row + 1) * w + col]);
                fy += SUBPIXEL_SHIFT * sign(d - u);
            }
        }
        joints.push(Joint::new(
            stack.alignment.cell_to_px(fx, stack.stride),
            stack.alignment.cell_to_px(fy, stack.stride),
            Visibility::LabeledVisible,
        ));
        conf.push(peak);
    }
    (JointSet::new(joints, Frame::Crop), conf)
}

fn sign(v: f32) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
