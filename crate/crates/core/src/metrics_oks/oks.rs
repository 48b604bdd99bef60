use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heatmap_codec::JointSet;

/// Per-joint falloff constants of the 17 COCO keypoints (twice the published
/// per-keypoint sigmas).
pub const COCO_KEYPOINT_K: [f64; 17] = [
    0.052, 0.050, 0.050, 0.070, 0.070, 0.158, 0.158, 0.144, 0.144, 0.124, 0.124, 0.214, 0.214, 0.174, 0.174, 0.178,
    0.178,
];

/// k_i used for synthetic skeletons.
pub const UNIFORM_TOY_K: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OksParams {
    pub k: Vec<f64>,
    pub thresholds: Vec<f64>,
}

/// 0.50, 0.55, …, 0.95.
pub fn default_thresholds() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

impl OksParams {
    pub fn coco() -> Self {
        Self {
            k: COCO_KEYPOINT_K.to_vec(),
            thresholds: default_thresholds(),
        }
    }

    pub fn uniform(num_joints: usize, k: f64) -> Self {
        Self {
            k: vec![k; num_joints],
            thresholds: default_thresholds(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k.iter().any(|k| !(*k > 0.0)) {
            return Err(Error::Config("every OKS constant k_i must be positive".into()));
        }
        if self.thresholds.is_empty() || self.thresholds.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("OKS thresholds must be non-empty and strictly increasing".into()));
        }
        Ok(())
    }
}

/// Mean over labeled ground-truth joints of `exp(−d² / (2·area·k²))`.
pub fn oks(pred: &JointSet, gt: &JointSet, area: f64, params: &OksParams) -> Result<f64> {
    if pred.len() != gt.len() || gt.len() != params.k.len() {
        return Err(Error::Invalid(format!(
            "oks: {} predicted, {} ground-truth joints, {} constants",
            pred.len(),
            gt.len(),
            params.k.len()
        )));
    }
    if !(area > 0.0) {
        return Err(Error::Invalid(format!("oks: area must be positive, got {area}")));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for ((p, g), k) in pred.joints.iter().zip(&gt.joints).zip(&params.k) {
        if !g.is_labeled() {
            continue;
        }
        let d2 = (p.x - g.x).powi(2) + (p.y - g.y).powi(2);
        total += (-d2 / (2.0 * area * k * k)).exp();
        count += 1;
    }
    if count == 0 {
        return Err(Error::Invalid("oks: ground truth has no labeled joints".into()));
    }
    Ok(total / count as f64)
}
