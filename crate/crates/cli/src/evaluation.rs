//! Top-down evaluation with ground-truth boxes: crop, predict, decode, map
//! back to the original image, score with OKS.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use frpose_core::data_pipeline::{Dataset, SampleSettings};
use frpose_core::heatmap_codec::{decode_keypoints, flip_average, Frame, HeatmapStack};
use frpose_core::metrics_oks::{evaluate, Detection, GroundTruth, MetricsReport, OksParams};
use frpose_core::pose_network::PoseNetwork;
use frpose_core::tensor_core::{Mode, Tensor};

use crate::config::EvalConfig;
use crate::error::Result;

/// One prediction in the COCO results layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub image_id: u64,
    pub category_id: u32,
    /// `[x, y, v]` triples in original-image pixels.
    pub keypoints: Vec<f64>,
    pub score: f64,
}

#[derive(Clone, Debug)]
pub struct EvalOutcome {
    pub metrics: MetricsReport,
    pub detections: Vec<Detection>,
    pub ground_truth: Vec<GroundTruth>,
}

impl EvalOutcome {
    pub fn predictions(&self) -> Vec<PredictionRecord> {
        self.detections
            .iter()
            .map(|d| PredictionRecord {
                image_id: d.image_id,
                category_id: 1,
                keypoints: d.joints.joints.iter().flat_map(|j| [j.x, j.y, 2.0]).collect(),
                score: d.score,
            })
            .collect()
    }
}

pub fn ground_truth(dataset: &Dataset) -> Vec<GroundTruth> {
    dataset
        .annotations
        .instances
        .iter()
        .map(|inst| GroundTruth {
            image_id: inst.image_id,
            joints: inst.keypoints.clone(),
            area: inst.area,
        })
        .collect()
}

/// Predicts every instance with at least one labeled joint. Samples use no
/// augmentation, so `seed` only matters for reproducibility of the call.
pub fn predict(
    net: &mut PoseNetwork<f32>,
    dataset: &Dataset,
    settings: &SampleSettings,
    eval: &EvalConfig,
    seed: u64,
) -> Result<Vec<Detection>> {
    let instances = dataset.trainable_instances();
    let pairs = dataset.annotations.skeleton.pairs.clone();
    let mut detections = Vec::with_capacity(instances.len());
    for chunk in instances.chunks(eval.batch_size) {
        let samples = dataset.samples(chunk, 0, seed, settings)?;
        let images: Vec<Tensor<f32>> = samples.iter().map(|s| s.image.clone()).collect();
        let images = Tensor::stack(&images)?;
        let heatmaps = if eval.flip {
            flip_average(|x| net.forward(x, Mode::Eval), &images, &pairs, eval.flip_shift)?
        } else {
            net.forward(&images, Mode::Eval)?
        };
        let decoded: Vec<Result<Detection>> = samples
            .par_iter()
            .enumerate()
            .map(|(n, sample)| {
                let stack = HeatmapStack::from_batch(&heatmaps, n, settings.stride, settings.sigma, settings.alignment);
                let (joints, confidence) = decode_keypoints(&stack, eval.decode);
                let inst = &dataset.annotations.instances[sample.instance];
                let image = dataset.annotations.image(inst.image_id).expect("validated dataset");
                let back = sample.transform.inverse(image.width, image.height)?;
                let joints = back.apply(&joints, &pairs, Frame::Original)?;
                let score = confidence.iter().map(|c| *c as f64).sum::<f64>() / confidence.len().max(1) as f64;
                Ok(Detection {
                    image_id: inst.image_id,
                    joints,
                    score,
                })
            })
            .collect();
        for d in decoded {
            detections.push(d?);
        }
    }
    Ok(detections)
}

pub fn score(dataset: &Dataset, detections: Vec<Detection>, params: &OksParams) -> Result<EvalOutcome> {
    let ground_truth = ground_truth(dataset);
    let records = evaluate(&ground_truth, &detections, params)?;
    Ok(EvalOutcome {
        metrics: MetricsReport::compute(&records, params),
        detections,
        ground_truth,
    })
}
