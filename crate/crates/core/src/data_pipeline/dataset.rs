//! Training/evaluation samples: crop → normalise → encode, one independent
//! RNG stream per (seed, epoch, sample).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::annotations::AnnotationSet;
use super::crop::{make_crop, AugmentPolicy};
use super::image_io::PixelNorm;
use crate::error::{Error, Result};
use crate::heatmap_codec::{encode_targets, Alignment, CropTransform, JointSet};
use crate::pose_network::Batch;
use crate::tensor_core::Tensor;

/// Images plus annotations; `images[i]` belongs to `annotations.images[i]`.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub images: Vec<Tensor<f32>>,
    pub annotations: AnnotationSet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleSettings {
    pub input_width: usize,
    pub input_height: usize,
    pub stride: usize,
    pub sigma: f64,
    pub alignment: Alignment,
    pub policy: AugmentPolicy,
    pub norm: PixelNorm,
}

#[derive(Clone, Debug)]
pub struct Sample {
    /// Normalised crop (1, 3, H, W).
    pub image: Tensor<f32>,
    /// (1, K, H/stride, W/stride).
    pub target: Tensor<f32>,
    pub weights: Vec<bool>,
    pub joints: JointSet,
    pub transform: CropTransform,
    pub instance: usize,
}

impl Dataset {
    pub fn new(images: Vec<Tensor<f32>>, annotations: AnnotationSet) -> Result<Self> {
        if images.len() != annotations.images.len() {
            return Err(Error::Invalid(format!(
                "{} images for {} image records",
                images.len(),
                annotations.images.len()
            )));
        }
        annotations.validate()?;
        Ok(Self { images, annotations })
    }

    /// Instances with at least one labeled joint; the unit of training.
    pub fn trainable_instances(&self) -> Vec<usize> {
        (0..self.annotations.instances.len())
            .filter(|i| self.annotations.instances[*i].keypoints.labeled_count() > 0)
            .collect()
    }

    fn image_of(&self, instance: usize) -> Result<&Tensor<f32>> {
        let id = self.annotations.instances[instance].image_id;
        let pos = self
            .annotations
            .images
            .iter()
            .position(|r| r.id == id)
            .ok_or_else(|| Error::Annotation {
                id: self.annotations.instances[instance].id.to_string(),
                reason: format!("references missing image {id}"),
            })?;
        Ok(&self.images[pos])
    }

    /// Deterministic in `(seed, epoch, instance)` only.
    pub fn sample(&self, instance: usize, epoch: usize, seed: u64, settings: &SampleSettings) -> Result<Sample> {
        let inst = &self.annotations.instances[instance];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(((epoch as u64) << 32) | instance as u64);
        let crop = make_crop(
            self.image_of(instance)?,
            &inst.keypoints,
            inst.bbox,
            settings.input_width,
            settings.input_height,
            &settings.policy,
            &mut rng,
            &self.annotations.skeleton.pairs,
        )?;
        let mut image = crop.image;
        settings.norm.apply(&mut image);
        // only the target person is encoded
        let (stack, weights) = encode_targets(
            &crop.joints,
            settings.input_height / settings.stride,
            settings.input_width / settings.stride,
            settings.stride,
            settings.sigma,
            settings.alignment,
        );
        Ok(Sample {
            image,
            target: stack.maps,
            weights,
            joints: crop.joints,
            transform: crop.transform,
            instance,
        })
    }

    pub fn samples(&self, instances: &[usize], epoch: usize, seed: u64, settings: &SampleSettings) -> Result<Vec<Sample>> {
        instances
            .par_iter()
            .map(|i| self.sample(*i, epoch, seed, settings))
            .collect()
    }
}

/// Stacks samples into a training batch.
pub fn collate(samples: &[Sample]) -> Result<Batch<f32>> {
    let images: Vec<_> = samples.iter().map(|s| s.image.clone()).collect();
    let targets: Vec<_> = samples.iter().map(|s| s.target.clone()).collect();
    Ok(Batch {
        images: Tensor::stack(&images)?,
        targets: Tensor::stack(&targets)?,
        weights: samples
            .iter()
            .flat_map(|s| s.weights.iter().map(|w| if *w { 1.0 } else { 0.0 }))
            .collect(),
    })
}
