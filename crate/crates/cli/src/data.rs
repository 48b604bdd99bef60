//! Building datasets from config.

use frpose_core::data_pipeline::{generate_synthetic, load_annotations, load_image, Dataset, SampleSettings};
use frpose_core::pose_network::NetworkConfig;

use crate::config::{DataConfig, LoadedConfig};
use crate::error::{HarnessError, Result};

pub fn load_dataset(data: &DataConfig, network: &NetworkConfig) -> Result<Dataset> {
    let dataset = match data {
        DataConfig::Synthetic { scene } => {
            let (images, annotations) = generate_synthetic(scene);
            Dataset::new(images, annotations)?
        }
        DataConfig::Coco { annotations, image_dir } => {
            let set = load_annotations(annotations)?;
            let images = set
                .images
                .iter()
                .map(|r| load_image(&image_dir.join(&r.file_name)))
                .collect::<frpose_core::Result<Vec<_>>>()?;
            Dataset::new(images, set)?
        }
    };
    let k = dataset.annotations.skeleton.num_joints();
    if k != network.num_joints {
        return Err(HarnessError::Usage(format!(
            "dataset skeleton has {k} joints but the network predicts {}",
            network.num_joints
        )));
    }
    Ok(dataset)
}

pub fn train_set(cfg: &LoadedConfig) -> Result<Dataset> {
    load_dataset(&cfg.run.data, &cfg.network)
}

pub fn eval_set(cfg: &LoadedConfig) -> Result<Dataset> {
    load_dataset(cfg.run.eval_data.as_ref().unwrap_or(&cfg.run.data), &cfg.network)
}

/// Sample settings; `augment` false disables every augmentation.
pub fn sample_settings(cfg: &LoadedConfig, augment: bool) -> SampleSettings {
    let mut policy = cfg.run.train.augment.clone();
    if !augment {
        policy.enabled = false;
    }
    SampleSettings {
        input_width: cfg.network.input_width,
        input_height: cfg.network.input_height,
        stride: cfg.network.variant.output_stride(),
        sigma: cfg.sigma(),
        alignment: cfg.run.targets.alignment,
        policy,
        norm: cfg.run.train.pixel_norm.clone(),
    }
}
