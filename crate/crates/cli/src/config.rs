//! Run configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use frpose_core::data_pipeline::{AugmentPolicy, PixelNorm, SyntheticSceneSpec};
use frpose_core::heatmap_codec::{sigma_for_input_height, Alignment, DecodeMode, QuantizationConfig};
use frpose_core::metrics_oks::{OksParams, COCO_KEYPOINT_K};
use frpose_core::pose_network::NetworkConfig;
use frpose_core::tensor_core::Reduction;

use crate::error::{io_context, HarnessError, Result};

pub const DEFAULT_SEED: u64 = 0;

fn default_seed() -> u64 {
    DEFAULT_SEED
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Network file, relative to the config file. Exclusive with `network`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network: Option<NetworkConfig>,
    #[serde(default)]
    pub targets: TargetConfig,
    #[serde(default)]
    pub data: DataConfig,
    /// Evaluation set; the training set when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_data: Option<DataConfig>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub quantization: QuantizationConfig,
    #[serde(default)]
    pub dump: DumpConfig,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    /// Gaussian width in input pixels; `8·H/256` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub alignment: Alignment,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataConfig {
    Synthetic {
        #[serde(flatten)]
        scene: SyntheticSceneSpec,
    },
    /// COCO keypoint JSON; paths relative to the config file.
    Coco { annotations: PathBuf, image_dir: PathBuf },
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Synthetic {
            scene: SyntheticSceneSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub epochs: usize,
    /// Epochs at which the rate is multiplied by `decay_factor`; defaults to
    /// 90/140 and 120/140 of `epochs`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decay_epochs: Option<Vec<usize>>,
    pub decay_factor: f64,
    pub batch_size: usize,
    pub reduction: Reduction,
    pub augment: AugmentPolicy,
    pub pixel_norm: PixelNorm,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 1e-3,
            epochs: 140,
            decay_epochs: None,
            decay_factor: 0.1,
            batch_size: 32,
            reduction: Reduction::Mean,
            augment: AugmentPolicy::default(),
            pixel_norm: PixelNorm::default(),
        }
    }
}

/// Reference schedule: decays at epochs 90 and 120 of 140.
pub const REFERENCE_DECAYS: [(usize, usize); 2] = [(90, 140), (120, 140)];

impl TrainConfig {
    pub fn resolved_decay_epochs(&self) -> Vec<usize> {
        match &self.decay_epochs {
            Some(d) => d.clone(),
            None => REFERENCE_DECAYS
                .iter()
                .map(|(num, den)| (self.epochs * num + den / 2) / den)
                .collect(),
        }
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = self.resolved_decay_epochs().iter().filter(|d| **d <= epoch).count();
        self.base_lr * self.decay_factor.powi(decays as i32)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub flip: bool,
    /// Columns the un-flipped heatmaps are shifted right by.
    pub flip_shift: usize,
    pub decode: DecodeMode,
    /// Uniform OKS constant; the COCO constants are used for 17 joints when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oks_k: Option<f64>,
    pub batch_size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            flip: false,
            flip_shift: 0,
            decode: DecodeMode::Argmax,
            oks_k: None,
            batch_size: 16,
            checkpoint: None,
        }
    }
}

impl EvalConfig {
    pub fn oks_params(&self, num_joints: usize) -> std::result::Result<OksParams, String> {
        match self.oks_k {
            Some(k) => Ok(OksParams::uniform(num_joints, k)),
            None if num_joints == COCO_KEYPOINT_K.len() => Ok(OksParams::coco()),
            None => Err(format!("eval.oks_k is required for a {num_joints}-joint skeleton")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DumpConfig {
    /// Number of samples whose heatmaps are written.
    pub count: usize,
}

impl Default for DumpConfig {
    fn default() -> Self {
        Self { count: 4 }
    }
}

/// A parsed config with the network resolved and relative paths anchored.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub run: RunConfig,
    pub network: NetworkConfig,
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| HarnessError::Config {
            path: origin.to_path_buf(),
            reason: e.to_string(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configs always serialise")
    }
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = io_context(std::fs::read_to_string(path), || format!("reading {}", path.display()))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_run(RunConfig::parse(&text, path)?, base_dir, path)
    }

    /// Resolves and validates an in-memory config; `origin` is used in diagnostics.
    pub fn from_run(run: RunConfig, base_dir: PathBuf, origin: &Path) -> Result<Self> {
        let bad = |reason: String| HarnessError::Config {
            path: origin.to_path_buf(),
            reason,
        };
        let network = match (&run.network, &run.network_path) {
            (Some(n), None) => n.clone(),
            (None, Some(p)) => {
                let full = base_dir.join(p);
                let text = io_context(std::fs::read_to_string(&full), || format!("reading {}", full.display()))?;
                toml::from_str(&text).map_err(|e| HarnessError::Config {
                    path: full.clone(),
                    reason: e.to_string(),
                })?
            }
            (Some(_), Some(_)) => return Err(bad("set either `network` or `network_path`, not both".into())),
            (None, None) => return Err(bad("missing `network` table or `network_path`".into())),
        };
        network.validate().map_err(|e| bad(e.to_string()))?;
        let t = &run.train;
        if t.batch_size == 0 || run.eval.batch_size == 0 {
            return Err(bad("batch sizes must be positive".into()));
        }
        if !(t.base_lr > 0.0) || !(t.decay_factor > 0.0) {
            return Err(bad("base_lr and decay_factor must be positive".into()));
        }
        if let Some(s) = run.targets.sigma {
            if !(s > 0.0) {
                return Err(bad(format!("targets.sigma must be positive, got {s}")));
            }
        }
        if let Some(k) = run.eval.oks_k {
            if !(k > 0.0) {
                return Err(bad(format!("eval.oks_k must be positive, got {k}")));
            }
        }
        let mut run = run;
        run.network = Some(network.clone());
        run.network_path = None;
        // anchor paths so the echo can be re-run from anywhere
        let anchor = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        };
        for data in std::iter::once(&mut run.data).chain(run.eval_data.as_mut()) {
            if let DataConfig::Coco { annotations, image_dir } = data {
                anchor(annotations);
                anchor(image_dir);
            }
        }
        if let Some(c) = run.eval.checkpoint.as_mut() {
            anchor(c);
        }
        Ok(Self { run, network, base_dir })
    }

    pub fn sigma(&self) -> f64 {
        self.run
            .targets
            .sigma
            .unwrap_or_else(|| sigma_for_input_height(self.network.input_height))
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.run.seed = s;
        }
        self
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// The echo written next to every run's outputs: the network inline and
    /// the effective seed, enough to reproduce the run.
    pub fn echo(&self) -> String {
        self.run.to_toml()
    }
}
