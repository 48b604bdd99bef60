//! One function per subcommand. Each writes its outputs under `out` and
//! returns the report it wrote.

mod dump;
mod eval;
mod param_count;
mod quantization;
mod train;

use std::path::Path;

use frpose_core::data_pipeline::Dataset;
use frpose_core::metrics_oks::OksParams;
use frpose_core::pose_network::PoseNetwork;

use crate::config::LoadedConfig;
use crate::data::sample_settings;
use crate::error::{io_context, Result};
use crate::evaluation::{predict, score, EvalOutcome};

pub use dump::{cmd_dump_heatmaps, DUMP_INDEX_FILE};
pub use eval::{cmd_eval, load_network, PREDICTIONS_FILE};
pub use param_count::{cmd_param_count, PARAMS_FILE};
pub use quantization::{cmd_analyze_quantization, FLIP_FILE, QUANTIZATION_FILE};
pub use train::{cmd_train, TrainOptions, CHECKPOINT_DIR, FINAL_CHECKPOINT, LOSS_CSV_HEADER};

pub(crate) fn prepare_out_dir(out: &Path) -> Result<()> {
    io_context(std::fs::create_dir_all(out), || format!("creating {}", out.display()))
}

pub(crate) fn evaluate_network(
    net: &mut PoseNetwork<f32>,
    cfg: &LoadedConfig,
    dataset: &Dataset,
    params: &OksParams,
) -> Result<EvalOutcome> {
    let settings = sample_settings(cfg, false);
    let detections = predict(net, dataset, &settings, &cfg.run.eval, cfg.run.seed)?;
    score(dataset, detections, params)
}
