use std::path::{Path, PathBuf};
use std::time::Instant;

use frpose_core::pose_network::PoseNetwork;
use frpose_core::tensor_core::Checkpoint;

use super::{evaluate_network, prepare_out_dir};
use crate::config::LoadedConfig;
use crate::data::eval_set;
use crate::error::{io_context, HarnessError, Result};
use crate::report::{write_metrics, RunReport};

pub const PREDICTIONS_FILE: &str = "predictions.json";

/// Builds the configured network and loads `checkpoint` into it; a shape
/// mismatch names the first offending parameter.
pub fn load_network(cfg: &LoadedConfig, checkpoint: &Path) -> Result<PoseNetwork<f32>> {
    let mut net = PoseNetwork::<f32>::build(&cfg.network, cfg.run.seed)?;
    let ck = Checkpoint::load(checkpoint)?;
    ck.restore_into(&mut net.store).map_err(|e| HarnessError::Resume {
        path: checkpoint.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(net)
}

pub fn cmd_eval(cfg: &LoadedConfig, out: &Path, checkpoint: Option<&Path>) -> Result<RunReport> {
    let start = Instant::now();
    let checkpoint: PathBuf = match (checkpoint, &cfg.run.eval.checkpoint) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(p)) => p.clone(),
        (None, None) => {
            return Err(HarnessError::Usage(
                "eval needs --checkpoint or eval.checkpoint in the config".into(),
            ))
        }
    };
    let params = cfg
        .run
        .eval
        .oks_params(cfg.network.num_joints)
        .map_err(HarnessError::Usage)?;
    let dataset = eval_set(cfg)?;
    let mut net = load_network(cfg, &checkpoint)?;
    prepare_out_dir(out)?;
    let outcome = evaluate_network(&mut net, cfg, &dataset, &params)?;
    write_metrics(out, &outcome.metrics)?;
    let predictions = out.join(PREDICTIONS_FILE);
    io_context(
        std::fs::write(&predictions, serde_json::to_string(&outcome.predictions())?),
        || format!("writing {}", predictions.display()),
    )?;
    let mut report = RunReport::new("eval", cfg.run.seed, cfg.echo());
    report.metrics = Some(outcome.metrics);
    report.checkpoints.push(checkpoint);
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    report.write(out)?;
    Ok(report)
}
