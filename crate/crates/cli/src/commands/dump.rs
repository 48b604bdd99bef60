use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use frpose_core::heatmap_codec::{write_dump, HeatmapStack};
use frpose_core::pose_network::PoseNetwork;
use frpose_core::tensor_core::{Mode, Tensor};

use super::{load_network, prepare_out_dir};
use crate::config::LoadedConfig;
use crate::data::{eval_set, sample_settings};
use crate::error::{io_context, Result};
use crate::report::RunReport;

pub const DUMP_INDEX_FILE: &str = "heatmaps.csv";

/// Writes predicted and target heatmap stacks of the first `dump.count`
/// evaluation samples. Without a checkpoint the freshly initialised network
/// is used.
pub fn cmd_dump_heatmaps(cfg: &LoadedConfig, out: &Path, checkpoint: Option<&Path>) -> Result<RunReport> {
    let start = Instant::now();
    let dataset = eval_set(cfg)?;
    let mut net = match checkpoint.or(cfg.run.eval.checkpoint.as_deref()) {
        Some(p) => load_network(cfg, p)?,
        None => PoseNetwork::<f32>::build(&cfg.network, cfg.run.seed)?,
    };
    let dir = out.join("heatmaps");
    prepare_out_dir(&dir)?;
    let settings = sample_settings(cfg, false);
    let chosen: Vec<usize> = dataset
        .trainable_instances()
        .into_iter()
        .take(cfg.run.dump.count)
        .collect();
    let samples = dataset.samples(&chosen, 0, cfg.run.seed, &settings)?;
    let mut index = String::from("sample,instance,image_id,prediction,target\n");
    for (i, s) in samples.iter().enumerate() {
        let pred = net.forward(&s.image, Mode::Eval)?;
        let stack = |maps: Tensor<f32>| HeatmapStack {
            maps,
            stride: settings.stride,
            sigma: settings.sigma,
            alignment: settings.alignment,
        };
        let (p, t) = (format!("sample_{i:04}_pred.fhm"), format!("sample_{i:04}_target.fhm"));
        write_dump(&dir.join(&p), &stack(pred))?;
        write_dump(&dir.join(&t), &stack(s.target.clone()))?;
        let image_id = dataset.annotations.instances[s.instance].image_id;
        let _ = writeln!(index, "{i},{},{image_id},heatmaps/{p},heatmaps/{t}", s.instance);
    }
    let path = out.join(DUMP_INDEX_FILE);
    io_context(std::fs::write(&path, index), || format!("writing {}", path.display()))?;
    let mut report = RunReport::new("dump-heatmaps", cfg.run.seed, cfg.echo());
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    report.write(out)?;
    Ok(report)
}
