use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use frpose_core::data_pipeline::collate;
use frpose_core::pose_network::{train_step, PoseNetwork};
use frpose_core::tensor_core::{AdamState, Checkpoint};

use super::{evaluate_network, prepare_out_dir};
use crate::config::LoadedConfig;
use crate::data::{eval_set, sample_settings, train_set};
use crate::error::{io_context, HarnessError, Result};
use crate::report::{write_metrics, RunReport, LOSS_FILE};

pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const LOSS_CSV_HEADER: &str = "step,epoch,lr,loss";

const SHUFFLE_SALT: u64 = 0x5348_5546;

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Checkpoint to continue from.
    pub resume: Option<PathBuf>,
}

/// Instance order for one epoch; depends only on `(seed, epoch)`.
fn epoch_order(instances: &[usize], seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SHUFFLE_SALT);
    rng.set_stream(epoch as u64);
    let mut order = instances.to_vec();
    order.shuffle(&mut rng);
    order
}

struct Resumed {
    epoch: usize,
    losses: Vec<f64>,
}

fn resume_from(path: &Path, cfg: &LoadedConfig, net: &mut PoseNetwork<f32>, adam: &mut AdamState) -> Result<Resumed> {
    let fail = |reason: String| HarnessError::Resume {
        path: path.to_path_buf(),
        reason,
    };
    let ck = Checkpoint::load(path)?;
    ck.restore_into(&mut net.store)?;
    *adam = ck
        .adam_state(&net.store)?
        .ok_or_else(|| fail("carries no optimizer state".into()))?;
    let get = |key: &str| ck.meta.get(key).ok_or_else(|| fail(format!("missing `{key}`")));
    let seed: u64 = get("seed")?.parse().map_err(|_| fail("bad seed".into()))?;
    if seed != cfg.run.seed {
        return Err(fail(format!("written with seed {seed}, resuming with {}", cfg.run.seed)));
    }
    let epoch = get("epoch")?.parse().map_err(|_| fail("bad epoch".into()))?;
    let losses = get("losses")?;
    let losses = if losses.is_empty() {
        Vec::new()
    } else {
        losses
            .split(',')
            .map(|s| s.parse::<f64>().map_err(|_| fail(format!("bad loss value {s}"))))
            .collect::<Result<_>>()?
    };
    Ok(Resumed { epoch, losses })
}

fn save_checkpoint(
    path: &Path,
    net: &PoseNetwork<f32>,
    adam: &AdamState,
    cfg: &LoadedConfig,
    epoch: usize,
    losses: &[f64],
) -> Result<()> {
    let mut ck = Checkpoint::capture(&net.store, Some(adam));
    ck.meta.insert("seed".into(), cfg.run.seed.to_string());
    ck.meta.insert("epoch".into(), epoch.to_string());
    ck.meta.insert("step".into(), losses.len().to_string());
    ck.meta.insert("variant".into(), cfg.network.variant.to_string());
    ck.meta.insert(
        "losses".into(),
        losses.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
    );
    ck.save(path)?;
    Ok(())
}

pub fn cmd_train(cfg: &LoadedConfig, out: &Path, options: &TrainOptions) -> Result<RunReport> {
    let start = Instant::now();
    let seed = cfg.run.seed;
    let t = &cfg.run.train;

    // everything that can fail on input is checked before the first step
    let dataset = train_set(cfg)?;
    let eval_data = eval_set(cfg)?;
    let params = cfg
        .run
        .eval
        .oks_params(cfg.network.num_joints)
        .map_err(HarnessError::Usage)?;
    let instances = dataset.trainable_instances();
    if instances.is_empty() {
        return Err(HarnessError::Usage("training set has no instance with a labeled joint".into()));
    }
    prepare_out_dir(out)?;
    let ckpt_dir = out.join(CHECKPOINT_DIR);
    io_context(std::fs::create_dir_all(&ckpt_dir), || format!("creating {}", ckpt_dir.display()))?;

    let mut net = PoseNetwork::<f32>::build(&cfg.network, seed)?;
    let mut adam = AdamState::new(t.base_lr);
    let (first_epoch, mut losses) = match &options.resume {
        Some(path) => {
            let r = resume_from(path, cfg, &mut net, &mut adam)?;
            (r.epoch, r.losses)
        }
        None => (0, Vec::new()),
    };

    let settings = sample_settings(cfg, true);
    let steps_per_epoch = instances.len().div_ceil(t.batch_size);
    let decays = t.resolved_decay_epochs();
    let mut report = RunReport::new("train", seed, cfg.echo());
    for epoch in first_epoch..t.epochs {
        adam.lr = t.lr_at(epoch);
        for chunk in epoch_order(&instances, seed, epoch).chunks(t.batch_size) {
            let samples = dataset.samples(chunk, epoch, seed, &settings)?;
            let batch = collate(&samples)?;
            let loss = train_step(&mut net, &mut adam, &batch, t.reduction)?;
            if !loss.is_finite() {
                return Err(HarnessError::Usage(format!(
                    "training diverged at step {} (loss {loss})",
                    losses.len()
                )));
            }
            losses.push(loss);
        }
        let next = epoch + 1;
        if decays.contains(&next) && next < t.epochs {
            let path = ckpt_dir.join(format!("epoch_{next:04}.ckpt"));
            save_checkpoint(&path, &net, &adam, cfg, next, &losses)?;
            report.checkpoints.push(path);
        }
    }
    let final_path = ckpt_dir.join(FINAL_CHECKPOINT);
    save_checkpoint(&final_path, &net, &adam, cfg, t.epochs, &losses)?;
    report.checkpoints.push(final_path);

    let mut csv = String::from(LOSS_CSV_HEADER);
    csv.push('\n');
    for (step, loss) in losses.iter().enumerate() {
        let epoch = step / steps_per_epoch;
        let _ = writeln!(csv, "{step},{epoch},{},{loss}", t.lr_at(epoch));
    }
    let loss_path = out.join(LOSS_FILE);
    io_context(std::fs::write(&loss_path, csv), || format!("writing {}", loss_path.display()))?;

    let outcome = evaluate_network(&mut net, cfg, &eval_data, &params)?;
    write_metrics(out, &outcome.metrics)?;

    report.epoch_losses = losses
        .chunks(steps_per_epoch)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect();
    report.initial_loss = losses.first().copied();
    report.final_loss = losses.last().copied();
    report.loss_ratio = match (report.initial_loss, report.final_loss) {
        (Some(a), Some(b)) if a > 0.0 => Some(b / a),
        _ => None,
    };
    report.metrics = Some(outcome.metrics);
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    report.write(out)?;
    Ok(report)
}
