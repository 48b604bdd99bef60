//! End-to-end checks of the `frpose` binary and the command functions.

use std::path::{Path, PathBuf};
use std::process::Command;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use frpose_cli::commands::{cmd_eval, cmd_train, TrainOptions, CHECKPOINT_DIR, FINAL_CHECKPOINT};
use frpose_cli::data::eval_set;
use frpose_cli::evaluation::{ground_truth, score};
use frpose_cli::report::{LOSS_FILE, METRICS_KV_FILE};
use frpose_cli::{LoadedConfig, RunReport};
use frpose_core::heatmap_codec::{read_dump, Frame, Joint, JointSet};
use frpose_core::metrics_oks::{Detection, MetricsReport, OksParams, MAX_DETECTIONS};
use frpose_core::testing::naive_summary;
use tempfile::TempDir;

const TINY_NETWORK: &str = r#"
[network]
variant = "FR_SBN_GCB_SAMFCD"
stage_blocks = [1, 1, 1, 1]
base_width = 8
decoder_channels = [16, 16, 16, 8, 8]
num_joints = 8
input_height = 32
input_width = 32
gcb_ratio = 2
fusion_channels = 8
"#;

fn tiny_config(dir: &Path, epochs: usize, extra: &str) -> PathBuf {
    let text = format!(
        "seed = 3\n{TINY_NETWORK}\n[data]\nsource = \"synthetic\"\nnum_images = 4\npersons = [1, 2]\nseed = 1\n\n\
         [train]\nepochs = {epochs}\nbatch_size = 3\n\n[eval]\noks_k = 0.1\n{extra}"
    );
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn frpose(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_frpose")).args(args).output().unwrap()
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

#[test]
fn identical_seeds_give_identical_loss_curves() {
    let dir = TempDir::new().unwrap();
    let cfg = LoadedConfig::load(&tiny_config(dir.path(), 2, "")).unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    cmd_train(&cfg, &a, &TrainOptions::default()).unwrap();
    cmd_train(&cfg, &b, &TrainOptions::default()).unwrap();
    cmd_train(&cfg.clone().with_seed(Some(4)), &c, &TrainOptions::default()).unwrap();
    let curve = read(a.join(LOSS_FILE));
    assert!(curve.starts_with("step,epoch,lr,loss\n"));
    assert_eq!(curve.lines().count(), 1 + 2 * 2, "{curve}");
    assert_eq!(curve, read(b.join(LOSS_FILE)));
    assert_ne!(curve, read(c.join(LOSS_FILE)));
    assert_eq!(read(a.join(METRICS_KV_FILE)), read(b.join(METRICS_KV_FILE)));
}

#[test]
fn resuming_from_a_decay_checkpoint_matches_the_uninterrupted_run() {
    let dir = TempDir::new().unwrap();
    let cfg = LoadedConfig::load(&tiny_config(dir.path(), 7, "")).unwrap();
    assert_eq!(cfg.run.train.resolved_decay_epochs(), vec![5, 6]);
    let full = dir.path().join("full");
    let report = cmd_train(&cfg, &full, &TrainOptions::default()).unwrap();
    let names: Vec<String> = report
        .checkpoints
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names, ["epoch_0005.ckpt", "epoch_0006.ckpt", FINAL_CHECKPOINT]);

    let resumed = dir.path().join("resumed");
    let options = TrainOptions {
        resume: Some(full.join(CHECKPOINT_DIR).join("epoch_0005.ckpt")),
    };
    let again = cmd_train(&cfg, &resumed, &options).unwrap();
    assert_eq!(read(full.join(LOSS_FILE)), read(resumed.join(LOSS_FILE)));
    assert_eq!(read(full.join(METRICS_KV_FILE)), read(resumed.join(METRICS_KV_FILE)));
    assert_eq!(report.epoch_losses, again.epoch_losses);
}

#[test]
fn resume_with_a_different_seed_is_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = LoadedConfig::load(&tiny_config(dir.path(), 1, "")).unwrap();
    let out = dir.path().join("a");
    cmd_train(&cfg, &out, &TrainOptions::default()).unwrap();
    let options = TrainOptions {
        resume: Some(out.join(CHECKPOINT_DIR).join(FINAL_CHECKPOINT)),
    };
    let err = cmd_train(&cfg.with_seed(Some(9)), &dir.path().join("b"), &options).unwrap_err();
    assert!(err.to_string().contains("seed"), "{err}");
}

#[test]
fn eval_on_the_final_checkpoint_reproduces_train_metrics() {
    let dir = TempDir::new().unwrap();
    let config = tiny_config(dir.path(), 2, "");
    let train_out = dir.path().join("train");
    let out = frpose(&["train", "--config", config.to_str().unwrap(), "--out", train_out.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    // re-run from the config echo, as a user would
    let eval_out = dir.path().join("eval");
    let ckpt = train_out.join(CHECKPOINT_DIR).join(FINAL_CHECKPOINT);
    let echo = train_out.join("config.toml");
    let out = frpose(&[
        "eval",
        "--config",
        echo.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--out",
        eval_out.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read(train_out.join(METRICS_KV_FILE)), read(eval_out.join(METRICS_KV_FILE)));
    let predictions: serde_json::Value = serde_json::from_str(&read(eval_out.join("predictions.json"))).unwrap();
    assert!(!predictions.as_array().unwrap().is_empty());
    let report = RunReport::read(&eval_out).unwrap();
    assert_eq!(report.command, "eval");
    assert_eq!(report.checkpoints, vec![ckpt]);
}

#[test]
fn checkpoint_config_mismatch_names_the_parameter() {
    let dir = TempDir::new().unwrap();
    let cfg = LoadedConfig::load(&tiny_config(dir.path(), 1, "")).unwrap();
    let train_out = dir.path().join("train");
    cmd_train(&cfg, &train_out, &TrainOptions::default()).unwrap();
    let mut wider = cfg.clone();
    wider.network.base_width = 16;
    let ckpt = train_out.join(CHECKPOINT_DIR).join(FINAL_CHECKPOINT);
    let err = cmd_eval(&wider, &dir.path().join("eval"), Some(&ckpt)).unwrap_err();
    assert!(err.to_string().contains("stem.conv.weight"), "{err}");
}

#[test]
fn failures_exit_nonzero_with_one_diagnostic_line() {
    let dir = TempDir::new().unwrap();
    let out_dir = dir.path().join("out");
    let missing = dir.path().join("missing.toml");
    let out = frpose(&["train", "--config", missing.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error: "), "{stderr}");
    assert_eq!(stderr.trim_end().lines().count(), 1, "{stderr}");

    let bad = tiny_config(dir.path(), 1, "[train.bogus]\nx = 1\n");
    let out = frpose(&["param-count", "--config", bad.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(!out.status.success());

    // a skeleton that does not match the network is caught before training
    let skeleton = tiny_config(dir.path(), 1, "").to_str().unwrap().to_string();
    let text = read(&skeleton).replace("num_joints = 8", "num_joints = 17");
    std::fs::write(&skeleton, text).unwrap();
    let out = frpose(&["train", "--config", &skeleton, "--out", out_dir.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(!out_dir.join(CHECKPOINT_DIR).exists());

    let config = tiny_config(dir.path(), 1, "");
    let out = frpose(&["eval", "--config", config.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(!out.status.success(), "eval without a checkpoint must fail");
}

#[test]
fn param_count_lists_every_variant() {
    let dir = TempDir::new().unwrap();
    let config = tiny_config(dir.path(), 1, "");
    let out_dir = dir.path().join("out");
    let out = frpose(&["param-count", "--config", config.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success());
    let csv = read(out_dir.join("params.csv"));
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "variant,parameters,millions");
    let names: Vec<&str> = rows[1..].iter().map(|r| r.split(',').next().unwrap()).collect();
    assert_eq!(names, ["SBN", "FR_SBN", "FR_SBN_GCB", "FR_SBN_GCB_SKIP", "FR_SBN_GCB_SAMFCD"]);
}

#[test]
fn quantization_tables_are_deterministic_and_seeded() {
    let dir = TempDir::new().unwrap();
    let config = tiny_config(dir.path(), 1, "[quantization]\nsamples = 200\n");
    let run = |seed: &str, name: &str| {
        let out_dir = dir.path().join(name);
        let out = frpose(&[
            "analyze-quantization",
            "--config",
            config.to_str().unwrap(),
            "--seed",
            seed,
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        read(out_dir.join("quantization.csv"))
    };
    let a = run("1", "a");
    assert_eq!(a, run("1", "b"));
    assert_ne!(a, run("2", "c"));
    // strides 4/2/1 × two modes × flip off/on × two alignments
    assert_eq!(a.lines().count(), 1 + 24);
}

#[test]
fn dumped_targets_decode_back() {
    let dir = TempDir::new().unwrap();
    let config = tiny_config(dir.path(), 1, "[dump]\ncount = 2\n");
    let out_dir = dir.path().join("out");
    let out = frpose(&["dump-heatmaps", "--config", config.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let index = read(out_dir.join("heatmaps.csv"));
    assert_eq!(index.lines().count(), 3);
    for row in index.lines().skip(1) {
        let cols: Vec<&str> = row.split(',').collect();
        let pred = read_dump(&out_dir.join(cols[3])).unwrap();
        let target = read_dump(&out_dir.join(cols[4])).unwrap();
        assert_eq!(pred.maps.shape(), target.maps.shape());
        assert_eq!((target.num_joints(), target.height(), target.width()), (8, 32, 32));
        assert!(target.maps.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

fn synthetic_eval(images: usize) -> (TempDir, LoadedConfig, OksParams) {
    let dir = TempDir::new().unwrap();
    let extra = format!("[eval_data]\nsource = \"synthetic\"\nnum_images = {images}\npersons = [0, 3]\nseed = 21\n");
    let cfg = LoadedConfig::load(&tiny_config(dir.path(), 1, &extra)).unwrap();
    let params = cfg.run.eval.oks_params(8).unwrap();
    (dir, cfg, params)
}

#[test]
fn ground_truth_as_predictions_scores_perfectly_and_nothing_scores_zero() {
    let (_dir, cfg, params) = synthetic_eval(16);
    let dataset = eval_set(&cfg).unwrap();
    let perfect: Vec<Detection> = ground_truth(&dataset)
        .into_iter()
        .filter(|g| g.joints.labeled_count() > 0)
        .map(|g| Detection {
            image_id: g.image_id,
            joints: g.joints,
            score: 1.0,
        })
        .collect();
    let m = score(&dataset, perfect, &params).unwrap().metrics;
    assert_eq!((m.ap, m.ap50, m.ap75, m.ar), (1.0, 1.0, 1.0, 1.0));
    let m = score(&dataset, Vec::new(), &params).unwrap().metrics;
    assert_eq!((m.ap, m.ap50, m.ap75, m.ar), (0.0, 0.0, 0.0, 0.0));
}

#[test]
fn synthetic_set_metrics_match_the_naive_evaluator() {
    let (_dir, cfg, params) = synthetic_eval(64);
    let dataset = eval_set(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut detections = Vec::new();
    for g in ground_truth(&dataset) {
        if g.joints.labeled_count() == 0 {
            continue;
        }
        let noise = [0.5, 2.0, 5.0, 12.0][rng.gen_range(0..4)];
        let joints = g
            .joints
            .joints
            .iter()
            .map(|j| Joint::visible(j.x + rng.gen_range(-noise..noise), j.y + rng.gen_range(-noise..noise)))
            .collect();
        detections.push(Detection {
            image_id: g.image_id,
            joints: JointSet::new(joints, Frame::Original),
            score: rng.gen(),
        });
        if rng.gen_bool(0.2) {
            // a stray false positive in the same image
            let joints = (0..8).map(|_| Joint::visible(rng.gen_range(0.0..80.0), rng.gen_range(0.0..80.0))).collect();
            detections.push(Detection {
                image_id: g.image_id,
                joints: JointSet::new(joints, Frame::Original),
                score: rng.gen(),
            });
        }
    }
    let outcome = score(&dataset, detections.clone(), &params).unwrap();
    let naive = naive_summary(&outcome.ground_truth, &detections, &params.k, MAX_DETECTIONS);
    let m: MetricsReport = outcome.metrics;
    for (got, want) in [(m.ap, naive.ap), (m.ap50, naive.ap50), (m.ap75, naive.ap75), (m.ar, naive.ar)] {
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }
    assert!(m.ap > 0.0 && m.ap < 1.0, "{m:?}");
}
