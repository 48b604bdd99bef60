//! Acceptance gate. Runs every criterion at its stated tolerance, prints one
//! PASS/FAIL line each and exits nonzero if any failed.
//!
//! `cargo test -p frpose-cli --test acceptance` (add `--release` for speed;
//! the workspace test profile is already optimised).

// `!(x < tol)` also fails on NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use frpose_cli::commands::{cmd_train, TrainOptions};
use frpose_cli::{LoadedConfig, RunConfig};
use frpose_core::heatmap_codec::{
    analyze, encode_targets, Alignment, DecodeMode, Frame, Joint, JointSet, QuantizationConfig, Visibility,
};
use frpose_core::metrics_oks::{evaluate, summarize, Detection, GroundTruth, OksParams, SummaryKind, MAX_DETECTIONS};
use frpose_core::nn_blocks::Gcb;
use frpose_core::pose_network::{NetworkConfig, PoseNetwork, Variant};
use frpose_core::tensor_core::{Graph, Mode, ParamStore, Session, Shape, Tensor};
use frpose_core::testing::{block_cases, naive_summary, primitive_cases};

type Verdict = Result<String, String>;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load_network(file: &str) -> Result<NetworkConfig, String> {
    let path = configs_dir().join("networks").join(file);
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

const FR_VARIANTS: [Variant; 4] = [
    Variant::FrSbn,
    Variant::FrSbnGcb,
    Variant::FrSbnGcbSkip,
    Variant::FrSbnGcbSamfcd,
];

fn output_matches_input(config: &NetworkConfig, batch: usize, seed: u64) -> Result<(), String> {
    let mut net = PoseNetwork::<f32>::build(config, seed).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = Shape::new(batch, 3, config.input_height, config.input_width);
    let x = Tensor::uniform(shape, -1.0, 1.0, &mut rng);
    let y = net.forward(&x, Mode::Eval).map_err(|e| e.to_string())?;
    let s = y.shape();
    if (s.n, s.c, s.h, s.w) != (batch, config.num_joints, config.input_height, config.input_width) {
        return Err(format!(
            "{} at {}x{}: output {:?}",
            config.variant, config.input_height, config.input_width, s
        ));
    }
    Ok(())
}

fn full_resolution_contract() -> Verdict {
    let sizes = [(256, 192), (384, 288), (64, 64)];
    let mut checked = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (h, w) in sizes {
        for v in FR_VARIANTS {
            let mut cfg = NetworkConfig::toy(v);
            cfg.input_height = h;
            cfg.input_width = w;
            output_matches_input(&cfg, rng.gen_range(1..=2), rng.gen())?;
            checked += 1;
        }
    }
    // full-width encoder, both reference input sizes
    for (h, w) in [(256, 192), (384, 288)] {
        for v in FR_VARIANTS {
            output_matches_input(&NetworkConfig::resnet34(v, h, w), 1, 3)?;
            checked += 1;
        }
    }
    Ok(format!("{checked} (variant, size) cases; output H×W equals input H×W"))
}

fn gradient_integrity() -> Verdict {
    let mut lines = Vec::new();
    let mut worst: f64 = 0.0;
    for case in primitive_cases() {
        for outcome in [case.check_f64(), case.check_f32()] {
            let o = outcome.map_err(|e| format!("{}: {e}", case.name))?;
            if !o.passed() {
                lines.push(format!("{} err {:.2e} > {:.0e} ({})", o.name, o.error, o.tolerance, o.worst));
            }
            worst = worst.max(o.error / o.tolerance);
        }
    }
    let mut block_worst: f64 = 0.0;
    for case in block_cases() {
        let o = case.check().map_err(|e| format!("{}: {e}", case.name))?;
        if !(o.error < 1e-4) {
            lines.push(format!("{} err {:.2e} ({})", o.name, o.error, o.worst));
        }
        block_worst = block_worst.max(o.error);
    }
    if lines.is_empty() {
        Ok(format!(
            "{} primitives (f64 and f32), {} blocks; worst block rel err {block_worst:.1e}, worst primitive err/tol {worst:.1e}",
            primitive_cases().len(),
            block_cases().len()
        ))
    } else {
        Err(lines.join("; "))
    }
}

fn gcb_identity_at_init() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut max_diff: f64 = 0.0;
    for trial in 0..100 {
        let ratio = [1, 2, 4, 8][rng.gen_range(0..4)];
        let channels = ratio * rng.gen_range(1..=4);
        let shape = Shape::new(rng.gen_range(1..=3), channels, rng.gen_range(1..=9), rng.gen_range(1..=9));
        let mut store = ParamStore::<f32>::new();
        let gcb = Gcb::new(&mut store, &mut rng, "gcb", channels, ratio).map_err(|e| e.to_string())?;
        let x = Tensor::<f32>::uniform(shape, -3.0, 3.0, &mut rng);
        let mode = if trial % 2 == 0 { Mode::Train } else { Mode::Eval };
        let mut s = Session::with_graph(&mut store, mode, Graph::new());
        let xv = s.graph.leaf(x.clone(), true);
        let out = gcb.forward(&mut s, xv).map_err(|e| e.to_string())?;
        max_diff = max_diff.max(s.graph.value(out.enhanced).max_abs_diff(&x));
    }
    if max_diff < 1e-7 {
        Ok(format!("100 random inputs, max |enhanced − x| = {max_diff:.1e}"))
    } else {
        Err(format!("max |enhanced − x| = {max_diff:.3e} ≥ 1e-7"))
    }
}

fn sigma_from_config(height: usize, width: usize) -> Result<f64, String> {
    let text = format!(
        "[network]\nvariant = \"FR_SBN_GCB_SAMFCD\"\nstage_blocks = [3, 4, 6, 3]\nbase_width = 64\n\
         num_joints = 17\ninput_height = {height}\ninput_width = {width}\ngcb_ratio = 16\nfusion_channels = 128\n"
    );
    let origin = Path::new("inline.toml");
    let run = RunConfig::parse(&text, origin).map_err(|e| e.to_string())?;
    Ok(LoadedConfig::from_run(run, PathBuf::new(), origin)
        .map_err(|e| e.to_string())?
        .sigma())
}

fn gaussian_encoding() -> Verdict {
    let expected = (-0.5f64).exp();
    for (h, w, want) in [(256, 192, 8.0), (384, 288, 12.0)] {
        let sigma = sigma_from_config(h, w)?;
        if sigma != want {
            return Err(format!("sigma at {h}x{w} = {sigma}, expected {want}"));
        }
        for alignment in [Alignment::HalfPixel, Alignment::Corner] {
            // joint placed exactly on a grid point of the stride-1 map
            let (gx, gy) = (w / 3, h / 2);
            let x = alignment.cell_to_px(gx as f64, 1);
            let y = alignment.cell_to_px(gy as f64, 1);
            let joints = JointSet::new(vec![Joint::new(x, y, Visibility::LabeledVisible)], Frame::Crop);
            let (stack, weights) = encode_targets(&joints, h, w, 1, sigma, alignment);
            let map = stack.map(0);
            let peak = map[gy * w + gx] as f64;
            let s = sigma as usize;
            let at_sigma = [
                map[gy * w + gx + s],
                map[gy * w + gx - s],
                map[(gy + s) * w + gx],
                map[(gy - s) * w + gx],
            ];
            if !weights[0] || peak != 1.0 {
                return Err(format!("peak {peak} at {h}x{w}"));
            }
            if let Some(v) = at_sigma.iter().find(|v| (**v as f64 - expected).abs() > 1e-6) {
                return Err(format!("value {v} at distance sigma, expected {expected:.7}"));
            }
        }
    }
    Ok("sigma 8 (256x192) and 12 (384x288) from config; peak 1.0, exp(-1/2) at sigma within 1e-6".into())
}

fn quantization_analyzer() -> Verdict {
    let cfg = QuantizationConfig {
        samples: 1000,
        seed: 5,
        ..QuantizationConfig::default()
    };
    let run = |stride| analyze(&cfg, stride, DecodeMode::Argmax, false, Alignment::HalfPixel).map_err(|e| e.to_string());
    let (s1, s4) = (run(1)?, run(4)?);
    let s1_again = run(1)?;
    let max1 = s1.max_error_x.max(s1.max_error_y);
    let max4 = s4.max_error_x.max(s4.max_error_y);
    let mut failures = Vec::new();
    if s1.samples != 1000 || s4.samples != 1000 {
        failures.push("sample count".to_string());
    }
    if max1 > 0.5 {
        failures.push(format!("stride-1 max axis error {max1:.4} > 0.5"));
    }
    if max4 > 2.0 {
        failures.push(format!("stride-4 max axis error {max4:.4} > 2.0"));
    }
    if !(s1.mean_error < s4.mean_error) {
        failures.push(format!("mean error stride 1 {:.4} not below stride 4 {:.4}", s1.mean_error, s4.mean_error));
    }
    if s1 != s1_again {
        failures.push("not deterministic".into());
    }
    if failures.is_empty() {
        Ok(format!(
            "max axis error {max1:.3} px (stride 1), {max4:.3} px (stride 4); mean {:.3} < {:.3}",
            s1.mean_error, s4.mean_error
        ))
    } else {
        Err(failures.join("; "))
    }
}

fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<GroundTruth>, Vec<Detection>, usize) {
    let k = rng.gen_range(1..=5);
    let images = rng.gen_range(1..=5);
    let mut gts = Vec::new();
    let mut dets = Vec::new();
    for image_id in 0..images as u64 {
        let mut people = Vec::new();
        for _ in 0..rng.gen_range(0..=3) {
            let (cx, cy) = (rng.gen_range(20.0..200.0), rng.gen_range(20.0..200.0));
            let joints: Vec<Joint> = (0..k)
                .map(|_| {
                    if rng.gen_bool(0.15) {
                        Joint::unlabeled()
                    } else {
                        let v = if rng.gen_bool(0.5) { Visibility::LabeledVisible } else { Visibility::LabeledInvisible };
                        Joint::new(cx + rng.gen_range(-20.0..20.0), cy + rng.gen_range(-20.0..20.0), v)
                    }
                })
                .collect();
            let area = rng.gen_range(200.0..12000.0);
            people.push((cx, cy, joints.clone()));
            gts.push(GroundTruth {
                image_id,
                joints: JointSet::new(joints, Frame::Original),
                area,
            });
        }
        for _ in 0..rng.gen_range(0..=4) {
            let joints: Vec<Joint> = if !people.is_empty() && rng.gen_bool(0.8) {
                let (cx, cy, target) = &people[rng.gen_range(0..people.len())];
                let noise = [1.0, 4.0, 10.0, 25.0][rng.gen_range(0..4)];
                target
                    .iter()
                    .map(|j| {
                        let (x, y) = if j.is_labeled() { (j.x, j.y) } else { (*cx, *cy) };
                        Joint::visible(x + rng.gen_range(-noise..noise), y + rng.gen_range(-noise..noise))
                    })
                    .collect()
            } else {
                (0..k)
                    .map(|_| Joint::visible(rng.gen_range(0.0..220.0), rng.gen_range(0.0..220.0)))
                    .collect()
            };
            // coarse scores so ties occur
            let score = (rng.gen_range(0.0..1.0f64) * 8.0).round() / 8.0;
            dets.push(Detection {
                image_id,
                joints: JointSet::new(joints, Frame::Original),
                score,
            });
        }
    }
    (gts, dets, k)
}

fn oracle_equivalence() -> Verdict {
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (gts, dets, k) = random_instance(&mut rng);
        let k_values: Vec<f64> = (0..k).map(|_| rng.gen_range(0.03..0.12)).collect();
        let params = OksParams {
            k: k_values.clone(),
            ..OksParams::uniform(k, 0.1)
        };
        let records = evaluate(&gts, &dets, &params).map_err(|e| format!("seed {seed}: {e}"))?;
        let naive = naive_summary(&gts, &dets, &k_values, MAX_DETECTIONS);
        for (kind, want) in [
            (SummaryKind::Ap, naive.ap),
            (SummaryKind::Ap50, naive.ap50),
            (SummaryKind::Ap75, naive.ap75),
            (SummaryKind::Ar, naive.ar),
        ] {
            let got = summarize(&records, kind, &params);
            let diff = (got - want).abs();
            if !(diff <= 1e-6) {
                return Err(format!("seed {seed} {}: summarize {got} vs naive {want}", kind.label()));
            }
            worst = worst.max(diff);
        }
    }
    Ok(format!("100 seeds, AP/AP50/AP75/AR max |diff| = {worst:.1e}"))
}

fn parameter_counts() -> Verdict {
    let count = |cfg: &NetworkConfig| -> Result<usize, String> {
        Ok(PoseNetwork::<f32>::build(cfg, 0).map_err(|e| e.to_string())?.stats().parameter_count)
    };
    let within = |n: usize, target: f64| (n as f64 - target).abs() <= 0.15 * target;
    let full = load_network("resnet34_256x192.toml")?;
    let sbn50 = load_network("resnet50_sbn_256x192.toml")?;
    let (full_n, sbn50_n) = (count(&full)?, count(&sbn50)?);
    let ladder = [Variant::Sbn, Variant::FrSbn, Variant::FrSbnGcb, Variant::FrSbnGcbSamfcd]
        .map(|v| count(&full.clone().with_variant(v)));
    let ladder: Vec<usize> = ladder.into_iter().collect::<Result<_, _>>()?;
    let mut failures = Vec::new();
    if !within(full_n, 33e6) {
        failures.push(format!("ResNet34 full network {full_n} outside 33M ± 15%"));
    }
    if !within(sbn50_n, 34e6) {
        failures.push(format!("SBN-50 {sbn50_n} outside 34M ± 15%"));
    }
    if !ladder.windows(2).all(|w| w[0] < w[1]) {
        failures.push(format!("variant counts not strictly increasing: {ladder:?}"));
    }
    if failures.is_empty() {
        Ok(format!(
            "ResNet34 full {:.2}M, SBN-50 {:.2}M, ladder {:?}",
            full_n as f64 / 1e6,
            sbn50_n as f64 / 1e6,
            ladder
        ))
    } else {
        Err(failures.join("; "))
    }
}

fn toy_overfit() -> Verdict {
    let cfg = LoadedConfig::load(&configs_dir().join("toy_overfit.toml")).map_err(|e| e.to_string())?;
    let net = &cfg.network;
    if net.variant != Variant::FrSbnGcbSamfcd
        || net.base_width != 16
        || (net.input_height, net.input_width) != (64, 64)
        || net.num_joints != 8
    {
        return Err("configs/toy_overfit.toml does not describe the toy full network".into());
    }
    let t = &cfg.run.train;
    let images = match &cfg.run.data {
        frpose_cli::config::DataConfig::Synthetic { scene } => scene.num_images * scene.persons.1,
        _ => 0,
    };
    let steps = t.epochs * images.div_ceil(t.batch_size);
    if images != 16 || steps > 500 || t.augment.enabled || cfg.run.eval.oks_k != Some(0.1) {
        return Err(format!("overfit config: {images} samples, {steps} steps"));
    }
    let out = tempfile::tempdir().map_err(|e| e.to_string())?;
    let report = cmd_train(&cfg, out.path(), &TrainOptions::default()).map_err(|e| e.to_string())?;
    let ratio = report.loss_ratio.ok_or("no loss ratio")?;
    let metrics = report.metrics.ok_or("no metrics")?;
    let ap50 = metrics.ap50;
    let summary = format!(
        "{} steps, loss {:.3e} -> {:.3e} (ratio {ratio:.4}), AP50 {ap50}",
        report.epoch_losses.len() * images.div_ceil(t.batch_size),
        report.initial_loss.unwrap_or(f64::NAN),
        report.final_loss.unwrap_or(f64::NAN)
    );
    if ratio < 0.05 && ap50 == 1.0 {
        Ok(summary)
    } else {
        Err(summary)
    }
}

type Criterion = (u32, &'static str, fn() -> Verdict);

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        (1, "full-resolution output contract", full_resolution_contract),
        (2, "gradient integrity", gradient_integrity),
        (3, "GCB identity at init", gcb_identity_at_init),
        (4, "Gaussian target encoding", gaussian_encoding),
        (5, "quantization analyzer", quantization_analyzer),
        (6, "OKS/AP oracle equivalence", oracle_equivalence),
        (7, "parameter counts", parameter_counts),
        (8, "toy overfit", toy_overfit),
    ];
    // libtest-style filtering: `cargo test --test acceptance -- 8` runs criterion 8 only
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| *f == id.to_string()) {
            continue;
        }
        let start = Instant::now();
        let verdict = run();
        let secs = start.elapsed().as_secs_f64();
        match verdict {
            Ok(detail) => println!("[PASS] criterion {id}: {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] criterion {id}: {name} ({secs:.1}s): {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
