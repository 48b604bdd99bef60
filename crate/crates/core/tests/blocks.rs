use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use frpose_core::nn_blocks::{
    BlockType, Decoder, DecoderSpec, DeconvGeometry, Gcb, ResStage, StageSpec, Stem,
};
use frpose_core::sa_mfcd::{CollectedFeatures, GateKind, SaMfcd};
use frpose_core::tensor_core::{Mode, ParamStore, Session, Shape, Tensor};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rand(shape: Shape, seed: u64) -> Tensor<f32> {
    Tensor::uniform(shape, -1.0, 1.0, &mut rng(seed))
}

fn set_param(store: &mut ParamStore<f32>, name: &str, value: f32) {
    let id = store.id(name).unwrap_or_else(|| panic!("no parameter {name}"));
    store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = value);
}

#[test]
fn downsampling_stage_halves_extents() {
    let mut store = ParamStore::<f32>::new();
    let spec = StageSpec {
        block_count: 2,
        channels: 8,
        downsample: true,
    };
    let stage = ResStage::new(&mut store, &mut rng(1), "stage", BlockType::Basic, 4, spec).unwrap();
    let mut s = Session::new(&mut store, Mode::Eval);
    let x = s.graph.constant(rand(Shape::new(1, 4, 64, 48), 2));
    let y = stage.forward(&mut s, x).unwrap();
    assert_eq!(s.graph.shape(y), Shape::new(1, 8, 32, 24));
}

#[test]
fn zero_residual_branch_gives_relu_of_input() {
    let mut store = ParamStore::<f32>::new();
    let spec = StageSpec {
        block_count: 2,
        channels: 4,
        downsample: false,
    };
    let stage = ResStage::new(&mut store, &mut rng(3), "stage", BlockType::Basic, 4, spec).unwrap();
    // the last BN of every branch scales to zero
    for b in 0..2 {
        set_param(&mut store, &format!("stage.block{b}.conv2.bn.gamma"), 0.0);
        set_param(&mut store, &format!("stage.block{b}.conv2.bn.beta"), 0.0);
    }
    let x = rand(Shape::new(2, 4, 6, 5), 4);
    let mut s = Session::new(&mut store, Mode::Train);
    let xv = s.graph.constant(x.clone());
    let y = stage.forward(&mut s, xv).unwrap();
    let expected: Vec<f32> = x.data().iter().map(|v| v.max(0.0)).collect();
    assert_eq!(s.graph.value(y).data(), &expected[..]);
}

#[test]
fn gradient_reaches_the_first_block() {
    let mut store = ParamStore::<f32>::new();
    let spec = StageSpec {
        block_count: 3,
        channels: 8,
        downsample: true,
    };
    let stage = ResStage::new(&mut store, &mut rng(5), "stage", BlockType::Basic, 4, spec).unwrap();
    {
        let mut s = Session::new(&mut store, Mode::Train);
        let x = s.graph.constant(rand(Shape::new(2, 4, 8, 8), 6));
        let y = stage.forward(&mut s, x).unwrap();
        let loss = s.graph.sum_all(y);
        s.backward(loss).unwrap();
    }
    for name in ["stage.block0.conv1.conv.weight", "stage.block0.proj.conv.weight"] {
        let t = store.get(store.id(name).unwrap());
        let g = t.grad().expect("gradient present");
        assert!(g.iter().any(|v| *v != 0.0), "{name} has an all-zero gradient");
    }
}

#[test]
fn stem_divides_by_four() {
    for (h, w) in [(256, 192), (384, 288)] {
        let mut store = ParamStore::<f32>::new();
        let stem = Stem::new(&mut store, &mut rng(7), "stem", 8).unwrap();
        let mut s = Session::new(&mut store, Mode::Eval);
        let x = s.graph.constant(rand(Shape::new(1, 3, h, w), 8));
        let y = stem.forward(&mut s, x).unwrap();
        assert_eq!(s.graph.shape(y), Shape::new(1, 8, h / 4, w / 4));
    }
    let mut store = ParamStore::<f32>::new();
    let stem = Stem::new(&mut store, &mut rng(7), "stem", 8).unwrap();
    let mut s = Session::new(&mut store, Mode::Eval);
    let x = s.graph.constant(rand(Shape::new(1, 3, 60, 64), 8));
    assert!(stem.forward(&mut s, x).is_err(), "60 is not a multiple of 32");
}

#[test]
fn gcb_pooling_matches_explicit_sum() {
    let mut store = ParamStore::<f64>::new();
    let gcb = Gcb::new(&mut store, &mut rng(9), "gcb", 4, 2).unwrap();
    let x = Tensor::<f64>::uniform(Shape::new(2, 4, 5, 5), -1.0, 1.0, &mut rng(10));
    let mut s = Session::new(&mut store, Mode::Train);
    let xv = s.graph.constant(x.clone());
    let out = gcb.forward(&mut s, xv).unwrap();
    let sah = s.graph.value(out.sah).clone();
    let context = s.graph.value(out.context);
    for n in 0..2 {
        let logits: Vec<f64> = (0..25).map(|j| sah.at(n, 0, j / 5, j % 5)).collect();
        let max = logits.iter().cloned().fold(f64::MIN, f64::max);
        let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        for c in 0..4 {
            let pooled: f64 = (0..25)
                .map(|j| (logits[j] - max).exp() / z * x.at(n, c, j / 5, j % 5))
                .sum();
            assert!((pooled - context.at(n, c, 0, 0)).abs() < 1e-6);
        }
    }
}

proptest! {
    #[test]
    fn gcb_context_of_constant_input_is_the_constant(
        seed in any::<u64>(),
        values in prop::collection::vec(-4.0f64..4.0, 4),
        h in 1usize..6,
        w in 1usize..6,
    ) {
        let mut store = ParamStore::<f64>::new();
        let gcb = Gcb::new(&mut store, &mut rng(seed), "gcb", 4, 2).unwrap();
        let x = Tensor::from_fn(Shape::new(1, 4, h, w), |_, c, _, _| values[c]);
        let mut s = Session::new(&mut store, Mode::Eval);
        let xv = s.graph.constant(x);
        let out = gcb.forward(&mut s, xv).unwrap();
        for (c, v) in values.iter().enumerate() {
            prop_assert!((s.graph.value(out.context).at(0, c, 0, 0) - v).abs() < 1e-12);
        }
        prop_assert_eq!(s.graph.shape(out.sah), Shape::new(1, 1, h, w));
        prop_assert_eq!(s.graph.shape(out.enhanced), Shape::new(1, 4, h, w));
    }
}

fn decoder(accepts_fusion: bool, fused_channels: usize) -> (ParamStore<f32>, Decoder) {
    let mut store = ParamStore::<f32>::new();
    let spec = DecoderSpec {
        out_channels: 6,
        accepts_fusion,
    };
    let dec = Decoder::new(&mut store, &mut rng(11), "dec", 4, spec, fused_channels, DeconvGeometry::default())
        .unwrap();
    (store, dec)
}

#[test]
fn decoder_doubles_resolution() {
    let (mut store, dec) = decoder(false, 0);
    let mut s = Session::new(&mut store, Mode::Eval);
    let x = s.graph.constant(rand(Shape::new(1, 4, 8, 6), 12));
    let y = dec.forward(&mut s, x, None).unwrap();
    assert_eq!(s.graph.shape(y), Shape::new(1, 6, 16, 12));
}

#[test]
fn decoder_without_fusion_ignores_a_fused_map() {
    let (mut store, dec) = decoder(false, 0);
    let x = rand(Shape::new(2, 4, 4, 3), 13);
    let mut s = Session::new(&mut store, Mode::Eval);
    let xv = s.graph.constant(x.clone());
    let plain = dec.forward(&mut s, xv, None).unwrap();
    let extra = s.graph.constant(rand(Shape::new(2, 5, 8, 6), 14));
    let ignored = dec.forward(&mut s, xv, Some(extra)).unwrap();
    assert_eq!(s.graph.value(plain).data(), s.graph.value(ignored).data());
}

#[test]
fn fused_decoder_keeps_its_output_width() {
    let (mut store, dec) = decoder(true, 5);
    let mut s = Session::new(&mut store, Mode::Eval);
    let x = s.graph.constant(rand(Shape::new(1, 4, 4, 3), 15));
    let f = s.graph.constant(rand(Shape::new(1, 5, 8, 6), 16));
    let y = dec.forward(&mut s, x, Some(f)).unwrap();
    assert_eq!(s.graph.shape(y), Shape::new(1, 6, 8, 6));
    assert!(dec.forward(&mut s, x, None).is_err(), "a fusing decoder needs its fused input");
}

struct Collect {
    store: ParamStore<f32>,
    module: SaMfcd,
    features: [Tensor<f32>; 3],
    sahs: [Tensor<f32>; 3],
}

fn collect_fixture(gate: GateKind, widths: [usize; 3], fusion: usize, base: (usize, usize)) -> Collect {
    let mut store = ParamStore::<f32>::new();
    let module = SaMfcd::new(&mut store, &mut rng(17), "samfcd", widths, fusion, gate).unwrap();
    let (h, w) = base;
    let features = [0, 1, 2].map(|i| rand(Shape::new(2, widths[i], h >> i, w >> i), 18 + i as u64));
    let sahs = [0, 1, 2].map(|i| rand(Shape::new(2, 1, h >> i, w >> i), 21 + i as u64));
    Collect {
        store,
        module,
        features,
        sahs,
    }
}

/// Runs collect in train mode with the gate BN forced to a constant `beta`
/// (its input is zeroed via the fusion conv weights) and returns (map, fused).
fn forced_gate(beta: f32) -> (Vec<f32>, Vec<f32>) {
    let mut f = collect_fixture(GateKind::Relu, [4, 6, 8], 5, (8, 12));
    set_param(&mut f.store, "samfcd.sah_fuse.weight", 0.0);
    set_param(&mut f.store, "samfcd.sah_bn.beta", beta);
    let mut s = Session::new(&mut f.store, Mode::Train);
    let input = CollectedFeatures {
        features: f.features.clone().map(|t| s.graph.constant(t)),
        sahs: f.sahs.clone().map(|t| s.graph.constant(t)),
    };
    let refined = f.module.collect(&mut s, &input).unwrap();
    (
        s.graph.value(refined.map).data().to_vec(),
        s.graph.value(refined.fused).data().to_vec(),
    )
}

#[test]
fn all_ones_gate_passes_the_fused_map_through() {
    let (map, fused) = forced_gate(1.0);
    assert_eq!(map, fused);
}

#[test]
fn all_zeros_gate_blanks_the_map() {
    let (map, _) = forced_gate(-1.0);
    assert!(map.iter().all(|v| *v == 0.0));
}

#[test]
fn collect_and_distribute_shapes() {
    let mut f = collect_fixture(GateKind::Sigmoid, [64, 128, 256], 128, (64, 48));
    let mut s = Session::new(&mut f.store, Mode::Eval);
    let input = CollectedFeatures {
        features: f.features.clone().map(|t| s.graph.constant(t)),
        sahs: f.sahs.clone().map(|t| s.graph.constant(t)),
    };
    let refined = f.module.collect(&mut s, &input).unwrap();
    assert_eq!(s.graph.shape(refined.map), Shape::new(2, 128, 64, 48));
    let at4 = SaMfcd::distribute(&mut s, &refined, 4).unwrap();
    assert_eq!(s.graph.value(at4).data(), s.graph.value(refined.map).data());
    let at2 = SaMfcd::distribute(&mut s, &refined, 2).unwrap();
    assert_eq!(s.graph.shape(at2), Shape::new(2, 128, 128, 96));
    let at8 = SaMfcd::distribute(&mut s, &refined, 8).unwrap();
    assert_eq!(s.graph.shape(at8), Shape::new(2, 128, 32, 24));
    assert!(SaMfcd::distribute(&mut s, &refined, 16).is_err());
}

#[test]
fn collect_rejects_a_broken_stride_ladder() {
    let mut f = collect_fixture(GateKind::Sigmoid, [4, 6, 8], 5, (8, 6));
    let mut s = Session::new(&mut f.store, Mode::Eval);
    let mut features = f.features.clone().map(|t| s.graph.constant(t));
    features[2] = s.graph.constant(rand(Shape::new(2, 8, 3, 3), 30));
    let input = CollectedFeatures {
        features,
        sahs: f.sahs.clone().map(|t| s.graph.constant(t)),
    };
    assert!(f.module.collect(&mut s, &input).is_err());
}
