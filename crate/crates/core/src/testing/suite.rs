//! The gradient-check catalogue: every differentiable primitive and each
//! composite block, with its tolerance.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{check_block_gradients, jitter_params, probe, relative_error, FD_STEP};
use crate::error::Result;
use crate::nn_blocks::{BlockType, Decoder, DecoderSpec, DeconvGeometry, Gcb, ResBlock, Stem};
use crate::sa_mfcd::{CollectedFeatures, GateKind, SaMfcd};
use crate::tensor_core::{
    BatchNormConfig, Graph, ParamStore, Real, Reduction, RunningStats, Shape, Tensor, Var,
};

/// Wide-precision tolerance.
pub const F64_TOLERANCE: f64 = 1e-4;
/// Tolerance for the rectifier, checked away from its kink.
pub const RELU_TOLERANCE: f64 = 1e-5;
/// 32-bit analytic gradients against a 64-bit numeric oracle.
pub const F32_TOLERANCE: f64 = 1e-2;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckOutcome {
    pub name: String,
    pub error: f64,
    pub tolerance: f64,
    /// Tensor with the largest error.
    pub worst: String,
}

impl GradCheckOutcome {
    pub fn passed(&self) -> bool {
        self.error.is_finite() && self.error < self.tolerance
    }
}

type LossFn<T> = fn(&mut Graph<T>, &[Var]) -> Result<Var>;

pub struct PrimitiveCase {
    pub name: &'static str,
    pub tolerance: f64,
    pub inputs: Vec<Tensor<f64>>,
    wide: LossFn<f64>,
    narrow: LossFn<f32>,
}

fn analytic<T: Real>(inputs: &[Tensor<f64>], f: LossFn<T>) -> Result<Vec<Vec<f64>>> {
    let mut g = Graph::<T>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.cast::<T>(), true)).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    Ok(vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| match g.grad(*v) {
            Some(gr) => gr.iter().map(|x| x.as_f64()).collect(),
            None => vec![0.0; t.shape().numel()],
        })
        .collect())
}

fn numeric(inputs: &[Tensor<f64>], f: LossFn<f64>) -> Result<Vec<Vec<f64>>> {
    let eval = |ts: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::no_grad();
        let vars: Vec<Var> = ts.iter().map(|t| g.leaf(t.clone(), false)).collect();
        let loss = f(&mut g, &vars)?;
        Ok(g.value(loss).data()[0])
    };
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut grad = vec![0.0; inputs[i].shape().numel()];
        for (j, slot) in grad.iter_mut().enumerate() {
            let x = inputs[i].data()[j];
            work[i].data_mut()[j] = x + FD_STEP;
            let up = eval(&work)?;
            work[i].data_mut()[j] = x - FD_STEP;
            let down = eval(&work)?;
            work[i].data_mut()[j] = x;
            *slot = (up - down) / (2.0 * FD_STEP);
        }
        out.push(grad);
    }
    Ok(out)
}

fn compare(name: &str, tolerance: f64, a: &[Vec<f64>], n: &[Vec<f64>]) -> GradCheckOutcome {
    let mut outcome = GradCheckOutcome {
        name: name.to_string(),
        error: 0.0,
        tolerance,
        worst: "input0".into(),
    };
    for (i, (a, n)) in a.iter().zip(n).enumerate() {
        let e = relative_error(a, n);
        if e > outcome.error {
            outcome.error = e;
            outcome.worst = format!("input{i}");
        }
    }
    outcome
}

impl PrimitiveCase {
    pub fn check_f64(&self) -> Result<GradCheckOutcome> {
        let a = analytic(&self.inputs, self.wide)?;
        let n = numeric(&self.inputs, self.wide)?;
        Ok(compare(self.name, self.tolerance, &a, &n))
    }

    pub fn check_f32(&self) -> Result<GradCheckOutcome> {
        let a = analytic(&self.inputs, self.narrow)?;
        let n = numeric(&self.inputs, self.wide)?;
        Ok(compare(self.name, F32_TOLERANCE, &a, &n))
    }
}

fn rand(shape: [usize; 4], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::uniform(Shape::new(shape[0], shape[1], shape[2], shape[3]), -1.0, 1.0, &mut rng)
}

/// Entries pushed at least 0.1 away from zero.
fn away_from_zero(shape: [usize; 4], seed: u64) -> Tensor<f64> {
    let mut t = rand(shape, seed);
    t.data_mut().iter_mut().for_each(|v| *v += 0.1f64.copysign(*v));
    t
}

fn probed<T: Real>(g: &mut Graph<T>, out: Var) -> Result<Var> {
    let p = g.constant(probe(g.shape(out), 11).cast::<T>());
    let prod = g.mul(out, p)?;
    Ok(g.sum_all(prod))
}

fn conv<T: Real>(g: &mut Graph<T>, v: &[Var]) -> Result<Var> {
    let y = g.conv2d(v[0], v[1], Some(v[2]), 2, 1)?;
    probed(g, y)
}

fn deconv<T: Real>(g: &mut Graph<T>, v: &[Var]) -> Result<Var> {
    let y = g.deconv2d(v[0], v[1], 2, 1, 0)?;
    probed(g, y)
}

fn batch_norm<T: Real>(g: &mut Graph<T>, v: &[Var]) -> Result<Var> {
    let mut stats = RunningStats::new(g.shape(v[0]).c);
    let y = g.batch_norm(v[0], v[1], v[2], &mut stats, true, BatchNormConfig::default())?;
    probed(g, y)
}

fn layer_norm<T: Real>(g: &mut Graph<T>, v: &[Var]) -> Result<Var> {
    let y = g.layer_norm_channels(v[0], v[1], v[2])?;
    probed(g, y)
}

fn relu<T: Real>(g: &mut Graph<T>, v: &[Var]) -> Result<Var> {
    let y = g.relu(v[0]);
    probed(g, y)
}

fn sigmoid<T: Real>(g: &mut Graph<T>, v: &[Var]) -> Result<Var> {
    let y = g.sigmoid(v[0]);
    probed(g, y)
}

fn softmax<T: Real>(g: &mut Graph<T>, v: &[Var]) -> Result<Var> {
    let y = g.softmax_spatial(v[0]);
    probed(g, y)
}

fn resize_up<T: Real>(g: &mut Graph<T>, v: &[Var]) -> Result<Var> {
    let y = g.bilinear_resize(v[0], 7, 9)?;
    probed(g, y)
}

fn resize_down<T: Real>(g: &mut Graph<T>, v: &[Var]) -> Result<Var> {
    let y = g.bilinear_resize(v[0], 4, 3)?;
    probed(g, y)
}

fn concat<T: Real>(g: &mut Graph<T>, v: &[Var]) -> Result<Var> {
    let y = g.concat_channels(v)?;
    probed(g, y)
}

fn add_broadcast<T: Real>(g: &mut Graph<T>, v: &[Var]) -> Result<Var> {
    let y = g.add(v[0], v[1])?;
    probed(g, y)
}

fn mul_broadcast<T: Real>(g: &mut Graph<T>, v: &[Var]) -> Result<Var> {
    let y = g.mul(v[0], v[1])?;
    let y = g.mul(y, v[2])?;
    probed(g, y)
}

fn max_pool<T: Real>(g: &mut Graph<T>, v: &[Var]) -> Result<Var> {
    let y = g.max_pool2d(v[0], 3, 2, 1)?;
    probed(g, y)
}

fn sum_spatial<T: Real>(g: &mut Graph<T>, v: &[Var]) -> Result<Var> {
    let y = g.sum_spatial(v[0]);
    probed(g, y)
}

fn mse<T: Real>(g: &mut Graph<T>, v: &[Var], reduction: Reduction) -> Result<Var> {
    let target = rand([2, 3, 4, 5], 5).cast::<T>();
    let weights = [1.0, 0.0, 1.0, 1.0, 0.5, 1.0].map(T::lit);
    g.mse_loss(v[0], &target, &weights, reduction)
}

fn mse_mean<T: Real>(g: &mut Graph<T>, v: &[Var]) -> Result<Var> {
    mse(g, v, Reduction::Mean)
}

fn mse_sum<T: Real>(g: &mut Graph<T>, v: &[Var]) -> Result<Var> {
    mse(g, v, Reduction::Sum)
}

macro_rules! case {
    ($name:expr, $tol:expr, $f:ident, [$($input:expr),+ $(,)?]) => {
        PrimitiveCase {
            name: $name,
            tolerance: $tol,
            inputs: vec![$($input),+],
            wide: $f::<f64>,
            narrow: $f::<f32>,
        }
    };
}

pub fn primitive_cases() -> Vec<PrimitiveCase> {
    vec![
        case!("conv2d", F64_TOLERANCE, conv, [rand([2, 3, 5, 5], 1), rand([4, 3, 3, 3], 2), rand([1, 4, 1, 1], 3)]),
        case!("deconv2d", F64_TOLERANCE, deconv, [rand([2, 3, 3, 3], 4), rand([3, 2, 4, 4], 5)]),
        case!(
            "batch_norm",
            F64_TOLERANCE,
            batch_norm,
            [rand([2, 3, 3, 3], 6), rand([1, 3, 1, 1], 7), rand([1, 3, 1, 1], 8)]
        ),
        case!(
            "layer_norm_channels",
            F64_TOLERANCE,
            layer_norm,
            [rand([2, 6, 1, 1], 9), rand([1, 6, 1, 1], 10), rand([1, 6, 1, 1], 11)]
        ),
        case!("relu", RELU_TOLERANCE, relu, [away_from_zero([2, 3, 4, 4], 12)]),
        case!("sigmoid", F64_TOLERANCE, sigmoid, [rand([2, 3, 4, 4], 13)]),
        case!("softmax_spatial", F64_TOLERANCE, softmax, [rand([2, 1, 4, 5], 14)]),
        case!("bilinear_resize_up", F64_TOLERANCE, resize_up, [rand([2, 2, 3, 4], 15)]),
        case!("bilinear_resize_down", F64_TOLERANCE, resize_down, [rand([2, 2, 6, 6], 16)]),
        case!("concat_channels", F64_TOLERANCE, concat, [rand([2, 3, 3, 4], 17), rand([2, 2, 3, 4], 18)]),
        case!("add_broadcast", F64_TOLERANCE, add_broadcast, [rand([2, 3, 4, 4], 19), rand([2, 3, 1, 1], 20)]),
        case!(
            "mul_broadcast",
            F64_TOLERANCE,
            mul_broadcast,
            [rand([2, 3, 4, 4], 21), rand([2, 1, 4, 4], 22), rand([2, 3, 1, 1], 23)]
        ),
        case!("max_pool2d", F64_TOLERANCE, max_pool, [rand([2, 2, 6, 6], 24)]),
        case!("sum_spatial", F64_TOLERANCE, sum_spatial, [rand([2, 3, 4, 4], 25)]),
        case!("mse_loss_mean", F64_TOLERANCE, mse_mean, [rand([2, 3, 4, 5], 26)]),
        case!("mse_loss_sum", F64_TOLERANCE, mse_sum, [rand([2, 3, 4, 5], 27)]),
    ]
}

pub struct BlockCase {
    pub name: &'static str,
    run: fn() -> Result<(f64, String)>,
}

impl BlockCase {
    pub fn check(&self) -> Result<GradCheckOutcome> {
        let (error, worst) = (self.run)()?;
        Ok(GradCheckOutcome {
            name: self.name.to_string(),
            error,
            tolerance: F64_TOLERANCE,
            worst,
        })
    }
}

fn res_block(kind: BlockType, c_in: usize, c_out: usize, stride: usize) -> Result<(f64, String)> {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let block = ResBlock::new(&mut store, &mut rng, "block", kind, c_in, c_out, stride)?;
    jitter_params(&mut store, 0.2, 32);
    check_block_gradients(&mut store, &[rand([2, c_in, 4, 4], 33)], |s, x| block.forward(s, x[0]))
}

fn basic_identity() -> Result<(f64, String)> {
    res_block(BlockType::Basic, 4, 4, 1)
}

fn basic_projection() -> Result<(f64, String)> {
    res_block(BlockType::Basic, 3, 6, 2)
}

fn bottleneck_projection() -> Result<(f64, String)> {
    res_block(BlockType::Bottleneck, 4, 8, 2)
}

fn stem() -> Result<(f64, String)> {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let stem = Stem::new(&mut store, &mut rng, "stem", 3)?;
    check_block_gradients(&mut store, &[rand([2, 3, 32, 32], 35)], |s, x| stem.forward(s, x[0]))
}

fn gcb() -> Result<(f64, String)> {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(36);
    let gcb = Gcb::new(&mut store, &mut rng, "gcb", 8, 4)?;
    jitter_params(&mut store, 0.3, 37);
    check_block_gradients(&mut store, &[rand([2, 8, 3, 4], 38)], |s, x| {
        Ok(gcb.forward(s, x[0])?.enhanced)
    })
}

fn decoder_plain() -> Result<(f64, String)> {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(39);
    let spec = DecoderSpec {
        out_channels: 3,
        accepts_fusion: false,
    };
    let dec = Decoder::new(&mut store, &mut rng, "dec", 4, spec, 0, DeconvGeometry::default())?;
    check_block_gradients(&mut store, &[rand([2, 4, 2, 3], 40)], |s, x| dec.forward(s, x[0], None))
}

fn decoder_fused() -> Result<(f64, String)> {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let spec = DecoderSpec {
        out_channels: 3,
        accepts_fusion: true,
    };
    let dec = Decoder::new(&mut store, &mut rng, "dec", 4, spec, 2, DeconvGeometry::default())?;
    check_block_gradients(
        &mut store,
        &[rand([2, 4, 2, 3], 42), rand([2, 2, 4, 6], 43)],
        |s, x| dec.forward(s, x[0], Some(x[1])),
    )
}

fn sa_mfcd_collect(gate: GateKind) -> Result<(f64, String)> {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let m = SaMfcd::new(&mut store, &mut rng, "sa_mfcd", [2, 3, 4], 3, gate)?;
    if gate == GateKind::Relu {
        // keep the gate away from the rectifier's kink
        let beta = store.id("sa_mfcd.sah_bn.beta").expect("registered");
        store.get_mut(beta).data_mut().iter_mut().for_each(|b| *b = 2.0);
    }
    let inputs = [
        rand([2, 2, 4, 4], 45),
        rand([2, 3, 2, 2], 46),
        rand([2, 4, 1, 1], 47),
        rand([2, 1, 4, 4], 48),
        rand([2, 1, 2, 2], 49),
        rand([2, 1, 1, 1], 50),
    ];
    check_block_gradients(&mut store, &inputs, |s, x| {
        let collected = CollectedFeatures {
            features: [x[0], x[1], x[2]],
            sahs: [x[3], x[4], x[5]],
        };
        Ok(m.collect(s, &collected)?.map)
    })
}

fn sa_mfcd_sigmoid() -> Result<(f64, String)> {
    sa_mfcd_collect(GateKind::Sigmoid)
}

fn sa_mfcd_relu() -> Result<(f64, String)> {
    sa_mfcd_collect(GateKind::Relu)
}

pub fn block_cases() -> Vec<BlockCase> {
    vec![
        BlockCase {
            name: "res_block_basic",
            run: basic_identity,
        },
        BlockCase {
            name: "res_block_basic_projection",
            run: basic_projection,
        },
        BlockCase {
            name: "res_block_bottleneck_projection",
            run: bottleneck_projection,
        },
        BlockCase { name: "stem", run: stem },
        BlockCase { name: "gcb", run: gcb },
        BlockCase {
            name: "decoder",
            run: decoder_plain,
        },
        BlockCase {
            name: "decoder_fused",
            run: decoder_fused,
        },
        BlockCase {
            name: "sa_mfcd_collect",
            run: sa_mfcd_sigmoid,
        },
        BlockCase {
            name: "sa_mfcd_collect_relu_gate",
            run: sa_mfcd_relu,
        },
    ]
}
