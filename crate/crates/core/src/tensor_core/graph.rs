//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every primitive appends one node holding its output and whatever it needs
//! for the backward pass. Backward walks the tape in reverse creation order.

use std::mem;

use super::kernels::{self, bilinear_taps, conv_out_extent, Window};
use super::tensor::{Real, Shape, Tensor};
use crate::error::{shape_err, Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Mul,
}

/// Per-map reduction of the heatmap loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchNormConfig {
    pub momentum: f64,
    pub eps: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        Self {
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Per-channel running mean and (unbiased) variance of a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Real> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        window: Window,
    },
    Deconv2d {
        input: Var,
        weight: Var,
        window: Window,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    LayerNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Relu {
        input: Var,
    },
    Sigmoid {
        input: Var,
    },
    SoftmaxSpatial {
        input: Var,
    },
    Resize {
        input: Var,
    },
    Concat {
        inputs: Vec<Var>,
    },
    Binary {
        a: Var,
        b: Var,
        op: BinaryOp,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    SumSpatial {
        input: Var,
    },
    SumAll {
        input: Var,
    },
    Mse {
        pred: Var,
        diff: Vec<T>,
        coeff: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Ordered record of executed primitives.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    recording: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    /// A graph that records operations for backward.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            recording: true,
        }
    }

    /// A graph that only evaluates values; nothing is saved for backward.
    pub fn no_grad() -> Self {
        Self {
            nodes: Vec::new(),
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of recorded (non-leaf) operations still holding backward state.
    pub fn recorded_ops(&self) -> usize {
        self.nodes.iter().filter(|n| !matches!(n.op, Op::Leaf)).count()
    }

    /// Drops every node together with its saved intermediates.
    pub fn clear(&mut self) {
        self.nodes = Vec::new();
    }

    pub fn leaf(&mut self, mut value: Tensor<T>, requires_grad: bool) -> Var {
        value.set_requires_grad(requires_grad && self.recording);
        let _ = value.take_grad();
        self.nodes.push(Node { value, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad()
    }

    /// Moves a node's value out, leaving an empty placeholder behind.
    pub fn take_value(&mut self, v: Var) -> Tensor<T> {
        let shape = self.shape(v);
        mem::replace(&mut self.nodes[v.0].value, Tensor::zeros(Shape::new(1, 1, 1, 1)))
            .reshape(shape)
            .expect("same shape")
    }

    fn push(&mut self, mut value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires = self.recording && inputs.iter().any(|v| self.requires_grad(*v));
        value.set_requires_grad(requires);
        let op = if requires { op } else { Op::Leaf };
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn accumulate(&mut self, v: Var, g: &[T]) {
        let t = &mut self.nodes[v.0].value;
        if !t.requires_grad() {
            return;
        }
        t.grad_or_zeros().iter_mut().zip(g).for_each(|(a, b)| *a += *b);
    }

    fn accumulate_vec(&mut self, v: Var, g: Vec<T>) {
        let t = &mut self.nodes[v.0].value;
        if !t.requires_grad() {
            return;
        }
        if t.grad().is_none() {
            t.set_grad(Some(g)).expect("gradient length matches");
        } else {
            self.accumulate(v, &g);
        }
    }

    // ---- primitives -------------------------------------------------------

    /// 2-D convolution; weight `(out_ch, in_ch, kh, kw)`, bias `(1, out_ch, 1, 1)`.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let xs = self.shape(input);
        let ws = self.shape(weight);
        if ws.c != xs.c {
            return shape_err(
                "conv2d",
                format!("weight in_ch {} (weight {ws}) != input channels {} (input {xs})", ws.c, xs.c),
            );
        }
        if stride == 0 {
            return Err(Error::Invalid("conv2d: stride must be positive".into()));
        }
        if let Some(b) = bias {
            let bs = self.shape(b);
            if bs.numel() != ws.n {
                return shape_err("conv2d", format!("bias {bs} for {} output channels", ws.n));
            }
        }
        let (Some(oh), Some(ow)) = (
            conv_out_extent(xs.h, ws.h, stride, padding),
            conv_out_extent(xs.w, ws.w, stride, padding),
        ) else {
            return shape_err(
                "conv2d",
                format!("kernel {}x{} does not fit input {xs} with padding {padding}", ws.h, ws.w),
            );
        };
        let window = Window {
            channels: xs.c,
            big_h: xs.h,
            big_w: xs.w,
            kernel_h: ws.h,
            kernel_w: ws.w,
            stride,
            padding,
            small_h: oh,
            small_w: ow,
        };
        let out_shape = Shape::new(xs.n, ws.n, oh, ow);
        let mut out = vec![T::zero(); out_shape.numel()];
        kernels::conv_forward(
            &window,
            xs.n,
            ws.n,
            self.value(input).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
            &mut out,
        );
        let value = Tensor::from_vec(out_shape, out)?;
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                window,
            },
            &inputs,
        ))
    }

    /// Transposed convolution; weight `(in_ch, out_ch, kh, kw)`. Output extent
    /// per axis is `(in − 1)·stride − 2·padding + k + output_padding`.
    pub fn deconv2d(
        &mut self,
        input: Var,
        weight: Var,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Result<Var> {
        let xs = self.shape(input);
        let ws = self.shape(weight);
        if ws.n != xs.c {
            return shape_err(
                "deconv2d",
                format!("weight in_ch {} (weight {ws}) != input channels {} (input {xs})", ws.n, xs.c),
            );
        }
        if stride == 0 || output_padding >= stride {
            return Err(Error::Invalid(format!(
                "deconv2d: need stride > output_padding, got stride {stride}, output_padding {output_padding}"
            )));
        }
        let extent = |i: usize, k: usize| -> Option<usize> {
            ((i - 1) * stride + k + output_padding).checked_sub(2 * padding).filter(|&e| e > 0)
        };
        let (Some(oh), Some(ow)) = (extent(xs.h, ws.h), extent(xs.w, ws.w)) else {
            return shape_err("deconv2d", format!("padding {padding} too large for input {xs}"));
        };
        let window = Window {
            channels: ws.c,
            big_h: oh,
            big_w: ow,
            kernel_h: ws.h,
            kernel_w: ws.w,
            stride,
            padding,
            small_h: xs.h,
            small_w: xs.w,
        };
        let out_shape = Shape::new(xs.n, ws.c, oh, ow);
        let mut out = vec![T::zero(); out_shape.numel()];
        kernels::deconv_forward(
            &window,
            xs.n,
            xs.c,
            self.value(input).data(),
            self.value(weight).data(),
            &mut out,
        );
        let value = Tensor::from_vec(out_shape, out)?;
        Ok(self.push(
            value,
            Op::Deconv2d {
                input,
                weight,
                window,
            },
            &[input, weight],
        ))
    }

    /// Per-channel batch normalisation. Train mode normalises with batch
    /// statistics and updates `stats`; eval mode uses `stats`.
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats<T>,
        train: bool,
        config: BatchNormConfig,
    ) -> Result<Var> {
        let s = self.shape(input);
        for (name, p) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(p).numel() != s.c {
                return shape_err(
                    "batch_norm",
                    format!("{name} {} for {} channels", self.shape(p), s.c),
                );
            }
        }
        if stats.channels() != s.c {
            return shape_err("batch_norm", format!("running stats for {} channels, input {s}", stats.channels()));
        }
        let m = s.n * s.plane();
        if train && m == 1 {
            return Err(Error::Invalid(format!(
                "batch_norm: batch·H·W == 1 for input {s}; variance undefined in train mode"
            )));
        }
        let x = self.value(input).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let eps = T::lit(config.eps);
        let mut mean = vec![T::zero(); s.c];
        let mut var = vec![T::zero(); s.c];
        if train {
            let inv_m = T::one() / T::lit(m as f64);
            for c in 0..s.c {
                let mut acc = T::zero();
                for n in 0..s.n {
                    let start = s.index(n, c, 0, 0);
                    acc += x[start..start + s.plane()].iter().copied().sum::<T>();
                }
                mean[c] = acc * inv_m;
                let mut acc = T::zero();
                for n in 0..s.n {
                    let start = s.index(n, c, 0, 0);
                    for &v in &x[start..start + s.plane()] {
                        let d = v - mean[c];
                        acc += d * d;
                    }
                }
                var[c] = acc * inv_m;
            }
            let mom = T::lit(config.momentum);
            let unbias = T::lit(m as f64 / (m as f64 - 1.0));
            for c in 0..s.c {
                stats.mean[c] = (T::one() - mom) * stats.mean[c] + mom * mean[c];
                stats.var[c] = (T::one() - mom) * stats.var[c] + mom * var[c] * unbias;
            }
        } else {
            mean.copy_from_slice(&stats.mean);
            var.copy_from_slice(&stats.var);
        }
        let inv_std: Vec<T> = var.iter().map(|v| T::one() / (*v + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); s.numel()];
        let mut out = vec![T::zero(); s.numel()];
        for n in 0..s.n {
            for c in 0..s.c {
                let start = s.index(n, c, 0, 0);
                for i in start..start + s.plane() {
                    let h = (x[i] - mean[c]) * inv_std[c];
                    xhat[i] = h;
                    out[i] = g[c] * h + b[c];
                }
            }
        }
        let value = Tensor::from_vec(s, out)?;
        Ok(self.push(
            value,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            &[input, gamma, beta],
        ))
    }

    /// Normalises across channels per sample; input spatial extents must be 1×1.
    pub fn layer_norm_channels(&mut self, input: Var, gamma: Var, beta: Var) -> Result<Var> {
        let s = self.shape(input);
        if s.plane() != 1 {
            return shape_err("layer_norm_channels", format!("expects 1x1 spatial extents, got {s}"));
        }
        for (name, p) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(p).numel() != s.c {
                return shape_err(
                    "layer_norm_channels",
                    format!("{name} {} for {} channels", self.shape(p), s.c),
                );
            }
        }
        let x = self.value(input).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let inv_c = T::one() / T::lit(s.c as f64);
        let mut xhat = vec![T::zero(); s.numel()];
        let mut out = vec![T::zero(); s.numel()];
        let mut inv_std = vec![T::zero(); s.n];
        for n in 0..s.n {
            let row = &x[n * s.c..(n + 1) * s.c];
            let mean = row.iter().copied().sum::<T>() * inv_c;
            let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() * inv_c;
            let is = T::one() / (var + T::lit(LAYER_NORM_EPS)).sqrt();
            inv_std[n] = is;
            for c in 0..s.c {
                let h = (row[c] - mean) * is;
                xhat[n * s.c + c] = h;
                out[n * s.c + c] = g[c] * h + b[c];
            }
        }
        let value = Tensor::from_vec(s, out)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[input, gamma, beta],
        ))
    }

    /// `max(0, x)`; the subgradient at exactly 0 is 0.
    pub fn relu(&mut self, input: Var) -> Var {
        let t = self.value(input);
        let data = t.data().iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
        let value = Tensor::from_vec(t.shape(), data).expect("same shape");
        self.push(value, Op::Relu { input }, &[input])
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let t = self.value(input);
        let data = t
            .data()
            .iter()
            .map(|&v| T::one() / (T::one() + (-v).exp()))
            .collect();
        let value = Tensor::from_vec(t.shape(), data).expect("same shape");
        self.push(value, Op::Sigmoid { input }, &[input])
    }

    /// Softmax over all H·W positions of each (sample, channel) plane,
    /// stabilised by max subtraction.
    pub fn softmax_spatial(&mut self, input: Var) -> Var {
        let t = self.value(input);
        let s = t.shape();
        let mut out = t.data().to_vec();
        for plane in out.chunks_mut(s.plane()) {
            let max = plane.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for v in plane.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            plane.iter_mut().for_each(|v| *v /= total);
        }
        let value = Tensor::from_vec(s, out).expect("same shape");
        self.push(value, Op::SoftmaxSpatial { input }, &[input])
    }

    /// Bilinear resampling with half-pixel centre alignment and edge clamping.
    /// Equal extents copy the input unchanged.
    pub fn bilinear_resize(&mut self, input: Var, out_h: usize, out_w: usize) -> Result<Var> {
        if out_h == 0 || out_w == 0 {
            return Err(Error::Invalid("bilinear_resize: output extents must be positive".into()));
        }
        let t = self.value(input);
        let s = t.shape();
        let out_shape = Shape::new(s.n, s.c, out_h, out_w);
        let out = if (out_h, out_w) == (s.h, s.w) {
            t.data().to_vec()
        } else {
            let ty = bilinear_taps(s.h, out_h);
            let tx = bilinear_taps(s.w, out_w);
            let mut out = vec![T::zero(); out_shape.numel()];
            for (src, dst) in t.data().chunks(s.plane()).zip(out.chunks_mut(out_h * out_w)) {
                for (oy, a) in ty.iter().enumerate() {
                    let fy = T::lit(a.frac);
                    let r0 = &src[a.lo * s.w..(a.lo + 1) * s.w];
                    let r1 = &src[a.hi * s.w..(a.hi + 1) * s.w];
                    for (ox, b) in tx.iter().enumerate() {
                        let fx = T::lit(b.frac);
                        let top = r0[b.lo] * (T::one() - fx) + r0[b.hi] * fx;
                        let bot = r1[b.lo] * (T::one() - fx) + r1[b.hi] * fx;
                        dst[oy * out_w + ox] = top * (T::one() - fy) + bot * fy;
                    }
                }
            }
            out
        };
        let value = Tensor::from_vec(out_shape, out)?;
        Ok(self.push(value, Op::Resize { input }, &[input]))
    }

    /// Concatenates along the channel axis, preserving order.
    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        let Some(&first) = inputs.first() else {
            return Err(Error::Invalid("concat_channels: no inputs".into()));
        };
        let s0 = self.shape(first);
        let mut channels = 0;
        for &v in inputs {
            let s = self.shape(v);
            if (s.n, s.h, s.w) != (s0.n, s0.h, s0.w) {
                return shape_err(
                    "concat_channels",
                    format!("input {s} does not share batch/spatial extents with {s0}"),
                );
            }
            channels += s.c;
        }
        let out_shape = Shape::new(s0.n, channels, s0.h, s0.w);
        let mut out = Vec::with_capacity(out_shape.numel());
        for n in 0..s0.n {
            for &v in inputs {
                let t = self.value(v);
                let len = t.shape().sample();
                out.extend_from_slice(&t.data()[n * len..(n + 1) * len]);
            }
        }
        let value = Tensor::from_vec(out_shape, out)?;
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
            },
            inputs,
        ))
    }

    /// Broadcasting elementwise add or multiply. On every axis the extents
    /// must match or one of them must be 1.
    pub fn elementwise(&mut self, a: Var, b: Var, op: BinaryOp) -> Result<Var> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        let out_shape = broadcast_shape(sa, sb)?;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let f = |x: T, y: T| match op {
            BinaryOp::Add => x + y,
            BinaryOp::Mul => x * y,
        };
        let out: Vec<T> = if sa == sb {
            da.iter().zip(db).map(|(x, y)| f(*x, *y)).collect()
        } else {
            let ia = broadcast_strides(sa);
            let ib = broadcast_strides(sb);
            let mut out = Vec::with_capacity(out_shape.numel());
            for_each_index(out_shape, |idx| {
                out.push(f(da[offset(&ia, idx)], db[offset(&ib, idx)]));
            });
            out
        };
        let value = Tensor::from_vec(out_shape, out)?;
        Ok(self.push(value, Op::Binary { a, b, op }, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, BinaryOp::Add)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, BinaryOp::Mul)
    }

    /// Max pooling with implicit `-inf` padding. Ties resolve to the first
    /// position in row-major window order.
    pub fn max_pool2d(&mut self, input: Var, kernel: usize, stride: usize, padding: usize) -> Result<Var> {
        let s = self.shape(input);
        let (Some(oh), Some(ow)) = (
            conv_out_extent(s.h, kernel, stride, padding),
            conv_out_extent(s.w, kernel, stride, padding),
        ) else {
            return shape_err("max_pool2d", format!("kernel {kernel} does not fit input {s}"));
        };
        let out_shape = Shape::new(s.n, s.c, oh, ow);
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(out_shape.numel());
        let mut argmax = Vec::with_capacity(out_shape.numel());
        for p in 0..s.n * s.c {
            let base = p * s.plane();
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = T::neg_infinity();
                    let mut best_i = usize::MAX;
                    for ky in 0..kernel {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= s.h as isize {
                            continue;
                        }
                        for kx in 0..kernel {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= s.w as isize {
                                continue;
                            }
                            let i = base + iy as usize * s.w + ix as usize;
                            if best_i == usize::MAX || x[i] > best {
                                best = x[i];
                                best_i = i;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_i);
                }
            }
        }
        let value = Tensor::from_vec(out_shape, out)?;
        Ok(self.push(value, Op::MaxPool { input, argmax }, &[input]))
    }

    /// Sums each plane over all spatial positions: `(N,C,H,W) → (N,C,1,1)`.
    pub fn sum_spatial(&mut self, input: Var) -> Var {
        let t = self.value(input);
        let s = t.shape();
        let out: Vec<T> = t.data().chunks(s.plane()).map(|p| p.iter().copied().sum()).collect();
        let value = Tensor::from_vec(Shape::new(s.n, s.c, 1, 1), out).expect("one value per plane");
        self.push(value, Op::SumSpatial { input }, &[input])
    }

    /// Sum of all elements as a `(1,1,1,1)` tensor.
    pub fn sum_all(&mut self, input: Var) -> Var {
        let total: T = self.value(input).data().iter().copied().sum();
        let value = Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![total]).expect("scalar");
        self.push(value, Op::SumAll { input }, &[input])
    }

    /// Weighted heatmap loss
    /// `1/(N·K) · Σ_{n,k} w_{nk} · r(‖pred_{nk} − target_{nk}‖²)`
    /// where `r` divides by H·W for [`Reduction::Mean`].
    pub fn mse_loss(
        &mut self,
        pred: Var,
        target: &Tensor<T>,
        weights: &[T],
        reduction: Reduction,
    ) -> Result<Var> {
        let s = self.shape(pred);
        if target.shape() != s {
            return shape_err("mse_loss", format!("prediction {s} vs target {}", target.shape()));
        }
        if weights.len() != s.n * s.c {
            return shape_err(
                "mse_loss",
                format!("{} weights for {} maps", weights.len(), s.n * s.c),
            );
        }
        let per_map = match reduction {
            Reduction::Mean => 1.0 / s.plane() as f64,
            Reduction::Sum => 1.0,
        };
        let scale = T::lit(per_map / (s.n * s.c) as f64);
        let coeff: Vec<T> = weights.iter().map(|w| *w * scale).collect();
        let p = self.value(pred).data();
        let diff: Vec<T> = p.iter().zip(target.data()).map(|(a, b)| *a - *b).collect();
        let mut total = T::zero();
        for (map, c) in diff.chunks(s.plane()).zip(&coeff) {
            if *c != T::zero() {
                total += *c * map.iter().map(|d| *d * *d).sum::<T>();
            }
        }
        let value = Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![total])?;
        Ok(self.push(value, Op::Mse { pred, diff, coeff }, &[pred]))
    }

    // ---- backward ---------------------------------------------------------

    /// Back-propagates from a single-element `loss`. Returns the number of
    /// recorded operations visited.
    pub fn backward(&mut self, loss: Var) -> Result<usize> {
        if !self.recording {
            return Err(Error::Invalid("backward on a graph that records no operations".into()));
        }
        if self.shape(loss).numel() != 1 {
            return shape_err("backward", format!("loss must be a single element, got {}", self.shape(loss)));
        }
        if !self.requires_grad(loss) {
            return Ok(0);
        }
        self.nodes[loss.0].value.set_grad(Some(vec![T::one()]))?;
        let mut visited = 0;
        for i in (0..=loss.0).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(grad) = self.nodes[i].value.take_grad() else {
                continue;
            };
            let op = mem::replace(&mut self.nodes[i].op, Op::Leaf);
            self.backward_op(i, &op, &grad);
            self.nodes[i].op = op;
            self.nodes[i].value.set_grad(Some(grad))?;
            visited += 1;
        }
        Ok(visited)
    }

    fn backward_op(&mut self, node: usize, op: &Op<T>, g: &[T]) {
        let out_shape = self.nodes[node].value.shape();
        match op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                window,
            } => {
                let grads = kernels::conv_backward(
                    window,
                    out_shape.n,
                    out_shape.c,
                    self.value(*input).data(),
                    self.value(*weight).data(),
                    g,
                    self.requires_grad(*input),
                    self.requires_grad(*weight),
                    bias.is_some_and(|b| self.requires_grad(b)),
                );
                if let Some(d) = grads.input {
                    self.accumulate_vec(*input, d);
                }
                if let Some(d) = grads.weight {
                    self.accumulate_vec(*weight, d);
                }
                if let (Some(b), Some(d)) = (bias, grads.bias) {
                    self.accumulate_vec(*b, d);
                }
            }
            Op::Deconv2d {
                input,
                weight,
                window,
            } => {
                let xs = self.shape(*input);
                let grads = kernels::deconv_backward(
                    window,
                    xs.n,
                    xs.c,
                    self.value(*input).data(),
                    self.value(*weight).data(),
                    g,
                    self.requires_grad(*input),
                    self.requires_grad(*weight),
                );
                if let Some(d) = grads.input {
                    self.accumulate_vec(*input, d);
                }
                if let Some(d) = grads.weight {
                    self.accumulate_vec(*weight, d);
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let s = out_shape;
                let m = T::lit((s.n * s.plane()) as f64);
                let gm = self.value(*gamma).data().to_vec();
                let mut dgamma = vec![T::zero(); s.c];
                let mut dbeta = vec![T::zero(); s.c];
                for n in 0..s.n {
                    for c in 0..s.c {
                        let start = s.index(n, c, 0, 0);
                        for i in start..start + s.plane() {
                            dgamma[c] += g[i] * xhat[i];
                            dbeta[c] += g[i];
                        }
                    }
                }
                if self.requires_grad(*input) {
                    let mut dx = vec![T::zero(); s.numel()];
                    for n in 0..s.n {
                        for c in 0..s.c {
                            let start = s.index(n, c, 0, 0);
                            for i in start..start + s.plane() {
                                dx[i] = if *train {
                                    gm[c] * inv_std[c] * (m * g[i] - dbeta[c] - xhat[i] * dgamma[c]) / m
                                } else {
                                    gm[c] * inv_std[c] * g[i]
                                };
                            }
                        }
                    }
                    self.accumulate_vec(*input, dx);
                }
                self.accumulate_vec(*gamma, dgamma);
                self.accumulate_vec(*beta, dbeta);
            }
            Op::LayerNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let s = out_shape;
                let c_len = T::lit(s.c as f64);
                let gm = self.value(*gamma).data().to_vec();
                let mut dgamma = vec![T::zero(); s.c];
                let mut dbeta = vec![T::zero(); s.c];
                let mut dx = vec![T::zero(); s.numel()];
                for (n, row_inv_std) in inv_std.iter().enumerate().take(s.n) {
                    let row = n * s.c..(n + 1) * s.c;
                    let mut sum_dh = T::zero();
                    let mut sum_dh_h = T::zero();
                    for (c, i) in row.clone().enumerate() {
                        dgamma[c] += g[i] * xhat[i];
                        dbeta[c] += g[i];
                        let dh = g[i] * gm[c];
                        sum_dh += dh;
                        sum_dh_h += dh * xhat[i];
                    }
                    for (c, i) in row.enumerate() {
                        let dh = g[i] * gm[c];
                        dx[i] = *row_inv_std * (c_len * dh - sum_dh - xhat[i] * sum_dh_h) / c_len;
                    }
                }
                self.accumulate_vec(*input, dx);
                self.accumulate_vec(*gamma, dgamma);
                self.accumulate_vec(*beta, dbeta);
            }
            Op::Relu { input } => {
                let x = self.value(*input).data();
                let dx = x
                    .iter()
                    .zip(g)
                    .map(|(v, d)| if *v > T::zero() { *d } else { T::zero() })
                    .collect();
                self.accumulate_vec(*input, dx);
            }
            Op::Sigmoid { input } => {
                let y = self.nodes[node].value.data();
                let dx = y.iter().zip(g).map(|(y, d)| *d * *y * (T::one() - *y)).collect();
                self.accumulate_vec(*input, dx);
            }
            Op::SoftmaxSpatial { input } => {
                let y = self.nodes[node].value.data();
                let mut dx = vec![T::zero(); y.len()];
                for ((yp, gp), dp) in y
                    .chunks(out_shape.plane())
                    .zip(g.chunks(out_shape.plane()))
                    .zip(dx.chunks_mut(out_shape.plane()))
                {
                    let dot: T = yp.iter().zip(gp).map(|(a, b)| *a * *b).sum();
                    for ((d, yv), gv) in dp.iter_mut().zip(yp).zip(gp) {
                        *d = *yv * (*gv - dot);
                    }
                }
                self.accumulate_vec(*input, dx);
            }
            Op::Resize { input } => {
                let s = self.shape(*input);
                let (oh, ow) = (out_shape.h, out_shape.w);
                let dx = if (oh, ow) == (s.h, s.w) {
                    g.to_vec()
                } else {
                    let ty = bilinear_taps(s.h, oh);
                    let tx = bilinear_taps(s.w, ow);
                    let mut dx = vec![T::zero(); s.numel()];
                    for (gp, dp) in g.chunks(oh * ow).zip(dx.chunks_mut(s.plane())) {
                        for (oy, a) in ty.iter().enumerate() {
                            let fy = T::lit(a.frac);
                            for (ox, b) in tx.iter().enumerate() {
                                let fx = T::lit(b.frac);
                                let d = gp[oy * ow + ox];
                                dp[a.lo * s.w + b.lo] += d * (T::one() - fy) * (T::one() - fx);
                                dp[a.lo * s.w + b.hi] += d * (T::one() - fy) * fx;
                                dp[a.hi * s.w + b.lo] += d * fy * (T::one() - fx);
                                dp[a.hi * s.w + b.hi] += d * fy * fx;
                            }
                        }
                    }
                    dx
                };
                self.accumulate_vec(*input, dx);
            }
            Op::Concat { inputs } => {
                let mut offset = 0;
                let sample = out_shape.sample();
                for &v in inputs {
                    let s = self.shape(v);
                    let len = s.sample();
                    if self.requires_grad(v) {
                        let mut dx = Vec::with_capacity(s.numel());
                        for n in 0..s.n {
                            let start = n * sample + offset;
                            dx.extend_from_slice(&g[start..start + len]);
                        }
                        self.accumulate_vec(v, dx);
                    }
                    offset += len;
                }
            }
            Op::Binary { a, b, op } => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (need_a, need_b) = (self.requires_grad(*a), self.requires_grad(*b));
                let (da, db) = (self.value(*a).data(), self.value(*b).data());
                let mut ga = need_a.then(|| vec![T::zero(); sa.numel()]);
                let mut gb = need_b.then(|| vec![T::zero(); sb.numel()]);
                let ia = broadcast_strides(sa);
                let ib = broadcast_strides(sb);
                let mut k = 0;
                for_each_index(out_shape, |idx| {
                    let (oa, ob) = (offset(&ia, idx), offset(&ib, idx));
                    let d = g[k];
                    k += 1;
                    let (fa, fb) = match op {
                        BinaryOp::Add => (d, d),
                        BinaryOp::Mul => (d * db[ob], d * da[oa]),
                    };
                    if let Some(ga) = ga.as_mut() {
                        ga[oa] += fa;
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb[ob] += fb;
                    }
                });
                if let Some(ga) = ga {
                    self.accumulate_vec(*a, ga);
                }
                if let Some(gb) = gb {
                    self.accumulate_vec(*b, gb);
                }
            }
            Op::MaxPool { input, argmax } => {
                let mut dx = vec![T::zero(); self.shape(*input).numel()];
                for (i, d) in argmax.iter().zip(g) {
                    dx[*i] += *d;
                }
                self.accumulate_vec(*input, dx);
            }
            Op::SumSpatial { input } => {
                let s = self.shape(*input);
                let mut dx = Vec::with_capacity(s.numel());
                for d in g {
                    dx.extend(std::iter::repeat_n(*d, s.plane()));
                }
                self.accumulate_vec(*input, dx);
            }
            Op::SumAll { input } => {
                let n = self.shape(*input).numel();
                self.accumulate_vec(*input, vec![g[0]; n]);
            }
            Op::Mse { pred, diff, coeff } => {
                let plane = self.shape(*pred).plane();
                let two = T::lit(2.0);
                let mut dx = vec![T::zero(); diff.len()];
                for ((dm, d), c) in dx.chunks_mut(plane).zip(diff.chunks(plane)).zip(coeff) {
                    for (o, v) in dm.iter_mut().zip(d) {
                        *o = two * *c * *v * g[0];
                    }
                }
                self.accumulate_vec(*pred, dx);
            }
        }
    }
}

fn broadcast_shape(a: Shape, b: Shape) -> Result<Shape> {
    let mut out = [0; 4];
    for (i, (x, y)) in a.dims().into_iter().zip(b.dims()).enumerate() {
        out[i] = if x == y || y == 1 {
            x
        } else if x == 1 {
            y
        } else {
            return shape_err("elementwise", format!("cannot broadcast {a} with {b} (axis {i}: {x} vs {y})"));
        };
    }
    Ok(Shape::new(out[0], out[1], out[2], out[3]))
}

fn broadcast_strides(s: Shape) -> [usize; 4] {
    let dims = s.dims();
    let full = [s.sample(), s.plane(), s.w, 1];
    let mut out = [0; 4];
    for i in 0..4 {
        out[i] = if dims[i] == 1 { 0 } else { full[i] };
    }
    out
}

#[inline]
fn offset(strides: &[usize; 4], idx: [usize; 4]) -> usize {
    strides[0] * idx[0] + strides[1] * idx[1] + strides[2] * idx[2] + strides[3] * idx[3]
}

fn for_each_index(s: Shape, mut f: impl FnMut([usize; 4])) {
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..s.h {
                for x in 0..s.w {
                    f([n, c, y, x]);
                }
            }
        }
    }
}
