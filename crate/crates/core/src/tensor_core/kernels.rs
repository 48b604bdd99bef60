//! Raw convolution, pooling and resampling kernels on flat NCHW buffers.
//!
//! Convolutions go through im2col + GEMM one sample at a time. Samples run in
//! parallel; any cross-sample reduction (weight and bias gradients) is summed
//! afterwards in sample order so results never depend on the thread count.

use rayon::prelude::*;

use super::tensor::Real;

/// Per-sample input and weight gradients before the batch reduction.
type SampleGrads<T> = (Option<Vec<T>>, Option<Vec<T>>);

/// Sliding-window geometry between a "big" map and the "small" map produced by
/// convolving it. For a convolution `big` is the input; for a transposed
/// convolution `big` is the output.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Window {
    pub channels: usize,
    pub big_h: usize,
    pub big_w: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub small_h: usize,
    pub small_w: usize,
}

impl Window {
    fn rows(&self) -> usize {
        self.channels * self.kernel_h * self.kernel_w
    }

    fn cols(&self) -> usize {
        self.small_h * self.small_w
    }

    /// 1×1, stride 1, no padding: the column matrix is the map itself.
    fn is_pointwise(&self) -> bool {
        self.kernel_h == 1 && self.kernel_w == 1 && self.stride == 1 && self.padding == 0
    }
}

/// Output extent of a strided window, or `None` when the window does not fit.
pub(crate) fn conv_out_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

pub(crate) fn im2col<T: Real>(g: &Window, big: &[T], cols: &mut [T]) {
    let ncols = g.cols();
    let pad = g.padding as isize;
    for c in 0..g.channels {
        let plane = &big[c * g.big_h * g.big_w..(c + 1) * g.big_h * g.big_w];
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let row = (c * g.kernel_h + ky) * g.kernel_w + kx;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.small_h {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    let seg = &mut dst[oy * g.small_w..(oy + 1) * g.small_w];
                    if iy < 0 || iy >= g.big_h as isize {
                        seg.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.big_w..(iy as usize + 1) * g.big_w];
                    for (ox, v) in seg.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - pad;
                        *v = if ix < 0 || ix >= g.big_w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-adds a column matrix back onto the big map.
pub(crate) fn col2im<T: Real>(g: &Window, cols: &[T], big: &mut [T]) {
    let ncols = g.cols();
    let pad = g.padding as isize;
    for c in 0..g.channels {
        let plane = &mut big[c * g.big_h * g.big_w..(c + 1) * g.big_h * g.big_w];
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let row = (c * g.kernel_h + ky) * g.kernel_w + kx;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.small_h {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    if iy < 0 || iy >= g.big_h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.big_w..(iy as usize + 1) * g.big_w];
                    for ox in 0..g.small_w {
                        let ix = (ox * g.stride + kx) as isize - pad;
                        if ix >= 0 && ix < g.big_w as isize {
                            dst[ix as usize] += src[oy * g.small_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `out[n] = W · im2col(x[n]) + b`, weight stored `(out_ch, in_ch·kh·kw)`.
pub(crate) fn conv_forward<T: Real>(
    g: &Window,
    batch: usize,
    out_channels: usize,
    input: &[T],
    weight: &[T],
    bias: Option<&[T]>,
    out: &mut [T],
) {
    let in_len = g.channels * g.big_h * g.big_w;
    let out_len = out_channels * g.cols();
    out.par_chunks_mut(out_len)
        .zip(input.par_chunks(in_len))
        .take(batch)
        .for_each(|(o, x)| {
            if g.is_pointwise() {
                T::gemm(out_channels, g.rows(), g.cols(), weight, false, x, false, o, false);
            } else {
                let mut cols = vec![T::zero(); g.rows() * g.cols()];
                im2col(g, x, &mut cols);
                T::gemm(out_channels, g.rows(), g.cols(), weight, false, &cols, false, o, false);
            }
            if let Some(b) = bias {
                for (oc, plane) in o.chunks_mut(g.cols()).enumerate() {
                    plane.iter_mut().for_each(|v| *v += b[oc]);
                }
            }
        });
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward<T: Real>(
    g: &Window,
    batch: usize,
    out_channels: usize,
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    need_input: bool,
    need_weight: bool,
    need_bias: bool,
) -> ConvGrads<T> {
    let in_len = g.channels * g.big_h * g.big_w;
    let out_len = out_channels * g.cols();
    let (rows, ncols) = (g.rows(), g.cols());
    let per_sample: Vec<SampleGrads<T>> = (0..batch)
        .into_par_iter()
        .map(|n| {
            let x = &input[n * in_len..(n + 1) * in_len];
            let go = &grad_out[n * out_len..(n + 1) * out_len];
            let dw = need_weight.then(|| {
                let mut dw = vec![T::zero(); out_channels * rows];
                if g.is_pointwise() {
                    T::gemm(out_channels, ncols, rows, go, false, x, true, &mut dw, false);
                } else {
                    let mut cols = vec![T::zero(); rows * ncols];
                    im2col(g, x, &mut cols);
                    T::gemm(out_channels, ncols, rows, go, false, &cols, true, &mut dw, false);
                }
                dw
            });
            let dx = need_input.then(|| {
                if g.is_pointwise() {
                    let mut dx = vec![T::zero(); in_len];
                    T::gemm(rows, out_channels, ncols, weight, true, go, false, &mut dx, false);
                    dx
                } else {
                    let mut dcols = vec![T::zero(); rows * ncols];
                    T::gemm(rows, out_channels, ncols, weight, true, go, false, &mut dcols, false);
                    let mut dx = vec![T::zero(); in_len];
                    col2im(g, &dcols, &mut dx);
                    dx
                }
            });
            (dx, dw)
        })
        .collect();

    let mut grads = ConvGrads {
        input: need_input.then(|| Vec::with_capacity(batch * in_len)),
        weight: need_weight.then(|| vec![T::zero(); out_channels * rows]),
        bias: need_bias.then(|| vec![T::zero(); out_channels]),
    };
    for (dx, dw) in per_sample {
        if let (Some(acc), Some(dx)) = (grads.input.as_mut(), dx) {
            acc.extend_from_slice(&dx);
        }
        if let (Some(acc), Some(dw)) = (grads.weight.as_mut(), dw) {
            acc.iter_mut().zip(&dw).for_each(|(a, d)| *a += *d);
        }
    }
    if let Some(db) = grads.bias.as_mut() {
        for n in 0..batch {
            for (oc, plane) in grad_out[n * out_len..(n + 1) * out_len].chunks(ncols).enumerate() {
                let s: T = plane.iter().copied().sum();
                db[oc] += s;
            }
        }
    }
    grads
}

/// Transposed convolution: `out[n] = col2im(Wᵀ · x[n])` with the weight stored
/// `(in_ch, out_ch·kh·kw)`; `g.channels` is the output channel count and the
/// big map is the output.
pub(crate) fn deconv_forward<T: Real>(
    g: &Window,
    batch: usize,
    in_channels: usize,
    input: &[T],
    weight: &[T],
    out: &mut [T],
) {
    let in_len = in_channels * g.cols();
    let out_len = g.channels * g.big_h * g.big_w;
    out.par_chunks_mut(out_len)
        .zip(input.par_chunks(in_len))
        .take(batch)
        .for_each(|(o, x)| {
            o.iter_mut().for_each(|v| *v = T::zero());
            let mut cols = vec![T::zero(); g.rows() * g.cols()];
            T::gemm(g.rows(), in_channels, g.cols(), weight, true, x, false, &mut cols, false);
            col2im(g, &cols, o);
        });
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn deconv_backward<T: Real>(
    g: &Window,
    batch: usize,
    in_channels: usize,
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    need_input: bool,
    need_weight: bool,
) -> ConvGrads<T> {
    let in_len = in_channels * g.cols();
    let out_len = g.channels * g.big_h * g.big_w;
    let (rows, ncols) = (g.rows(), g.cols());
    let per_sample: Vec<SampleGrads<T>> = (0..batch)
        .into_par_iter()
        .map(|n| {
            let x = &input[n * in_len..(n + 1) * in_len];
            let go = &grad_out[n * out_len..(n + 1) * out_len];
            let mut cols = vec![T::zero(); rows * ncols];
            im2col(g, go, &mut cols);
            let dx = need_input.then(|| {
                let mut dx = vec![T::zero(); in_len];
                T::gemm(in_channels, rows, ncols, weight, false, &cols, false, &mut dx, false);
                dx
            });
            let dw = need_weight.then(|| {
                let mut dw = vec![T::zero(); in_channels * rows];
                T::gemm(in_channels, ncols, rows, x, false, &cols, true, &mut dw, false);
                dw
            });
            (dx, dw)
        })
        .collect();

    let mut grads = ConvGrads {
        input: need_input.then(|| Vec::with_capacity(batch * in_len)),
        weight: need_weight.then(|| vec![T::zero(); in_channels * rows]),
        bias: None,
    };
    for (dx, dw) in per_sample {
        if let (Some(acc), Some(dx)) = (grads.input.as_mut(), dx) {
            acc.extend_from_slice(&dx);
        }
        if let (Some(acc), Some(dw)) = (grads.weight.as_mut(), dw) {
            acc.iter_mut().zip(&dw).for_each(|(a, d)| *a += *d);
        }
    }
    grads
}

/// Source taps for one output coordinate of a half-pixel bilinear resize.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Tap {
    pub lo: usize,
    pub hi: usize,
    pub frac: f64,
}

/// Half-pixel centre alignment with edge clamping:
/// `src = (dst + 0.5)·in/out − 0.5`, clamped to `[0, in − 1]`.
pub(crate) fn bilinear_taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            let frac = if lo == hi { 0.0 } else { src - lo as f64 };
            Tap { lo, hi, frac }
        })
        .collect()
}
