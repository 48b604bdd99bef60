use std::fmt::{self, Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;

use crate::error::{shape_err, Result};

/// Scalar element of the tensor engine. Implemented for `f32` (training) and
/// `f64` (gradient checks).
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    /// Short type name, used in diagnostics.
    const NAME: &'static str;

    /// Converts an `f64` literal.
    fn lit(x: f64) -> Self;

    fn as_f64(self) -> f64;

    /// `c = a·b (+ c when accumulate)` for row-major `a: m×k`, `b: k×n`,
    /// `c: m×n`. `trans_a`/`trans_b` mean the operand is stored transposed.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        trans_a: bool,
        b: &[Self],
        trans_b: bool,
        c: &mut [Self],
        accumulate: bool,
    );
}

fn gemm_strides(m: usize, k: usize, n: usize, trans_a: bool, trans_b: bool) -> [isize; 6] {
    let (rsa, csa) = if trans_a { (1, m) } else { (k, 1) };
    let (rsb, csb) = if trans_b { (1, k) } else { (n, 1) };
    [
        rsa as isize,
        csa as isize,
        rsb as isize,
        csb as isize,
        n as isize,
        1,
    ]
}

macro_rules! impl_real {
    ($t:ty, $name:literal, $gemm:path) => {
        impl Real for $t {
            const NAME: &'static str = $name;

            #[inline]
            fn lit(x: f64) -> Self {
                x as $t
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                trans_a: bool,
                b: &[Self],
                trans_b: bool,
                c: &mut [Self],
                accumulate: bool,
            ) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
                if m == 0 || n == 0 {
                    return;
                }
                let beta = if accumulate { 1.0 } else { 0.0 };
                if k == 0 {
                    if !accumulate {
                        c[..m * n].iter_mut().for_each(|v| *v = 0.0);
                    }
                    return;
                }
                let [rsa, csa, rsb, csb, rsc, csc] = gemm_strides(m, k, n, trans_a, trans_b);
                // SAFETY: the length assertion above covers every index reachable
                // through the row/column strides computed for these extents.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    );
                }
            }
        }
    };
}

impl_real!(f32, "f32", matrixmultiply::sgemm);
impl_real!(f64, "f64", matrixmultiply::dgemm);

/// Extents of a 4-D tensor in (batch, channel, height, width) order.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    /// Panics when any extent is zero; use [`Shape::try_new`] for untrusted input.
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self::try_new(n, c, h, w).expect("tensor extents must be positive")
    }

    pub fn try_new(n: usize, c: usize, h: usize, w: usize) -> Result<Self> {
        if n == 0 || c == 0 || h == 0 || w == 0 {
            return shape_err("shape", format!("extents must be >= 1, got {n}x{c}x{h}x{w}"));
        }
        Ok(Self { n, c, h, w })
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Elements in one spatial plane.
    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Elements in one sample.
    pub fn sample(&self) -> usize {
        self.c * self.h * self.w
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }
}

impl Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

impl Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// Dense 4-D array with an optional gradient plane of identical shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
}

impl<T: Real> Tensor<T> {
    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.numel() {
            return shape_err(
                "tensor",
                format!("{} values for shape {shape}", data.len()),
            );
        }
        Ok(Self {
            shape,
            data,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Self {
            shape,
            data: vec![value; shape.numel()],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Self {
            shape,
            data,
            grad: None,
            requires_grad: false,
        }
    }

    /// Uniform values in `[lo, hi)`.
    pub fn uniform<R: Rng + ?Sized>(shape: Shape, lo: f64, hi: f64, rng: &mut R) -> Self {
        let data = (0..shape.numel())
            .map(|_| T::lit(rng.gen_range(lo..hi)))
            .collect();
        Self {
            shape,
            data,
            grad: None,
            requires_grad: false,
        }
    }

    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, requires_grad: bool) {
        self.requires_grad = requires_grad;
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [T]> {
        self.grad.as_deref_mut()
    }

    /// Gradient plane, allocated as zeros on first access.
    pub fn grad_or_zeros(&mut self) -> &mut [T] {
        let len = self.data.len();
        self.grad.get_or_insert_with(|| vec![T::zero(); len])
    }

    pub fn set_grad(&mut self, grad: Option<Vec<T>>) -> Result<()> {
        if let Some(g) = &grad {
            if g.len() != self.data.len() {
                return shape_err("set_grad", format!("{} values for shape {}", g.len(), self.shape));
            }
        }
        self.grad = grad;
        Ok(())
    }

    pub(crate) fn take_grad(&mut self) -> Option<Vec<T>> {
        self.grad.take()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.shape.index(n, c, y, x)]
    }

    #[inline]
    pub fn at_mut(&mut self, n: usize, c: usize, y: usize, x: usize) -> &mut T {
        let i = self.shape.index(n, c, y, x);
        &mut self.data[i]
    }

    /// Reinterprets the values under a new shape with the same element count.
    pub fn reshape(mut self, shape: Shape) -> Result<Self> {
        if shape.numel() != self.shape.numel() {
            return shape_err("reshape", format!("{} to {shape}", self.shape));
        }
        self.shape = shape;
        self.grad = None;
        Ok(self)
    }

    /// One sample as a batch-1 tensor.
    pub fn sample(&self, n: usize) -> Self {
        let s = self.shape;
        let len = s.sample();
        Self {
            shape: Shape::new(1, s.c, s.h, s.w),
            data: self.data[n * len..(n + 1) * len].to_vec(),
            grad: None,
            requires_grad: false,
        }
    }

    /// Stacks batch-1 (or larger) tensors with equal per-sample extents.
    pub fn stack(parts: &[Tensor<T>]) -> Result<Self> {
        let Some(first) = parts.first() else {
            return shape_err("stack", "no tensors");
        };
        let s0 = first.shape;
        let mut n = 0;
        let mut data = Vec::new();
        for p in parts {
            let s = p.shape;
            if (s.c, s.h, s.w) != (s0.c, s0.h, s0.w) {
                return shape_err("stack", format!("{s} vs {s0}"));
            }
            n += s.n;
            data.extend_from_slice(&p.data);
        }
        Self::from_vec(Shape::new(n, s0.c, s0.h, s0.w), data)
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
            grad: self
                .grad
                .as_ref()
                .map(|g| g.iter().map(|v| U::lit(v.as_f64())).collect()),
            requires_grad: self.requires_grad,
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_extent_rejected() {
        assert!(Shape::try_new(1, 0, 2, 2).is_err());
        assert!(Tensor::<f32>::from_vec(Shape::new(1, 1, 2, 2), vec![0.0; 3]).is_err());
    }

    #[test]
    fn gemm_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [5.0f64, 6.0, 7.0, 8.0];
        let mut c = [0.0f64; 4];
        f64::gemm(2, 2, 2, &a, false, &b, false, &mut c, false);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        f64::gemm(2, 2, 2, &a, true, &b, false, &mut c, false);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        f64::gemm(2, 2, 2, &a, false, &b, true, &mut c, true);
        assert_eq!(c, [26.0 + 17.0, 30.0 + 23.0, 38.0 + 39.0, 44.0 + 53.0]);
    }

    #[test]
    fn stack_and_sample_agree() {
        let t = Tensor::<f32>::from_fn(Shape::new(3, 2, 2, 2), |n, c, y, x| (n * 8 + c * 4 + y * 2 + x) as f32);
        let parts: Vec<_> = (0..3).map(|n| t.sample(n)).collect();
        assert_eq!(Tensor::stack(&parts).unwrap(), t);
    }
}
