//! Similarity transforms between the original image and a crop, with an
//! optional horizontal flip. Pixel centres sit at integer coordinates.

use super::joints::{Frame, JointSet};
use crate::error::{shape_err, Error, Result};
use crate::tensor_core::{Shape, Tensor};

/// Affine map `p ↦ A·p + t` into an `out_width × out_height` frame. `flip`
/// records that left/right joint ids must be swapped.
#[derive(Clone, Debug, PartialEq)]
pub struct CropTransform {
    /// Rows `[a, b, tx]` and `[c, d, ty]`.
    pub matrix: [[f64; 3]; 2],
    pub flip: bool,
    pub out_width: usize,
    pub out_height: usize,
}

/// Parameters of a crop: the source box centre and width (already at the
/// target aspect ratio), a scale multiplying the person's size, a rotation in
/// degrees about the crop centre, and a horizontal flip.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CropParams {
    pub center: (f64, f64),
    pub box_width: f64,
    pub out_width: usize,
    pub out_height: usize,
    pub scale: f64,
    pub rotation_deg: f64,
    pub flip: bool,
}

const SINGULAR_DET: f64 = 1e-12;

impl CropTransform {
    pub fn identity(width: usize, height: usize) -> Self {
        Self {
            matrix: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            flip: false,
            out_width: width,
            out_height: height,
        }
    }

    /// Maps the box centre to the crop centre `((W−1)/2, (H−1)/2)`.
    pub fn from_params(p: &CropParams) -> Result<Self> {
        if !(p.box_width > 0.0) || !(p.scale > 0.0) || p.out_width == 0 || p.out_height == 0 {
            return Err(Error::Invalid(format!("degenerate crop parameters {p:?}")));
        }
        let k = p.scale * p.out_width as f64 / p.box_width;
        let (sin, cos) = p.rotation_deg.to_radians().sin_cos();
        let (cu, cv) = ((p.out_width as f64 - 1.0) / 2.0, (p.out_height as f64 - 1.0) / 2.0);
        let (cx, cy) = p.center;
        let (a, b, c, d) = (k * cos, k * sin, -k * sin, k * cos);
        let mut t = Self {
            matrix: [[a, b, cu - a * cx - b * cy], [c, d, cv - c * cx - d * cy]],
            flip: false,
            out_width: p.out_width,
            out_height: p.out_height,
        };
        if p.flip {
            t = t.then_flip();
        }
        Ok(t)
    }

    /// Composes with a horizontal mirror of the output frame, `u ↦ W − 1 − u`.
    pub fn then_flip(mut self) -> Self {
        let w1 = self.out_width as f64 - 1.0;
        let [r0, _] = &mut self.matrix;
        r0[0] = -r0[0];
        r0[1] = -r0[1];
        r0[2] = w1 - r0[2];
        self.flip = !self.flip;
        self
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.matrix;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    pub fn apply_point(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.matrix;
        (m[0][0] * x + m[0][1] * y + m[0][2], m[1][0] * x + m[1][1] * y + m[1][2])
    }

    /// The inverse map into a frame of the given size (the source image).
    pub fn inverse(&self, src_width: usize, src_height: usize) -> Result<Self> {
        let det = self.determinant();
        if det.abs() < SINGULAR_DET || !det.is_finite() {
            return Err(Error::Invalid(format!("crop transform is not invertible (det {det})")));
        }
        let m = &self.matrix;
        let (a, b, c, d) = (m[1][1] / det, -m[0][1] / det, -m[1][0] / det, m[0][0] / det);
        let (tx, ty) = (m[0][2], m[1][2]);
        Ok(Self {
            matrix: [[a, b, -(a * tx + b * ty)], [c, d, -(c * tx + d * ty)]],
            flip: self.flip,
            out_width: src_width,
            out_height: src_height,
        })
    }

    /// Maps every joint; with `flip` the left/right ids in `pairs` are swapped.
    /// The result is tagged with `frame`.
    pub fn apply(&self, joints: &JointSet, pairs: &[(usize, usize)], frame: Frame) -> Result<JointSet> {
        if self.determinant().abs() < SINGULAR_DET {
            return Err(Error::Invalid("crop transform is not invertible".into()));
        }
        let mut out = joints.clone();
        for j in &mut out.joints {
            let (u, v) = self.apply_point(j.x, j.y);
            j.x = u;
            j.y = v;
        }
        if self.flip {
            out.swap_pairs(pairs);
        }
        out.frame = frame;
        Ok(out)
    }

    /// Bilinear resampling of `image` (1, C, H, W) into the output frame;
    /// samples outside the source are zero.
    pub fn warp_image(&self, image: &Tensor<f32>) -> Result<Tensor<f32>> {
        let s = image.shape();
        if s.n != 1 {
            return shape_err("warp_image", format!("expects a single image, got {s}"));
        }
        let inv = self.inverse(s.w, s.h)?;
        let (ow, oh) = (self.out_width, self.out_height);
        let out_shape = Shape::try_new(1, s.c, oh, ow)?;
        let mut out = vec![0.0f32; out_shape.numel()];
        let src = image.data();
        for v in 0..oh {
            for u in 0..ow {
                let (x, y) = inv.apply_point(u as f64, v as f64);
                let (x0, y0) = (x.floor(), y.floor());
                let (fx, fy) = (x - x0, y - y0);
                let taps = [
                    (x0, y0, (1.0 - fx) * (1.0 - fy)),
                    (x0 + 1.0, y0, fx * (1.0 - fy)),
                    (x0, y0 + 1.0, (1.0 - fx) * fy),
                    (x0 + 1.0, y0 + 1.0, fx * fy),
                ];
                for c in 0..s.c {
                    let plane = &src[c * s.plane()..(c + 1) * s.plane()];
                    let mut acc = 0.0f64;
                    for (tx, ty, wgt) in taps {
                        if wgt == 0.0 || tx < 0.0 || ty < 0.0 || tx >= s.w as f64 || ty >= s.h as f64 {
                            continue;
                        }
                        acc += wgt * plane[ty as usize * s.w + tx as usize] as f64;
                    }
                    out[c * oh * ow + v * ow + u] = acc as f32;
                }
            }
        }
        Tensor::from_vec(out_shape, out)
    }
}
