//! Horizontal-flip test-time averaging.

use crate::error::{shape_err, Result};
use crate::tensor_core::Tensor;

/// Mirrors every plane left-right.
pub fn mirror_horizontal(t: &Tensor<f32>) -> Tensor<f32> {
    let s = t.shape();
    let mut out = t.data().to_vec();
    for row in out.chunks_mut(s.w) {
        row.reverse();
    }
    Tensor::from_vec(s, out).expect("same shape")
}

/// Mirrors heatmaps of a flipped input back, swaps paired joint channels, and
/// shifts every map `shift` cells to the right (the column left uncovered
/// keeps its value).
pub fn unflip_heatmaps(maps: &Tensor<f32>, pairs: &[(usize, usize)], shift: usize) -> Result<Tensor<f32>> {
    let s = maps.shape();
    if let Some(&(a, b)) = pairs.iter().find(|(a, b)| *a >= s.c || *b >= s.c) {
        return shape_err("unflip_heatmaps", format!("joint pair ({a}, {b}) outside {} channels", s.c));
    }
    let mirrored = mirror_horizontal(maps);
    let mut out = mirrored.data().to_vec();
    let plane = s.plane();
    for n in 0..s.n {
        for &(a, b) in pairs {
            let (pa, pb) = ((n * s.c + a) * plane, (n * s.c + b) * plane);
            for i in 0..plane {
                out.swap(pa + i, pb + i);
            }
        }
    }
    if shift > 0 {
        for row in out.chunks_mut(s.w) {
            for x in (shift..s.w).rev() {
                row[x] = row[x - shift];
            }
        }
    }
    Tensor::from_vec(s, out)
}

/// `(forward(x) + unflip(forward(mirror(x)))) / 2`.
pub fn flip_average<F>(mut forward: F, images: &Tensor<f32>, pairs: &[(usize, usize)], shift: usize) -> Result<Tensor<f32>>
where
    F: FnMut(&Tensor<f32>) -> Result<Tensor<f32>>,
{
    let plain = forward(images)?;
    let flipped = forward(&mirror_horizontal(images))?;
    let back = unflip_heatmaps(&flipped, pairs, shift)?;
    if back.shape() != plain.shape() {
        return shape_err("flip_average", format!("{} vs {}", plain.shape(), back.shape()));
    }
    let data = plain.data().iter().zip(back.data()).map(|(a, b)| 0.5 * (a + b)).collect();
    Tensor::from_vec(plain.shape(), data)
}
