//! Conversion between tensors and 8-bit image files, and pixel normalisation.

use std::path::Path;

use std::fs::File;
use std::io::BufWriter;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::tensor_core::{Shape, Tensor};

/// Writes a (1, 3, H, W) tensor with values in [0, 1] as a binary pixmap.
pub fn save_ppm(path: &Path, image: &Tensor<f32>) -> Result<()> {
    let s = image.shape();
    if s.n != 1 || s.c != 3 {
        return shape_err("save_ppm", format!("expects (1,3,H,W), got {s}"));
    }
    let mut out = RgbImage::new(s.w as u32, s.h as u32);
    for (x, y, px) in out.enumerate_pixels_mut() {
        for c in 0..3 {
            let v = image.at(0, c, y as usize, x as usize);
            px.0[c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    let file = BufWriter::new(File::create(path)?);
    PnmEncoder::new(file)
        .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
        .write_image(out.as_raw(), out.width(), out.height(), ExtendedColorType::Rgb8)?;
    Ok(())
}

/// Reads any supported image file as a (1, 3, H, W) tensor in [0, 1].
pub fn load_image(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut t = Tensor::zeros(Shape::try_new(1, 3, h, w)?);
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            *t.at_mut(0, c, y as usize, x as usize) = px.0[c] as f32 / 255.0;
        }
    }
    Ok(t)
}

/// Per-channel `(v − mean) / std`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PixelNorm {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for PixelNorm {
    fn default() -> Self {
        Self {
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        }
    }
}

impl PixelNorm {
    pub fn apply(&self, image: &mut Tensor<f32>) {
        let s = image.shape();
        let plane = s.plane();
        for (i, chunk) in image.data_mut().chunks_mut(plane).enumerate() {
            let c = i % s.c;
            if c < 3 {
                chunk.iter_mut().for_each(|v| *v = (*v - self.mean[c]) / self.std[c]);
            }
        }
    }
}
