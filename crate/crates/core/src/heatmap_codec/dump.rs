//! Heatmap dump files: a text header terminated by `end_header`, then the
//! maps as little-endian `f32`, row-major (K, H, W).
//!
//! ```text
//! frpose-heatmaps 1
//! K 8
//! H 64
//! W 64
//! stride 1
//! sigma 2
//! end_header
//! ```

use std::fs;
use std::path::Path;

use super::codec::{Alignment, HeatmapStack};
use crate::error::{Error, Result};
use crate::tensor_core::{Shape, Tensor};

const MAGIC: &str = "frpose-heatmaps 1";
const END: &str = "end_header\n";

pub fn encode_dump(stack: &HeatmapStack) -> Vec<u8> {
    let s = stack.maps.shape();
    let alignment = match stack.alignment {
        Alignment::HalfPixel => "half_pixel",
        Alignment::Corner => "corner",
    };
    let header = format!(
        "{MAGIC}\nK {}\nH {}\nW {}\nstride {}\nsigma {}\nalignment {alignment}\n{END}",
        s.c, s.h, s.w, stack.stride, stack.sigma
    );
    let mut bytes = header.into_bytes();
    for v in stack.maps.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}

pub fn decode_dump(bytes: &[u8]) -> Result<HeatmapStack> {
    let bad = |m: &str| Error::Invalid(format!("heatmap dump: {m}"));
    let end = bytes
        .windows(END.len())
        .position(|w| w == END.as_bytes())
        .ok_or_else(|| bad("missing end_header"))?;
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("header is not UTF-8"))?;
    let mut lines = header.lines();
    if lines.next() != Some(MAGIC) {
        return Err(bad("unknown format line"));
    }
    let mut field = std::collections::HashMap::new();
    for l in lines {
        let (k, v) = l.split_once(' ').ok_or_else(|| bad(l))?;
        field.insert(k, v);
    }
    let num = |k: &str| -> Result<usize> {
        field.get(k).and_then(|v| v.parse().ok()).ok_or_else(|| bad(&format!("bad or missing {k}")))
    };
    let (k, h, w, stride) = (num("K")?, num("H")?, num("W")?, num("stride")?);
    let sigma: f64 = field
        .get("sigma")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad("bad or missing sigma"))?;
    let alignment = match field.get("alignment").copied() {
        Some("corner") => Alignment::Corner,
        None | Some("half_pixel") => Alignment::HalfPixel,
        Some(other) => return Err(bad(&format!("unknown alignment {other}"))),
    };
    let payload = &bytes[end + END.len()..];
    let shape = Shape::try_new(1, k, h, w)?;
    if payload.len() != 4 * shape.numel() {
        return Err(bad(&format!("payload holds {} bytes, expected {}", payload.len(), 4 * shape.numel())));
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok(HeatmapStack {
        maps: Tensor::from_vec(shape, data)?,
        stride,
        sigma,
        alignment,
    })
}

pub fn write_dump(path: &Path, stack: &HeatmapStack) -> Result<()> {
    fs::write(path, encode_dump(stack))?;
    Ok(())
}

pub fn read_dump(path: &Path) -> Result<HeatmapStack> {
    decode_dump(&fs::read(path)?)
}
