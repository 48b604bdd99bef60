use rand::Rng;

use super::layers::{BatchNorm, ConvBn, ConvSpec, Deconv, DeconvGeometry};
use crate::error::{shape_err, Result};
use crate::tensor_core::{ParamStore, Real, Session, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecoderSpec {
    pub out_channels: usize,
    pub accepts_fusion: bool,
}

/// Deconv + BN + ReLU doubling the resolution, optionally followed by a
/// concat-and-3×3-conv fusion with an external feature map.
#[derive(Clone, Debug)]
pub struct Decoder {
    pub spec: DecoderSpec,
    pub deconv: Deconv,
    pub bn: BatchNorm,
    pub fuse: Option<ConvBn>,
}

impl Decoder {
    /// `fused_channels` is the width of the map concatenated in when the
    /// spec accepts fusion; ignored otherwise.
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        in_channels: usize,
        spec: DecoderSpec,
        fused_channels: usize,
        geometry: DeconvGeometry,
    ) -> Result<Self> {
        geometry.validate_doubling()?;
        let deconv = Deconv::new(store, rng, &format!("{name}.deconv"), in_channels, spec.out_channels, geometry)?;
        let bn = BatchNorm::new(store, &format!("{name}.bn"), spec.out_channels)?;
        let fuse = if spec.accepts_fusion {
            Some(ConvBn::new(
                store,
                rng,
                &format!("{name}.fuse"),
                ConvSpec::same(spec.out_channels + fused_channels, spec.out_channels, 3),
                true,
            )?)
        } else {
            None
        };
        Ok(Self { spec, deconv, bn, fuse })
    }

    /// A `fused` map passed to a decoder that does not accept fusion is ignored.
    pub fn forward<T: Real>(&self, s: &mut Session<T>, x: Var, fused: Option<Var>) -> Result<Var> {
        let y = self.deconv.forward(s, x)?;
        let y = self.bn.forward(s, y)?;
        let y = s.graph.relu(y);
        let Some(fuse) = &self.fuse else {
            return Ok(y);
        };
        let Some(f) = fused else {
            return shape_err("decoder", "decoder built for fusion received no fused map".to_string());
        };
        let (ys, fs) = (s.graph.shape(y), s.graph.shape(f));
        if (ys.n, ys.h, ys.w) != (fs.n, fs.h, fs.w) {
            return shape_err(
                "decoder",
                format!("fused map {fs} does not match deconv output {ys}"),
            );
        }
        let cat = s.graph.concat_channels(&[y, f])?;
        fuse.forward(s, cat)
    }
}
