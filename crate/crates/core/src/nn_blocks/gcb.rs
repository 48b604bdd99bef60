//! Global context block: attention pooling, a channel bottleneck transform
//! and a broadcast add back onto every position.

use rand::Rng;

use super::layers::{Conv, ConvSpec, LayerNorm};
use crate::error::{Error, Result};
use crate::tensor_core::{ParamStore, Real, Session, Var};

#[derive(Clone, Debug)]
pub struct Gcb {
    /// 1×1 conv C → 1 producing the attention logits.
    pub sah: Conv,
    pub reduce: Conv,
    pub norm: LayerNorm,
    /// Zero-initialised so the block starts as an identity.
    pub expand: Conv,
}

#[derive(Clone, Copy, Debug)]
pub struct GcbOutput {
    /// Input plus the broadcast context transform; same shape as the input.
    pub enhanced: Var,
    /// Raw attention logits (N,1,H,W).
    pub sah: Var,
    /// Softmax of `sah` over positions.
    pub weights: Var,
    /// Attention-pooled context (N,C,1,1).
    pub context: Var,
}

impl Gcb {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        channels: usize,
        ratio: usize,
    ) -> Result<Self> {
        if ratio == 0 || channels / ratio == 0 {
            return Err(Error::Config(format!(
                "gcb ratio {ratio} leaves no bottleneck channels for width {channels}"
            )));
        }
        let hidden = channels / ratio;
        Ok(Self {
            sah: Conv::new(store, rng, &format!("{name}.sah"), ConvSpec::same(channels, 1, 1))?,
            reduce: Conv::new(
                store,
                rng,
                &format!("{name}.reduce"),
                ConvSpec::same(channels, hidden, 1).with_bias(),
            )?,
            norm: LayerNorm::new(store, &format!("{name}.norm"), hidden)?,
            expand: Conv::new(
                store,
                rng,
                &format!("{name}.expand"),
                ConvSpec::same(hidden, channels, 1).with_bias().zero_init(),
            )?,
        })
    }

    pub fn forward<T: Real>(&self, s: &mut Session<T>, x: Var) -> Result<GcbOutput> {
        let sah = self.sah.forward(s, x)?;
        let weights = s.graph.softmax_spatial(sah);
        let weighted = s.graph.mul(x, weights)?;
        let context = s.graph.sum_spatial(weighted);
        let t = self.reduce.forward(s, context)?;
        let t = self.norm.forward(s, t)?;
        let t = s.graph.relu(t);
        let t = self.expand.forward(s, t)?;
        let enhanced = s.graph.add(x, t)?;
        Ok(GcbOutput {
            enhanced,
            sah,
            weights,
            context,
        })
    }
}
