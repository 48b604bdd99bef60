//! ResNet encoder: stem and residual stages.

use rand::Rng;

use super::layers::{ConvBn, ConvSpec};
use crate::error::{shape_err, Result};
use crate::tensor_core::{ParamStore, Real, Session, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockType {
    /// Two 3×3 convolutions.
    #[default]
    Basic,
    /// 1×1 reduce, 3×3, 1×1 expand (×4).
    Bottleneck,
}

impl BlockType {
    /// Ratio between a stage's output width and its nominal width.
    pub fn expansion(self) -> usize {
        match self {
            BlockType::Basic => 1,
            BlockType::Bottleneck => 4,
        }
    }
}

/// One residual stage. `channels` is the stage's output width.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageSpec {
    pub block_count: usize,
    pub channels: usize,
    pub downsample: bool,
}

/// 7×7 stride-2 conv + BN + ReLU, then 3×3 stride-2 max-pool.
#[derive(Clone, Debug)]
pub struct Stem {
    pub conv: ConvBn,
}

/// Inputs must be divisible by this.
pub const INPUT_DIVISOR: usize = 32;

impl Stem {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        out_channels: usize,
    ) -> Result<Self> {
        let spec = ConvSpec::same(3, out_channels, 7).stride(2);
        Ok(Self {
            conv: ConvBn::new(store, rng, name, spec, true)?,
        })
    }

    pub fn forward<T: Real>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let shape = s.graph.shape(x);
        if shape.c != 3 || !shape.h.is_multiple_of(INPUT_DIVISOR) || !shape.w.is_multiple_of(INPUT_DIVISOR) {
            return shape_err(
                "encoder_stem",
                format!("expects (N,3,H,W) with H and W divisible by {INPUT_DIVISOR}, got {shape}"),
            );
        }
        let y = self.conv.forward(s, x)?;
        s.graph.max_pool2d(y, 3, 2, 1)
    }
}

#[derive(Clone, Debug)]
pub struct ResBlock {
    /// Residual branch, applied in order; the last layer has no ReLU.
    pub branch: Vec<ConvBn>,
    pub projection: Option<ConvBn>,
}

impl ResBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        kind: BlockType,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
    ) -> Result<Self> {
        let branch = match kind {
            BlockType::Basic => vec![
                ConvBn::new(
                    store,
                    rng,
                    &format!("{name}.conv1"),
                    ConvSpec::same(in_channels, out_channels, 3).stride(stride),
                    true,
                )?,
                ConvBn::new(
                    store,
                    rng,
                    &format!("{name}.conv2"),
                    ConvSpec::same(out_channels, out_channels, 3),
                    false,
                )?,
            ],
            BlockType::Bottleneck => {
                let mid = out_channels / kind.expansion();
                vec![
                    ConvBn::new(store, rng, &format!("{name}.conv1"), ConvSpec::same(in_channels, mid, 1), true)?,
                    ConvBn::new(
                        store,
                        rng,
                        &format!("{name}.conv2"),
                        ConvSpec::same(mid, mid, 3).stride(stride),
                        true,
                    )?,
                    ConvBn::new(store, rng, &format!("{name}.conv3"), ConvSpec::same(mid, out_channels, 1), false)?,
                ]
            }
        };
        let projection = if stride != 1 || in_channels != out_channels {
            Some(ConvBn::new(
                store,
                rng,
                &format!("{name}.proj"),
                ConvSpec::same(in_channels, out_channels, 1).stride(stride),
                false,
            )?)
        } else {
            None
        };
        Ok(Self { branch, projection })
    }

    pub fn forward<T: Real>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let mut y = x;
        for layer in &self.branch {
            y = layer.forward(s, y)?;
        }
        let shortcut = match &self.projection {
            Some(p) => p.forward(s, x)?,
            None => x,
        };
        let sum = s.graph.add(y, shortcut)?;
        Ok(s.graph.relu(sum))
    }
}

#[derive(Clone, Debug)]
pub struct ResStage {
    pub spec: StageSpec,
    pub blocks: Vec<ResBlock>,
}

impl ResStage {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        kind: BlockType,
        in_channels: usize,
        spec: StageSpec,
    ) -> Result<Self> {
        let mut blocks = Vec::with_capacity(spec.block_count);
        let mut c_in = in_channels;
        for b in 0..spec.block_count {
            let stride = if b == 0 && spec.downsample { 2 } else { 1 };
            blocks.push(ResBlock::new(store, rng, &format!("{name}.block{b}"), kind, c_in, spec.channels, stride)?);
            c_in = spec.channels;
        }
        Ok(Self { spec, blocks })
    }

    pub fn forward<T: Real>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let shape = s.graph.shape(x);
        if self.spec.downsample && (!shape.h.is_multiple_of(2) || !shape.w.is_multiple_of(2)) {
            return shape_err(
                "res_stage",
                format!("downsampling stage needs even spatial extents, got {shape}"),
            );
        }
        let mut y = x;
        for block in &self.blocks {
            y = block.forward(s, y)?;
        }
        Ok(y)
    }
}
