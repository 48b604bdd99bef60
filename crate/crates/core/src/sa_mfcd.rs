//! Spatial-attention multi-scale feature collection and distribution.
//!
//! Collect: stride-8/16 features are upsampled to stride 4, concatenated and
//! fused by 3×3 conv + BN + ReLU; the three attention maps are resized,
//! concatenated and fused by 3×3 conv + BN into a single gate channel; the
//! fused features are multiplied by the gate. Distribute: bilinear resize of
//! the refined map to strides 8, 4 or 2.

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::nn_blocks::{BatchNorm, Conv, ConvBn, ConvSpec};
use crate::tensor_core::{ParamStore, Real, Session, Var};

/// Gate nonlinearity applied after the attention fusion conv + BN.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateKind {
    /// Bounded gate in [0, 1].
    #[default]
    Sigmoid,
    /// Unbounded BN + ReLU gate.
    Relu,
}

/// Which attention map each GCB contributes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SahSource {
    #[default]
    Logits,
    Softmax,
}

/// GCB outputs after encoder stages 1–3 (strides 4, 8, 16).
#[derive(Clone, Copy, Debug)]
pub struct CollectedFeatures {
    pub features: [Var; 3],
    pub sahs: [Var; 3],
}

/// Gated fusion at stride 4.
#[derive(Clone, Copy, Debug)]
pub struct RefinedMap {
    pub map: Var,
    /// Fused features before gating.
    pub fused: Var,
    /// Single-channel gate.
    pub gate: Var,
}

/// Decoder output strides that receive the refined map.
pub const DISTRIBUTION_STRIDES: [usize; 3] = [8, 4, 2];

#[derive(Clone, Debug)]
pub struct SaMfcd {
    pub feature_fuse: ConvBn,
    pub sah_fuse: Conv,
    pub sah_bn: BatchNorm,
    pub gate: GateKind,
    pub fusion_channels: usize,
}

impl SaMfcd {
    /// `feature_channels` are the widths of the stride-4/8/16 inputs.
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        feature_channels: [usize; 3],
        fusion_channels: usize,
        gate: GateKind,
    ) -> Result<Self> {
        let total: usize = feature_channels.iter().sum();
        Ok(Self {
            feature_fuse: ConvBn::new(
                store,
                rng,
                &format!("{name}.feature_fuse"),
                ConvSpec::same(total, fusion_channels, 3),
                true,
            )?,
            sah_fuse: Conv::new(store, rng, &format!("{name}.sah_fuse"), ConvSpec::same(3, 1, 3))?,
            sah_bn: BatchNorm::new(store, &format!("{name}.sah_bn"), 1)?,
            gate,
            fusion_channels,
        })
    }

    pub fn collect<T: Real>(&self, s: &mut Session<T>, input: &CollectedFeatures) -> Result<RefinedMap> {
        let base = s.graph.shape(input.features[0]);
        for i in 0..3 {
            let f = s.graph.shape(input.features[i]);
            let a = s.graph.shape(input.sahs[i]);
            if a.c != 1 || (a.n, a.h, a.w) != (f.n, f.h, f.w) {
                return shape_err(
                    "sa_mfcd.collect",
                    format!("attention map {a} must be single-channel at the extents of feature {f}"),
                );
            }
            let factor = 1 << i;
            if f.n != base.n || f.h * factor != base.h || f.w * factor != base.w {
                return shape_err(
                    "sa_mfcd.collect",
                    format!(
                        "feature {i} is {f}; stride ladder 4/8/16 needs {}x{} for base {base}",
                        base.h / factor,
                        base.w / factor
                    ),
                );
            }
        }
        let (h, w) = (base.h, base.w);
        let mut feats = Vec::with_capacity(3);
        let mut sahs = Vec::with_capacity(3);
        for i in 0..3 {
            feats.push(s.graph.bilinear_resize(input.features[i], h, w)?);
            sahs.push(s.graph.bilinear_resize(input.sahs[i], h, w)?);
        }
        let cat = s.graph.concat_channels(&feats)?;
        let fused = self.feature_fuse.forward(s, cat)?;
        let sah_cat = s.graph.concat_channels(&sahs)?;
        let g = self.sah_fuse.forward(s, sah_cat)?;
        let g = self.sah_bn.forward(s, g)?;
        let gate = match self.gate {
            GateKind::Sigmoid => s.graph.sigmoid(g),
            GateKind::Relu => s.graph.relu(g),
        };
        let map = s.graph.mul(fused, gate)?;
        Ok(RefinedMap { map, fused, gate })
    }

    /// Resizes the stride-4 refined map to `target_stride` ∈ {8, 4, 2}.
    pub fn distribute<T: Real>(s: &mut Session<T>, refined: &RefinedMap, target_stride: usize) -> Result<Var> {
        let shape = s.graph.shape(refined.map);
        let (h, w) = match target_stride {
            8 => (shape.h / 2, shape.w / 2),
            4 => (shape.h, shape.w),
            2 => (shape.h * 2, shape.w * 2),
            other => {
                return Err(Error::Invalid(format!(
                    "sa_mfcd.distribute: unsupported target stride {other}; expected one of {DISTRIBUTION_STRIDES:?}"
                )))
            }
        };
        if h == 0 || w == 0 || (target_stride == 8 && (!shape.h.is_multiple_of(2) || !shape.w.is_multiple_of(2))) {
            return shape_err("sa_mfcd.distribute", format!("cannot halve {shape} exactly"));
        }
        s.graph.bilinear_resize(refined.map, h, w)
    }
}
