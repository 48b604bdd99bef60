use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn_blocks::{BlockType, StageSpec, INPUT_DIVISOR};
use crate::sa_mfcd::{GateKind, SahSource};

/// Ablation variants, from the three-decoder baseline to the full network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Variant {
    /// Three decoders, output stride 4.
    Sbn,
    /// Five decoders, output stride 1.
    FrSbn,
    /// FrSbn with GCBs after the four stages and decoders 1–3.
    FrSbnGcb,
    /// FrSbnGcb plus raw stage 1/2/3 features concatenated into decoders 3/2/1.
    FrSbnGcbSkip,
    /// FrSbnGcb plus SA-MFCD feeding decoders 2/3/4.
    FrSbnGcbSamfcd,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Sbn,
        Variant::FrSbn,
        Variant::FrSbnGcb,
        Variant::FrSbnGcbSkip,
        Variant::FrSbnGcbSamfcd,
    ];

    pub fn decoder_count(self) -> usize {
        match self {
            Variant::Sbn => 3,
            _ => 5,
        }
    }

    pub fn output_stride(self) -> usize {
        32 >> self.decoder_count()
    }

    pub fn has_gcb(self) -> bool {
        matches!(self, Variant::FrSbnGcb | Variant::FrSbnGcbSkip | Variant::FrSbnGcbSamfcd)
    }

    pub fn has_skip(self) -> bool {
        self == Variant::FrSbnGcbSkip
    }

    pub fn has_samfcd(self) -> bool {
        self == Variant::FrSbnGcbSamfcd
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Sbn => "SBN",
            Variant::FrSbn => "FR_SBN",
            Variant::FrSbnGcb => "FR_SBN_GCB",
            Variant::FrSbnGcbSkip => "FR_SBN_GCB_SKIP",
            Variant::FrSbnGcbSamfcd => "FR_SBN_GCB_SAMFCD",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub const DEFAULT_DECODER_CHANNELS: [usize; 5] = [256, 256, 256, 128, 32];

fn default_decoder_channels() -> [usize; 5] {
    DEFAULT_DECODER_CHANNELS
}

/// Network structure. `gcb_ratio` must be set exactly for GCB variants and
/// `fusion_channels` exactly for the SA-MFCD variant.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub variant: Variant,
    #[serde(default)]
    pub block_type: BlockType,
    pub stage_blocks: [usize; 4],
    pub base_width: usize,
    #[serde(default = "default_decoder_channels")]
    pub decoder_channels: [usize; 5],
    pub num_joints: usize,
    pub input_height: usize,
    pub input_width: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gcb_ratio: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fusion_channels: Option<usize>,
    #[serde(default)]
    pub gate: GateKind,
    #[serde(default)]
    pub sah_source: SahSource,
}

impl NetworkConfig {
    /// ResNet34 encoder, 17 joints.
    pub fn resnet34(variant: Variant, input_height: usize, input_width: usize) -> Self {
        Self {
            variant,
            block_type: BlockType::Basic,
            stage_blocks: [3, 4, 6, 3],
            base_width: 64,
            decoder_channels: DEFAULT_DECODER_CHANNELS,
            num_joints: 17,
            input_height,
            input_width,
            gcb_ratio: None,
            fusion_channels: None,
            gate: GateKind::Sigmoid,
            sah_source: SahSource::Logits,
        }
        .with_variant(variant)
    }

    /// ResNet50 (bottleneck) encoder, 17 joints.
    pub fn resnet50(variant: Variant, input_height: usize, input_width: usize) -> Self {
        Self {
            block_type: BlockType::Bottleneck,
            ..Self::resnet34(variant, input_height, input_width)
        }
    }

    /// Desk-scale network: base width 16, 64×64 input, 8 joints.
    pub fn toy(variant: Variant) -> Self {
        Self {
            variant,
            block_type: BlockType::Basic,
            stage_blocks: [1, 1, 1, 1],
            base_width: 16,
            decoder_channels: [32, 32, 32, 16, 16],
            num_joints: 8,
            input_height: 64,
            input_width: 64,
            gcb_ratio: None,
            fusion_channels: None,
            gate: GateKind::Sigmoid,
            sah_source: SahSource::Logits,
        }
        .with_variant(variant)
    }

    /// Default bottleneck ratio: 16 at full width, 4 for narrow encoders.
    pub fn default_gcb_ratio(&self) -> usize {
        if self.base_width >= 64 {
            16
        } else {
            4
        }
    }

    /// Default fused width: 128 at full width, 32 for narrow encoders.
    pub fn default_fusion_channels(&self) -> usize {
        if self.base_width >= 64 {
            128
        } else {
            32
        }
    }

    /// Switches variant, filling in or clearing the variant-specific fields.
    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self.gcb_ratio = if variant.has_gcb() {
            Some(self.gcb_ratio.unwrap_or_else(|| self.default_gcb_ratio()))
        } else {
            None
        };
        self.fusion_channels = if variant.has_samfcd() {
            Some(self.fusion_channels.unwrap_or_else(|| self.default_fusion_channels()))
        } else {
            None
        };
        self
    }

    /// Output widths of the four encoder stages.
    pub fn stage_channels(&self) -> [usize; 4] {
        let e = self.block_type.expansion();
        [1, 2, 4, 8].map(|m| self.base_width * m * e)
    }

    pub fn stage_specs(&self) -> [StageSpec; 4] {
        let ch = self.stage_channels();
        [0, 1, 2, 3].map(|i| StageSpec {
            block_count: self.stage_blocks[i],
            channels: ch[i],
            downsample: i > 0,
        })
    }

    pub fn output_size(&self) -> (usize, usize) {
        let s = self.variant.output_stride();
        (self.input_height / s, self.input_width / s)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.input_height == 0
            || self.input_width == 0
            || !self.input_height.is_multiple_of(INPUT_DIVISOR)
            || !self.input_width.is_multiple_of(INPUT_DIVISOR)
        {
            return bad(format!(
                "input {}x{} must be positive and divisible by {INPUT_DIVISOR}",
                self.input_height, self.input_width
            ));
        }
        if self.num_joints == 0 || self.base_width == 0 {
            return bad("num_joints and base_width must be positive".into());
        }
        if self.stage_blocks.contains(&0) {
            return bad(format!("every stage needs at least one block, got {:?}", self.stage_blocks));
        }
        if self.decoder_channels.contains(&0) {
            return bad(format!("decoder widths must be positive, got {:?}", self.decoder_channels));
        }
        match (self.variant.has_gcb(), self.gcb_ratio) {
            (true, None) => return bad(format!("variant {} requires gcb_ratio", self.variant)),
            (false, Some(_)) => return bad(format!("gcb_ratio set for variant {} which has no GCBs", self.variant)),
            (true, Some(r)) => {
                let narrowest = self.stage_channels()[0].min(self.decoder_channels[..3].iter().copied().min().unwrap());
                if r == 0 || narrowest / r == 0 {
                    return bad(format!("gcb_ratio {r} leaves no bottleneck channels for width {narrowest}"));
                }
            }
            (false, None) => {}
        }
        match (self.variant.has_samfcd(), self.fusion_channels) {
            (true, None) => return bad(format!("variant {} requires fusion_channels", self.variant)),
            (false, Some(_)) => {
                return bad(format!("fusion_channels set for variant {} which has no SA-MFCD", self.variant))
            }
            (true, Some(0)) => return bad("fusion_channels must be positive".into()),
            _ => {}
        }
        if !self.variant.has_samfcd() && (self.gate != GateKind::Sigmoid || self.sah_source != SahSource::Logits) {
            return bad(format!("gate/sah_source options set for variant {} which has no SA-MFCD", self.variant));
        }
        Ok(())
    }
}
