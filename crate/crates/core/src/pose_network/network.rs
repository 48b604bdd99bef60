use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::NetworkConfig;
use super::stats::NetworkStats;
use crate::error::{shape_err, Result};
use crate::nn_blocks::{Conv, ConvSpec, Decoder, DecoderSpec, DeconvGeometry, Gcb, GcbOutput, ResStage, Stem};
use crate::sa_mfcd::{CollectedFeatures, RefinedMap, SaMfcd, SahSource};
use crate::tensor_core::{Mode, ParamStore, Real, Session, Tensor, Var};

/// Layer structure of a network; parameters live in a separate [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Architecture {
    pub config: NetworkConfig,
    pub stem: Stem,
    pub stages: Vec<ResStage>,
    /// Empty, or one GCB per stage.
    pub stage_gcbs: Vec<Gcb>,
    pub decoders: Vec<Decoder>,
    /// Empty, or one GCB for each of decoders 1–3.
    pub decoder_gcbs: Vec<Gcb>,
    pub sa_mfcd: Option<SaMfcd>,
    pub head: Conv,
}

/// Intermediate values of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub heatmaps: Var,
    /// Stage outputs before any GCB.
    pub raw_stages: Vec<Var>,
    pub stage_gcbs: Vec<GcbOutput>,
    pub decoder_outputs: Vec<Var>,
    pub decoder_gcbs: Vec<GcbOutput>,
    pub refined: Option<RefinedMap>,
}

impl Architecture {
    pub fn build<T: Real>(config: &NetworkConfig, store: &mut ParamStore<T>, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        let base = config.base_width;
        let stem = Stem::new(store, rng, "stem", base)?;
        let specs = config.stage_specs();
        let mut stages = Vec::with_capacity(4);
        let mut c_in = base;
        for (i, spec) in specs.iter().enumerate() {
            stages.push(ResStage::new(store, rng, &format!("stage{}", i + 1), config.block_type, c_in, *spec)?);
            c_in = spec.channels;
        }
        let stage_ch = config.stage_channels();
        let mut stage_gcbs = Vec::new();
        if let Some(r) = config.gcb_ratio {
            for (i, c) in stage_ch.iter().enumerate() {
                stage_gcbs.push(Gcb::new(store, rng, &format!("gcb_stage{}", i + 1), *c, r)?);
            }
        }
        let sa_mfcd = match config.fusion_channels {
            Some(fc) => Some(SaMfcd::new(
                store,
                rng,
                "sa_mfcd",
                [stage_ch[0], stage_ch[1], stage_ch[2]],
                fc,
                config.gate,
            )?),
            None => None,
        };
        let mut decoders = Vec::new();
        let mut decoder_gcbs = Vec::new();
        let mut c_in = stage_ch[3];
        for d in 0..config.variant.decoder_count() {
            let fused = Self::fused_channels(config, d);
            let spec = DecoderSpec {
                out_channels: config.decoder_channels[d],
                accepts_fusion: fused.is_some(),
            };
            decoders.push(Decoder::new(
                store,
                rng,
                &format!("decoder{}", d + 1),
                c_in,
                spec,
                fused.unwrap_or(0),
                DeconvGeometry::default(),
            )?);
            c_in = spec.out_channels;
            if let (Some(r), true) = (config.gcb_ratio, d < 3) {
                decoder_gcbs.push(Gcb::new(store, rng, &format!("gcb_decoder{}", d + 1), c_in, r)?);
            }
        }
        let head = Conv::new(
            store,
            rng,
            "head",
            ConvSpec::same(c_in, config.num_joints, 1).with_bias().small_init(),
        )?;
        Ok(Self {
            config: config.clone(),
            stem,
            stages,
            stage_gcbs,
            decoders,
            decoder_gcbs,
            sa_mfcd,
            head,
        })
    }

    /// Width of the map fused into decoder `d` (0-based), if any.
    fn fused_channels(config: &NetworkConfig, d: usize) -> Option<usize> {
        let stage_ch = config.stage_channels();
        if config.variant.has_skip() {
            // decoder1 ← stage3 (stride 16), decoder2 ← stage2, decoder3 ← stage1
            (d < 3).then(|| stage_ch[2 - d])
        } else if config.variant.has_samfcd() {
            (1..=3).contains(&d).then(|| config.fusion_channels.expect("validated"))
        } else {
            None
        }
    }

    pub fn forward<T: Real>(&self, s: &mut Session<T>, images: Var) -> Result<ForwardTrace> {
        let shape = s.graph.shape(images);
        let cfg = &self.config;
        if shape.c != 3 || shape.h != cfg.input_height || shape.w != cfg.input_width {
            return shape_err(
                "pose_network.forward",
                format!("images {shape} do not match (N,3,{},{})", cfg.input_height, cfg.input_width),
            );
        }
        let mut x = self.stem.forward(s, images)?;
        let mut raw_stages = Vec::with_capacity(4);
        let mut stage_gcbs = Vec::new();
        for (i, stage) in self.stages.iter().enumerate() {
            x = stage.forward(s, x)?;
            raw_stages.push(x);
            if let Some(gcb) = self.stage_gcbs.get(i) {
                let out = gcb.forward(s, x)?;
                x = out.enhanced;
                stage_gcbs.push(out);
            }
        }
        let refined = match &self.sa_mfcd {
            Some(m) => {
                let pick = |o: &GcbOutput| match cfg.sah_source {
                    SahSource::Logits => o.sah,
                    SahSource::Softmax => o.weights,
                };
                let collected = CollectedFeatures {
                    features: [0, 1, 2].map(|i| stage_gcbs[i].enhanced),
                    sahs: [0, 1, 2].map(|i| pick(&stage_gcbs[i])),
                };
                Some(m.collect(s, &collected)?)
            }
            None => None,
        };
        let mut decoder_outputs = Vec::with_capacity(self.decoders.len());
        let mut decoder_gcbs = Vec::new();
        for (d, dec) in self.decoders.iter().enumerate() {
            let fused = if cfg.variant.has_skip() && d < 3 {
                Some(raw_stages[2 - d])
            } else if let (Some(r), true) = (&refined, (1..=3).contains(&d)) {
                // decoder2 → stride 8, decoder3 → 4, decoder4 → 2
                Some(SaMfcd::distribute(s, r, 16 >> d)?)
            } else {
                None
            };
            x = dec.forward(s, x, fused)?;
            decoder_outputs.push(x);
            if let Some(gcb) = self.decoder_gcbs.get(d) {
                let out = gcb.forward(s, x)?;
                x = out.enhanced;
                decoder_gcbs.push(out);
            }
        }
        let heatmaps = self.head.forward(s, x)?;
        Ok(ForwardTrace {
            heatmaps,
            raw_stages,
            stage_gcbs,
            decoder_outputs,
            decoder_gcbs,
            refined,
        })
    }
}

/// Architecture plus its parameters.
#[derive(Clone, Debug)]
pub struct PoseNetwork<T: Real = f32> {
    pub arch: Architecture,
    pub store: ParamStore<T>,
}

impl<T: Real> PoseNetwork<T> {
    /// Deterministic construction: equal seeds give bitwise-equal parameters.
    pub fn build(config: &NetworkConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let arch = Architecture::build(config, &mut store, seed)?;
        Ok(Self { arch, store })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.arch.config
    }

    /// Runs a forward pass and returns the heatmaps. Eval mode records no
    /// graph; train mode updates batch-norm running statistics.
    pub fn forward(&mut self, images: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut s = Session::new(&mut self.store, mode);
        let x = s.graph.constant(images.clone());
        let trace = self.arch.forward(&mut s, x)?;
        Ok(s.graph.take_value(trace.heatmaps))
    }

    /// A session over this network's parameters plus the architecture to run.
    pub fn session(&mut self, mode: Mode) -> (&Architecture, Session<'_, T>) {
        (&self.arch, Session::new(&mut self.store, mode))
    }

    pub fn stats(&self) -> NetworkStats {
        NetworkStats::of(&self.store)
    }
}
