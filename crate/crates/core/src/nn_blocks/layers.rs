//! Parameterised layers: each holds [`ParamId`]s into a [`ParamStore`] and
//! runs inside a [`Session`].

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor_core::{ParamId, ParamStore, Real, Session, Shape, StatsId, Tensor, Var};

/// He-uniform initialisation bound `sqrt(6 / fan_in)`.
fn he_uniform<T: Real, R: Rng + ?Sized>(shape: Shape, fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::uniform(shape, -bound, bound, rng)
}

/// Bound of [`Init::Small`].
pub const SMALL_INIT_BOUND: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    HeUniform,
    Zeros,
    /// Uniform in `±SMALL_INIT_BOUND`; used for output heads so the first
    /// predictions sit near zero.
    Small,
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub bias: bool,
    pub init: Init,
}

impl ConvSpec {
    /// Stride-1 convolution with "same" padding for odd kernels, no bias.
    pub fn same(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            padding: kernel / 2,
            bias: false,
            init: Init::HeUniform,
        }
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub fn with_bias(mut self) -> Self {
        self.bias = true;
        self
    }

    pub fn zero_init(mut self) -> Self {
        self.init = Init::Zeros;
        self
    }

    pub fn small_init(mut self) -> Self {
        self.init = Init::Small;
        self
    }
}

impl Conv {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        spec: ConvSpec,
    ) -> Result<Self> {
        let shape = Shape::try_new(spec.out_channels, spec.in_channels, spec.kernel, spec.kernel)?;
        let w = match spec.init {
            Init::HeUniform => he_uniform(shape, spec.in_channels * spec.kernel * spec.kernel, rng),
            Init::Zeros => Tensor::zeros(shape),
            Init::Small => Tensor::uniform(shape, -SMALL_INIT_BOUND, SMALL_INIT_BOUND, rng),
        };
        let weight = store.add(format!("{name}.weight"), w)?;
        let bias = if spec.bias {
            Some(store.add(format!("{name}.bias"), Tensor::zeros(Shape::new(1, spec.out_channels, 1, 1)))?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            stride: spec.stride,
            padding: spec.padding,
        })
    }

    pub fn forward<T: Real>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let w = s.param(self.weight);
        let b = self.bias.map(|b| s.param(b));
        s.graph.conv2d(x, w, b, self.stride, self.padding)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub stats: StatsId,
}

impl BatchNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        let shape = Shape::try_new(1, channels, 1, 1)?;
        Ok(Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(shape, T::one()))?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(shape))?,
            stats: store.add_stats(name, channels),
        })
    }

    pub fn forward<T: Real>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        s.batch_norm(x, self.gamma, self.beta, self.stats)
    }
}

/// Convolution (no bias) followed by batch norm and an optional ReLU.
#[derive(Clone, Debug)]
pub struct ConvBn {
    pub conv: Conv,
    pub bn: BatchNorm,
    pub relu: bool,
}

impl ConvBn {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        spec: ConvSpec,
        relu: bool,
    ) -> Result<Self> {
        let spec = ConvSpec { bias: false, ..spec };
        Ok(Self {
            conv: Conv::new(store, rng, &format!("{name}.conv"), spec)?,
            bn: BatchNorm::new(store, &format!("{name}.bn"), spec.out_channels)?,
            relu,
        })
    }

    pub fn forward<T: Real>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(s, x)?;
        let y = self.bn.forward(s, y)?;
        Ok(if self.relu { s.graph.relu(y) } else { y })
    }
}

/// Transposed-convolution geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DeconvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub output_padding: usize,
}

impl Default for DeconvGeometry {
    fn default() -> Self {
        Self {
            kernel: 4,
            stride: 2,
            padding: 1,
            output_padding: 0,
        }
    }
}

impl DeconvGeometry {
    /// Output extent for a given input extent.
    pub fn output_extent(&self, input: usize) -> Option<usize> {
        ((input.checked_sub(1)?) * self.stride + self.kernel + self.output_padding).checked_sub(2 * self.padding)
    }

    /// Accepts only geometries whose output is exactly twice the input for
    /// every input size.
    pub fn validate_doubling(&self) -> Result<()> {
        let ok = self.stride == 2 && self.kernel + self.output_padding == 2 * self.padding + 2;
        if ok && self.output_padding < self.stride {
            Ok(())
        } else {
            Err(Error::Invalid(format!(
                "deconv kernel {} stride {} padding {} output_padding {} does not exactly double resolution",
                self.kernel, self.stride, self.padding, self.output_padding
            )))
        }
    }
}

#[derive(Clone, Debug)]
pub struct Deconv {
    pub weight: ParamId,
    pub geometry: DeconvGeometry,
}

impl Deconv {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        geometry: DeconvGeometry,
    ) -> Result<Self> {
        let k = geometry.kernel;
        let shape = Shape::try_new(in_channels, out_channels, k, k)?;
        let weight = store.add(format!("{name}.weight"), he_uniform(shape, out_channels * k * k, rng))?;
        Ok(Self { weight, geometry })
    }

    pub fn forward<T: Real>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let w = s.param(self.weight);
        let g = self.geometry;
        s.graph.deconv2d(x, w, g.stride, g.padding, g.output_padding)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        let shape = Shape::try_new(1, channels, 1, 1)?;
        Ok(Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(shape, T::one()))?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(shape))?,
        })
    }

    pub fn forward<T: Real>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let g = s.param(self.gamma);
        let b = s.param(self.beta);
        s.graph.layer_norm_channels(x, g, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn doubling_geometries() {
        assert!(DeconvGeometry::default().validate_doubling().is_ok());
        let g = DeconvGeometry {
            kernel: 3,
            stride: 2,
            padding: 1,
            output_padding: 1,
        };
        assert!(g.validate_doubling().is_ok());
        assert_eq!(g.output_extent(7), Some(14));
        let bad = DeconvGeometry {
            kernel: 3,
            stride: 2,
            padding: 1,
            output_padding: 0,
        };
        assert!(bad.validate_doubling().is_err());
        let triple = DeconvGeometry {
            kernel: 3,
            stride: 3,
            padding: 0,
            output_padding: 0,
        };
        assert!(triple.validate_doubling().is_err());
        for i in 1..20 {
            assert_eq!(DeconvGeometry::default().output_extent(i), Some(2 * i));
        }
    }
}
