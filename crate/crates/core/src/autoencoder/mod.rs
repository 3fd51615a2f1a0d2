//! The six convolutional autoencoders (families A1/A2/A3, 2-D or 3-D input),
//! their forward and backward passes, checkpoints and training.
//!
//! Every family shares the same outer stack:
//!
//! ```text
//! encoder: conv 16@6x6/1 -> conv 16@5x5/2 -> conv 16@4x4/2 -> conv 16@3x3/2 -> bottleneck
//! decoder: [A3: deconv 16@2x2/2] -> deconv 16@2x2/2 -> 16@3x3/2 -> 16@4x4/2 -> 16@5x5/2 -> deconv C@6x6/1 + tanh
//! ```
//!
//! with bottlenecks A1 = conv 16@2x2/2, A2 = conv 8@1x1/2 and
//! A3 = conv 16@2x2/2 -> conv 16@1x1/2. Every layer but the last uses a leaky
//! rectifier. A 32×32 input therefore has a hidden representation of
//! 64 (A1), 32 (A2) or 16 (A3) elements. 3-D blocks carry their three
//! neighbouring B-scans as input channels.

mod checkpoint;
mod train;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{Activation, ConvGrads, ConvLayer, ConvMode, Scalar, Scratch, Tensor};

pub use checkpoint::{read_model, write_model, GPRM_MAGIC, GPRM_VERSION};
pub use train::{train, EpochLoss, TrainConfig, TrainReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    A1,
    A2,
    A3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dimensionality {
    /// Single B-scan patches, one input channel.
    TwoD,
    /// Three neighbouring B-scans stacked as channels.
    ThreeD,
}

impl Dimensionality {
    pub fn channels(self) -> usize {
        match self {
            Dimensionality::TwoD => 1,
            Dimensionality::ThreeD => 3,
        }
    }
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a1" => Ok(Family::A1),
            "a2" => Ok(Family::A2),
            "a3" => Ok(Family::A3),
            other => Err(Error::Spec(format!("unknown architecture family `{other}`"))),
        }
    }
}

impl FromStr for Dimensionality {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "2d" => Ok(Dimensionality::TwoD),
            "3d" => Ok(Dimensionality::ThreeD),
            other => Err(Error::Spec(format!("unknown dimensionality `{other}`"))),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::A1 => "a1",
            Family::A2 => "a2",
            Family::A3 => "a3",
        })
    }
}

impl fmt::Display for Dimensionality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dimensionality::TwoD => "2d",
            Dimensionality::ThreeD => "3d",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ArchitectureSpec {
    pub family: Family,
    pub dims: Dimensionality,
    /// Block extent (Δt, Δx) in samples.
    pub input: (usize, usize),
}

impl ArchitectureSpec {
    pub fn new(family: Family, dims: Dimensionality, input: (usize, usize)) -> Result<Self> {
        let spec = ArchitectureSpec { family, dims, input };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for side in [self.input.0, self.input.1] {
            if side < 32 || !side.is_power_of_two() {
                return Err(Error::Spec(format!(
                    "block sides must be powers of two >= 32, got {}x{}",
                    self.input.0, self.input.1
                )));
            }
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.dims.channels()
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.channels(), self.input.0, self.input.1]
    }

    /// Total spatial down-sampling of the encoder.
    fn reduction(&self) -> usize {
        match self.family {
            Family::A1 | Family::A2 => 16,
            Family::A3 => 32,
        }
    }

    pub fn hidden_shape(&self) -> [usize; 3] {
        let ch = match self.family {
            Family::A2 => 8,
            _ => 16,
        };
        let r = self.reduction();
        [ch, self.input.0 / r, self.input.1 / r]
    }

    pub fn hidden_len(&self) -> usize {
        self.hidden_shape().iter().product()
    }
}

/// One layer of the architecture template.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerDesc {
    pub mode: ConvMode,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub activation: Activation,
}

/// Encoder and decoder layer templates for `spec`.
pub fn layer_plan(spec: &ArchitectureSpec) -> (Vec<LayerDesc>, Vec<LayerDesc>) {
    let c = spec.channels();
    let conv = |i, o, k, s| LayerDesc {
        mode: ConvMode::Conv,
        in_channels: i,
        out_channels: o,
        kernel: k,
        stride: s,
        activation: Activation::Leaky,
    };
    let deconv = |i, o, k, s| LayerDesc {
        mode: ConvMode::Transposed,
        in_channels: i,
        out_channels: o,
        kernel: k,
        stride: s,
        activation: Activation::Leaky,
    };
    let mut encoder = vec![conv(c, 16, 6, 1), conv(16, 16, 5, 2), conv(16, 16, 4, 2), conv(16, 16, 3, 2)];
    let mut decoder = Vec::new();
    let hidden_ch = match spec.family {
        Family::A1 => {
            encoder.push(conv(16, 16, 2, 2));
            16
        }
        Family::A2 => {
            encoder.push(conv(16, 8, 1, 2));
            8
        }
        Family::A3 => {
            encoder.push(conv(16, 16, 2, 2));
            encoder.push(conv(16, 16, 1, 2));
            decoder.push(deconv(16, 16, 2, 2));
            16
        }
    };
    decoder.push(deconv(hidden_ch, 16, 2, 2));
    decoder.push(deconv(16, 16, 3, 2));
    decoder.push(deconv(16, 16, 4, 2));
    decoder.push(deconv(16, 16, 5, 2));
    let mut last = deconv(16, c, 6, 1);
    last.activation = Activation::Tanh;
    decoder.push(last);
    (encoder, decoder)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderModel<T> {
    pub spec: ArchitectureSpec,
    pub encoder: Vec<ConvLayer<T>>,
    pub decoder: Vec<ConvLayer<T>>,
}

/// Per-layer outputs of one forward pass, kept for back-propagation.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    /// `outputs[0]` is the input block; `outputs[i + 1]` is layer `i`'s output.
    pub outputs: Vec<Tensor<T>>,
}

impl<T> ForwardTrace<T> {
    pub fn reconstruction(&self) -> &Tensor<T> {
        self.outputs.last().expect("trace holds at least the input")
    }
}

pub fn build_model<T: Scalar>(spec: ArchitectureSpec, seed: u64) -> Result<AutoencoderModel<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (enc, dec) = layer_plan(&spec);
    let mut make = |d: &LayerDesc| {
        ConvLayer::init(
            d.mode,
            d.in_channels,
            d.out_channels,
            (d.kernel, d.kernel),
            (d.stride, d.stride),
            d.activation,
            &mut rng,
        )
    };
    let encoder = enc.iter().map(&mut make).collect::<Result<Vec<_>>>()?;
    let decoder = dec.iter().map(&mut make).collect::<Result<Vec<_>>>()?;
    Ok(AutoencoderModel { spec, encoder, decoder })
}

impl<T: Scalar> AutoencoderModel<T> {
    fn layers(&self) -> impl Iterator<Item = &ConvLayer<T>> {
        self.encoder.iter().chain(&self.decoder)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers().map(ConvLayer::parameter_count).sum()
    }

    /// Kernel and bias tensors of every layer, encoder first.
    pub fn parameters(&self) -> Vec<&Tensor<T>> {
        self.layers().flat_map(|l| [&l.kernel, &l.bias]).collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.encoder
            .iter_mut()
            .chain(self.decoder.iter_mut())
            .flat_map(|l| [&mut l.kernel, &mut l.bias])
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> AutoencoderModel<U> {
        let cast_layer = |l: &ConvLayer<T>| ConvLayer {
            kernel: l.kernel.cast(),
            bias: l.bias.cast(),
            stride: l.stride,
            mode: l.mode,
            activation: l.activation,
        };
        AutoencoderModel {
            spec: self.spec,
            encoder: self.encoder.iter().map(cast_layer).collect(),
            decoder: self.decoder.iter().map(cast_layer).collect(),
        }
    }

    fn check_input(&self, block: &Tensor<T>) -> Result<()> {
        if block.shape() != self.spec.input_shape() {
            return Err(Error::shape(format!(
                "block shape {:?} does not match model input {:?}",
                block.shape(),
                self.spec.input_shape()
            )));
        }
        Ok(())
    }

    pub fn encode_with(&self, block: &Tensor<T>, scratch: &mut Scratch<T>) -> Result<Tensor<T>> {
        self.check_input(block)?;
        let mut x = block.clone();
        for layer in &self.encoder {
            x = layer.forward(&x, scratch)?;
        }
        Ok(x)
    }

    pub fn decode_with(&self, hidden: &Tensor<T>, scratch: &mut Scratch<T>) -> Result<Tensor<T>> {
        if hidden.shape() != self.spec.hidden_shape() {
            return Err(Error::shape(format!(
                "hidden shape {:?} does not match bottleneck {:?}",
                hidden.shape(),
                self.spec.hidden_shape()
            )));
        }
        let mut x = hidden.clone();
        for layer in &self.decoder {
            x = layer.forward(&x, scratch)?;
        }
        Ok(x)
    }

    pub fn encode(&self, block: &Tensor<T>) -> Result<Tensor<T>> {
        self.encode_with(block, &mut Scratch::new())
    }

    pub fn decode(&self, hidden: &Tensor<T>) -> Result<Tensor<T>> {
        self.decode_with(hidden, &mut Scratch::new())
    }

    /// Full encode/decode pass keeping every intermediate output.
    pub fn forward_trace(&self, block: &Tensor<T>, scratch: &mut Scratch<T>) -> Result<ForwardTrace<T>> {
        self.check_input(block)?;
        let mut outputs = Vec::with_capacity(self.encoder.len() + self.decoder.len() + 1);
        outputs.push(block.clone());
        for layer in self.layers() {
            let next = layer.forward(outputs.last().unwrap(), scratch)?;
            outputs.push(next);
        }
        Ok(ForwardTrace { outputs })
    }

    /// Parameter gradients (same order as [`Self::parameters`]) for a given
    /// gradient of the loss with respect to the reconstruction.
    pub fn backward(
        &self,
        trace: &ForwardTrace<T>,
        grad_reconstruction: Tensor<T>,
        scratch: &mut Scratch<T>,
    ) -> Result<Vec<Tensor<T>>> {
        let layers: Vec<&ConvLayer<T>> = self.layers().collect();
        if trace.outputs.len() != layers.len() + 1 {
            return Err(Error::shape("forward trace does not belong to this model"));
        }
        let mut grads: Vec<ConvGrads<T>> = Vec::with_capacity(layers.len());
        let mut upstream = grad_reconstruction;
        for (i, layer) in layers.iter().enumerate().rev() {
            let g = layer.backward(&trace.outputs[i], &trace.outputs[i + 1], &upstream, i > 0, scratch)?;
            if let Some(gi) = &g.input {
                upstream = gi.clone();
            }
            grads.push(g);
        }
        grads.reverse();
        Ok(grads.into_iter().flat_map(|g| [g.kernel, g.bias]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_specs(side: usize) -> Vec<ArchitectureSpec> {
        let mut v = Vec::new();
        for family in [Family::A1, Family::A2, Family::A3] {
            for dims in [Dimensionality::TwoD, Dimensionality::ThreeD] {
                v.push(ArchitectureSpec::new(family, dims, (side, side)).unwrap());
            }
        }
        v
    }

    #[test]
    fn hidden_sizes_at_32() {
        for spec in all_specs(32) {
            let model = build_model::<f32>(spec, 1).unwrap();
            let x = Tensor::zeros(&spec.input_shape());
            let h = model.encode(&x).unwrap();
            let expected = match spec.family {
                Family::A1 => 64,
                Family::A2 => 32,
                Family::A3 => 16,
            };
            assert_eq!(h.len(), expected, "{spec:?}");
            assert_eq!(h.shape(), spec.hidden_shape());
            let y = model.decode(&h).unwrap();
            assert_eq!(y.shape(), x.shape());
        }
    }

    #[test]
    fn a1_3d_at_64() {
        let spec = ArchitectureSpec::new(Family::A1, Dimensionality::ThreeD, (64, 64)).unwrap();
        let model = build_model::<f32>(spec, 3).unwrap();
        let h = model.encode(&Tensor::zeros(&[3, 64, 64])).unwrap();
        assert_eq!(h.shape(), &[16, 4, 4]);
        assert_eq!(model.decode(&h).unwrap().shape(), &[3, 64, 64]);
    }

    #[test]
    fn symmetric_layer_counts() {
        for spec in all_specs(64) {
            let (enc, dec) = layer_plan(&spec);
            assert_eq!(enc.len(), dec.len());
            assert!(enc.iter().all(|l| l.mode == ConvMode::Conv));
            assert!(dec.iter().all(|l| l.mode == ConvMode::Transposed));
            assert_eq!(dec.last().unwrap().activation, Activation::Tanh);
            assert_eq!(dec.last().unwrap().out_channels, spec.channels());
        }
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(ArchitectureSpec::new(Family::A1, Dimensionality::TwoD, (16, 32)).is_err());
        assert!(ArchitectureSpec::new(Family::A1, Dimensionality::TwoD, (48, 64)).is_err());
        let spec = ArchitectureSpec::new(Family::A2, Dimensionality::TwoD, (32, 32)).unwrap();
        let model = build_model::<f32>(spec, 0).unwrap();
        assert!(model.encode(&Tensor::zeros(&[1, 64, 64])).is_err());
        assert!(model.decode(&Tensor::zeros(&[16, 2, 2])).is_err());
    }

    #[test]
    fn deterministic_and_bounded() {
        let spec = ArchitectureSpec::new(Family::A3, Dimensionality::TwoD, (32, 32)).unwrap();
        let a = build_model::<f64>(spec, 42).unwrap();
        let b = build_model::<f64>(spec, 42).unwrap();
        assert_eq!(a, b);
        let x = Tensor::from_fn(&[1, 32, 32], |i| ((i as f64) * 0.37).sin());
        let ha = a.encode(&x).unwrap();
        assert_eq!(ha, b.encode(&x).unwrap());
        let zero_h = a.encode(&Tensor::zeros(&[1, 32, 32])).unwrap();
        assert!(zero_h.is_finite());
        // large hidden values still decode into the open interval (-1, 1)
        let mut big = ha.clone();
        big.scale(50.0);
        let y = a.decode(&big).unwrap();
        assert!(y.data().iter().all(|v| v.abs() <= 1.0));
        let y = a.decode(&ha).unwrap();
        assert!(y.data().iter().all(|v| v.abs() < 1.0));
    }
}
