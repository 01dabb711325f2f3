//! Layer graph, the two classifier topologies and the inference entry point.

mod builder;
mod engine;
pub mod sample;
mod validate;

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::ops::quantized::ActQuant;
use crate::ops::{ActivationKind, ConvSpec};
use crate::tensor::{QuantParams, Tensor};

pub use builder::{
    build_classifier, build_mobilenet_v1_classifier, build_mobilenet_v2_classifier, mobilenet_v1_layout,
    mobilenet_v2_layout, BuildError, ParamEntry, ParamKind, ParamSpec, ParameterBundle, V1_HEAD_UNITS, V2_HEAD_UNITS,
};
pub use engine::{
    forward, forward_prefix, forward_with, infer, infer_with, rank, InferError, NoObserver, Observer, Prediction,
    ScenePrediction, TensorId,
};
pub use validate::{validate, Diagnostic};

/// Default classifier input resolution.
pub const DEFAULT_INPUT_SIZE: usize = 224;
pub const HEAD_DROPOUT: f32 = 0.7;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Backbone {
    Generic,
    V1,
    V2,
}

impl Backbone {
    pub fn code(self) -> u8 {
        match self {
            Backbone::Generic => 0,
            Backbone::V1 => 1,
            Backbone::V2 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Backbone::Generic),
            1 => Some(Backbone::V1),
            2 => Some(Backbone::V2),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Backbone::Generic => "generic",
            Backbone::V1 => "v1",
            Backbone::V2 => "v2",
        }
    }
}

/// How 8-bit pixel values map to network inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Normalization {
    /// `v / 127.5 - 1`, onto [-1, 1].
    SignedUnit,
}

impl Normalization {
    pub fn code(self) -> u8 {
        1
    }

    pub fn from_code(code: u8) -> Option<Self> {
        (code == 1).then_some(Normalization::SignedUnit)
    }

    pub fn name(self) -> &'static str {
        "signed-unit"
    }

    #[inline]
    pub fn apply(self, v: u8) -> f32 {
        v as f32 / 127.5 - 1.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InputSpec {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub normalization: Normalization,
}

impl InputSpec {
    pub fn rgb(height: usize, width: usize) -> Self {
        InputSpec { height, width, channels: 3, normalization: Normalization::SignedUnit }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelMeta {
    pub name: String,
    pub revision: u32,
    pub backbone: Backbone,
    pub quantized: bool,
    /// Images used to calibrate a quantized model; 0 for float models.
    pub calibration_images: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Bias {
    F32(Vec<f32>),
    /// Quantized at `input_scale · weight_scale` of its channel.
    I32(Vec<i32>),
}

impl Bias {
    pub fn len(&self) -> usize {
        match self {
            Bias::F32(v) => v.len(),
            Bias::I32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn byte_len(&self) -> usize {
        self.len() * 4
    }
}

/// Convolution or depthwise convolution with its fused activation.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub spec: ConvSpec,
    pub weights: Tensor,
    pub bias: Bias,
    pub quant: Option<ActQuant>,
}

impl ConvLayer {
    pub fn float(spec: ConvSpec, weights: Tensor, bias: Vec<f32>) -> Self {
        ConvLayer { spec, weights, bias: Bias::F32(bias), quant: None }
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.shape().len() + self.bias.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub activation: ActivationKind,
    /// `(1, 1, in, out)`.
    pub weights: Tensor,
    pub bias: Bias,
    pub quant: Option<ActQuant>,
}

impl DenseLayer {
    pub fn float(activation: ActivationKind, weights: Tensor, bias: Vec<f32>) -> Self {
        DenseLayer { activation, weights, bias: Bias::F32(bias), quant: None }
    }

    pub fn units(&self) -> usize {
        self.weights.shape().c()
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.shape().len() + self.bias.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InvertedResidualLayer {
    pub expand: Option<ConvLayer>,
    pub depthwise: ConvLayer,
    pub project: ConvLayer,
    pub residual: bool,
    /// Output parameters of the residual sum, quantized models only.
    pub add_quant: Option<QuantParams>,
}

impl InvertedResidualLayer {
    pub fn convs(&self) -> impl Iterator<Item = &ConvLayer> {
        self.expand.iter().chain([&self.depthwise, &self.project])
    }

    pub fn parameter_count(&self) -> usize {
        self.convs().map(ConvLayer::parameter_count).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Layer {
    Conv(ConvLayer),
    DepthwiseConv(ConvLayer),
    InvertedResidual(InvertedResidualLayer),
    FullyConnected(DenseLayer),
    GlobalAvgPool,
    Flatten,
    /// Training-only annotation; a no-op at inference.
    Dropout {
        rate: f32,
    },
    Softmax,
}

impl Layer {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::DepthwiseConv(_) => "depthwise_conv",
            Layer::InvertedResidual(_) => "inverted_residual",
            Layer::FullyConnected(_) => "fully_connected",
            Layer::GlobalAvgPool => "global_avg_pool",
            Layer::Flatten => "flatten",
            Layer::Dropout { .. } => "dropout",
            Layer::Softmax => "softmax",
        }
    }

    pub fn parameter_count(&self) -> usize {
        match self {
            Layer::Conv(c) | Layer::DepthwiseConv(c) => c.parameter_count(),
            Layer::InvertedResidual(b) => b.parameter_count(),
            Layer::FullyConnected(d) => d.parameter_count(),
            _ => 0,
        }
    }

    pub fn activation(&self) -> ActivationKind {
        match self {
            Layer::Conv(c) | Layer::DepthwiseConv(c) => c.spec.activation,
            Layer::InvertedResidual(_) => ActivationKind::None,
            Layer::FullyConnected(d) => d.activation,
            Layer::Softmax => ActivationKind::Softmax,
            _ => ActivationKind::None,
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kind_name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub meta: ModelMeta,
    pub input: InputSpec,
    /// Parameters for quantizing the preprocessed image, quantized models only.
    pub input_quant: Option<QuantParams>,
    pub layers: Vec<Layer>,
    pub labels: Vec<String>,
}

impl Model {
    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(Layer::parameter_count).sum()
    }

    /// Parameters of the dense layers after global pooling.
    pub fn head_parameter_count(&self) -> usize {
        let start = self.layers.iter().rposition(|l| matches!(l, Layer::GlobalAvgPool)).map_or(0, |i| i + 1);
        self.layers[start..].iter().filter(|l| matches!(l, Layer::FullyConnected(_))).map(Layer::parameter_count).sum()
    }

    pub fn input_shape(&self) -> Option<crate::tensor::Shape> {
        crate::tensor::Shape::new(1, self.input.height, self.input.width, self.input.channels).ok()
    }
}
