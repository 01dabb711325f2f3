//! Small deterministic models for tests, fixtures and demos.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{
    Backbone, ConvLayer, DenseLayer, InputSpec, InvertedResidualLayer, Layer, Model, ModelMeta, ParamEntry, ParamKind,
    ParamSpec, ParameterBundle,
};
use crate::labels::default_labels;
use crate::ops::{ActivationKind, ConvSpec, Padding};
use crate::tensor::{Shape, Tensor};

/// xorshift64*; good enough for weight noise and keeps the core dependency free.
pub struct SampleRng(u64);

impl SampleRng {
    pub fn new(seed: u64) -> Self {
        SampleRng(seed ^ 0x9E37_79B9_7F4A_7C15 | 1)
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.0 = x;
        x.wrapping_mul(0x2545_F491_4F6C_DD1D)
    }

    /// Uniform in `[-1, 1)`.
    pub fn signed(&mut self) -> f32 {
        (self.next_u64() >> 40) as f32 / (1u64 << 23) as f32 - 1.0
    }
}

fn tensor(rng: &mut SampleRng, dims: [usize; 4], fan_in: usize) -> Tensor {
    let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]).expect("sample dims");
    let limit = libm::sqrtf(6.0 / fan_in as f32);
    let data = (0..shape.len()).map(|_| rng.signed() * limit).collect();
    Tensor::from_f32(shape, data).expect("sample tensor")
}

fn bias(rng: &mut SampleRng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.signed() * 0.1).collect()
}

fn conv(rng: &mut SampleRng, k: usize, stride: usize, cin: usize, cout: usize, act: ActivationKind) -> ConvLayer {
    let spec = ConvSpec::new(k, k, stride, Padding::Same, act).expect("sample spec");
    ConvLayer::float(spec, tensor(rng, [k, k, cin, cout], k * k * cin), bias(rng, cout))
}

fn depthwise(rng: &mut SampleRng, stride: usize, c: usize, act: ActivationKind) -> ConvLayer {
    let spec = ConvSpec::new(3, 3, stride, Padding::Same, act).expect("sample spec");
    ConvLayer::float(spec, tensor(rng, [3, 3, c, 1], 9), bias(rng, c))
}

fn dense(rng: &mut SampleRng, fan_in: usize, fan_out: usize, act: ActivationKind) -> Layer {
    Layer::FullyConnected(DenseLayer::float(act, tensor(rng, [1, 1, fan_in, fan_out], fan_in), bias(rng, fan_out)))
}

/// An 8x8 RGB float model touching every layer kind and activation: strided
/// conv, depthwise, residual and plain inverted-residual blocks, a tanh
/// conv, pooling, a sigmoid hidden layer, dropout and a softmax head.
pub fn tiny_model(seed: u64) -> Model {
    let mut rng = SampleRng::new(seed);
    let r = &mut rng;
    use ActivationKind::*;
    let layers = vec![
        Layer::Conv(conv(r, 3, 2, 3, 8, Relu6)),
        Layer::DepthwiseConv(depthwise(r, 1, 8, Relu)),
        Layer::InvertedResidual(InvertedResidualLayer {
            expand: Some(conv(r, 1, 1, 8, 16, Relu6)),
            depthwise: depthwise(r, 1, 16, Relu6),
            project: conv(r, 1, 1, 16, 8, None),
            residual: true,
            add_quant: Option::None,
        }),
        Layer::InvertedResidual(InvertedResidualLayer {
            expand: Option::None,
            depthwise: depthwise(r, 2, 8, Relu6),
            project: conv(r, 1, 1, 8, 12, None),
            residual: false,
            add_quant: Option::None,
        }),
        Layer::Conv(conv(r, 1, 1, 12, 16, Tanh)),
        Layer::GlobalAvgPool,
        Layer::Flatten,
        dense(r, 16, 20, Sigmoid),
        Layer::Dropout { rate: 0.5 },
        dense(r, 20, 30, Selu),
        Layer::Softmax,
    ];
    Model {
        meta: ModelMeta {
            name: String::from("tiny"),
            revision: 1,
            backbone: Backbone::Generic,
            quantized: false,
            calibration_images: 0,
        },
        input: InputSpec::rgb(8, 8),
        input_quant: Option::None,
        layers,
        labels: default_labels(),
    }
}

/// Preprocessed random images matching `model`'s input.
pub fn random_inputs(model: &Model, count: usize, seed: u64) -> Vec<Tensor> {
    let shape = model.input_shape().expect("model input");
    let mut rng = SampleRng::new(seed);
    (0..count)
        .map(|_| {
            let data = (0..shape.len()).map(|_| rng.signed()).collect();
            Tensor::from_f32(shape, data).expect("sample input")
        })
        .collect()
}

/// He-uniform weights and small biases for every entry of `layout`.
pub fn random_bundle(layout: &[ParamSpec], seed: u64) -> ParameterBundle {
    let mut rng = SampleRng::new(seed);
    let mut bundle = ParameterBundle::new();
    for spec in layout {
        let [kh, kw, cin, _] = spec.shape.dims();
        let fan_in = match spec.kind {
            ParamKind::Depthwise => kh * kw,
            ParamKind::Conv | ParamKind::Dense => kh * kw * cin,
        };
        let weights = tensor(&mut rng, spec.shape.dims(), fan_in);
        let bias = bias(&mut rng, spec.out_channels());
        bundle.insert(spec.name.clone(), ParamEntry::new(weights, bias));
    }
    bundle
}
