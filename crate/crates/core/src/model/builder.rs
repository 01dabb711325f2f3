//! MobileNet V1 and V2 classifiers assembled from named parameters.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use super::validate::{validate, Diagnostic};
use super::{
    Backbone, ConvLayer, DenseLayer, InputSpec, InvertedResidualLayer, Layer, Model, ModelMeta, DEFAULT_INPUT_SIZE,
    HEAD_DROPOUT,
};
use crate::labels::default_labels;
use crate::ops::{fold_batchnorm, ActivationKind, BatchNormParams, ConvSpec, KernelLayout, OpError, Padding};
use crate::tensor::{Shape, Tensor};

/// Units of the dense layers between pooling and the 30-way logits.
pub const V1_HEAD_UNITS: [usize; 1] = [1024];
pub const V2_HEAD_UNITS: [usize; 3] = [256, 1024, 512];

const V1_STEM: usize = 32;
const V1_FEATURES: usize = 1024;
/// `(stride, output channels)` of the 13 depthwise-separable stages.
const V1_STAGES: [(usize, usize); 13] = [
    (1, 64),
    (2, 128),
    (1, 128),
    (2, 256),
    (1, 256),
    (2, 512),
    (1, 512),
    (1, 512),
    (1, 512),
    (1, 512),
    (1, 512),
    (2, 1024),
    (1, 1024),
];

const V2_STEM: usize = 32;
const V2_FEATURES: usize = 1280;
/// `(expansion, output channels, repeats, first stride)`.
const V2_STAGES: [(usize, usize, usize, usize); 7] =
    [(1, 16, 1, 1), (6, 24, 2, 2), (6, 32, 3, 2), (6, 64, 4, 2), (6, 96, 3, 1), (6, 160, 3, 2), (6, 320, 1, 1)];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Conv,
    Depthwise,
    Dense,
}

impl ParamKind {
    pub fn layout(self) -> KernelLayout {
        match self {
            ParamKind::Depthwise => KernelLayout::Depthwise,
            ParamKind::Conv | ParamKind::Dense => KernelLayout::Dense,
        }
    }
}

/// One weight tensor a topology expects, with its shape.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
    pub shape: Shape,
}

impl ParamSpec {
    fn new(name: String, kind: ParamKind, dims: [usize; 4]) -> Self {
        let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]).expect("layout dims are non-zero");
        ParamSpec { name, kind, shape }
    }

    pub fn out_channels(&self) -> usize {
        self.shape.dims()[self.kind.layout().out_axis()]
    }
}

/// Float weights for one layer. A missing bias is zero; a batch norm, when
/// present, is folded in at build time.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub weights: Tensor,
    pub bias: Option<Vec<f32>>,
    pub batch_norm: Option<BatchNormParams>,
}

impl ParamEntry {
    pub fn new(weights: Tensor, bias: Vec<f32>) -> Self {
        ParamEntry { weights, bias: Some(bias), batch_norm: None }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterBundle {
    entries: BTreeMap<String, ParamEntry>,
}

impl ParameterBundle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, entry: ParamEntry) -> Option<ParamEntry> {
        self.entries.insert(name.into(), entry)
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamEntry> {
        self.entries.get_mut(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<ParamEntry> {
        self.entries.remove(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BuildError {
    Missing(String),
    Misshaped { name: String, expected: Shape, actual: Shape },
    NotFloat(String),
    BiasLength { name: String, expected: usize, actual: usize },
    BatchNorm { name: String, source: OpError },
    Invalid(Vec<Diagnostic>),
}

impl fmt::Display for BuildError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BuildError::Missing(name) => write!(f, "layer {name}: weights missing from bundle"),
            BuildError::Misshaped { name, expected, actual } => {
                write!(f, "layer {name}: weights are {actual}, expected {expected}")
            }
            BuildError::NotFloat(name) => write!(f, "layer {name}: weights must be f32"),
            BuildError::BiasLength { name, expected, actual } => {
                write!(f, "layer {name}: bias has {actual} entries, expected {expected}")
            }
            BuildError::BatchNorm { name, source } => write!(f, "layer {name}: {source}"),
            BuildError::Invalid(diags) => {
                f.write_str("built model does not validate")?;
                for d in diags {
                    write!(f, "; {d}")?;
                }
                Ok(())
            }
        }
    }
}

impl core::error::Error for BuildError {}

struct V2Block {
    index: usize,
    in_c: usize,
    hidden: usize,
    out_c: usize,
    stride: usize,
    expand: bool,
}

impl V2Block {
    fn residual(&self) -> bool {
        self.stride == 1 && self.in_c == self.out_c
    }
}

fn v2_blocks() -> Vec<V2Block> {
    let mut blocks = Vec::new();
    let mut in_c = V2_STEM;
    for (t, c, n, s) in V2_STAGES {
        for j in 0..n {
            blocks.push(V2Block {
                index: blocks.len(),
                in_c,
                hidden: in_c * t,
                out_c: c,
                stride: if j == 0 { s } else { 1 },
                expand: t != 1,
            });
            in_c = c;
        }
    }
    blocks
}

fn head_layout(features: usize, units: &[usize]) -> Vec<ParamSpec> {
    let mut specs = Vec::new();
    let mut fan_in = features;
    for (i, &u) in units.iter().enumerate() {
        specs.push(ParamSpec::new(format!("head.fc{}", i + 1), ParamKind::Dense, [1, 1, fan_in, u]));
        fan_in = u;
    }
    specs.push(ParamSpec::new("head.logits".to_string(), ParamKind::Dense, [1, 1, fan_in, crate::NUM_CLASSES]));
    specs
}

/// Every weight tensor of the V1 classifier, in execution order.
pub fn mobilenet_v1_layout() -> Vec<ParamSpec> {
    let mut specs = vec![ParamSpec::new("stem".to_string(), ParamKind::Conv, [3, 3, 3, V1_STEM])];
    let mut in_c = V1_STEM;
    for (i, (_, out)) in V1_STAGES.iter().enumerate() {
        specs.push(ParamSpec::new(format!("block{i}.depthwise"), ParamKind::Depthwise, [3, 3, in_c, 1]));
        specs.push(ParamSpec::new(format!("block{i}.pointwise"), ParamKind::Conv, [1, 1, in_c, *out]));
        in_c = *out;
    }
    specs.extend(head_layout(V1_FEATURES, &V1_HEAD_UNITS));
    specs
}

/// Every weight tensor of the V2 classifier, in execution order.
pub fn mobilenet_v2_layout() -> Vec<ParamSpec> {
    let mut specs = vec![ParamSpec::new("stem".to_string(), ParamKind::Conv, [3, 3, 3, V2_STEM])];
    for b in v2_blocks() {
        let i = b.index;
        if b.expand {
            specs.push(ParamSpec::new(format!("block{i}.expand"), ParamKind::Conv, [1, 1, b.in_c, b.hidden]));
        }
        specs.push(ParamSpec::new(format!("block{i}.depthwise"), ParamKind::Depthwise, [3, 3, b.hidden, 1]));
        specs.push(ParamSpec::new(format!("block{i}.project"), ParamKind::Conv, [1, 1, b.hidden, b.out_c]));
    }
    let last_in = V2_STAGES[V2_STAGES.len() - 1].1;
    specs.push(ParamSpec::new("last_conv".to_string(), ParamKind::Conv, [1, 1, last_in, V2_FEATURES]));
    specs.extend(head_layout(V2_FEATURES, &V2_HEAD_UNITS));
    specs
}

/// Looks up, checks and BN-folds one layer's parameters.
fn take(bundle: &ParameterBundle, spec: &ParamSpec) -> Result<(Tensor, Vec<f32>), BuildError> {
    let entry = bundle.get(&spec.name).ok_or_else(|| BuildError::Missing(spec.name.clone()))?;
    let actual = entry.weights.shape();
    if actual != spec.shape {
        return Err(BuildError::Misshaped { name: spec.name.clone(), expected: spec.shape, actual });
    }
    if entry.weights.as_f32().is_err() {
        return Err(BuildError::NotFloat(spec.name.clone()));
    }
    let out_c = spec.out_channels();
    let bias = entry.bias.clone().unwrap_or_else(|| vec![0.0; out_c]);
    if bias.len() != out_c {
        return Err(BuildError::BiasLength { name: spec.name.clone(), expected: out_c, actual: bias.len() });
    }
    match &entry.batch_norm {
        None => Ok((entry.weights.clone(), bias)),
        Some(bn) => fold_batchnorm(&entry.weights, &bias, bn, spec.kind.layout())
            .map_err(|source| BuildError::BatchNorm { name: spec.name.clone(), source }),
    }
}

fn conv(bundle: &ParameterBundle, spec: &ParamSpec, conv: ConvSpec) -> Result<ConvLayer, BuildError> {
    let (w, b) = take(bundle, spec)?;
    Ok(ConvLayer::float(conv, w, b))
}

fn spatial(stride: usize, activation: ActivationKind) -> ConvSpec {
    ConvSpec { kernel_h: 3, kernel_w: 3, stride, padding: Padding::Same, activation }
}

fn push_head(
    layers: &mut Vec<Layer>,
    bundle: &ParameterBundle,
    specs: &[ParamSpec],
    activations: &[ActivationKind],
) -> Result<(), BuildError> {
    layers.push(Layer::GlobalAvgPool);
    layers.push(Layer::Flatten);
    let (hidden, logits) = specs.split_at(specs.len() - 1);
    for (spec, &act) in hidden.iter().zip(activations) {
        let (w, b) = take(bundle, spec)?;
        layers.push(Layer::FullyConnected(DenseLayer::float(act, w, b)));
    }
    layers.push(Layer::Dropout { rate: HEAD_DROPOUT });
    let (w, b) = take(bundle, &logits[0])?;
    layers.push(Layer::FullyConnected(DenseLayer::float(ActivationKind::None, w, b)));
    layers.push(Layer::Softmax);
    Ok(())
}

fn finish(backbone: Backbone, input: InputSpec, layers: Vec<Layer>) -> Result<Model, BuildError> {
    let model = Model {
        meta: ModelMeta {
            name: format!("mobilenet-{}", backbone.name()),
            revision: 1,
            backbone,
            quantized: false,
            calibration_images: 0,
        },
        input,
        input_quant: None,
        layers,
        labels: default_labels(),
    };
    validate(&model).map_err(BuildError::Invalid)?;
    Ok(model)
}

/// Full first convolution, 13 depthwise-separable stages, then pool →
/// flatten → FC(1024, sigmoid) → dropout(0.7) → FC(30) → softmax.
pub fn build_mobilenet_v1_classifier(bundle: &ParameterBundle) -> Result<Model, BuildError> {
    build_classifier(Backbone::V1, bundle, InputSpec::rgb(DEFAULT_INPUT_SIZE, DEFAULT_INPUT_SIZE))
}

/// Inverted-residual backbone, then pool → flatten → FC(256, relu) →
/// FC(1024, relu) → FC(512, sigmoid) → dropout(0.7) → FC(30) → softmax.
pub fn build_mobilenet_v2_classifier(bundle: &ParameterBundle) -> Result<Model, BuildError> {
    build_classifier(Backbone::V2, bundle, InputSpec::rgb(DEFAULT_INPUT_SIZE, DEFAULT_INPUT_SIZE))
}

/// Either topology at a chosen input resolution. `Backbone::Generic` has no
/// fixed topology and is rejected as missing every parameter.
pub fn build_classifier(backbone: Backbone, bundle: &ParameterBundle, input: InputSpec) -> Result<Model, BuildError> {
    match backbone {
        Backbone::V1 => build_v1(bundle, input),
        Backbone::V2 => build_v2(bundle, input),
        Backbone::Generic => Err(BuildError::Missing("stem".to_string())),
    }
}

fn build_v1(bundle: &ParameterBundle, input: InputSpec) -> Result<Model, BuildError> {
    let specs = mobilenet_v1_layout();
    let mut layers = vec![Layer::Conv(conv(bundle, &specs[0], spatial(2, ActivationKind::Relu))?)];
    for (i, (stride, _)) in V1_STAGES.iter().enumerate() {
        let dw = &specs[1 + 2 * i];
        let pw = &specs[2 + 2 * i];
        layers.push(Layer::DepthwiseConv(conv(bundle, dw, spatial(*stride, ActivationKind::Relu))?));
        layers.push(Layer::Conv(conv(bundle, pw, ConvSpec::pointwise(ActivationKind::Relu))?));
    }
    push_head(&mut layers, bundle, &specs[1 + 2 * V1_STAGES.len()..], &[ActivationKind::Sigmoid])?;
    finish(Backbone::V1, input, layers)
}

fn build_v2(bundle: &ParameterBundle, input: InputSpec) -> Result<Model, BuildError> {
    let specs = mobilenet_v2_layout();
    let mut next = specs.iter();
    let mut spec = || next.next().expect("layout covers the topology");
    let mut layers = vec![Layer::Conv(conv(bundle, spec(), spatial(2, ActivationKind::Relu6))?)];
    for b in v2_blocks() {
        let expand =
            if b.expand { Some(conv(bundle, spec(), ConvSpec::pointwise(ActivationKind::Relu6))?) } else { None };
        let depthwise = conv(bundle, spec(), spatial(b.stride, ActivationKind::Relu6))?;
        let project = conv(bundle, spec(), ConvSpec::pointwise(ActivationKind::None))?;
        layers.push(Layer::InvertedResidual(InvertedResidualLayer {
            expand,
            depthwise,
            project,
            residual: b.residual(),
            add_quant: None,
        }));
    }
    layers.push(Layer::Conv(conv(bundle, spec(), ConvSpec::pointwise(ActivationKind::Relu6))?));
    let head: Vec<ParamSpec> = next.cloned().collect();
    push_head(&mut layers, bundle, &head, &[ActivationKind::Relu, ActivationKind::Relu, ActivationKind::Sigmoid])?;
    finish(Backbone::V2, input, layers)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_bundle(layout: &[ParamSpec]) -> ParameterBundle {
        let mut bundle = ParameterBundle::new();
        for spec in layout {
            let w = Tensor::from_f32(spec.shape, vec![0.01; spec.shape.len()]).unwrap();
            bundle.insert(spec.name.clone(), ParamEntry { weights: w, bias: None, batch_norm: None });
        }
        bundle
    }

    #[test]
    fn v1_layout_has_27_kernels() {
        let layout = mobilenet_v1_layout();
        assert_eq!(layout.len(), 1 + 26 + 2);
        assert_eq!(layout[26].shape, Shape::new(1, 1, 1024, 1024).unwrap());
    }

    #[test]
    fn v2_residual_rule() {
        let blocks = v2_blocks();
        assert_eq!(blocks.len(), 17);
        for b in &blocks {
            assert_eq!(b.residual(), b.stride == 1 && b.in_c == b.out_c);
        }
        assert_eq!(blocks.iter().filter(|b| b.residual()).count(), 10);
        assert!(!blocks[0].expand);
    }

    #[test]
    fn missing_and_misshaped_name_the_layer() {
        let layout = mobilenet_v1_layout();
        let mut bundle = constant_bundle(&layout);
        bundle.remove("block3.pointwise");
        let err = build_mobilenet_v1_classifier(&bundle).unwrap_err();
        assert_eq!(err, BuildError::Missing("block3.pointwise".into()));
        assert!(err.to_string().contains("block3.pointwise"));

        let mut bundle = constant_bundle(&layout);
        bundle.get_mut("head.fc1").unwrap().weights = Tensor::zeros(Shape::new(1, 1, 1000, 1024).unwrap());
        let err = build_mobilenet_v1_classifier(&bundle).unwrap_err();
        assert!(matches!(err, BuildError::Misshaped { ref name, .. } if name == "head.fc1"));
    }

    #[test]
    fn batch_norm_is_folded_at_build() {
        let layout = mobilenet_v1_layout();
        let mut bundle = constant_bundle(&layout);
        bundle.get_mut("stem").unwrap().batch_norm = Some(BatchNormParams {
            gamma: vec![2.0; 32],
            beta: vec![0.5; 32],
            mean: vec![0.0; 32],
            variance: vec![3.0; 32],
            epsilon: 1.0,
        });
        let m = build_classifier(Backbone::V1, &bundle, InputSpec::rgb(32, 32)).unwrap();
        let Layer::Conv(stem) = &m.layers[0] else { panic!() };
        assert_eq!(stem.weights.as_f32().unwrap()[0], 0.01);
        assert_eq!(stem.bias, super::super::Bias::F32(vec![0.5; 32]));
    }
}
