//! Straight-line layer walk over two ping-pong activation buffers.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::mem;

use super::{Bias, ConvLayer, DenseLayer, InvertedResidualLayer, Layer, Model};
use crate::exec::{RowExecutor, Sequential};
use crate::ops::quantized::{
    conv2d_i8, dense_i8, depthwise_i8, global_avg_pool_i8, ActQuant, AddRequantizer, Requantizer,
};
use crate::ops::{
    check_conv_weights, check_dense_weights, check_depthwise_weights, conv2d_f32, dense_f32, depthwise_f32,
    global_avg_pool_f32, softmax_in_place, ActivationKind, ConvGeometry, OpError,
};
use crate::tensor::{QuantParams, Shape, Tensor, TensorError};

/// An intermediate tensor of a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TensorId {
    Input,
    /// Output of layer `i`, after its activation.
    Output(usize),
    /// Output of layer `i` before a table, or softmax, activation.
    PreActivation(usize),
    Expand(usize),
    Depthwise(usize),
    /// Projection of block `i` before the residual add.
    Project(usize),
}

/// Receives float intermediates; used by calibration. Quantized passes do not
/// report to observers.
pub trait Observer {
    fn observe(&mut self, id: TensorId, values: &[f32]);

    fn wants_pre_activation(&self) -> bool {
        false
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct NoObserver;

impl Observer for NoObserver {
    fn observe(&mut self, _: TensorId, _: &[f32]) {}
}

#[derive(Clone, Debug, PartialEq)]
pub enum InferError {
    InputShape { expected: Shape, actual: Shape },
    InputNotFloat,
    InvalidInputSpec,
    Layer { index: usize, source: OpError },
    TopK { requested: usize, classes: usize },
    Threshold(f32),
}

impl fmt::Display for InferError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InferError::InputShape { expected, actual } => {
                write!(f, "image tensor is {actual}, model expects {expected}")
            }
            InferError::InputNotFloat => f.write_str("image tensor must be preprocessed f32"),
            InferError::InvalidInputSpec => f.write_str("model input spec has a zero dimension"),
            InferError::Layer { index, source } => write!(f, "layer {index}: {source}"),
            InferError::TopK { requested, classes } => {
                write!(f, "top-k must be between 1 and {classes}, got {requested}")
            }
            InferError::Threshold(t) => write!(f, "threshold must be within [0, 1], got {t}"),
        }
    }
}

impl core::error::Error for InferError {}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub index: usize,
    pub label: String,
    pub probability: f32,
}

/// Ranked classes, most probable first. Empty when the best probability is
/// below the rejection threshold.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScenePrediction {
    pub ranked: Vec<Prediction>,
}

impl ScenePrediction {
    /// Top `top_k` classes by probability, lower index first on ties.
    pub fn from_probabilities(probs: &[f32], labels: &[String], top_k: usize, threshold: f32) -> Self {
        let order = rank(probs);
        let Some(&best) = order.first() else { return Self::default() };
        if probs[best] < threshold {
            return Self::default();
        }
        let ranked = order
            .into_iter()
            .take(top_k)
            .map(|index| Prediction {
                index,
                label: labels.get(index).cloned().unwrap_or_default(),
                probability: probs[index],
            })
            .collect();
        ScenePrediction { ranked }
    }

    pub fn is_empty(&self) -> bool {
        self.ranked.is_empty()
    }

    pub fn len(&self) -> usize {
        self.ranked.len()
    }

    pub fn top(&self) -> Option<&Prediction> {
        self.ranked.first()
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.ranked.iter().map(|p| p.index)
    }
}

/// Class indices by descending probability; ties keep the lower index first.
pub fn rank(probs: &[f32]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    order
}

pub fn infer(model: &Model, image: &Tensor, top_k: usize, threshold: f32) -> Result<ScenePrediction, InferError> {
    infer_with(model, image, &Sequential, top_k, threshold)
}

pub fn infer_with<E: RowExecutor>(
    model: &Model,
    image: &Tensor,
    exec: &E,
    top_k: usize,
    threshold: f32,
) -> Result<ScenePrediction, InferError> {
    let classes = model.labels.len();
    if top_k == 0 || top_k > classes {
        return Err(InferError::TopK { requested: top_k, classes });
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(InferError::Threshold(threshold));
    }
    let probs = forward_with(model, image, exec, &mut NoObserver)?;
    Ok(ScenePrediction::from_probabilities(&probs, &model.labels, top_k, threshold))
}

/// Full probability vector for one preprocessed image.
pub fn forward(model: &Model, image: &Tensor) -> Result<Vec<f32>, InferError> {
    forward_with(model, image, &Sequential, &mut NoObserver)
}

pub fn forward_with<E: RowExecutor, O: Observer>(
    model: &Model,
    image: &Tensor,
    exec: &E,
    observer: &mut O,
) -> Result<Vec<f32>, InferError> {
    let (_, act) = run(model, image, exec, observer, model.layers.len())?;
    Ok(match act {
        Act::F32(v) => v,
        Act::I8(v, q) => v.iter().map(|&c| q.dequantize_value(c)).collect(),
    })
}

/// Output of the first `layers` layers, as a tensor in the model's number
/// format at that point.
pub fn forward_prefix(model: &Model, image: &Tensor, layers: usize) -> Result<Tensor, InferError> {
    let end = layers.min(model.layers.len());
    let (shape, act) = run(model, image, &Sequential, &mut NoObserver, end)?;
    let tensor = match act {
        Act::F32(v) => Tensor::from_f32(shape, v),
        Act::I8(v, q) => Tensor::from_i8(shape, v, q),
    };
    tensor.map_err(|e| InferError::Layer { index: end.saturating_sub(1), source: e.into() })
}

enum Act {
    F32(Vec<f32>),
    I8(Vec<i8>, QuantParams),
}

/// Spare buffers; each layer writes into one and returns the one it read.
#[derive(Default)]
struct Scratch {
    f: [Vec<f32>; 3],
    q: [Vec<i8>; 3],
}

struct Pass<'a, E, O> {
    exec: &'a E,
    observer: &'a mut O,
    scratch: Scratch,
}

fn run<E: RowExecutor, O: Observer>(
    model: &Model,
    image: &Tensor,
    exec: &E,
    observer: &mut O,
    end: usize,
) -> Result<(Shape, Act), InferError> {
    let expected = model.input_shape().ok_or(InferError::InvalidInputSpec)?;
    if image.shape() != expected {
        return Err(InferError::InputShape { expected, actual: image.shape() });
    }
    let x = image.as_f32().map_err(|_| InferError::InputNotFloat)?;
    let mut act = if model.meta.quantized {
        let q =
            model.input_quant.as_ref().ok_or(InferError::Layer { index: 0, source: OpError::MissingQuant("input") })?;
        Act::I8(x.iter().map(|&v| q.quantize_value(v)).collect(), q.clone())
    } else {
        observer.observe(TensorId::Input, x);
        Act::F32(x.to_vec())
    };
    let mut pass = Pass { exec, observer, scratch: Scratch::default() };
    let mut shape = expected;
    for (index, layer) in model.layers[..end].iter().enumerate() {
        let (s, a) = pass.step(index, layer, shape, act).map_err(|source| InferError::Layer { index, source })?;
        shape = s;
        act = a;
    }
    Ok((shape, act))
}

fn float_bias(b: &Bias) -> Result<&[f32], OpError> {
    match b {
        Bias::F32(v) => Ok(v),
        Bias::I32(_) => Err(OpError::InvalidSpec("float layer has an int32 bias")),
    }
}

fn int_bias(b: &Bias) -> Result<&[i32], OpError> {
    match b {
        Bias::I32(v) => Ok(v),
        Bias::F32(_) => Err(OpError::InvalidSpec("quantized layer has a float bias")),
    }
}

fn layer_quant(q: &Option<ActQuant>) -> Result<&ActQuant, OpError> {
    q.as_ref().ok_or(OpError::MissingQuant("layer output"))
}

fn weight_quant(t: &Tensor) -> Result<(&[i8], &QuantParams), OpError> {
    Ok((t.as_i8()?, t.quant().ok_or(OpError::MissingQuant("weights"))?))
}

fn activate_in_place(values: &mut [f32], act: ActivationKind) {
    if act == ActivationKind::Softmax {
        softmax_in_place(values);
    } else {
        for v in values {
            *v = act.apply_scalar(*v);
        }
    }
}

#[derive(Clone, Copy)]
enum Kernel {
    Conv,
    Depthwise,
}

impl<E: RowExecutor, O: Observer> Pass<'_, E, O> {
    fn step(&mut self, index: usize, layer: &Layer, shape: Shape, act: Act) -> Result<(Shape, Act), OpError> {
        match (layer, act) {
            (Layer::Conv(c), Act::F32(x)) => self.conv_f32(index, c, Kernel::Conv, shape, x, 0),
            (Layer::DepthwiseConv(c), Act::F32(x)) => self.conv_f32(index, c, Kernel::Depthwise, shape, x, 0),
            (Layer::Conv(c), Act::I8(x, q)) => self.conv_i8(c, Kernel::Conv, shape, x, &q, 0),
            (Layer::DepthwiseConv(c), Act::I8(x, q)) => self.conv_i8(c, Kernel::Depthwise, shape, x, &q, 0),
            (Layer::InvertedResidual(b), Act::F32(x)) => self.block_f32(index, b, shape, x),
            (Layer::InvertedResidual(b), Act::I8(x, q)) => self.block_i8(b, shape, x, q),
            (Layer::FullyConnected(d), Act::F32(x)) => self.dense_f32(index, d, shape, x),
            (Layer::FullyConnected(d), Act::I8(x, q)) => self.dense_i8(d, shape, x, &q),
            (Layer::GlobalAvgPool, Act::F32(x)) => {
                let out_shape = Shape::new(shape.n(), 1, 1, shape.c())?;
                let mut out = mem::take(&mut self.scratch.f[0]);
                global_avg_pool_f32(shape, &x, &mut out);
                self.scratch.f[0] = x;
                self.observer.observe(TensorId::Output(index), &out);
                Ok((out_shape, Act::F32(out)))
            }
            (Layer::GlobalAvgPool, Act::I8(x, q)) => {
                let out_shape = Shape::new(shape.n(), 1, 1, shape.c())?;
                let mut out = mem::take(&mut self.scratch.q[0]);
                global_avg_pool_i8(shape, &x, &mut out);
                self.scratch.q[0] = x;
                Ok((out_shape, Act::I8(out, q)))
            }
            (Layer::Flatten, act) => {
                let out_shape = Shape::new(shape.n(), 1, 1, shape.h() * shape.w() * shape.c())?;
                if let Act::F32(x) = &act {
                    self.observer.observe(TensorId::Output(index), x);
                }
                Ok((out_shape, act))
            }
            (Layer::Dropout { .. }, act) => {
                if let Act::F32(x) = &act {
                    self.observer.observe(TensorId::Output(index), x);
                }
                Ok((shape, act))
            }
            (Layer::Softmax, act) => {
                if shape.h() != 1 || shape.w() != 1 || shape.n() != 1 {
                    return Err(OpError::SoftmaxShape(shape));
                }
                let mut x = match act {
                    Act::F32(x) => x,
                    Act::I8(x, q) => x.iter().map(|&c| q.dequantize_value(c)).collect(),
                };
                softmax_in_place(&mut x);
                self.observer.observe(TensorId::Output(index), &x);
                Ok((shape, Act::F32(x)))
            }
        }
    }

    fn geometry(c: &ConvLayer, kernel: Kernel, shape: Shape) -> Result<ConvGeometry, OpError> {
        match kernel {
            Kernel::Conv => check_conv_weights(shape, c.weights.shape(), c.bias.len(), &c.spec),
            Kernel::Depthwise => check_depthwise_weights(shape, c.weights.shape(), c.bias.len(), &c.spec),
        }
    }

    /// Runs one float convolution from `x`, writing into spare slot `slot`.
    /// Returns the output and hands `x` back through the scratch slot when
    /// `slot == 0`; blocks manage their own buffers.
    fn conv_f32(
        &mut self,
        index: usize,
        c: &ConvLayer,
        kernel: Kernel,
        shape: Shape,
        x: Vec<f32>,
        slot: usize,
    ) -> Result<(Shape, Act), OpError> {
        let (out_shape, out) = self.conv_f32_into(Some(index), c, kernel, shape, &x, slot)?;
        self.scratch.f[slot] = x;
        self.observer.observe(TensorId::Output(index), &out);
        Ok((out_shape, Act::F32(out)))
    }

    fn conv_f32_into(
        &mut self,
        pre_id: Option<usize>,
        c: &ConvLayer,
        kernel: Kernel,
        shape: Shape,
        x: &[f32],
        slot: usize,
    ) -> Result<(Shape, Vec<f32>), OpError> {
        let g = Self::geometry(c, kernel, shape)?;
        let w = c.weights.as_f32()?;
        let b = float_bias(&c.bias)?;
        let act = c.spec.activation;
        let split = pre_id.is_some() && self.observer.wants_pre_activation() && act.needs_lookup_table();
        let fused = if split { ActivationKind::None } else { act };
        let mut out = mem::take(&mut self.scratch.f[slot]);
        match kernel {
            Kernel::Conv => conv2d_f32(self.exec, &g, x, w, b, fused, &mut out),
            Kernel::Depthwise => depthwise_f32(self.exec, &g, x, w, b, fused, &mut out),
        }
        if let (true, Some(i)) = (split, pre_id) {
            self.observer.observe(TensorId::PreActivation(i), &out);
            activate_in_place(&mut out, act);
        }
        Ok((g.output_shape(), out))
    }

    fn conv_i8(
        &mut self,
        c: &ConvLayer,
        kernel: Kernel,
        shape: Shape,
        x: Vec<i8>,
        xq: &QuantParams,
        slot: usize,
    ) -> Result<(Shape, Act), OpError> {
        let (out_shape, out, q) = self.conv_i8_into(c, kernel, shape, &x, xq, slot)?;
        self.scratch.q[slot] = x;
        Ok((out_shape, Act::I8(out, q)))
    }

    fn conv_i8_into(
        &mut self,
        c: &ConvLayer,
        kernel: Kernel,
        shape: Shape,
        x: &[i8],
        xq: &QuantParams,
        slot: usize,
    ) -> Result<(Shape, Vec<i8>, QuantParams), OpError> {
        let g = Self::geometry(c, kernel, shape)?;
        let (w, wq) = weight_quant(&c.weights)?;
        let b = int_bias(&c.bias)?;
        let quant = layer_quant(&c.quant)?;
        let rq = Requantizer::new(xq.scale(), wq, g.out_c, c.spec.activation, quant)?;
        let mut out = mem::take(&mut self.scratch.q[slot]);
        match kernel {
            Kernel::Conv => conv2d_i8(self.exec, &g, x, xq.zero_point(), w, b, &rq, &mut out),
            Kernel::Depthwise => depthwise_i8(self.exec, &g, x, xq.zero_point(), w, b, &rq, &mut out),
        }
        Ok((g.output_shape(), out, quant.output.clone()))
    }

    fn block_f32(
        &mut self,
        index: usize,
        b: &InvertedResidualLayer,
        shape: Shape,
        x: Vec<f32>,
    ) -> Result<(Shape, Act), OpError> {
        let (mid_shape, expanded) = match &b.expand {
            Some(e) => {
                let (s, v) = self.conv_f32_into(None, e, Kernel::Conv, shape, &x, 1)?;
                self.observer.observe(TensorId::Expand(index), &v);
                (s, Some(v))
            }
            None => (shape, None),
        };
        let dw_in = expanded.as_deref().unwrap_or(&x);
        let (dw_shape, filtered) = self.conv_f32_into(None, &b.depthwise, Kernel::Depthwise, mid_shape, dw_in, 2)?;
        self.observer.observe(TensorId::Depthwise(index), &filtered);
        let (out_shape, mut out) = self.conv_f32_into(None, &b.project, Kernel::Conv, dw_shape, &filtered, 0)?;
        self.observer.observe(TensorId::Project(index), &out);
        if b.residual {
            if out_shape != shape {
                return Err(OpError::ResidualMismatch { input: shape, output: out_shape });
            }
            for (o, &v) in out.iter_mut().zip(&x) {
                *o += v;
            }
        }
        self.observer.observe(TensorId::Output(index), &out);
        self.scratch.f[0] = x;
        if let Some(v) = expanded {
            self.scratch.f[1] = v;
        }
        self.scratch.f[2] = filtered;
        Ok((out_shape, Act::F32(out)))
    }

    fn block_i8(
        &mut self,
        b: &InvertedResidualLayer,
        shape: Shape,
        x: Vec<i8>,
        xq: QuantParams,
    ) -> Result<(Shape, Act), OpError> {
        let (mid_shape, expanded) = match &b.expand {
            Some(e) => {
                let (s, v, q) = self.conv_i8_into(e, Kernel::Conv, shape, &x, &xq, 1)?;
                (s, Some((v, q)))
            }
            None => (shape, None),
        };
        let (dw_in, dw_q) = match &expanded {
            Some((v, q)) => (v.as_slice(), q),
            None => (x.as_slice(), &xq),
        };
        let (dw_shape, filtered, fq) = self.conv_i8_into(&b.depthwise, Kernel::Depthwise, mid_shape, dw_in, dw_q, 2)?;
        let (out_shape, mut out, mut oq) = self.conv_i8_into(&b.project, Kernel::Conv, dw_shape, &filtered, &fq, 0)?;
        if b.residual {
            if out_shape != shape {
                return Err(OpError::ResidualMismatch { input: shape, output: out_shape });
            }
            let sum_q = b.add_quant.as_ref().ok_or(OpError::MissingQuant("residual add"))?;
            let adder = AddRequantizer::new(&oq, &xq, sum_q);
            for (o, &v) in out.iter_mut().zip(&x) {
                *o = adder.add(*o, v);
            }
            oq = sum_q.clone();
        }
        self.scratch.q[0] = x;
        if let Some((v, _)) = expanded {
            self.scratch.q[1] = v;
        }
        self.scratch.q[2] = filtered;
        Ok((out_shape, Act::I8(out, oq)))
    }

    fn dense_f32(&mut self, index: usize, d: &DenseLayer, shape: Shape, x: Vec<f32>) -> Result<(Shape, Act), OpError> {
        let (fan_in, fan_out) = check_dense_weights(shape, d.weights.shape(), d.bias.len())?;
        let w = d.weights.as_f32()?;
        let b = float_bias(&d.bias)?;
        let act = d.activation;
        let split =
            act == ActivationKind::Softmax || (self.observer.wants_pre_activation() && act.needs_lookup_table());
        let fused = if split { ActivationKind::None } else { act };
        let mut out = mem::take(&mut self.scratch.f[0]);
        dense_f32(self.exec, shape.n(), fan_in, fan_out, &x, w, b, fused, &mut out);
        if split {
            self.observer.observe(TensorId::PreActivation(index), &out);
            activate_in_place(&mut out, act);
        }
        self.scratch.f[0] = x;
        self.observer.observe(TensorId::Output(index), &out);
        Ok((Shape::new(shape.n(), 1, 1, fan_out)?, Act::F32(out)))
    }

    fn dense_i8(
        &mut self,
        d: &DenseLayer,
        shape: Shape,
        x: Vec<i8>,
        xq: &QuantParams,
    ) -> Result<(Shape, Act), OpError> {
        let (fan_in, fan_out) = check_dense_weights(shape, d.weights.shape(), d.bias.len())?;
        let (w, wq) = weight_quant(&d.weights)?;
        let b = int_bias(&d.bias)?;
        let quant = layer_quant(&d.quant)?;
        // softmax runs in float on the dequantized logits
        let kernel_act = if d.activation == ActivationKind::Softmax { ActivationKind::None } else { d.activation };
        let rq = Requantizer::new(xq.scale(), wq, fan_out, kernel_act, quant)?;
        let mut out = mem::take(&mut self.scratch.q[0]);
        dense_i8(self.exec, shape.n(), fan_in, fan_out, &x, xq.zero_point(), w, b, &rq, &mut out);
        self.scratch.q[0] = x;
        let out_shape = Shape::new(shape.n(), 1, 1, fan_out)?;
        if d.activation == ActivationKind::Softmax {
            let mut probs: Vec<f32> = out.iter().map(|&c| quant.output.dequantize_value(c)).collect();
            softmax_in_place(&mut probs);
            return Ok((out_shape, Act::F32(probs)));
        }
        Ok((out_shape, Act::I8(out, quant.output.clone())))
    }
}

impl From<TensorError> for InferError {
    fn from(e: TensorError) -> Self {
        InferError::Layer { index: 0, source: e.into() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn ranking_breaks_ties_by_index() {
        let probs = [0.2, 0.3, 0.2, 0.3];
        assert_eq!(rank(&probs), vec![1, 3, 0, 2]);
    }

    #[test]
    fn threshold_empties_prediction() {
        let labels: Vec<String> = (0..4).map(|i| alloc::format!("c{i}")).collect();
        let probs = [0.25f32; 4];
        assert!(ScenePrediction::from_probabilities(&probs, &labels, 2, 0.3).is_empty());
        let p = ScenePrediction::from_probabilities(&probs, &labels, 4, 0.25);
        assert_eq!(p.indices().collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        assert_eq!(p.top().unwrap().label, "c0");
    }
}
