//! Structural checks run on every built or loaded model.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use super::{Bias, ConvLayer, DenseLayer, Layer, Model};
use crate::ops::quantized::ActQuant;
use crate::ops::{
    check_conv_weights, check_dense_weights, check_depthwise_weights, ActivationKind, KernelLayout, OpError,
};
use crate::tensor::{DType, QuantParams, Shape, Tensor};
use crate::NUM_CLASSES;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    /// Index of the offending layer; `None` for model-level problems.
    pub layer: Option<usize>,
    pub message: String,
}

impl Diagnostic {
    fn model(message: String) -> Self {
        Diagnostic { layer: None, message }
    }

    fn at(layer: usize, message: String) -> Self {
        Diagnostic { layer: Some(layer), message }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.layer {
            Some(i) => write!(f, "layer {i}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// Chains shapes from the input spec through every layer to the 30-way
/// output, and checks dtypes and quantization metadata. Never panics.
pub fn validate(model: &Model) -> Result<(), Vec<Diagnostic>> {
    let mut diags = Vec::new();
    check_labels(model, &mut diags);
    let Some(mut shape) = model.input_shape() else {
        diags.push(Diagnostic::model(format!(
            "input spec {}x{}x{} has a zero dimension",
            model.input.height, model.input.width, model.input.channels
        )));
        return Err(diags);
    };
    if model.input.channels != 3 {
        diags.push(Diagnostic::model(format!("input must have 3 channels, got {}", model.input.channels)));
    }
    let quantized = model.meta.quantized;
    match (&model.input_quant, quantized) {
        (None, true) => diags.push(Diagnostic::model("quantized model has no input quantization".into())),
        (Some(_), false) => diags.push(Diagnostic::model("float model carries input quantization".into())),
        (Some(q), true) => check_activation_quant(None, "input", q, &mut diags),
        _ => {}
    }
    if model.layers.is_empty() {
        diags.push(Diagnostic::model("model has no layers".into()));
        return Err(diags);
    }

    let last = model.layers.len() - 1;
    for (i, layer) in model.layers.iter().enumerate() {
        let ctx = Ctx { model, index: i, quantized };
        match layer_output(&ctx, layer, shape, &mut diags) {
            Some(next) => shape = next,
            None => return Err(diags),
        }
        if layer.activation() == ActivationKind::Softmax && i != last {
            diags.push(Diagnostic::at(i, "softmax must be the final operation".into()));
        }
    }
    if model.layers[last].activation() != ActivationKind::Softmax {
        diags.push(Diagnostic::at(last, format!("final layer {} does not produce probabilities", model.layers[last])));
    }
    if shape.dims() != [1, 1, 1, NUM_CLASSES] {
        diags.push(Diagnostic::at(last, format!("model output is {shape}, expected 1x1x1x{NUM_CLASSES}")));
    }

    if diags.is_empty() {
        Ok(())
    } else {
        Err(diags)
    }
}

fn check_labels(model: &Model, diags: &mut Vec<Diagnostic>) {
    if model.labels.len() != NUM_CLASSES {
        diags.push(Diagnostic::model(format!("model has {} labels, expected {NUM_CLASSES}", model.labels.len())));
    }
    let mut seen = BTreeSet::new();
    for (i, label) in model.labels.iter().enumerate() {
        if label.is_empty() {
            diags.push(Diagnostic::model(format!("label {i} is empty")));
        } else if !seen.insert(label.as_str()) {
            diags.push(Diagnostic::model(format!("label {label:?} is duplicated")));
        }
    }
}

struct Ctx<'a> {
    model: &'a Model,
    index: usize,
    quantized: bool,
}

impl Ctx<'_> {
    fn producer(&self) -> String {
        match self.index.checked_sub(1) {
            Some(p) => format!("layer {p} ({})", self.model.layers[p]),
            None => String::from("the model input"),
        }
    }

    fn diag(&self, message: String) -> Diagnostic {
        Diagnostic::at(self.index, message)
    }

    /// Names both ends of a broken link.
    fn link_error(&self, what: &str, err: OpError, input: Shape) -> Diagnostic {
        let me = self.model.layers[self.index].kind_name();
        let message = match err {
            OpError::ChannelMismatch { expected, actual } => format!(
                "{what} ({me}) expects {expected} input channels but {} produces {actual} ({input})",
                self.producer()
            ),
            OpError::NotFlat(s) => {
                format!("{what} ({me}) needs a flat input but {} produces {s}", self.producer())
            }
            other => format!("{what} ({me}) on input {input}: {other}"),
        };
        self.diag(message)
    }
}

fn layer_output(ctx: &Ctx, layer: &Layer, shape: Shape, diags: &mut Vec<Diagnostic>) -> Option<Shape> {
    match layer {
        Layer::Conv(c) => conv_output(ctx, "conv", c, KernelLayout::Dense, shape, true, diags),
        Layer::DepthwiseConv(c) => conv_output(ctx, "depthwise", c, KernelLayout::Depthwise, shape, true, diags),
        Layer::InvertedResidual(b) => {
            let mut s = shape;
            if let Some(e) = &b.expand {
                s = conv_output(ctx, "expand", e, KernelLayout::Dense, s, false, diags)?;
            }
            s = conv_output(ctx, "depthwise", &b.depthwise, KernelLayout::Depthwise, s, false, diags)?;
            s = conv_output(ctx, "project", &b.project, KernelLayout::Dense, s, false, diags)?;
            if b.residual {
                if b.depthwise.spec.stride != 1 {
                    diags.push(ctx.diag(format!("residual block has stride {}", b.depthwise.spec.stride)));
                }
                if s != shape {
                    diags.push(ctx.diag(format!("residual add between {shape} and {s}")));
                }
            }
            match (&b.add_quant, ctx.quantized && b.residual) {
                (Some(q), true) => check_activation_quant(Some(ctx.index), "residual add", q, diags),
                (None, true) => diags.push(ctx.diag("residual add has no output quantization".into())),
                (Some(_), false) => diags.push(ctx.diag("unexpected residual quantization".into())),
                (None, false) => {}
            }
            Some(s)
        }
        Layer::FullyConnected(d) => dense_output(ctx, d, shape, diags),
        Layer::GlobalAvgPool => Shape::new(shape.n(), 1, 1, shape.c()).ok(),
        Layer::Flatten => Shape::new(shape.n(), 1, 1, shape.h() * shape.w() * shape.c()).ok(),
        Layer::Dropout { rate } => {
            if !(0.0..1.0).contains(rate) {
                diags.push(ctx.diag(format!("dropout rate {rate} outside [0, 1)")));
            }
            Some(shape)
        }
        Layer::Softmax => {
            if shape.h() != 1 || shape.w() != 1 {
                diags.push(ctx.diag(format!("softmax input {shape} is not flat ({})", ctx.producer())));
            }
            Some(shape)
        }
    }
}

fn conv_output(
    ctx: &Ctx,
    what: &str,
    c: &ConvLayer,
    layout: KernelLayout,
    input: Shape,
    top_level: bool,
    diags: &mut Vec<Diagnostic>,
) -> Option<Shape> {
    let checked = match layout {
        KernelLayout::Dense => check_conv_weights(input, c.weights.shape(), c.bias.len(), &c.spec),
        KernelLayout::Depthwise => check_depthwise_weights(input, c.weights.shape(), c.bias.len(), &c.spec),
    };
    let geometry = match checked {
        Ok(g) => g,
        Err(e) => {
            diags.push(ctx.link_error(what, e, input));
            return None;
        }
    };
    let act = c.spec.activation;
    if act == ActivationKind::Softmax {
        diags.push(ctx.diag(format!("{what} cannot apply softmax")));
    } else if !top_level && act.needs_lookup_table() {
        diags.push(ctx.diag(format!("{what} inside a block supports only clamp activations, got {act}")));
    }
    check_params(ctx, what, &c.weights, &c.bias, &c.quant, act, layout.out_axis(), diags);
    Some(geometry.output_shape())
}

fn dense_output(ctx: &Ctx, d: &DenseLayer, input: Shape, diags: &mut Vec<Diagnostic>) -> Option<Shape> {
    match check_dense_weights(input, d.weights.shape(), d.bias.len()) {
        Ok((_, out)) => {
            check_params(ctx, "fully connected", &d.weights, &d.bias, &d.quant, d.activation, 3, diags);
            Shape::new(input.n(), 1, 1, out).ok()
        }
        Err(e) => {
            diags.push(ctx.link_error("fully connected", e, input));
            None
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn check_params(
    ctx: &Ctx,
    what: &str,
    weights: &Tensor,
    bias: &Bias,
    quant: &Option<ActQuant>,
    act: ActivationKind,
    out_axis: usize,
    diags: &mut Vec<Diagnostic>,
) {
    if !ctx.quantized {
        if weights.dtype() != DType::F32 {
            diags.push(ctx.diag(format!("{what} weights must be f32 in a float model")));
        }
        if !matches!(bias, Bias::F32(_)) {
            diags.push(ctx.diag(format!("{what} bias must be f32 in a float model")));
        }
        if quant.is_some() {
            diags.push(ctx.diag(format!("{what} carries quantization in a float model")));
        }
        return;
    }
    match weights.quant() {
        None => diags.push(ctx.diag(format!("{what} weights are not int8"))),
        Some(q) => {
            if q.zero_point() != 0 {
                diags.push(ctx.diag(format!("{what} weights must be symmetric")));
            }
            if q.axis().is_some_and(|a| a != out_axis) {
                diags.push(ctx.diag(format!("{what} weight scales must run along axis {out_axis}")));
            }
        }
    }
    if !matches!(bias, Bias::I32(_)) {
        diags.push(ctx.diag(format!("{what} bias must be int32 in a quantized model")));
    }
    match quant {
        None => diags.push(ctx.diag(format!("{what} has no output scale"))),
        Some(q) => {
            check_activation_quant(Some(ctx.index), what, &q.output, diags);
            let needs_pre = act.needs_lookup_table();
            match (&q.pre_activation, needs_pre) {
                (Some(p), true) => check_activation_quant(Some(ctx.index), what, p, diags),
                (None, true) => diags.push(ctx.diag(format!("{what} {act} has no pre-activation scale"))),
                (Some(_), false) => diags.push(ctx.diag(format!("{what} has an unused pre-activation scale"))),
                (None, false) => {}
            }
        }
    }
}

fn check_activation_quant(layer: Option<usize>, what: &str, q: &QuantParams, diags: &mut Vec<Diagnostic>) {
    if q.is_per_channel() {
        diags.push(Diagnostic { layer, message: format!("{what} activations must be quantized per tensor") });
    }
}
