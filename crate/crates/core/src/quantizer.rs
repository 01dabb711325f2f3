//! Post-training INT8 quantization from min/max calibration.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

use crate::exec::Sequential;
use crate::model::{
    forward_with, validate, Bias, ConvLayer, DenseLayer, Diagnostic, InferError, InvertedResidualLayer, Layer, Model,
    Observer, TensorId,
};
use crate::ops::quantized::ActQuant;
use crate::ops::{ActivationKind, KernelLayout};
use crate::tensor::{quantize_tensor, QuantParams, Tensor, TensorError};

/// Scale used when an activation is constantly zero.
pub const DEGENERATE_SCALE: f32 = 1.0 / 256.0;

/// Observed value range of one tensor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Range {
    pub min: f32,
    pub max: f32,
}

impl Range {
    fn include(&mut self, other: Range) {
        self.min = self.min.min(other.min);
        self.max = self.max.max(other.max);
    }

    /// Smallest range holding every non-NaN value, if there is one.
    pub fn of(values: &[f32]) -> Option<Range> {
        values.iter().filter(|v| !v.is_nan()).fold(None, |acc: Option<Range>, &v| {
            Some(match acc {
                None => Range { min: v, max: v },
                Some(r) => Range { min: r.min.min(v), max: r.max.max(v) },
            })
        })
    }

    /// Per-tensor asymmetric parameters for the range widened to contain 0.
    pub fn quant_params(&self) -> Result<QuantParams, TensorError> {
        let lo = self.min.min(0.0) as f64;
        let hi = self.max.max(0.0) as f64;
        if hi == lo {
            return QuantParams::per_tensor(DEGENERATE_SCALE, 0);
        }
        let scale = (hi - lo) / 255.0;
        let zp = libm::rint(-128.0 - lo / scale).clamp(-128.0, 127.0) as i32;
        QuantParams::per_tensor(scale as f32, zp)
    }
}

/// Running min/max per activation tensor over a calibration set.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CalibrationStats {
    ranges: BTreeMap<TensorId, Range>,
    images: usize,
}

impl CalibrationStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn images(&self) -> usize {
        self.images
    }

    pub fn range(&self, id: TensorId) -> Option<Range> {
        self.ranges.get(&id).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (TensorId, Range)> + '_ {
        self.ranges.iter().map(|(k, v)| (*k, *v))
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    /// Order of merging never changes the result.
    pub fn merge(&mut self, other: &CalibrationStats) {
        for (&id, &r) in &other.ranges {
            self.include(id, r);
        }
        self.images += other.images;
    }

    fn include(&mut self, id: TensorId, r: Range) {
        self.ranges.entry(id).and_modify(|e| e.include(r)).or_insert(r);
    }
}

struct Recorder<'a>(&'a mut CalibrationStats);

impl Observer for Recorder<'_> {
    fn observe(&mut self, id: TensorId, values: &[f32]) {
        if let Some(r) = Range::of(values) {
            self.0.include(id, r);
        }
    }

    fn wants_pre_activation(&self) -> bool {
        true
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum QuantizeError {
    NoImages,
    AlreadyQuantized,
    Infer(InferError),
    MissingStats(TensorId),
    Range { id: TensorId, source: TensorError },
    Weights { layer: usize, source: TensorError },
    Invalid(Vec<Diagnostic>),
}

impl fmt::Display for QuantizeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QuantizeError::NoImages => f.write_str("calibration needs at least one image"),
            QuantizeError::AlreadyQuantized => f.write_str("model is already quantized"),
            QuantizeError::Infer(e) => write!(f, "calibration pass failed: {e}"),
            QuantizeError::MissingStats(id) => write!(f, "no calibration range for {id:?}"),
            QuantizeError::Range { id, source } => write!(f, "unusable range for {id:?}: {source}"),
            QuantizeError::Weights { layer, source } => write!(f, "layer {layer}: {source}"),
            QuantizeError::Invalid(diags) => {
                f.write_str("quantized model does not validate")?;
                for d in diags {
                    write!(f, "; {d}")?;
                }
                Ok(())
            }
        }
    }
}

impl core::error::Error for QuantizeError {}

impl From<InferError> for QuantizeError {
    fn from(e: InferError) -> Self {
        QuantizeError::Infer(e)
    }
}

/// Ranges of one image's intermediates.
pub fn calibrate_one(model: &Model, image: &Tensor) -> Result<CalibrationStats, QuantizeError> {
    if model.meta.quantized {
        return Err(QuantizeError::AlreadyQuantized);
    }
    let mut stats = CalibrationStats::new();
    forward_with(model, image, &Sequential, &mut Recorder(&mut stats))?;
    stats.images = 1;
    Ok(stats)
}

/// Float inference over every image, recording min/max of each layer output
/// and of the inputs to table activations and softmax.
pub fn calibrate(model: &Model, images: &[Tensor]) -> Result<CalibrationStats, QuantizeError> {
    if images.is_empty() {
        return Err(QuantizeError::NoImages);
    }
    let mut stats = CalibrationStats::new();
    for image in images {
        stats.merge(&calibrate_one(model, image)?);
    }
    Ok(stats)
}

/// Symmetric per-channel parameters, `scale_c = max|w_c| / 127`; an all-zero
/// channel gets scale 1.
pub fn weight_params(weights: &Tensor, layout: KernelLayout) -> Result<QuantParams, TensorError> {
    let axis = layout.out_axis();
    let shape = weights.shape();
    let channels = shape.dims()[axis];
    let stride = shape.stride(axis);
    let mut max = alloc::vec![0.0f32; channels];
    for (i, w) in weights.as_f32()?.iter().enumerate() {
        let c = (i / stride) % channels;
        max[c] = max[c].max(w.abs());
    }
    let scales = max.into_iter().map(|m| if m > 0.0 { m / 127.0 } else { 1.0 }).collect();
    QuantParams::per_channel(scales, axis)
}

pub fn quantize_weights(weights: &Tensor, layout: KernelLayout) -> Result<Tensor, TensorError> {
    quantize_tensor(weights, &weight_params(weights, layout)?)
}

/// `round(b / (input_scale · weight_scale_c))`, saturated to i32.
pub fn quantize_bias(bias: &[f32], input_scale: f32, weights: &QuantParams) -> Vec<i32> {
    bias.iter()
        .enumerate()
        .map(|(c, &b)| {
            let ws = if weights.is_per_channel() { weights.scales()[c] } else { weights.scale() };
            let v = libm::rint(b as f64 / (input_scale as f64 * ws as f64));
            v.clamp(i32::MIN as f64, i32::MAX as f64) as i32
        })
        .collect()
}

struct Quantizer<'a> {
    stats: &'a CalibrationStats,
}

impl Quantizer<'_> {
    fn params(&self, id: TensorId) -> Result<QuantParams, QuantizeError> {
        let r = self.stats.range(id).ok_or(QuantizeError::MissingStats(id))?;
        r.quant_params().map_err(|source| QuantizeError::Range { id, source })
    }

    fn kernel(
        &self,
        layer: usize,
        weights: &Tensor,
        bias: &Bias,
        layout: KernelLayout,
        input: &QuantParams,
    ) -> Result<(Tensor, Bias), QuantizeError> {
        let err = |source| QuantizeError::Weights { layer, source };
        let q = quantize_weights(weights, layout).map_err(err)?;
        let bias = match bias {
            Bias::F32(b) => Bias::I32(quantize_bias(b, input.scale(), q.quant().expect("int8 weights"))),
            Bias::I32(_) => return Err(QuantizeError::AlreadyQuantized),
        };
        Ok((q, bias))
    }

    fn act_quant(&self, index: usize, act: ActivationKind, output: TensorId) -> Result<ActQuant, QuantizeError> {
        if act == ActivationKind::Softmax {
            return Ok(ActQuant::new(self.params(TensorId::PreActivation(index))?));
        }
        let mut q = ActQuant::new(self.params(output)?);
        if act.needs_lookup_table() {
            q.pre_activation = Some(self.params(TensorId::PreActivation(index))?);
        }
        Ok(q)
    }

    fn conv(
        &self,
        index: usize,
        c: &ConvLayer,
        layout: KernelLayout,
        input: &QuantParams,
        output: TensorId,
    ) -> Result<ConvLayer, QuantizeError> {
        let (weights, bias) = self.kernel(index, &c.weights, &c.bias, layout, input)?;
        let quant = self.act_quant(index, c.spec.activation, output)?;
        Ok(ConvLayer { spec: c.spec, weights, bias, quant: Some(quant) })
    }
}

fn out_q(layer: &Layer) -> Option<&QuantParams> {
    match layer {
        Layer::Conv(c) | Layer::DepthwiseConv(c) => c.quant.as_ref().map(|q| &q.output),
        Layer::FullyConnected(d) => d.quant.as_ref().map(|q| &q.output),
        Layer::InvertedResidual(b) => b.add_quant.as_ref().or_else(|| b.project.quant.as_ref().map(|q| &q.output)),
        _ => None,
    }
}

/// Per-channel symmetric int8 weights, per-tensor asymmetric int8
/// activations from the calibrated ranges, int32 biases at
/// `input_scale · weight_scale`. Softmax stays in float.
pub fn quantize_model(model: &Model, stats: &CalibrationStats) -> Result<Model, QuantizeError> {
    if model.meta.quantized {
        return Err(QuantizeError::AlreadyQuantized);
    }
    if stats.images() == 0 {
        return Err(QuantizeError::NoImages);
    }
    let qz = Quantizer { stats };
    let input_quant = qz.params(TensorId::Input)?;
    let mut current = input_quant.clone();
    let mut layers = Vec::with_capacity(model.layers.len());
    for (i, layer) in model.layers.iter().enumerate() {
        let out = TensorId::Output(i);
        let q = match layer {
            Layer::Conv(c) => Layer::Conv(qz.conv(i, c, KernelLayout::Dense, &current, out)?),
            Layer::DepthwiseConv(c) => Layer::DepthwiseConv(qz.conv(i, c, KernelLayout::Depthwise, &current, out)?),
            Layer::InvertedResidual(b) => {
                let expand = match &b.expand {
                    Some(e) => Some(qz.conv(i, e, KernelLayout::Dense, &current, TensorId::Expand(i))?),
                    None => None,
                };
                let dw_in = expand.as_ref().map_or(&current, |e| &e.quant.as_ref().expect("quantized").output);
                let depthwise = qz.conv(i, &b.depthwise, KernelLayout::Depthwise, dw_in, TensorId::Depthwise(i))?;
                let pj_in = &depthwise.quant.as_ref().expect("quantized").output;
                let project = qz.conv(i, &b.project, KernelLayout::Dense, pj_in, TensorId::Project(i))?;
                let add_quant = if b.residual { Some(qz.params(out)?) } else { None };
                Layer::InvertedResidual(InvertedResidualLayer {
                    expand,
                    depthwise,
                    project,
                    residual: b.residual,
                    add_quant,
                })
            }
            Layer::FullyConnected(d) => {
                let (weights, bias) = qz.kernel(i, &d.weights, &d.bias, KernelLayout::Dense, &current)?;
                let quant = qz.act_quant(i, d.activation, out)?;
                Layer::FullyConnected(DenseLayer { activation: d.activation, weights, bias, quant: Some(quant) })
            }
            other => other.clone(),
        };
        if let Some(next) = out_q(&q) {
            current = next.clone();
        }
        layers.push(q);
    }
    let mut meta = model.meta.clone();
    meta.quantized = true;
    meta.calibration_images = stats.images().min(u32::MAX as usize) as u32;
    let quantized =
        Model { meta, input: model.input, input_quant: Some(input_quant), layers, labels: model.labels.clone() };
    validate(&quantized).map_err(QuantizeError::Invalid)?;
    Ok(quantized)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{dequantize_tensor, Shape};
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn widened_range_represents_zero() {
        let q = Range { min: 0.5, max: 2.0 }.quant_params().unwrap();
        assert_eq!(q.zero_point(), -128);
        assert_eq!(q.quantize_value(0.0), -128);
        let q = Range { min: -1.0, max: -0.25 }.quant_params().unwrap();
        assert_eq!(q.zero_point(), 127);
        let q = Range { min: -1.0, max: 1.0 }.quant_params().unwrap();
        assert_eq!(q.dequantize_value(q.quantize_value(0.0)), 0.0);
    }

    #[test]
    fn degenerate_range() {
        let q = Range { min: 0.0, max: 0.0 }.quant_params().unwrap();
        assert_eq!((q.scale(), q.zero_point()), (DEGENERATE_SCALE, 0));
    }

    #[test]
    fn zero_channel_gets_unit_scale() {
        let w = Tensor::from_f32(Shape::new(1, 1, 2, 2).unwrap(), vec![0.0, 1.27, 0.0, -0.5]).unwrap();
        let q = weight_params(&w, KernelLayout::Dense).unwrap();
        assert_eq!(q.scales(), &[1.0, 0.01]);
    }

    #[test]
    fn bias_at_combined_scale() {
        let wq = QuantParams::per_channel(vec![0.5, 0.25], 3).unwrap();
        assert_eq!(quantize_bias(&[1.0, -1.0], 0.1, &wq), vec![20, -40]);
        assert_eq!(quantize_bias(&[1e30, -1e30], 1e-3, &wq), vec![i32::MAX, i32::MIN]);
    }

    #[test]
    fn merge_is_union() {
        let mut a = CalibrationStats::new();
        a.include(TensorId::Input, Range { min: -1.0, max: 0.5 });
        a.images = 1;
        let mut b = CalibrationStats::new();
        b.include(TensorId::Input, Range { min: -0.5, max: 2.0 });
        b.include(TensorId::Output(0), Range { min: 0.0, max: 1.0 });
        b.images = 2;
        let mut ab = a.clone();
        ab.merge(&b);
        let mut ba = b.clone();
        ba.merge(&a);
        assert_eq!(ab, ba);
        assert_eq!(ab.range(TensorId::Input), Some(Range { min: -1.0, max: 2.0 }));
        assert_eq!(ab.images(), 3);
    }

    proptest! {
        #[test]
        fn weight_round_trip_within_half_scale(
            dims in (1usize..4, 1usize..4, 1usize..6, 1usize..6),
            seed in any::<u64>(),
        ) {
            let shape = Shape::new(dims.0, dims.1, dims.2, dims.3).unwrap();
            let mut x = seed | 1;
            let values: Vec<f32> = (0..shape.len()).map(|_| {
                x ^= x << 13; x ^= x >> 7; x ^= x << 17;
                ((x >> 40) as f32 / (1u64 << 24) as f32 - 0.5) * 4.0
            }).collect();
            let w = Tensor::from_f32(shape, values).unwrap();
            for layout in [KernelLayout::Dense, KernelLayout::Depthwise] {
                let q = quantize_weights(&w, layout).unwrap();
                let back = dequantize_tensor(&q).unwrap();
                let qp = q.quant().unwrap();
                let axis = layout.out_axis();
                let stride = shape.stride(axis);
                for (i, (a, b)) in w.as_f32().unwrap().iter().zip(back.as_f32().unwrap()).enumerate() {
                    let s = qp.scales()[(i / stride) % shape.dims()[axis]];
                    prop_assert!((a - b).abs() <= s / 2.0 * (1.0 + 1e-5), "{a} vs {b}, scale {s}");
                }
            }
        }

        #[test]
        fn activation_params_contain_range(min in -50.0f32..50.0, span in 0.0f32..100.0) {
            let r = Range { min, max: min + span };
            let q = r.quant_params().unwrap();
            prop_assert!((-128..=127).contains(&q.zero_point()));
            let lo = q.dequantize_value(-128);
            let hi = q.dequantize_value(127);
            let tol = q.scale();
            prop_assert!(lo <= r.min.min(0.0) + tol && hi >= r.max.max(0.0) - tol);
        }
    }
}
