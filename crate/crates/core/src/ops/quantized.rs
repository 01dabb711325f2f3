//! INT8 kernels.
//!
//! Inputs and outputs are per-tensor asymmetric int8; weights are symmetric
//! (zero-point 0), per output channel or per tensor; biases are int32 at scale
//! `input_scale · weight_scale`. Products are accumulated in i32 and brought to
//! the output scale with a fixed-point [`Multiplier`]. Clamp activations
//! (relu, relu6) become saturation bounds; sigmoid, tanh and selu go through a
//! 256-entry table from a pre-activation code to the output code.

use alloc::vec;
use alloc::vec::Vec;

use super::{
    check_conv_weights, check_dense_weights, check_depthwise_weights, ActivationKind, ConvGeometry, ConvSpec, OpError,
};
use crate::exec::{RowExecutor, Sequential};
use crate::requant::{rounding_div, rounding_shift_right, saturate_i8, Multiplier};
use crate::tensor::{QuantParams, Shape, Tensor};

/// Output parameters of one quantized layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ActQuant {
    pub output: QuantParams,
    /// Parameters of the accumulator before a table activation.
    pub pre_activation: Option<QuantParams>,
}

impl ActQuant {
    pub fn new(output: QuantParams) -> Self {
        ActQuant { output, pre_activation: None }
    }
}

/// Per-channel rescaling plus activation, prepared once per kernel call.
#[derive(Clone, Debug)]
pub(crate) struct Requantizer {
    multipliers: Vec<Multiplier>,
    zero_point: i32,
    lo: i32,
    hi: i32,
    table: Option<[i8; 256]>,
}

impl Requantizer {
    pub fn new(
        input_scale: f32,
        weights: &QuantParams,
        out_c: usize,
        activation: ActivationKind,
        quant: &ActQuant,
    ) -> Result<Self, OpError> {
        if weights.zero_point() != 0 {
            return Err(OpError::InvalidSpec("int8 weights must be symmetric"));
        }
        let weight_scale = |c: usize| {
            if weights.is_per_channel() {
                weights.scales()[c]
            } else {
                weights.scale()
            }
        };
        if weights.is_per_channel() && weights.scales().len() != out_c {
            return Err(OpError::InvalidSpec("weight scale count differs from output channels"));
        }
        let out = &quant.output;
        if out.is_per_channel() {
            return Err(OpError::InvalidSpec("activations must be quantized per tensor"));
        }
        let (target, table) = match activation {
            ActivationKind::Softmax => return Err(OpError::UnsupportedActivation(activation)),
            a if a.needs_lookup_table() => {
                let pre = quant.pre_activation.as_ref().ok_or(OpError::MissingQuant("pre-activation"))?;
                (pre, Some(activation_table(pre, out, a)))
            }
            _ => (out, None),
        };
        let multipliers = (0..out_c)
            .map(|c| Multiplier::from_real(input_scale as f64 * weight_scale(c) as f64 / target.scale() as f64))
            .collect();
        let (lo, hi) = match (table.is_some(), activation) {
            (false, ActivationKind::Relu) => (out.zero_point().max(-128), 127),
            (false, ActivationKind::Relu6) => {
                let six = out.zero_point() as i64 + libm::rint(6.0 / out.scale() as f64) as i64;
                (out.zero_point().max(-128), six.min(127) as i32)
            }
            _ => (-128, 127),
        };
        Ok(Requantizer { multipliers, zero_point: target.zero_point(), lo, hi, table })
    }

    #[inline]
    pub fn finish(&self, c: usize, acc: i32) -> i8 {
        let v = self.multipliers[c].apply(acc as i64) + self.zero_point as i64;
        match &self.table {
            None => saturate_i8(v, self.lo, self.hi),
            Some(t) => t[(saturate_i8(v, -128, 127) as i16 + 128) as usize],
        }
    }
}

/// `out_code = quantize(act(dequantize(pre_code)))` for every int8 code.
pub fn activation_table(pre: &QuantParams, out: &QuantParams, activation: ActivationKind) -> [i8; 256] {
    let mut table = [0i8; 256];
    for (i, slot) in table.iter_mut().enumerate() {
        let real = pre.dequantize_value((i as i16 - 128) as i8);
        *slot = out.quantize_value(activation.apply_scalar(real));
    }
    table
}

fn activation_input(t: &Tensor) -> Result<(&[i8], &QuantParams), OpError> {
    let data = t.as_i8()?;
    let q = t.quant().ok_or(OpError::MissingQuant("input"))?;
    if q.is_per_channel() {
        return Err(OpError::InvalidSpec("activations must be quantized per tensor"));
    }
    Ok((data, q))
}

fn weight_params(t: &Tensor) -> Result<(&[i8], &QuantParams), OpError> {
    let data = t.as_i8()?;
    let q = t.quant().ok_or(OpError::MissingQuant("weights"))?;
    Ok((data, q))
}

#[inline]
fn debug_check_accumulator(taps: usize, bias: &[i32]) {
    let max_bias = bias.iter().map(|b| (*b as i64).abs()).max().unwrap_or(0);
    debug_assert!(taps as i64 * 255 * 128 + max_bias <= i32::MAX as i64, "int32 accumulator could overflow");
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_i8<E: RowExecutor>(
    exec: &E,
    g: &ConvGeometry,
    input: &[i8],
    input_zp: i32,
    weights: &[i8],
    bias: &[i32],
    rq: &Requantizer,
    out: &mut Vec<i8>,
) {
    debug_check_accumulator(g.kh * g.kw * g.in_c, bias);
    let g = *g;
    out.clear();
    out.resize(g.rows() * g.row_len(), 0);
    exec.for_each_row(out, g.row_len(), |r, row| {
        let b = r / g.out_h;
        let oy = r % g.out_h;
        let mut acc = vec![0i32; g.out_c];
        for ox in 0..g.out_w {
            acc.copy_from_slice(bias);
            for ky in 0..g.kh {
                let Some(iy) = g.input_row(oy, ky) else { continue };
                for kx in 0..g.kw {
                    let Some(ix) = g.input_col(ox, kx) else { continue };
                    let px = &input[((b * g.in_h + iy) * g.in_w + ix) * g.in_c..][..g.in_c];
                    let tap = &weights[(ky * g.kw + kx) * g.in_c * g.out_c..][..g.in_c * g.out_c];
                    for (&x, wrow) in px.iter().zip(tap.chunks_exact(g.out_c)) {
                        let x = x as i32 - input_zp;
                        for (a, &w) in acc.iter_mut().zip(wrow) {
                            *a += x * w as i32;
                        }
                    }
                }
            }
            for (c, (o, &a)) in row[ox * g.out_c..(ox + 1) * g.out_c].iter_mut().zip(&acc).enumerate() {
                *o = rq.finish(c, a);
            }
        }
    });
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn depthwise_i8<E: RowExecutor>(
    exec: &E,
    g: &ConvGeometry,
    input: &[i8],
    input_zp: i32,
    weights: &[i8],
    bias: &[i32],
    rq: &Requantizer,
    out: &mut Vec<i8>,
) {
    debug_check_accumulator(g.kh * g.kw, bias);
    let g = *g;
    let c = g.out_c;
    out.clear();
    out.resize(g.rows() * g.row_len(), 0);
    exec.for_each_row(out, g.row_len(), |r, row| {
        let b = r / g.out_h;
        let oy = r % g.out_h;
        let mut acc = vec![0i32; c];
        for ox in 0..g.out_w {
            acc.copy_from_slice(bias);
            for ky in 0..g.kh {
                let Some(iy) = g.input_row(oy, ky) else { continue };
                for kx in 0..g.kw {
                    let Some(ix) = g.input_col(ox, kx) else { continue };
                    let px = &input[((b * g.in_h + iy) * g.in_w + ix) * c..][..c];
                    let w = &weights[(ky * g.kw + kx) * c..][..c];
                    for ((a, &x), &wv) in acc.iter_mut().zip(px).zip(w) {
                        *a += (x as i32 - input_zp) * wv as i32;
                    }
                }
            }
            for (ch, (o, &a)) in row[ox * c..(ox + 1) * c].iter_mut().zip(&acc).enumerate() {
                *o = rq.finish(ch, a);
            }
        }
    });
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn dense_i8<E: RowExecutor>(
    exec: &E,
    batch: usize,
    fan_in: usize,
    fan_out: usize,
    input: &[i8],
    input_zp: i32,
    weights: &[i8],
    bias: &[i32],
    rq: &Requantizer,
    out: &mut Vec<i8>,
) {
    debug_check_accumulator(fan_in, bias);
    out.clear();
    out.resize(batch * fan_out, 0);
    exec.for_each_row(out, fan_out, |b, row| {
        let mut acc = bias.to_vec();
        let x = &input[b * fan_in..(b + 1) * fan_in];
        for (&xv, wrow) in x.iter().zip(weights.chunks_exact(fan_out)) {
            let xv = xv as i32 - input_zp;
            for (a, &w) in acc.iter_mut().zip(wrow) {
                *a += xv * w as i32;
            }
        }
        for (c, (o, &a)) in row.iter_mut().zip(&acc).enumerate() {
            *o = rq.finish(c, a);
        }
    });
}

/// Mean of the codes per channel, ties to even; output keeps the input's
/// parameters since an average never leaves the input range.
pub(crate) fn global_avg_pool_i8(shape: Shape, input: &[i8], out: &mut Vec<i8>) {
    let (n, hw, c) = (shape.n(), shape.h() * shape.w(), shape.c());
    out.clear();
    let mut sums = vec![0i64; c];
    for b in 0..n {
        sums.fill(0);
        for px in input[b * hw * c..(b + 1) * hw * c].chunks_exact(c) {
            for (s, &v) in sums.iter_mut().zip(px) {
                *s += v as i64;
            }
        }
        out.extend(sums.iter().map(|&s| rounding_div(s, hw as i64).clamp(-128, 127) as i8));
    }
}

/// Fixed-point form of `s_a (a − z_a) + s_b (b − z_b)` at the output scale.
#[derive(Clone, Copy, Debug)]
pub(crate) struct AddRequantizer {
    a: Multiplier,
    b: Multiplier,
    a_zp: i32,
    b_zp: i32,
    out_zp: i32,
}

impl AddRequantizer {
    pub fn new(a: &QuantParams, b: &QuantParams, out: &QuantParams) -> Self {
        AddRequantizer {
            a: Multiplier::from_real(a.scale() as f64 / out.scale() as f64),
            b: Multiplier::from_real(b.scale() as f64 / out.scale() as f64),
            a_zp: a.zero_point(),
            b_zp: b.zero_point(),
            out_zp: out.zero_point(),
        }
    }

    #[inline]
    pub fn add(&self, x: i8, y: i8) -> i8 {
        let shift = self.a.shift().max(self.b.shift()).max(0);
        let align = |m: &Multiplier, v: i64| {
            let lift = (shift - m.shift()).min(64) as u32;
            m.scaled(v) << lift
        };
        let sum = align(&self.a, (x as i32 - self.a_zp) as i64) + align(&self.b, (y as i32 - self.b_zp) as i64);
        let v = rounding_shift_right(sum, shift as u32) as i64 + self.out_zp as i64;
        saturate_i8(v, -128, 127)
    }
}

pub fn conv2d_quantized(
    input: &Tensor,
    weights: &Tensor,
    bias: &[i32],
    spec: &ConvSpec,
    quant: &ActQuant,
) -> Result<Tensor, OpError> {
    let (x, xq) = activation_input(input)?;
    let (w, wq) = weight_params(weights)?;
    let g = check_conv_weights(input.shape(), weights.shape(), bias.len(), spec)?;
    let rq = Requantizer::new(xq.scale(), wq, g.out_c, spec.activation, quant)?;
    let mut out = Vec::new();
    conv2d_i8(&Sequential, &g, x, xq.zero_point(), w, bias, &rq, &mut out);
    Ok(Tensor::from_i8(g.output_shape(), out, quant.output.clone())?)
}

pub fn depthwise_conv2d_quantized(
    input: &Tensor,
    weights: &Tensor,
    bias: &[i32],
    spec: &ConvSpec,
    quant: &ActQuant,
) -> Result<Tensor, OpError> {
    let (x, xq) = activation_input(input)?;
    let (w, wq) = weight_params(weights)?;
    let g = check_depthwise_weights(input.shape(), weights.shape(), bias.len(), spec)?;
    let rq = Requantizer::new(xq.scale(), wq, g.out_c, spec.activation, quant)?;
    let mut out = Vec::new();
    depthwise_i8(&Sequential, &g, x, xq.zero_point(), w, bias, &rq, &mut out);
    Ok(Tensor::from_i8(g.output_shape(), out, quant.output.clone())?)
}

pub fn fully_connected_quantized(
    input: &Tensor,
    weights: &Tensor,
    bias: &[i32],
    activation: ActivationKind,
    quant: &ActQuant,
) -> Result<Tensor, OpError> {
    let (x, xq) = activation_input(input)?;
    let (w, wq) = weight_params(weights)?;
    let (fan_in, fan_out) = check_dense_weights(input.shape(), weights.shape(), bias.len())?;
    let rq = Requantizer::new(xq.scale(), wq, fan_out, activation, quant)?;
    let batch = input.shape().n();
    let mut out = Vec::new();
    dense_i8(&Sequential, batch, fan_in, fan_out, x, xq.zero_point(), w, bias, &rq, &mut out);
    Ok(Tensor::from_i8(Shape::new(batch, 1, 1, fan_out)?, out, quant.output.clone())?)
}

pub fn global_avg_pool_quantized(input: &Tensor) -> Result<Tensor, OpError> {
    let (x, xq) = activation_input(input)?;
    let shape = input.shape();
    let mut out = Vec::new();
    global_avg_pool_i8(shape, x, &mut out);
    Ok(Tensor::from_i8(Shape::new(shape.n(), 1, 1, shape.c())?, out, xq.clone())?)
}

pub fn add_quantized(a: &Tensor, b: &Tensor, out: &QuantParams) -> Result<Tensor, OpError> {
    if a.shape() != b.shape() {
        return Err(OpError::ShapeMismatch { left: a.shape(), right: b.shape() });
    }
    let (x, xq) = activation_input(a)?;
    let (y, yq) = activation_input(b)?;
    let rq = AddRequantizer::new(xq, yq, out);
    let data = x.iter().zip(y).map(|(&p, &q)| rq.add(p, q)).collect();
    Ok(Tensor::from_i8(a.shape(), data, out.clone())?)
}
