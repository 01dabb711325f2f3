use alloc::vec::Vec;
use core::fmt;

use super::{dtype, op, FLAG_EXPAND, FLAG_RESIDUAL, HEADER_LEN, MAGIC, PER_TENSOR_AXIS, VERSION};
use crate::model::{validate, Bias, ConvLayer, DenseLayer, Diagnostic, Layer, Model};
use crate::ops::quantized::ActQuant;
use crate::ops::ActivationKind;
use crate::tensor::{QuantParams, Tensor, TensorData};

#[derive(Clone, Debug, PartialEq)]
pub enum SaveError {
    Invalid(Vec<Diagnostic>),
    TooLarge(&'static str),
}

impl fmt::Display for SaveError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SaveError::Invalid(diags) => {
                f.write_str("refusing to save a model that does not validate")?;
                for d in diags {
                    write!(f, "; {d}")?;
                }
                Ok(())
            }
            SaveError::TooLarge(what) => write!(f, "{what} does not fit its field"),
        }
    }
}

impl core::error::Error for SaveError {}

struct Writer {
    records: Vec<u8>,
    blobs: Vec<u8>,
}

fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn small<T: TryFrom<usize>>(v: usize, what: &'static str) -> Result<T, SaveError> {
    T::try_from(v).map_err(|_| SaveError::TooLarge(what))
}

fn put_str(out: &mut Vec<u8>, s: &str, what: &'static str) -> Result<(), SaveError> {
    put_u16(out, small(s.len(), what)?);
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

pub(crate) fn put_quant(out: &mut Vec<u8>, q: &QuantParams) -> Result<(), SaveError> {
    out.push(q.axis().map_or(PER_TENSOR_AXIS, |a| a as u8));
    put_u32(out, small(q.scales().len(), "scale count")?);
    for s in q.scales() {
        put_u32(out, s.to_bits());
    }
    out.extend_from_slice(&q.zero_point().to_le_bytes());
    Ok(())
}

impl Writer {
    /// Appends the blob and its reference.
    fn tensor_ref(
        &mut self,
        code: u8,
        dims: [usize; 4],
        payload: &[u8],
        quant: Option<&QuantParams>,
    ) -> Result<(), SaveError> {
        self.records.push(code);
        for d in dims {
            put_u32(&mut self.records, small(d, "tensor dimension")?);
        }
        put_u64(&mut self.records, self.blobs.len() as u64);
        put_u64(&mut self.records, payload.len() as u64);
        match quant {
            Some(q) => {
                self.records.push(1);
                put_quant(&mut self.records, q)?;
            }
            None => self.records.push(0),
        }
        self.blobs.extend_from_slice(payload);
        Ok(())
    }

    fn weights(&mut self, t: &Tensor) -> Result<(), SaveError> {
        let dims = t.shape().dims();
        match t.data() {
            TensorData::F32(v) => {
                let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_bits().to_le_bytes()).collect();
                self.tensor_ref(dtype::F32, dims, &bytes, None)
            }
            TensorData::I8(v) => {
                let bytes: Vec<u8> = v.iter().map(|&x| x as u8).collect();
                self.tensor_ref(dtype::I8, dims, &bytes, t.quant())
            }
        }
    }

    fn bias(&mut self, b: &Bias) -> Result<(), SaveError> {
        let dims = [1, 1, 1, b.len()];
        match b {
            Bias::F32(v) => {
                let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_bits().to_le_bytes()).collect();
                self.tensor_ref(dtype::F32, dims, &bytes, None)
            }
            Bias::I32(v) => {
                let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
                self.tensor_ref(dtype::I32, dims, &bytes, None)
            }
        }
    }

    fn head(&mut self, code: u8, act: ActivationKind, stride: usize, padding: u8, flags: u8) -> Result<(), SaveError> {
        self.records.extend_from_slice(&[code, act.code(), small(stride, "stride")?, padding, flags]);
        Ok(())
    }

    fn dims(&mut self, dims: &[usize]) -> Result<(), SaveError> {
        self.records.push(dims.len() as u8);
        for &d in dims {
            put_u32(&mut self.records, small(d, "layer dimension")?);
        }
        Ok(())
    }

    fn act_quant(&mut self, q: &Option<ActQuant>) -> Result<(), SaveError> {
        match q {
            None => self.records.push(0),
            Some(a) => {
                let blocks: Vec<&QuantParams> = core::iter::once(&a.output).chain(a.pre_activation.as_ref()).collect();
                self.records.push(blocks.len() as u8);
                for b in blocks {
                    put_quant(&mut self.records, b)?;
                }
            }
        }
        Ok(())
    }

    fn conv(&mut self, code: u8, c: &ConvLayer) -> Result<(), SaveError> {
        self.head(code, c.spec.activation, c.spec.stride, c.spec.padding.code(), 0)?;
        self.dims(&c.weights.shape().dims())?;
        self.records.push(2);
        self.weights(&c.weights)?;
        self.bias(&c.bias)?;
        self.act_quant(&c.quant)
    }

    fn dense(&mut self, d: &DenseLayer) -> Result<(), SaveError> {
        self.head(op::FULLY_CONNECTED, d.activation, 0, 0, 0)?;
        let [_, _, fan_in, fan_out] = d.weights.shape().dims();
        self.dims(&[fan_in, fan_out])?;
        self.records.push(2);
        self.weights(&d.weights)?;
        self.bias(&d.bias)?;
        self.act_quant(&d.quant)
    }

    fn bare(&mut self, code: u8, dims: &[usize]) -> Result<(), SaveError> {
        self.head(code, ActivationKind::None, 0, 0, 0)?;
        self.dims(dims)?;
        self.records.extend_from_slice(&[0, 0]);
        Ok(())
    }

    fn layer(&mut self, layer: &Layer) -> Result<(), SaveError> {
        match layer {
            Layer::Conv(c) => self.conv(op::CONV, c),
            Layer::DepthwiseConv(c) => self.conv(op::DEPTHWISE, c),
            Layer::FullyConnected(d) => self.dense(d),
            Layer::InvertedResidual(b) => {
                let mut flags = 0;
                if b.residual {
                    flags |= FLAG_RESIDUAL;
                }
                if b.expand.is_some() {
                    flags |= FLAG_EXPAND;
                }
                self.head(op::INVERTED_RESIDUAL, ActivationKind::None, 0, 0, flags)?;
                self.dims(&[])?;
                self.records.push(0);
                match &b.add_quant {
                    Some(q) => {
                        self.records.push(1);
                        put_quant(&mut self.records, q)?;
                    }
                    None => self.records.push(0),
                }
                if let Some(e) = &b.expand {
                    self.conv(op::CONV, e)?;
                }
                self.conv(op::DEPTHWISE, &b.depthwise)?;
                self.conv(op::CONV, &b.project)
            }
            Layer::GlobalAvgPool => self.bare(op::GLOBAL_AVG_POOL, &[]),
            Layer::Flatten => self.bare(op::FLATTEN, &[]),
            Layer::Dropout { rate } => self.bare(op::DROPOUT, &[rate.to_bits() as usize]),
            Layer::Softmax => self.bare(op::SOFTMAX, &[]),
        }
    }
}

/// Canonical encoding of a validating model.
pub fn save_model(model: &Model) -> Result<Vec<u8>, SaveError> {
    validate(model).map_err(SaveError::Invalid)?;
    let mut meta = Vec::new();
    put_str(&mut meta, &model.meta.name, "model name")?;
    put_u32(&mut meta, model.meta.revision);
    meta.push(model.input.normalization.code());
    put_u32(&mut meta, model.meta.calibration_images);
    match &model.input_quant {
        Some(q) => {
            meta.push(1);
            put_quant(&mut meta, q)?;
        }
        None => meta.push(0),
    }

    let mut w = Writer { records: Vec::new(), blobs: Vec::new() };
    for layer in &model.layers {
        w.layer(layer)?;
    }

    let mut labels = Vec::new();
    put_u32(&mut labels, model.labels.len() as u32);
    for l in &model.labels {
        put_str(&mut labels, l, "label")?;
    }

    let label_offset = (HEADER_LEN + meta.len() + w.records.len()) as u64;
    let weight_offset = label_offset + labels.len() as u64;
    let mut out = Vec::with_capacity(weight_offset as usize + w.blobs.len());
    out.extend_from_slice(&MAGIC);
    put_u16(&mut out, VERSION);
    out.push(model.meta.backbone.code());
    out.push(model.meta.quantized as u8);
    put_u16(&mut out, small(model.input.height, "input height")?);
    put_u16(&mut out, small(model.input.width, "input width")?);
    put_u16(&mut out, small(model.input.channels, "input channels")?);
    put_u32(&mut out, small(model.layers.len(), "layer count")?);
    put_u64(&mut out, label_offset);
    put_u64(&mut out, weight_offset);
    debug_assert_eq!(out.len(), HEADER_LEN);
    out.extend_from_slice(&meta);
    out.extend_from_slice(&w.records);
    out.extend_from_slice(&labels);
    out.extend_from_slice(&w.blobs);
    Ok(out)
}
