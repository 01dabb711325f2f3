use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{
    dtype, op, FormatError, FormatErrorKind as K, FLAG_EXPAND, FLAG_RESIDUAL, HEADER_LEN, MAGIC, PER_TENSOR_AXIS,
    VERSION,
};
use crate::model::{
    validate, Backbone, Bias, ConvLayer, DenseLayer, InputSpec, InvertedResidualLayer, Layer, Model, ModelMeta,
    Normalization,
};
use crate::ops::quantized::ActQuant;
use crate::ops::{ActivationKind, ConvSpec, Padding};
use crate::tensor::{QuantParams, Shape, Tensor};

pub(crate) struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(bytes: &'a [u8], pos: usize) -> Self {
        Cursor { bytes, pos }
    }

    pub fn pos(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len().saturating_sub(self.pos)
    }

    fn err(&self, kind: K) -> FormatError {
        FormatError::new(kind, self.pos)
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.remaining() < n {
            return Err(self.err(K::Truncated));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], FormatError> {
        let mut a = [0u8; N];
        a.copy_from_slice(self.take(N)?);
        Ok(a)
    }

    pub fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    pub fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub fn i32(&mut self) -> Result<i32, FormatError> {
        Ok(i32::from_le_bytes(self.array()?))
    }

    pub fn flag(&mut self, what: &'static str) -> Result<bool, FormatError> {
        let at = self.pos;
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(FormatError::new(K::InvalidCode { field: what, value: v }, at)),
        }
    }

    pub fn string(&mut self) -> Result<String, FormatError> {
        let len = self.u16()? as usize;
        let at = self.pos;
        let raw = self.take(len)?;
        core::str::from_utf8(raw).map(String::from).map_err(|_| FormatError::new(K::InvalidUtf8, at))
    }

    pub fn quant(&mut self) -> Result<QuantParams, FormatError> {
        let at = self.pos;
        let axis = match self.u8()? {
            PER_TENSOR_AXIS => None,
            a @ 0..=3 => Some(a as usize),
            v => return Err(FormatError::new(K::InvalidCode { field: "quantization axis", value: v }, at)),
        };
        let n = self.u32()? as usize;
        if n > self.remaining() / 4 {
            return Err(self.err(K::Truncated));
        }
        let mut scales = Vec::with_capacity(n);
        for _ in 0..n {
            scales.push(f32::from_bits(self.u32()?));
        }
        let zp = self.i32()?;
        QuantParams::from_parts(scales, zp, axis).map_err(|e| FormatError::new(K::Quantization(e), at))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Header {
    pub version: u16,
    pub backbone: Backbone,
    pub quantized: bool,
    pub height: u16,
    pub width: u16,
    pub channels: u16,
    pub layer_count: u32,
    pub label_offset: u64,
    pub weight_offset: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct TensorRef {
    pub code: u8,
    pub dims: [usize; 4],
    pub offset: u64,
    pub len: u64,
    pub quant: Option<QuantParams>,
    /// Where the reference itself sits, for error offsets.
    pub at: usize,
}

impl TensorRef {
    pub fn elements(&self) -> Option<u64> {
        self.dims.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d as u64))
    }
}

#[derive(Clone, Debug)]
pub(crate) struct PendingConv {
    pub spec: ConvSpec,
    pub weights: usize,
    pub bias: usize,
    pub quant: Option<ActQuant>,
}

#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
pub(crate) enum Pending {
    Conv(PendingConv),
    Depthwise(PendingConv),
    Block {
        expand: Option<PendingConv>,
        depthwise: PendingConv,
        project: PendingConv,
        residual: bool,
        add_quant: Option<QuantParams>,
    },
    Dense {
        activation: ActivationKind,
        weights: usize,
        bias: usize,
        quant: Option<ActQuant>,
    },
    GlobalAvgPool,
    Flatten,
    Dropout(f32),
    Softmax,
}

/// Everything recovered from a stream, kept even when decoding stops early so
/// that `inspect` can show it.
#[derive(Debug, Default)]
pub(crate) struct Decoded {
    pub header: Option<Header>,
    pub meta: Option<(ModelMeta, InputSpec, Option<QuantParams>)>,
    pub records: Vec<(u8, Pending)>,
    pub tensors: Vec<TensorRef>,
    pub labels: Vec<String>,
    pub blobs_ok: usize,
}

fn header(c: &mut Cursor) -> Result<Header, FormatError> {
    if c.take(4).ok() != Some(&MAGIC[..]) {
        // short streams get the same answer: they are not CSDM files
        return Err(FormatError::new(K::BadMagic, 0));
    }
    let at = c.pos();
    let version = c.u16()?;
    if version != VERSION {
        return Err(FormatError::new(K::UnsupportedVersion(version), at));
    }
    let at = c.pos();
    let code = c.u8()?;
    let backbone =
        Backbone::from_code(code).ok_or(FormatError::new(K::InvalidCode { field: "backbone", value: code }, at))?;
    let quantized = c.flag("quantized flag")?;
    let height = c.u16()?;
    let width = c.u16()?;
    let channels = c.u16()?;
    let layer_count = c.u32()?;
    let label_offset = c.u64()?;
    let weight_offset = c.u64()?;
    Ok(Header { version, backbone, quantized, height, width, channels, layer_count, label_offset, weight_offset })
}

fn metadata(c: &mut Cursor, h: &Header) -> Result<(ModelMeta, InputSpec, Option<QuantParams>), FormatError> {
    let name = c.string()?;
    let revision = c.u32()?;
    let at = c.pos();
    let code = c.u8()?;
    let normalization = Normalization::from_code(code)
        .ok_or(FormatError::new(K::InvalidCode { field: "normalization", value: code }, at))?;
    let calibration_images = c.u32()?;
    let input_quant = if c.flag("input quantization flag")? { Some(c.quant()?) } else { None };
    if h.height == 0 || h.width == 0 || h.channels == 0 {
        return Err(FormatError::new(K::InvalidValue("input dimensions"), super::offsets::HEIGHT));
    }
    let meta = ModelMeta { name, revision, backbone: h.backbone, quantized: h.quantized, calibration_images };
    let input =
        InputSpec { height: h.height as usize, width: h.width as usize, channels: h.channels as usize, normalization };
    Ok((meta, input, input_quant))
}

struct RecordHead {
    act: ActivationKind,
    stride: u8,
    padding: u8,
    flags: u8,
    dims: Vec<u32>,
    at: usize,
}

impl Decoded {
    fn record_head(c: &mut Cursor) -> Result<RecordHead, FormatError> {
        let at = c.pos();
        c.u8()?;
        let act_at = c.pos();
        let code = c.u8()?;
        let act = ActivationKind::from_code(code)
            .ok_or(FormatError::new(K::InvalidCode { field: "activation", value: code }, act_at))?;
        let stride = c.u8()?;
        let padding = c.u8()?;
        let flags = c.u8()?;
        let n = c.u8()? as usize;
        let mut dims = Vec::with_capacity(n.min(c.remaining() / 4));
        for _ in 0..n {
            dims.push(c.u32()?);
        }
        Ok(RecordHead { act, stride, padding, flags, dims, at })
    }

    fn tensor_ref(&mut self, c: &mut Cursor) -> Result<usize, FormatError> {
        let at = c.pos();
        let code = c.u8()?;
        if dtype::size(code).is_none() {
            return Err(FormatError::new(K::InvalidCode { field: "tensor dtype", value: code }, at));
        }
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = c.u32()? as usize;
        }
        let offset = c.u64()?;
        let len = c.u64()?;
        let quant = if c.flag("tensor quantization flag")? { Some(c.quant()?) } else { None };
        self.tensors.push(TensorRef { code, dims, offset, len, quant, at });
        Ok(self.tensors.len() - 1)
    }

    fn act_quant(c: &mut Cursor) -> Result<Option<ActQuant>, FormatError> {
        let at = c.pos();
        match c.u8()? {
            0 => Ok(None),
            1 => Ok(Some(ActQuant::new(c.quant()?))),
            2 => {
                let output = c.quant()?;
                let pre = c.quant()?;
                Ok(Some(ActQuant { output, pre_activation: Some(pre) }))
            }
            v => Err(FormatError::new(K::InvalidCode { field: "quantization block count", value: v }, at)),
        }
    }

    fn expect(cond: bool, what: &'static str, at: usize) -> Result<(), FormatError> {
        if cond {
            Ok(())
        } else {
            Err(FormatError::new(K::InvalidValue(what), at))
        }
    }

    fn tensor_count(c: &mut Cursor, expected: u8) -> Result<(), FormatError> {
        let at = c.pos();
        let n = c.u8()?;
        Self::expect(n == expected, "tensor count", at)
    }

    fn conv(&mut self, c: &mut Cursor, code: u8) -> Result<PendingConv, FormatError> {
        let at = c.pos();
        let op_code = c.bytes.get(at).copied();
        let head = Self::record_head(c)?;
        Self::expect(op_code == Some(code), "nested convolution op", at)?;
        Self::expect(head.flags == 0, "convolution flags", head.at + 4)?;
        Self::expect(head.dims.len() == 4, "convolution dimension count", head.at + 5)?;
        let padding = Padding::from_code(head.padding)
            .ok_or(FormatError::new(K::InvalidCode { field: "padding", value: head.padding }, head.at + 3))?;
        let spec = ConvSpec {
            kernel_h: head.dims[0] as usize,
            kernel_w: head.dims[1] as usize,
            stride: head.stride as usize,
            padding,
            activation: head.act,
        };
        if spec.check().is_err() {
            return Err(FormatError::new(K::InvalidValue("kernel size or stride"), head.at + 2));
        }
        Self::tensor_count(c, 2)?;
        let weights = self.tensor_ref(c)?;
        let bias = self.tensor_ref(c)?;
        let dims: Vec<usize> = head.dims.iter().map(|&d| d as usize).collect();
        Self::expect(
            self.tensors[weights].dims[..] == dims[..],
            "weight dims differ from record",
            self.tensors[weights].at,
        )?;
        let out_c = if code == op::DEPTHWISE { dims[2] } else { dims[3] };
        Self::expect(self.tensors[bias].dims == [1, 1, 1, out_c], "bias dims", self.tensors[bias].at)?;
        let quant = Self::act_quant(c)?;
        Ok(PendingConv { spec, weights, bias, quant })
    }

    fn bare(head: &RecordHead, dims: usize) -> Result<(), FormatError> {
        Self::expect(head.act == ActivationKind::None, "activation on a parameter-free layer", head.at + 1)?;
        Self::expect(head.stride == 0 && head.padding == 0 && head.flags == 0, "unused record fields", head.at + 2)?;
        Self::expect(head.dims.len() == dims, "dimension count", head.at + 5)
    }

    fn record(&mut self, c: &mut Cursor) -> Result<(u8, Pending), FormatError> {
        let at = c.pos();
        let code = *c.bytes.get(at).ok_or(FormatError::new(K::Truncated, at))?;
        let pending = match code {
            op::CONV => Pending::Conv(self.conv(c, op::CONV)?),
            op::DEPTHWISE => Pending::Depthwise(self.conv(c, op::DEPTHWISE)?),
            op::INVERTED_RESIDUAL => {
                let head = Self::record_head(c)?;
                Self::bare(&RecordHead { flags: 0, ..head }, 0)?;
                Self::expect(head.flags & !(FLAG_RESIDUAL | FLAG_EXPAND) == 0, "block flags", at + 4)?;
                Self::tensor_count(c, 0)?;
                let add_quant = if c.flag("residual quantization count")? { Some(c.quant()?) } else { None };
                let expand = if head.flags & FLAG_EXPAND != 0 { Some(self.conv(c, op::CONV)?) } else { None };
                let depthwise = self.conv(c, op::DEPTHWISE)?;
                let project = self.conv(c, op::CONV)?;
                Pending::Block { expand, depthwise, project, residual: head.flags & FLAG_RESIDUAL != 0, add_quant }
            }
            op::FULLY_CONNECTED => {
                let head = Self::record_head(c)?;
                Self::expect(head.stride == 0 && head.padding == 0 && head.flags == 0, "unused record fields", at + 2)?;
                Self::expect(head.dims.len() == 2, "dimension count", at + 5)?;
                Self::tensor_count(c, 2)?;
                let weights = self.tensor_ref(c)?;
                let bias = self.tensor_ref(c)?;
                let (fan_in, fan_out) = (head.dims[0] as usize, head.dims[1] as usize);
                Self::expect(
                    self.tensors[weights].dims == [1, 1, fan_in, fan_out],
                    "weight dims differ from record",
                    self.tensors[weights].at,
                )?;
                Self::expect(self.tensors[bias].dims == [1, 1, 1, fan_out], "bias dims", self.tensors[bias].at)?;
                let quant = Self::act_quant(c)?;
                Pending::Dense { activation: head.act, weights, bias, quant }
            }
            op::GLOBAL_AVG_POOL | op::FLATTEN | op::SOFTMAX | op::DROPOUT => {
                let head = Self::record_head(c)?;
                Self::bare(&head, if code == op::DROPOUT { 1 } else { 0 })?;
                Self::tensor_count(c, 0)?;
                Self::tensor_count(c, 0)?;
                match code {
                    op::GLOBAL_AVG_POOL => Pending::GlobalAvgPool,
                    op::FLATTEN => Pending::Flatten,
                    op::SOFTMAX => Pending::Softmax,
                    _ => Pending::Dropout(f32::from_bits(head.dims[0])),
                }
            }
            v => return Err(FormatError::new(K::InvalidCode { field: "layer op", value: v }, at)),
        };
        Ok((code, pending))
    }

    fn labels(&mut self, c: &mut Cursor) -> Result<(), FormatError> {
        let n = c.u32()? as usize;
        if n > c.remaining() / 2 {
            return Err(FormatError::new(K::Truncated, c.pos()));
        }
        for _ in 0..n {
            let label = c.string()?;
            self.labels.push(label);
        }
        Ok(())
    }

    /// Checks every blob against the canonical layout and the stream end.
    fn blobs(&mut self, bytes: &[u8], region: usize) -> Result<(), FormatError> {
        let mut cursor = 0u64;
        let available = (bytes.len() - region) as u64;
        for (index, t) in self.tensors.iter().enumerate() {
            let size = dtype::size(t.code).unwrap_or(1) as u64;
            let expected = t.elements().and_then(|n| n.checked_mul(size)).unwrap_or(u64::MAX);
            if t.len != expected {
                return Err(FormatError::new(K::BlobLength { index, expected, actual: t.len }, t.at));
            }
            if t.offset < cursor {
                return Err(FormatError::new(K::OverlappingBlobs { index }, t.at));
            }
            if t.offset > cursor {
                return Err(FormatError::new(K::BlobGap { index }, t.at));
            }
            let end = t.offset.saturating_add(t.len);
            if end > available {
                return Err(FormatError::new(K::TruncatedBlob { index }, bytes.len()));
            }
            cursor = end;
            self.blobs_ok = index + 1;
        }
        if cursor != available {
            return Err(FormatError::new(K::TrailingBytes, region + cursor as usize));
        }
        Ok(())
    }
}

/// Reads a stream as far as it is well formed.
pub(crate) fn decode(bytes: &[u8]) -> (Decoded, Result<(), FormatError>) {
    let mut d = Decoded::default();
    let result = decode_into(bytes, &mut d);
    (d, result)
}

fn decode_into(bytes: &[u8], d: &mut Decoded) -> Result<(), FormatError> {
    let mut c = Cursor::new(bytes, 0);
    let h = header(&mut c)?;
    debug_assert_eq!(c.pos(), HEADER_LEN);
    d.header = Some(h.clone());
    d.meta = Some(metadata(&mut c, &h)?);
    for _ in 0..h.layer_count {
        let r = d.record(&mut c)?;
        d.records.push(r);
    }
    if h.label_offset != c.pos() as u64 {
        let at = super::offsets::LABEL_OFFSET;
        return Err(FormatError::new(
            K::SectionOffset { section: "label table", expected: c.pos() as u64, actual: h.label_offset },
            at,
        ));
    }
    d.labels(&mut c)?;
    if h.weight_offset != c.pos() as u64 {
        let at = super::offsets::WEIGHT_OFFSET;
        return Err(FormatError::new(
            K::SectionOffset { section: "weight region", expected: c.pos() as u64, actual: h.weight_offset },
            at,
        ));
    }
    d.blobs(bytes, c.pos())
}

fn shape_of(t: &TensorRef) -> Result<Shape, FormatError> {
    Shape::new(t.dims[0], t.dims[1], t.dims[2], t.dims[3])
        .map_err(|_| FormatError::new(K::InvalidValue("zero tensor dimension"), t.at + 1))
}

fn blob<'a>(bytes: &'a [u8], region: usize, t: &TensorRef) -> &'a [u8] {
    let start = region + t.offset as usize;
    &bytes[start..start + t.len as usize]
}

fn words(raw: &[u8]) -> impl Iterator<Item = [u8; 4]> + '_ {
    raw.chunks_exact(4).map(|w| [w[0], w[1], w[2], w[3]])
}

fn weights(bytes: &[u8], region: usize, t: &TensorRef) -> Result<Tensor, FormatError> {
    let shape = shape_of(t)?;
    let raw = blob(bytes, region, t);
    let invalid = |what| FormatError::new(K::InvalidValue(what), t.at);
    match (t.code, &t.quant) {
        (dtype::F32, None) => {
            let v = words(raw).map(|w| f32::from_bits(u32::from_le_bytes(w))).collect();
            Tensor::from_f32(shape, v).map_err(|e| FormatError::new(K::Quantization(e), t.at))
        }
        (dtype::I8, Some(q)) => {
            let v = raw.iter().map(|&b| b as i8).collect();
            Tensor::from_i8(shape, v, q.clone()).map_err(|e| FormatError::new(K::Quantization(e), t.at))
        }
        (dtype::I8, None) => Err(invalid("int8 tensor without quantization")),
        (dtype::F32, Some(_)) => Err(invalid("float tensor with quantization")),
        _ => Err(invalid("weight dtype")),
    }
}

fn bias(bytes: &[u8], region: usize, t: &TensorRef) -> Result<Bias, FormatError> {
    let raw = blob(bytes, region, t);
    if t.quant.is_some() {
        return Err(FormatError::new(K::InvalidValue("bias with quantization"), t.at));
    }
    match t.code {
        dtype::F32 => Ok(Bias::F32(words(raw).map(|w| f32::from_bits(u32::from_le_bytes(w))).collect())),
        dtype::I32 => Ok(Bias::I32(words(raw).map(i32::from_le_bytes).collect())),
        _ => Err(FormatError::new(K::InvalidValue("bias dtype"), t.at)),
    }
}

fn conv_layer(bytes: &[u8], region: usize, refs: &[TensorRef], p: &PendingConv) -> Result<ConvLayer, FormatError> {
    Ok(ConvLayer {
        spec: p.spec,
        weights: weights(bytes, region, &refs[p.weights])?,
        bias: bias(bytes, region, &refs[p.bias])?,
        quant: p.quant.clone(),
    })
}

/// Decodes and validates a CSDM stream.
pub fn load_model(bytes: &[u8]) -> Result<Model, FormatError> {
    let (d, result) = decode(bytes);
    result?;
    let model = assemble(bytes, d)?;
    validate(&model).map_err(|diags| FormatError::new(K::Validation(diags), 0))?;
    Ok(model)
}

/// Builds the model from a fully decoded stream, without validation.
pub(crate) fn assemble(bytes: &[u8], d: Decoded) -> Result<Model, FormatError> {
    let h = d.header.expect("decoded header");
    let (meta, input, input_quant) = d.meta.expect("decoded metadata");
    let region = h.weight_offset as usize;
    let refs = &d.tensors;
    let mut layers = Vec::with_capacity(d.records.len());
    for (_, p) in &d.records {
        layers.push(match p {
            Pending::Conv(c) => Layer::Conv(conv_layer(bytes, region, refs, c)?),
            Pending::Depthwise(c) => Layer::DepthwiseConv(conv_layer(bytes, region, refs, c)?),
            Pending::Block { expand, depthwise, project, residual, add_quant } => {
                Layer::InvertedResidual(InvertedResidualLayer {
                    expand: expand.as_ref().map(|e| conv_layer(bytes, region, refs, e)).transpose()?,
                    depthwise: conv_layer(bytes, region, refs, depthwise)?,
                    project: conv_layer(bytes, region, refs, project)?,
                    residual: *residual,
                    add_quant: add_quant.clone(),
                })
            }
            Pending::Dense { activation, weights: w, bias: b, quant } => Layer::FullyConnected(DenseLayer {
                activation: *activation,
                weights: weights(bytes, region, &refs[*w])?,
                bias: bias(bytes, region, &refs[*b])?,
                quant: quant.clone(),
            }),
            Pending::GlobalAvgPool => Layer::GlobalAvgPool,
            Pending::Flatten => Layer::Flatten,
            Pending::Dropout(rate) => Layer::Dropout { rate: *rate },
            Pending::Softmax => Layer::Softmax,
        });
    }
    Ok(Model { meta, input, input_quant, layers, labels: d.labels })
}

/// One-line description of a pending record for summaries.
pub(crate) fn describe(p: &Pending, refs: &[TensorRef]) -> String {
    let conv = |c: &PendingConv| {
        let w = &refs[c.weights].dims;
        format!(
            "{}x{} s{} {} {}->{} {}",
            c.spec.kernel_h,
            c.spec.kernel_w,
            c.spec.stride,
            c.spec.padding.name(),
            w[2],
            if w[3] == 1 { w[2] } else { w[3] },
            c.spec.activation
        )
    };
    match p {
        Pending::Conv(c) | Pending::Depthwise(c) => conv(c),
        Pending::Block { expand, depthwise, project, residual, .. } => {
            let mut s = String::new();
            if let Some(e) = expand {
                s.push_str(&format!("expand[{}] ", conv(e)));
            }
            s.push_str(&format!("dw[{}] project[{}]", conv(depthwise), conv(project)));
            if *residual {
                s.push_str(" +residual");
            }
            s
        }
        Pending::Dense { activation, weights, .. } => {
            let w = &refs[*weights].dims;
            format!("{}->{} {activation}", w[2], w[3])
        }
        Pending::Dropout(rate) => format!("rate {rate}"),
        _ => String::new(),
    }
}

/// Tensor references a record owns, in blob order.
pub(crate) fn record_tensors(p: &Pending) -> Vec<usize> {
    let conv = |c: &PendingConv| [c.weights, c.bias];
    match p {
        Pending::Conv(c) | Pending::Depthwise(c) => conv(c).to_vec(),
        Pending::Block { expand, depthwise, project, .. } => {
            expand.iter().flat_map(conv).chain(conv(depthwise)).chain(conv(project)).collect()
        }
        Pending::Dense { weights, bias, .. } => [*weights, *bias].to_vec(),
        _ => Vec::new(),
    }
}
