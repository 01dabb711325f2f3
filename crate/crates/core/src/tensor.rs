//! Rank-4 tensors in (batch, row, col, channel) order and affine INT8
//! quantization metadata.

use alloc::vec::Vec;
use core::fmt;

use crate::requant::round_half_even;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32,
    I8,
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DType::F32 => "f32",
            DType::I8 => "i8",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TensorError {
    ZeroDim { axis: usize },
    TooLarge,
    LengthMismatch { expected: usize, actual: usize },
    InvalidScale { index: usize, value: f32 },
    EmptyScales,
    ZeroPointOutOfRange(i32),
    PerChannelZeroPoint(i32),
    AxisOutOfRange(usize),
    ScaleCountMismatch { axis: usize, expected: usize, actual: usize },
    DTypeMismatch { expected: DType, actual: DType },
    MissingQuantParams,
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::ZeroDim { axis } => write!(f, "dimension {axis} is zero"),
            TensorError::TooLarge => f.write_str("element count overflows usize"),
            TensorError::LengthMismatch { expected, actual } => {
                write!(f, "buffer holds {actual} elements, shape needs {expected}")
            }
            TensorError::InvalidScale { index, value } => {
                write!(f, "scale {index} must be positive and finite, got {value}")
            }
            TensorError::EmptyScales => f.write_str("no quantization scales given"),
            TensorError::ZeroPointOutOfRange(zp) => {
                write!(f, "zero-point {zp} outside [-128, 127]")
            }
            TensorError::PerChannelZeroPoint(zp) => {
                write!(f, "per-channel quantization requires zero-point 0, got {zp}")
            }
            TensorError::AxisOutOfRange(axis) => write!(f, "quantization axis {axis} out of range"),
            TensorError::ScaleCountMismatch { axis, expected, actual } => {
                write!(f, "axis {axis} has {expected} channels but {actual} scales were given")
            }
            TensorError::DTypeMismatch { expected, actual } => {
                write!(f, "expected {expected} tensor, got {actual}")
            }
            TensorError::MissingQuantParams => f.write_str("int8 tensor has no quantization parameters"),
        }
    }
}

impl core::error::Error for TensorError {}

/// Dimensions of a rank-4 tensor. Every dimension is at least one.
///
/// Weight tensors reuse the same container: convolution kernels are
/// `(kernel_h, kernel_w, in_channels, out_channels)`, depthwise kernels
/// `(kernel_h, kernel_w, channels, 1)` and dense weights `(1, 1, in, out)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    dims: [usize; 4],
}

impl Shape {
    pub fn new(n: usize, h: usize, w: usize, c: usize) -> Result<Self, TensorError> {
        let dims = [n, h, w, c];
        if let Some(axis) = dims.iter().position(|&d| d == 0) {
            return Err(TensorError::ZeroDim { axis });
        }
        dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or(TensorError::TooLarge)?;
        Ok(Shape { dims })
    }

    /// `(1, 1, 1, len)`, the shape of a flat feature vector.
    pub fn vector(len: usize) -> Result<Self, TensorError> {
        Shape::new(1, 1, 1, len)
    }

    pub fn n(&self) -> usize {
        self.dims[0]
    }
    pub fn h(&self) -> usize {
        self.dims[1]
    }
    pub fn w(&self) -> usize {
        self.dims[2]
    }
    pub fn c(&self) -> usize {
        self.dims[3]
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn dim(&self, axis: usize) -> Option<usize> {
        self.dims.get(axis).copied()
    }

    /// Element count.
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Distance in elements between consecutive indices along `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        self.dims[axis + 1..].iter().product()
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [n, h, w, c] = self.dims;
        write!(f, "{n}x{h}x{w}x{c}")
    }
}

/// Affine mapping `real = (code - zero_point) * scale`.
///
/// Per-tensor parameters carry one scale. Per-channel parameters carry one
/// scale for each index along `axis` and are always symmetric.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantParams {
    scales: Vec<f32>,
    zero_point: i32,
    axis: Option<usize>,
}

impl QuantParams {
    pub fn per_tensor(scale: f32, zero_point: i32) -> Result<Self, TensorError> {
        Self::from_parts(alloc::vec![scale], zero_point, None)
    }

    pub fn per_channel(scales: Vec<f32>, axis: usize) -> Result<Self, TensorError> {
        Self::from_parts(scales, 0, Some(axis))
    }

    /// Checks everything except that the scale count matches a tensor; see
    /// [`QuantParams::check_shape`].
    pub fn from_parts(scales: Vec<f32>, zero_point: i32, axis: Option<usize>) -> Result<Self, TensorError> {
        if scales.is_empty() {
            return Err(TensorError::EmptyScales);
        }
        if let Some((index, &value)) = scales.iter().enumerate().find(|(_, s)| !(s.is_finite() && **s > 0.0)) {
            return Err(TensorError::InvalidScale { index, value });
        }
        if !(-128..=127).contains(&zero_point) {
            return Err(TensorError::ZeroPointOutOfRange(zero_point));
        }
        match axis {
            Some(a) if a > 3 => return Err(TensorError::AxisOutOfRange(a)),
            Some(_) if zero_point != 0 => return Err(TensorError::PerChannelZeroPoint(zero_point)),
            None if scales.len() != 1 => {
                return Err(TensorError::ScaleCountMismatch { axis: 0, expected: 1, actual: scales.len() })
            }
            _ => {}
        }
        Ok(QuantParams { scales, zero_point, axis })
    }

    pub fn check_shape(&self, shape: Shape) -> Result<(), TensorError> {
        if let Some(axis) = self.axis {
            let expected = shape.dim(axis).ok_or(TensorError::AxisOutOfRange(axis))?;
            if expected != self.scales.len() {
                return Err(TensorError::ScaleCountMismatch { axis, expected, actual: self.scales.len() });
            }
        }
        Ok(())
    }

    pub fn scales(&self) -> &[f32] {
        &self.scales
    }

    /// The scale of a per-tensor mapping (the first scale otherwise).
    pub fn scale(&self) -> f32 {
        self.scales[0]
    }

    pub fn zero_point(&self) -> i32 {
        self.zero_point
    }

    pub fn axis(&self) -> Option<usize> {
        self.axis
    }

    pub fn is_per_channel(&self) -> bool {
        self.axis.is_some()
    }

    pub fn max_scale(&self) -> f32 {
        self.scales.iter().copied().fold(0.0, f32::max)
    }

    /// `clamp(round(x / scale) + zero_point, -128, 127)`, ties to even.
    #[inline]
    pub fn quantize_with(scale: f32, zero_point: i32, x: f32) -> i8 {
        let q = round_half_even(x / scale) + zero_point as f32;
        q.clamp(-128.0, 127.0) as i8
    }

    #[inline]
    pub fn quantize_value(&self, x: f32) -> i8 {
        Self::quantize_with(self.scale(), self.zero_point, x)
    }

    #[inline]
    pub fn dequantize_value(&self, code: i8) -> f32 {
        (code as i32 - self.zero_point) as f32 * self.scale()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    I8(Vec<i8>),
}

/// Immutable rank-4 tensor. Quantization parameters are present exactly when
/// the data is int8.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: TensorData,
    quant: Option<QuantParams>,
}

impl Tensor {
    pub fn from_f32(shape: Shape, data: Vec<f32>) -> Result<Self, TensorError> {
        check_len(shape, data.len())?;
        Ok(Tensor { shape, data: TensorData::F32(data), quant: None })
    }

    pub fn from_i8(shape: Shape, data: Vec<i8>, quant: QuantParams) -> Result<Self, TensorError> {
        check_len(shape, data.len())?;
        quant.check_shape(shape)?;
        Ok(Tensor { shape, data: TensorData::I8(data), quant: Some(quant) })
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor { shape, data: TensorData::F32(alloc::vec![0.0; shape.len()]), quant: None }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn dtype(&self) -> DType {
        match self.data {
            TensorData::F32(_) => DType::F32,
            TensorData::I8(_) => DType::I8,
        }
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn quant(&self) -> Option<&QuantParams> {
        self.quant.as_ref()
    }

    pub fn as_f32(&self) -> Result<&[f32], TensorError> {
        match &self.data {
            TensorData::F32(v) => Ok(v),
            TensorData::I8(_) => Err(TensorError::DTypeMismatch { expected: DType::F32, actual: DType::I8 }),
        }
    }

    pub fn as_i8(&self) -> Result<&[i8], TensorError> {
        match &self.data {
            TensorData::I8(v) => Ok(v),
            TensorData::F32(_) => Err(TensorError::DTypeMismatch { expected: DType::I8, actual: DType::F32 }),
        }
    }

    pub fn into_f32(self) -> Result<Vec<f32>, TensorError> {
        match self.data {
            TensorData::F32(v) => Ok(v),
            TensorData::I8(_) => Err(TensorError::DTypeMismatch { expected: DType::F32, actual: DType::I8 }),
        }
    }

    /// Same data, new shape of equal element count.
    pub fn reshape(self, shape: Shape) -> Result<Self, TensorError> {
        check_len(shape, self.shape.len())?;
        if let Some(q) = &self.quant {
            q.check_shape(shape)?;
        }
        Ok(Tensor { shape, ..self })
    }

    /// Bytes occupied by the payload.
    pub fn byte_len(&self) -> usize {
        match &self.data {
            TensorData::F32(v) => v.len() * 4,
            TensorData::I8(v) => v.len(),
        }
    }
}

fn check_len(shape: Shape, len: usize) -> Result<(), TensorError> {
    if shape.len() != len {
        return Err(TensorError::LengthMismatch { expected: shape.len(), actual: len });
    }
    Ok(())
}

/// Index along `axis` of each element, in storage order.
fn channel_indices(shape: Shape, axis: usize) -> impl Iterator<Item = usize> {
    let stride = shape.stride(axis);
    let size = shape.dims()[axis];
    (0..shape.len()).map(move |i| (i / stride) % size)
}

pub fn quantize_tensor(t: &Tensor, q: &QuantParams) -> Result<Tensor, TensorError> {
    let values = t.as_f32()?;
    q.check_shape(t.shape)?;
    let data = match q.axis {
        None => values.iter().map(|&x| QuantParams::quantize_with(q.scale(), q.zero_point, x)).collect(),
        Some(axis) => values
            .iter()
            .zip(channel_indices(t.shape, axis))
            .map(|(&x, ch)| QuantParams::quantize_with(q.scales[ch], q.zero_point, x))
            .collect(),
    };
    Tensor::from_i8(t.shape, data, q.clone())
}

pub fn dequantize_tensor(t: &Tensor) -> Result<Tensor, TensorError> {
    let codes = t.as_i8()?;
    let q = t.quant.as_ref().ok_or(TensorError::MissingQuantParams)?;
    let zp = q.zero_point;
    let data = match q.axis {
        None => codes.iter().map(|&e| (e as i32 - zp) as f32 * q.scale()).collect(),
        Some(axis) => codes
            .iter()
            .zip(channel_indices(t.shape, axis))
            .map(|(&e, ch)| (e as i32 - zp) as f32 * q.scales[ch])
            .collect(),
    };
    Tensor::from_f32(t.shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn scalar(x: f32) -> Tensor {
        Tensor::from_f32(Shape::vector(1).unwrap(), vec![x]).unwrap()
    }

    #[test]
    fn shape_rejects_zero_dims() {
        assert_eq!(Shape::new(1, 0, 2, 3), Err(TensorError::ZeroDim { axis: 1 }));
        assert_eq!(Shape::new(usize::MAX, 2, 1, 1), Err(TensorError::TooLarge));
    }

    #[test]
    fn construction_checks_buffer_length() {
        let s = Shape::new(1, 2, 2, 1).unwrap();
        assert!(matches!(
            Tensor::from_f32(s, vec![0.0; 3]),
            Err(TensorError::LengthMismatch { expected: 4, actual: 3 })
        ));
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(QuantParams::per_tensor(0.0, 0).is_err());
        assert!(QuantParams::per_tensor(-1.0, 0).is_err());
        assert!(QuantParams::per_tensor(f32::NAN, 0).is_err());
        assert_eq!(QuantParams::per_tensor(1.0, 128), Err(TensorError::ZeroPointOutOfRange(128)));
        assert_eq!(QuantParams::from_parts(vec![1.0, 1.0], 3, Some(3)), Err(TensorError::PerChannelZeroPoint(3)));
        let t = Tensor::from_f32(Shape::new(1, 1, 2, 3).unwrap(), vec![0.0; 6]).unwrap();
        let q = QuantParams::per_channel(vec![1.0, 1.0], 3).unwrap();
        assert!(matches!(quantize_tensor(&t, &q), Err(TensorError::ScaleCountMismatch { .. })));
    }

    #[test]
    fn symmetric_zero_maps_to_zero_point() {
        let q = QuantParams::per_tensor(1.0 / 127.0, 0).unwrap();
        assert_eq!(quantize_tensor(&scalar(0.0), &q).unwrap().as_i8().unwrap(), &[0]);
    }

    #[test]
    fn asymmetric_example() {
        // round(1.00 / 0.01) - 128 = -28
        let q = QuantParams::per_tensor(0.01, -128).unwrap();
        assert_eq!(quantize_tensor(&scalar(1.0), &q).unwrap().as_i8().unwrap(), &[-28]);
    }

    #[test]
    fn dequantize_examples() {
        let q = QuantParams::per_tensor(0.5, 0).unwrap();
        let t = Tensor::from_i8(Shape::vector(2).unwrap(), vec![4, 0], q).unwrap();
        assert_eq!(dequantize_tensor(&t).unwrap().as_f32().unwrap(), &[2.0, 0.0]);

        let q = QuantParams::per_tensor(0.3, -7).unwrap();
        let t = Tensor::from_i8(Shape::vector(1).unwrap(), vec![-7], q).unwrap();
        assert_eq!(dequantize_tensor(&t).unwrap().as_f32().unwrap(), &[0.0]);
        assert_eq!(
            dequantize_tensor(&scalar(1.0)),
            Err(TensorError::DTypeMismatch { expected: DType::I8, actual: DType::F32 })
        );
    }

    #[test]
    fn ties_round_to_even() {
        let q = QuantParams::per_tensor(1.0, 0).unwrap();
        let t = Tensor::from_f32(Shape::vector(4).unwrap(), vec![0.5, 1.5, 2.5, -0.5]).unwrap();
        assert_eq!(quantize_tensor(&t, &q).unwrap().as_i8().unwrap(), &[0, 2, 2, 0]);
    }

    #[test]
    fn grid_round_trip_within_half_scale() {
        // Fine grid sweep of the calibrated range [0, 2.55].
        let q = QuantParams::per_tensor(0.01, -128).unwrap();
        let grid: Vec<f32> = (0..=25_500).map(|i| i as f32 * 1e-4).collect();
        let t = Tensor::from_f32(Shape::vector(grid.len()).unwrap(), grid.clone()).unwrap();
        let back = dequantize_tensor(&quantize_tensor(&t, &q).unwrap()).unwrap();
        for (x, y) in grid.iter().zip(back.as_f32().unwrap()) {
            assert!((x - y).abs() <= 0.005 + 1e-6, "{x} -> {y}");
        }
    }

    #[test]
    fn per_channel_uses_channel_scale() {
        let shape = Shape::new(1, 1, 2, 2).unwrap();
        let t = Tensor::from_f32(shape, vec![1.0, 1.0, -2.0, -2.0]).unwrap();
        let q = QuantParams::per_channel(vec![0.5, 0.25], 3).unwrap();
        let qt = quantize_tensor(&t, &q).unwrap();
        assert_eq!(qt.as_i8().unwrap(), &[2, 4, -4, -8]);
        assert_eq!(dequantize_tensor(&qt).unwrap().as_f32().unwrap(), t.as_f32().unwrap());
    }

    proptest! {
        #[test]
        fn round_trip_bound(min in -50.0f32..0.0, span in 0.01f32..100.0, t in 0.0f32..=1.0) {
            let max = min + span;
            let scale = span / 255.0;
            let zp = (-128.0 - min / scale).round().clamp(-128.0, 127.0) as i32;
            let q = QuantParams::per_tensor(scale, zp).unwrap();
            // keep x inside the representable interval of this zero-point
            let lo = (-128 - zp) as f32 * scale;
            let hi = (127 - zp) as f32 * scale;
            let x = (min + t * span).clamp(lo, hi);
            let y = q.dequantize_value(q.quantize_value(x));
            prop_assert!((x - y).abs() <= scale / 2.0 + 1e-5 * (1.0 + x.abs()));
            let _ = max;
        }

        #[test]
        fn quantize_monotone(a in -10.0f32..10.0, b in -10.0f32..10.0, scale in 0.001f32..1.0, zp in -128i32..=127) {
            let q = QuantParams::per_tensor(scale, zp).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(q.quantize_value(lo) <= q.quantize_value(hi));
        }
    }
}
