//! Layer kernels for the scene classifiers, in float and INT8 form.
//!
//! Float kernels accumulate each output element in a fixed order
//! (kernel row, kernel column, input channel) and add the bias last, so
//! results do not depend on how output rows are scheduled.

mod activation;
mod batchnorm;
mod conv;
mod dense;
mod pool;
pub mod quantized;
mod residual;

use core::fmt;

use crate::tensor::{Shape, TensorError};

pub use activation::{apply_activation, softmax_in_place, SELU_ALPHA, SELU_LAMBDA};
pub use batchnorm::{fold_batchnorm, BatchNormParams};
pub use conv::{conv2d, conv2d_with, depthwise_conv2d, depthwise_conv2d_with};
pub use dense::{fully_connected, fully_connected_with};
pub use pool::global_avg_pool;
pub use residual::{add_tensors, inverted_residual, ConvParams};

pub(crate) use conv::{conv2d_f32, depthwise_f32};
pub(crate) use dense::dense_f32;
pub(crate) use pool::global_avg_pool_f32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ActivationKind {
    None,
    Relu,
    Relu6,
    Sigmoid,
    Tanh,
    Selu,
    /// Normalizes over the channel axis; only meaningful on the final layer.
    Softmax,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 7] = [
        ActivationKind::None,
        ActivationKind::Relu,
        ActivationKind::Relu6,
        ActivationKind::Sigmoid,
        ActivationKind::Tanh,
        ActivationKind::Selu,
        ActivationKind::Softmax,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::None => "none",
            ActivationKind::Relu => "relu",
            ActivationKind::Relu6 => "relu6",
            ActivationKind::Sigmoid => "sigmoid",
            ActivationKind::Tanh => "tanh",
            ActivationKind::Selu => "selu",
            ActivationKind::Softmax => "softmax",
        }
    }

    /// Activations that act on each element independently.
    pub fn is_elementwise(self) -> bool {
        self != ActivationKind::Softmax
    }

    /// Activations the INT8 path evaluates through a 256-entry lookup table
    /// instead of a clamp.
    pub fn needs_lookup_table(self) -> bool {
        matches!(self, ActivationKind::Sigmoid | ActivationKind::Tanh | ActivationKind::Selu)
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Valid,
    Same,
}

impl Padding {
    pub fn code(self) -> u8 {
        match self {
            Padding::Valid => 0,
            Padding::Same => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Padding::Valid),
            1 => Some(Padding::Same),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Padding::Valid => "valid",
            Padding::Same => "same",
        }
    }

    /// Output length and leading pad along one axis.
    ///
    /// Same padding pads `max((ceil(in/stride) - 1) * stride + kernel - in, 0)`
    /// in total, the smaller half before.
    pub fn output_dim(self, input: usize, kernel: usize, stride: usize) -> Option<(usize, usize)> {
        if kernel == 0 || stride == 0 || input == 0 {
            return None;
        }
        match self {
            Padding::Valid => {
                if input < kernel {
                    None
                } else {
                    Some(((input - kernel) / stride + 1, 0))
                }
            }
            Padding::Same => {
                let out = input.div_ceil(stride);
                let total = ((out - 1) * stride + kernel).saturating_sub(input);
                Some((out, total / 2))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvSpec {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: Padding,
    pub activation: ActivationKind,
}

impl ConvSpec {
    pub fn new(
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: Padding,
        activation: ActivationKind,
    ) -> Result<Self, OpError> {
        let spec = ConvSpec { kernel_h, kernel_w, stride, padding, activation };
        spec.check()?;
        Ok(spec)
    }

    /// 1x1, stride 1.
    pub fn pointwise(activation: ActivationKind) -> Self {
        ConvSpec { kernel_h: 1, kernel_w: 1, stride: 1, padding: Padding::Same, activation }
    }

    pub fn check(&self) -> Result<(), OpError> {
        if self.kernel_h == 0 || self.kernel_w == 0 {
            return Err(OpError::InvalidSpec("kernel dimensions must be at least 1"));
        }
        if self.stride == 0 {
            return Err(OpError::InvalidSpec("stride must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum OpError {
    InvalidSpec(&'static str),
    ChannelMismatch { expected: usize, actual: usize },
    KernelMismatch { expected: [usize; 2], actual: [usize; 2] },
    WeightShape(Shape),
    BiasLength { expected: usize, actual: usize },
    DegenerateOutput,
    SoftmaxShape(Shape),
    NotFlat(Shape),
    ResidualMismatch { input: Shape, output: Shape },
    ResidualStride(usize),
    ShapeMismatch { left: Shape, right: Shape },
    MissingQuant(&'static str),
    UnsupportedActivation(ActivationKind),
    BatchNormLength { expected: usize, actual: usize },
    Tensor(TensorError),
}

impl From<TensorError> for OpError {
    fn from(e: TensorError) -> Self {
        OpError::Tensor(e)
    }
}

impl fmt::Display for OpError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OpError::InvalidSpec(why) => write!(f, "invalid convolution spec: {why}"),
            OpError::ChannelMismatch { expected, actual } => {
                write!(f, "expected {expected} input channels, got {actual}")
            }
            OpError::KernelMismatch { expected, actual } => write!(
                f,
                "spec declares a {}x{} kernel but weights are {}x{}",
                expected[0], expected[1], actual[0], actual[1]
            ),
            OpError::WeightShape(s) => write!(f, "weights of shape {s} do not fit this operation"),
            OpError::BiasLength { expected, actual } => {
                write!(f, "bias has {actual} entries, expected {expected}")
            }
            OpError::DegenerateOutput => f.write_str("output would have a dimension below 1"),
            OpError::SoftmaxShape(s) => write!(f, "softmax needs a 1x1x1xC tensor, got {s}"),
            OpError::NotFlat(s) => write!(f, "fully connected input must be flat, got {s}"),
            OpError::ResidualMismatch { input, output } => {
                write!(f, "residual add between mismatched shapes {input} and {output}")
            }
            OpError::ResidualStride(s) => write!(f, "residual add requires stride 1, got {s}"),
            OpError::ShapeMismatch { left, right } => write!(f, "shape {left} does not match {right}"),
            OpError::MissingQuant(what) => write!(f, "missing quantization parameters for {what}"),
            OpError::UnsupportedActivation(a) => write!(f, "activation {a} is not supported here"),
            OpError::BatchNormLength { expected, actual } => {
                write!(f, "batch norm has {actual} channels, weights have {expected} output channels")
            }
            OpError::Tensor(e) => e.fmt(f),
        }
    }
}

impl core::error::Error for OpError {}

/// Where the output channels of a weight tensor sit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelLayout {
    /// `(kh, kw, in, out)`; dense weights are `(1, 1, in, out)`.
    Dense,
    /// `(kh, kw, channels, 1)`.
    Depthwise,
}

impl KernelLayout {
    pub fn out_axis(self) -> usize {
        match self {
            KernelLayout::Dense => 3,
            KernelLayout::Depthwise => 2,
        }
    }
}

/// Resolved sizes and padding for one convolution call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub batch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub out_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeometry {
    pub fn new(input: Shape, spec: &ConvSpec, out_c: usize) -> Result<Self, OpError> {
        spec.check()?;
        let (out_h, pad_top) =
            spec.padding.output_dim(input.h(), spec.kernel_h, spec.stride).ok_or(OpError::DegenerateOutput)?;
        let (out_w, pad_left) =
            spec.padding.output_dim(input.w(), spec.kernel_w, spec.stride).ok_or(OpError::DegenerateOutput)?;
        Ok(ConvGeometry {
            batch: input.n(),
            in_h: input.h(),
            in_w: input.w(),
            in_c: input.c(),
            out_h,
            out_w,
            out_c,
            kh: spec.kernel_h,
            kw: spec.kernel_w,
            stride: spec.stride,
            pad_top,
            pad_left,
        })
    }

    pub fn output_shape(&self) -> Shape {
        Shape::new(self.batch, self.out_h, self.out_w, self.out_c).expect("non-zero output dims")
    }

    pub fn row_len(&self) -> usize {
        self.out_w * self.out_c
    }

    pub fn rows(&self) -> usize {
        self.batch * self.out_h
    }

    /// Input row for kernel row `ky` at output row `oy`, if inside the image.
    #[inline]
    pub fn input_row(&self, oy: usize, ky: usize) -> Option<usize> {
        (oy * self.stride + ky).checked_sub(self.pad_top).filter(|&y| y < self.in_h)
    }

    #[inline]
    pub fn input_col(&self, ox: usize, kx: usize) -> Option<usize> {
        (ox * self.stride + kx).checked_sub(self.pad_left).filter(|&x| x < self.in_w)
    }
}

/// Checks a dense/conv kernel `(kh, kw, in, out)` against spec and input.
pub(crate) fn check_conv_weights(
    input: Shape,
    weights: Shape,
    bias_len: usize,
    spec: &ConvSpec,
) -> Result<ConvGeometry, OpError> {
    let [kh, kw, in_c, out_c] = weights.dims();
    if [kh, kw] != [spec.kernel_h, spec.kernel_w] {
        return Err(OpError::KernelMismatch { expected: [spec.kernel_h, spec.kernel_w], actual: [kh, kw] });
    }
    if in_c != input.c() {
        return Err(OpError::ChannelMismatch { expected: in_c, actual: input.c() });
    }
    if bias_len != out_c {
        return Err(OpError::BiasLength { expected: out_c, actual: bias_len });
    }
    ConvGeometry::new(input, spec, out_c)
}

pub(crate) fn check_depthwise_weights(
    input: Shape,
    weights: Shape,
    bias_len: usize,
    spec: &ConvSpec,
) -> Result<ConvGeometry, OpError> {
    let [kh, kw, c, mult] = weights.dims();
    if mult != 1 {
        return Err(OpError::WeightShape(weights));
    }
    if [kh, kw] != [spec.kernel_h, spec.kernel_w] {
        return Err(OpError::KernelMismatch { expected: [spec.kernel_h, spec.kernel_w], actual: [kh, kw] });
    }
    if c != input.c() {
        return Err(OpError::ChannelMismatch { expected: c, actual: input.c() });
    }
    if bias_len != c {
        return Err(OpError::BiasLength { expected: c, actual: bias_len });
    }
    ConvGeometry::new(input, spec, c)
}

/// Checks dense weights `(1, 1, in, out)` against a flat input; returns
/// `(in, out)`.
pub(crate) fn check_dense_weights(input: Shape, weights: Shape, bias_len: usize) -> Result<(usize, usize), OpError> {
    if input.h() != 1 || input.w() != 1 {
        return Err(OpError::NotFlat(input));
    }
    let [one_a, one_b, fan_in, fan_out] = weights.dims();
    if one_a != 1 || one_b != 1 {
        return Err(OpError::WeightShape(weights));
    }
    if fan_in != input.c() {
        return Err(OpError::ChannelMismatch { expected: fan_in, actual: input.c() });
    }
    if bias_len != fan_out {
        return Err(OpError::BiasLength { expected: fan_out, actual: bias_len });
    }
    Ok((fan_in, fan_out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_padding_split_floor_left() {
        // in 8, k 3, s 2 -> out 4, total pad (3*2 + 3 - 8) = 1, 0 before
        assert_eq!(Padding::Same.output_dim(8, 3, 2), Some((4, 0)));
        // in 7, k 3, s 2 -> out 4, total pad 2, 1 before
        assert_eq!(Padding::Same.output_dim(7, 3, 2), Some((4, 1)));
        // in 5, k 3, s 1 -> out 5, pad 2, 1 before
        assert_eq!(Padding::Same.output_dim(5, 3, 1), Some((5, 1)));
        // in 224, k 3, s 2 -> out 112, pad 1, 0 before
        assert_eq!(Padding::Same.output_dim(224, 3, 2), Some((112, 0)));
    }

    #[test]
    fn valid_padding_rejects_small_inputs() {
        assert_eq!(Padding::Valid.output_dim(3, 3, 1), Some((1, 0)));
        assert_eq!(Padding::Valid.output_dim(2, 3, 1), None);
        assert_eq!(Padding::Valid.output_dim(9, 3, 2), Some((4, 0)));
    }

    #[test]
    fn codes_round_trip() {
        for a in ActivationKind::ALL {
            assert_eq!(ActivationKind::from_code(a.code()), Some(a));
        }
        assert_eq!(ActivationKind::from_code(7), None);
        assert_eq!(Padding::from_code(2), None);
    }

    #[test]
    fn spec_validation() {
        assert!(ConvSpec::new(0, 3, 1, Padding::Same, ActivationKind::None).is_err());
        assert!(ConvSpec::new(3, 3, 0, Padding::Same, ActivationKind::None).is_err());
        assert!(ConvSpec::new(3, 3, 2, Padding::Valid, ActivationKind::Relu).is_ok());
    }
}
