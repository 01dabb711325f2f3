use alloc::vec::Vec;

use super::{conv2d, depthwise_conv2d, OpError};
use crate::ops::ConvSpec;
use crate::tensor::Tensor;

/// Weights, bias and spec of one convolution inside a block.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    pub spec: ConvSpec,
    pub weights: Tensor,
    pub bias: Vec<f32>,
}

/// Element-wise sum of two equally shaped float tensors.
pub fn add_tensors(a: &Tensor, b: &Tensor) -> Result<Tensor, OpError> {
    if a.shape() != b.shape() {
        return Err(OpError::ShapeMismatch { left: a.shape(), right: b.shape() });
    }
    let sum = a.as_f32()?.iter().zip(b.as_f32()?).map(|(x, y)| x + y).collect();
    Ok(Tensor::from_f32(a.shape(), sum)?)
}

/// Expansion (1x1) → depthwise → linear 1x1 projection, plus the block input
/// when `use_residual` is set. The activations come from each spec; the
/// usual block uses relu6, relu6, none. `expand` is absent for blocks with
/// expansion factor 1.
pub fn inverted_residual(
    input: &Tensor,
    expand: Option<&ConvParams>,
    depthwise: &ConvParams,
    project: &ConvParams,
    use_residual: bool,
) -> Result<Tensor, OpError> {
    if use_residual && depthwise.spec.stride != 1 {
        return Err(OpError::ResidualStride(depthwise.spec.stride));
    }
    let expanded = match expand {
        Some(e) => conv2d(input, &e.weights, &e.bias, &e.spec)?,
        None => input.clone(),
    };
    let filtered = depthwise_conv2d(&expanded, &depthwise.weights, &depthwise.bias, &depthwise.spec)?;
    let projected = conv2d(&filtered, &project.weights, &project.bias, &project.spec)?;
    if use_residual {
        if projected.shape() != input.shape() {
            return Err(OpError::ResidualMismatch { input: input.shape(), output: projected.shape() });
        }
        add_tensors(&projected, input)
    } else {
        Ok(projected)
    }
}
