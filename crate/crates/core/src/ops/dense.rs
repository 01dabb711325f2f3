use alloc::vec::Vec;

use super::{apply_activation, check_dense_weights, ActivationKind, OpError};
use crate::exec::{RowExecutor, Sequential};
use crate::tensor::{Shape, Tensor};

/// `out = act(x · W + b)` for each batch row; `W` is `fan_in × fan_out`
/// row-major. Each output accumulates over the input index in order.
#[allow(clippy::too_many_arguments)]
pub(crate) fn dense_f32<E: RowExecutor>(
    exec: &E,
    batch: usize,
    fan_in: usize,
    fan_out: usize,
    input: &[f32],
    weights: &[f32],
    bias: &[f32],
    act: ActivationKind,
    out: &mut Vec<f32>,
) {
    let act = if act.is_elementwise() { act } else { ActivationKind::None };
    out.clear();
    out.resize(batch * fan_out, 0.0);
    exec.for_each_row(out, fan_out, |b, acc| {
        let x = &input[b * fan_in..(b + 1) * fan_in];
        for (&xv, wrow) in x.iter().zip(weights.chunks_exact(fan_out)) {
            for (a, &w) in acc.iter_mut().zip(wrow) {
                *a += xv * w;
            }
        }
        for (a, &bv) in acc.iter_mut().zip(bias) {
            *a = act.apply_scalar(*a + bv);
        }
    });
}

/// Inference-time dense layer. Dropout does not appear here: it is a
/// training-only annotation in the graph.
pub fn fully_connected(
    input: &Tensor,
    weights: &Tensor,
    bias: &[f32],
    activation: ActivationKind,
) -> Result<Tensor, OpError> {
    fully_connected_with(&Sequential, input, weights, bias, activation)
}

pub fn fully_connected_with<E: RowExecutor>(
    exec: &E,
    input: &Tensor,
    weights: &Tensor,
    bias: &[f32],
    activation: ActivationKind,
) -> Result<Tensor, OpError> {
    let (fan_in, fan_out) = check_dense_weights(input.shape(), weights.shape(), bias.len())?;
    let batch = input.shape().n();
    let mut out = Vec::new();
    dense_f32(exec, batch, fan_in, fan_out, input.as_f32()?, weights.as_f32()?, bias, activation, &mut out);
    let t = Tensor::from_f32(Shape::new(batch, 1, 1, fan_out)?, out)?;
    if activation == ActivationKind::Softmax {
        apply_activation(&t, activation)
    } else {
        Ok(t)
    }
}
