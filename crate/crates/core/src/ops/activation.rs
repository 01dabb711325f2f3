use alloc::vec::Vec;

use super::{ActivationKind, OpError};
use crate::tensor::Tensor;

pub const SELU_ALPHA: f32 = 1.673_263_2;
pub const SELU_LAMBDA: f32 = 1.050_701;

impl ActivationKind {
    /// Scalar form of an elementwise activation. Softmax passes `x` through;
    /// it is applied over a whole vector by [`softmax_in_place`].
    #[inline]
    pub fn apply_scalar(self, x: f32) -> f32 {
        match self {
            ActivationKind::None | ActivationKind::Softmax => x,
            ActivationKind::Relu => x.max(0.0),
            ActivationKind::Relu6 => x.clamp(0.0, 6.0),
            ActivationKind::Sigmoid => 1.0 / (1.0 + libm::expf(-x)),
            ActivationKind::Tanh => libm::tanhf(x),
            ActivationKind::Selu => {
                if x > 0.0 {
                    SELU_LAMBDA * x
                } else {
                    SELU_LAMBDA * SELU_ALPHA * libm::expm1f(x)
                }
            }
        }
    }
}

/// Numerically stable softmax. Exponentials and the normalizer are computed
/// in f64 so the f32 outputs sum to one within a few ulps.
pub fn softmax_in_place(values: &mut [f32]) {
    if values.is_empty() {
        return;
    }
    let max = values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f64> = values.iter().map(|&x| libm::exp(x as f64 - max as f64)).collect();
    let sum: f64 = exps.iter().sum();
    for (v, e) in values.iter_mut().zip(exps) {
        *v = (e / sum) as f32;
    }
}

pub fn apply_activation(x: &Tensor, kind: ActivationKind) -> Result<Tensor, OpError> {
    let shape = x.shape();
    let mut data = x.as_f32()?.to_vec();
    if kind == ActivationKind::Softmax {
        if shape.n() != 1 || shape.h() != 1 || shape.w() != 1 {
            return Err(OpError::SoftmaxShape(shape));
        }
        softmax_in_place(&mut data);
    } else {
        for v in &mut data {
            *v = kind.apply_scalar(*v);
        }
    }
    Ok(Tensor::from_f32(shape, data)?)
}
