use alloc::vec::Vec;

use super::{KernelLayout, OpError};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub mean: Vec<f32>,
    pub variance: Vec<f32>,
    pub epsilon: f32,
}

impl BatchNormParams {
    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn check(&self) -> Result<(), OpError> {
        let c = self.gamma.len();
        for len in [self.beta.len(), self.mean.len(), self.variance.len()] {
            if len != c {
                return Err(OpError::BatchNormLength { expected: c, actual: len });
            }
        }
        if self.variance.iter().any(|&v| v.is_nan() || v < 0.0) {
            return Err(OpError::InvalidSpec("batch norm variance must be non-negative"));
        }
        if self.epsilon.is_nan() || self.epsilon < 0.0 {
            return Err(OpError::InvalidSpec("batch norm epsilon must be non-negative"));
        }
        Ok(())
    }

    /// `(y - mean) * gamma / sqrt(var + eps) + beta` for channel `c`.
    pub fn apply(&self, c: usize, y: f32) -> f32 {
        let inv = 1.0 / libm::sqrt(self.variance[c] as f64 + self.epsilon as f64);
        ((y as f64 - self.mean[c] as f64) * self.gamma[c] as f64 * inv + self.beta[c] as f64) as f32
    }
}

/// Absorbs a batch norm into the preceding kernel:
/// `w' = w · γ/√(σ²+ε)` and `b' = (b − μ) · γ/√(σ²+ε) + β`, per output channel.
///
/// Epsilon 0 is accepted (the identity normalization); zero variance with
/// zero epsilon is rejected because the factor would be infinite.
pub fn fold_batchnorm(
    weights: &Tensor,
    bias: &[f32],
    bn: &BatchNormParams,
    layout: KernelLayout,
) -> Result<(Tensor, Vec<f32>), OpError> {
    bn.check()?;
    let shape = weights.shape();
    let axis = layout.out_axis();
    let out_c = shape.dims()[axis];
    if bn.channels() != out_c {
        return Err(OpError::BatchNormLength { expected: out_c, actual: bn.channels() });
    }
    if bias.len() != out_c {
        return Err(OpError::BiasLength { expected: out_c, actual: bias.len() });
    }
    let factors: Vec<f64> =
        (0..out_c).map(|c| bn.gamma[c] as f64 / libm::sqrt(bn.variance[c] as f64 + bn.epsilon as f64)).collect();
    if factors.iter().any(|f| !f.is_finite()) {
        return Err(OpError::InvalidSpec("batch norm variance + epsilon must be positive"));
    }
    let stride = shape.stride(axis);
    let folded: Vec<f32> =
        weights.as_f32()?.iter().enumerate().map(|(i, &w)| (w as f64 * factors[(i / stride) % out_c]) as f32).collect();
    let new_bias =
        (0..out_c).map(|c| ((bias[c] as f64 - bn.mean[c] as f64) * factors[c] + bn.beta[c] as f64) as f32).collect();
    Ok((Tensor::from_f32(shape, folded)?, new_bias))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use alloc::vec;

    fn bn(gamma: f32, beta: f32, mean: f32, var: f32, eps: f32, c: usize) -> BatchNormParams {
        BatchNormParams {
            gamma: vec![gamma; c],
            beta: vec![beta; c],
            mean: vec![mean; c],
            variance: vec![var; c],
            epsilon: eps,
        }
    }

    #[test]
    fn identity_normalization_changes_nothing() {
        let w = Tensor::from_f32(Shape::new(1, 1, 2, 2).unwrap(), vec![0.3, -1.2, 2.5, 0.0]).unwrap();
        let (fw, fb) = fold_batchnorm(&w, &[0.5, -0.5], &bn(1.0, 0.0, 0.0, 1.0, 0.0, 2), KernelLayout::Dense).unwrap();
        assert_eq!(fw, w);
        assert_eq!(fb, vec![0.5, -0.5]);
    }

    #[test]
    fn unit_factor_from_formula() {
        // 2 / sqrt(3 + 1) = 1
        let w = Tensor::from_f32(Shape::new(1, 1, 1, 1).unwrap(), vec![0.75]).unwrap();
        let (fw, fb) = fold_batchnorm(&w, &[0.0], &bn(2.0, 0.0, 0.0, 3.0, 1.0, 1), KernelLayout::Dense).unwrap();
        assert_eq!(fw.as_f32().unwrap(), &[0.75]);
        assert_eq!(fb, vec![0.0]);
    }

    #[test]
    fn depthwise_layout_uses_channel_axis() {
        let w = Tensor::from_f32(Shape::new(1, 1, 2, 1).unwrap(), vec![1.0, 1.0]).unwrap();
        let norm = BatchNormParams {
            gamma: vec![1.0, 2.0],
            beta: vec![0.0, 1.0],
            mean: vec![0.0, 0.0],
            variance: vec![1.0, 1.0],
            epsilon: 0.0,
        };
        let (fw, fb) = fold_batchnorm(&w, &[0.0, 0.0], &norm, KernelLayout::Depthwise).unwrap();
        assert_eq!(fw.as_f32().unwrap(), &[1.0, 2.0]);
        assert_eq!(fb, vec![0.0, 1.0]);
        assert!(matches!(
            fold_batchnorm(&w, &[0.0, 0.0], &norm, KernelLayout::Dense),
            Err(OpError::BatchNormLength { expected: 1, actual: 2 })
        ));
    }
}
