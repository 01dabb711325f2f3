use alloc::vec::Vec;

use super::{
    apply_activation, check_conv_weights, check_depthwise_weights, ActivationKind, ConvGeometry, ConvSpec, OpError,
};
use crate::exec::{RowExecutor, Sequential};
use crate::tensor::Tensor;

/// Full convolution, NHWC input, `(kh, kw, in, out)` weights.
pub(crate) fn conv2d_f32<E: RowExecutor>(
    exec: &E,
    g: &ConvGeometry,
    input: &[f32],
    weights: &[f32],
    bias: &[f32],
    act: ActivationKind,
    out: &mut Vec<f32>,
) {
    let act = if act.is_elementwise() { act } else { ActivationKind::None };
    let g = *g;
    out.clear();
    out.resize(g.rows() * g.row_len(), 0.0);
    exec.for_each_row(out, g.row_len(), |r, row| {
        let b = r / g.out_h;
        let oy = r % g.out_h;
        for ox in 0..g.out_w {
            let acc = &mut row[ox * g.out_c..(ox + 1) * g.out_c];
            acc.fill(0.0);
            for ky in 0..g.kh {
                let Some(iy) = g.input_row(oy, ky) else { continue };
                for kx in 0..g.kw {
                    let Some(ix) = g.input_col(ox, kx) else { continue };
                    let px = &input[((b * g.in_h + iy) * g.in_w + ix) * g.in_c..][..g.in_c];
                    let tap = &weights[(ky * g.kw + kx) * g.in_c * g.out_c..][..g.in_c * g.out_c];
                    for (&x, wrow) in px.iter().zip(tap.chunks_exact(g.out_c)) {
                        for (a, &w) in acc.iter_mut().zip(wrow) {
                            *a += x * w;
                        }
                    }
                }
            }
            for (a, &bv) in acc.iter_mut().zip(bias) {
                *a = act.apply_scalar(*a + bv);
            }
        }
    });
}

/// Per-channel convolution with `(kh, kw, c, 1)` weights.
pub(crate) fn depthwise_f32<E: RowExecutor>(
    exec: &E,
    g: &ConvGeometry,
    input: &[f32],
    weights: &[f32],
    bias: &[f32],
    act: ActivationKind,
    out: &mut Vec<f32>,
) {
    let act = if act.is_elementwise() { act } else { ActivationKind::None };
    let g = *g;
    let c = g.out_c;
    out.clear();
    out.resize(g.rows() * g.row_len(), 0.0);
    exec.for_each_row(out, g.row_len(), |r, row| {
        let b = r / g.out_h;
        let oy = r % g.out_h;
        for ox in 0..g.out_w {
            let acc = &mut row[ox * c..(ox + 1) * c];
            acc.fill(0.0);
            for ky in 0..g.kh {
                let Some(iy) = g.input_row(oy, ky) else { continue };
                for kx in 0..g.kw {
                    let Some(ix) = g.input_col(ox, kx) else { continue };
                    let px = &input[((b * g.in_h + iy) * g.in_w + ix) * c..][..c];
                    let w = &weights[(ky * g.kw + kx) * c..][..c];
                    for ((a, &x), &wv) in acc.iter_mut().zip(px).zip(w) {
                        *a += x * wv;
                    }
                }
            }
            for (a, &bv) in acc.iter_mut().zip(bias) {
                *a = act.apply_scalar(*a + bv);
            }
        }
    });
}

fn finish(out: Vec<f32>, g: &ConvGeometry, act: ActivationKind) -> Result<Tensor, OpError> {
    let t = Tensor::from_f32(g.output_shape(), out)?;
    if act == ActivationKind::Softmax {
        apply_activation(&t, act)
    } else {
        Ok(t)
    }
}

pub fn conv2d(input: &Tensor, weights: &Tensor, bias: &[f32], spec: &ConvSpec) -> Result<Tensor, OpError> {
    conv2d_with(&Sequential, input, weights, bias, spec)
}

pub fn conv2d_with<E: RowExecutor>(
    exec: &E,
    input: &Tensor,
    weights: &Tensor,
    bias: &[f32],
    spec: &ConvSpec,
) -> Result<Tensor, OpError> {
    let g = check_conv_weights(input.shape(), weights.shape(), bias.len(), spec)?;
    let mut out = Vec::new();
    conv2d_f32(exec, &g, input.as_f32()?, weights.as_f32()?, bias, spec.activation, &mut out);
    finish(out, &g, spec.activation)
}

pub fn depthwise_conv2d(input: &Tensor, weights: &Tensor, bias: &[f32], spec: &ConvSpec) -> Result<Tensor, OpError> {
    depthwise_conv2d_with(&Sequential, input, weights, bias, spec)
}

pub fn depthwise_conv2d_with<E: RowExecutor>(
    exec: &E,
    input: &Tensor,
    weights: &Tensor,
    bias: &[f32],
    spec: &ConvSpec,
) -> Result<Tensor, OpError> {
    let g = check_depthwise_weights(input.shape(), weights.shape(), bias.len(), spec)?;
    let mut out = Vec::new();
    depthwise_f32(exec, &g, input.as_f32()?, weights.as_f32()?, bias, spec.activation, &mut out);
    finish(out, &g, spec.activation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::Padding;
    use crate::tensor::Shape;
    use alloc::vec;

    fn t(n: usize, h: usize, w: usize, c: usize, data: Vec<f32>) -> Tensor {
        Tensor::from_f32(Shape::new(n, h, w, c).unwrap(), data).unwrap()
    }

    fn spec(k: usize, stride: usize, padding: Padding) -> ConvSpec {
        ConvSpec::new(k, k, stride, padding, ActivationKind::None).unwrap()
    }

    #[test]
    fn scalar_conv() {
        let out =
            conv2d(&t(1, 1, 1, 1, vec![2.0]), &t(1, 1, 1, 1, vec![3.0]), &[0.0], &spec(1, 1, Padding::Valid)).unwrap();
        assert_eq!(out.as_f32().unwrap(), &[6.0]);
    }

    #[test]
    fn ones_valid_conv() {
        let out =
            conv2d(&t(1, 3, 3, 1, vec![1.0; 9]), &t(3, 3, 1, 1, vec![1.0; 9]), &[0.0], &spec(3, 1, Padding::Valid))
                .unwrap();
        assert_eq!(out.shape(), Shape::new(1, 1, 1, 1).unwrap());
        assert_eq!(out.as_f32().unwrap(), &[9.0]);
    }

    #[test]
    fn same_padding_counts_border_taps() {
        // 3x3 ones on 3x3 ones with same padding: corners see 4 taps, edges 6, centre 9.
        let out =
            conv2d(&t(1, 3, 3, 1, vec![1.0; 9]), &t(3, 3, 1, 1, vec![1.0; 9]), &[0.5], &spec(3, 1, Padding::Same))
                .unwrap();
        assert_eq!(out.as_f32().unwrap(), &[4.5, 6.5, 4.5, 6.5, 9.5, 6.5, 4.5, 6.5, 4.5]);
    }

    #[test]
    fn conv_errors() {
        let input = t(1, 2, 2, 2, vec![0.0; 8]);
        let w = t(3, 3, 3, 1, vec![0.0; 27]);
        assert_eq!(
            conv2d(&input, &w, &[0.0], &spec(3, 1, Padding::Same)),
            Err(OpError::ChannelMismatch { expected: 3, actual: 2 })
        );
        let w = t(3, 3, 2, 1, vec![0.0; 18]);
        assert_eq!(conv2d(&input, &w, &[0.0], &spec(3, 1, Padding::Valid)), Err(OpError::DegenerateOutput));
        assert_eq!(
            conv2d(&input, &w, &[0.0, 0.0], &spec(3, 1, Padding::Same)),
            Err(OpError::BiasLength { expected: 1, actual: 2 })
        );
    }

    #[test]
    fn depthwise_identity_and_ones() {
        let data: Vec<f32> = (0..18).map(|i| i as f32 * 0.5 - 3.0).collect();
        let input = t(1, 3, 3, 2, data.clone());
        let id = t(1, 1, 2, 1, vec![1.0, 1.0]);
        let out = depthwise_conv2d(&input, &id, &[0.0, 0.0], &spec(1, 1, Padding::Same)).unwrap();
        assert_eq!(out.as_f32().unwrap(), &data[..]);

        let ones_in = t(1, 3, 3, 2, vec![1.0; 18]);
        let ones_w = t(3, 3, 2, 1, vec![1.0; 18]);
        let out = depthwise_conv2d(&ones_in, &ones_w, &[0.0, 0.0], &spec(3, 1, Padding::Valid)).unwrap();
        assert_eq!(out.as_f32().unwrap(), &[9.0, 9.0]);
    }

    #[test]
    fn depthwise_errors() {
        let input = t(1, 3, 3, 2, vec![0.0; 18]);
        let w = t(3, 3, 3, 1, vec![0.0; 27]);
        assert!(matches!(
            depthwise_conv2d(&input, &w, &[0.0; 3], &spec(3, 1, Padding::Same)),
            Err(OpError::ChannelMismatch { .. })
        ));
        let w = t(5, 5, 2, 1, vec![0.0; 50]);
        assert_eq!(
            depthwise_conv2d(&input, &w, &[0.0; 2], &spec(5, 1, Padding::Valid)),
            Err(OpError::DegenerateOutput)
        );
    }
}
