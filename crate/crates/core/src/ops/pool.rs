use alloc::vec::Vec;

use super::OpError;
use crate::tensor::{Shape, Tensor};

/// Per-channel spatial means, `(n, h, w, c)` to `(n, 1, 1, c)`. Sums are
/// taken in f64 in row-major order.
pub(crate) fn global_avg_pool_f32(shape: Shape, input: &[f32], out: &mut Vec<f32>) {
    let (n, hw, c) = (shape.n(), shape.h() * shape.w(), shape.c());
    out.clear();
    out.reserve(n * c);
    let mut sums = alloc::vec![0.0f64; c];
    for b in 0..n {
        sums.fill(0.0);
        for px in input[b * hw * c..(b + 1) * hw * c].chunks_exact(c) {
            for (s, &v) in sums.iter_mut().zip(px) {
                *s += v as f64;
            }
        }
        out.extend(sums.iter().map(|s| (s / hw as f64) as f32));
    }
}

pub fn global_avg_pool(input: &Tensor) -> Result<Tensor, OpError> {
    let shape = input.shape();
    let mut out = Vec::new();
    global_avg_pool_f32(shape, input.as_f32()?, &mut out);
    Ok(Tensor::from_f32(Shape::new(shape.n(), 1, 1, shape.c())?, out)?)
}
