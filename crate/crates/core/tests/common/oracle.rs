//! Direct-loop f64 references for the float kernels.
//!
//! Each reference also returns, per output element, the L1 magnitude of the
//! terms that were summed (`Σ|x·w| + |b|`). Errors are measured relative to
//! that magnitude so cancellation in a sum does not inflate them.
#![allow(dead_code)]

pub struct Reference {
    pub dims: [usize; 4],
    pub values: Vec<f64>,
    pub magnitude: Vec<f64>,
}

/// Output length and leading pad, TensorFlow conventions.
pub fn same_or_valid(input: usize, kernel: usize, stride: usize, same: bool) -> (usize, usize) {
    if same {
        let out = input.div_ceil(stride);
        let total = ((out - 1) * stride + kernel).saturating_sub(input);
        (out, total / 2)
    } else {
        ((input - kernel) / stride + 1, 0)
    }
}

fn at(d: [usize; 4], a: usize, b: usize, c: usize, e: usize) -> usize {
    ((a * d[1] + b) * d[2] + c) * d[3] + e
}

/// `x` is NHWC, `w` is `(kh, kw, in, out)`.
pub fn conv2d(x: &[f32], xd: [usize; 4], w: &[f32], wd: [usize; 4], b: &[f32], stride: usize, same: bool) -> Reference {
    let [n, h, wi, ci] = xd;
    let [kh, kw, wci, co] = wd;
    assert_eq!(ci, wci);
    let (oh, pt) = same_or_valid(h, kh, stride, same);
    let (ow, pl) = same_or_valid(wi, kw, stride, same);
    let od = [n, oh, ow, co];
    let mut values = vec![0.0; n * oh * ow * co];
    let mut magnitude = vec![0.0; values.len()];
    for bn in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for oc in 0..co {
                    let mut acc = b[oc] as f64;
                    let mut mag = (b[oc] as f64).abs();
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride + ky) as isize - pt as isize;
                            let ix = (ox * stride + kx) as isize - pl as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= wi as isize {
                                continue;
                            }
                            for ic in 0..ci {
                                let p = x[at(xd, bn, iy as usize, ix as usize, ic)] as f64
                                    * w[at(wd, ky, kx, ic, oc)] as f64;
                                acc += p;
                                mag += p.abs();
                            }
                        }
                    }
                    let o = at(od, bn, oy, ox, oc);
                    values[o] = acc;
                    magnitude[o] = mag;
                }
            }
        }
    }
    Reference { dims: od, values, magnitude }
}

/// `w` is `(kh, kw, c, 1)`; each channel convolved with its own filter.
pub fn depthwise(
    x: &[f32],
    xd: [usize; 4],
    w: &[f32],
    wd: [usize; 4],
    b: &[f32],
    stride: usize,
    same: bool,
) -> Reference {
    let [n, h, wi, c] = xd;
    let [kh, kw, wc, one] = wd;
    assert_eq!((c, one), (wc, 1));
    let (oh, pt) = same_or_valid(h, kh, stride, same);
    let (ow, pl) = same_or_valid(wi, kw, stride, same);
    let od = [n, oh, ow, c];
    let mut values = vec![0.0; n * oh * ow * c];
    let mut magnitude = vec![0.0; values.len()];
    for bn in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut acc = b[ch] as f64;
                    let mut mag = (b[ch] as f64).abs();
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride + ky) as isize - pt as isize;
                            let ix = (ox * stride + kx) as isize - pl as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= wi as isize {
                                continue;
                            }
                            let p =
                                x[at(xd, bn, iy as usize, ix as usize, ch)] as f64 * w[at(wd, ky, kx, ch, 0)] as f64;
                            acc += p;
                            mag += p.abs();
                        }
                    }
                    let o = at(od, bn, oy, ox, ch);
                    values[o] = acc;
                    magnitude[o] = mag;
                }
            }
        }
    }
    Reference { dims: od, values, magnitude }
}

/// `x` is `batch × fan_in`, `w` is `fan_in × fan_out` row-major.
pub fn dense(x: &[f32], batch: usize, fan_in: usize, w: &[f32], fan_out: usize, b: &[f32]) -> Reference {
    let mut values = vec![0.0; batch * fan_out];
    let mut magnitude = vec![0.0; values.len()];
    for r in 0..batch {
        for o in 0..fan_out {
            let mut acc = b[o] as f64;
            let mut mag = (b[o] as f64).abs();
            for i in 0..fan_in {
                let p = x[r * fan_in + i] as f64 * w[i * fan_out + o] as f64;
                acc += p;
                mag += p.abs();
            }
            values[r * fan_out + o] = acc;
            magnitude[r * fan_out + o] = mag;
        }
    }
    Reference { dims: [batch, 1, 1, fan_out], values, magnitude }
}

pub fn global_avg_pool(x: &[f32], xd: [usize; 4]) -> Reference {
    let [n, h, w, c] = xd;
    let mut values = vec![0.0; n * c];
    let mut magnitude = vec![0.0; n * c];
    for bn in 0..n {
        for ch in 0..c {
            let mut acc = 0.0;
            let mut mag = 0.0;
            for y in 0..h {
                for xx in 0..w {
                    let v = x[at(xd, bn, y, xx, ch)] as f64;
                    acc += v;
                    mag += v.abs();
                }
            }
            values[bn * c + ch] = acc / (h * w) as f64;
            magnitude[bn * c + ch] = mag / (h * w) as f64;
        }
    }
    Reference { dims: [n, 1, 1, c], values, magnitude }
}

/// `(y − μ)·γ/√(σ²+ε) + β` per channel, applied after the fact.
pub fn batch_norm(
    y: &[f64],
    channels: usize,
    gamma: &[f32],
    beta: &[f32],
    mean: &[f32],
    var: &[f32],
    eps: f32,
) -> Vec<f64> {
    y.iter()
        .enumerate()
        .map(|(i, &v)| {
            let c = i % channels;
            (v - mean[c] as f64) * gamma[c] as f64 / (var[c] as f64 + eps as f64).sqrt() + beta[c] as f64
        })
        .collect()
}

/// Largest `|got − want| / magnitude` over all elements; exact zeros are
/// required where the magnitude is zero.
pub fn max_relative_error(got: &[f32], r: &Reference) -> f64 {
    assert_eq!(got.len(), r.values.len());
    got.iter()
        .zip(&r.values)
        .zip(&r.magnitude)
        .map(|((&g, &w), &m)| {
            let d = (g as f64 - w).abs();
            if m == 0.0 {
                if d == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                d / m
            }
        })
        .fold(0.0, f64::max)
}

pub fn max_abs_error(got: &[f32], want: &[f64]) -> f64 {
    assert_eq!(got.len(), want.len());
    got.iter().zip(want).map(|(&g, &w)| (g as f64 - w).abs()).fold(0.0, f64::max)
}
