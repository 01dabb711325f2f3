//! 8-bit RGB rasters, the binary portable-pixmap codec, bilinear resizing and
//! normalization to network input.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;

use crate::model::InputSpec;
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawImage {
    width: usize,
    height: usize,
    /// Row-major RGB triples.
    data: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ImageError {
    ZeroDimension,
    PayloadLength { expected: usize, actual: usize },
    UnsupportedFormat(&'static str),
    BadHeader(&'static str),
    Truncated { expected: usize, actual: usize },
    TrailingBytes(usize),
    TooLarge,
}

impl fmt::Display for ImageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ImageError::ZeroDimension => f.write_str("image dimensions must be at least 1"),
            ImageError::PayloadLength { expected, actual } => {
                write!(f, "pixel data has {actual} bytes, expected {expected}")
            }
            ImageError::UnsupportedFormat(what) => write!(f, "unsupported image format: {what}"),
            ImageError::BadHeader(what) => write!(f, "malformed pixmap header: {what}"),
            ImageError::Truncated { expected, actual } => {
                write!(f, "pixel payload truncated: {actual} of {expected} bytes")
            }
            ImageError::TrailingBytes(n) => write!(f, "{n} bytes after the pixel payload"),
            ImageError::TooLarge => f.write_str("image dimensions overflow"),
        }
    }
}

impl core::error::Error for ImageError {}

impl RawImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::ZeroDimension);
        }
        let expected = width.checked_mul(height).and_then(|n| n.checked_mul(3)).ok_or(ImageError::TooLarge)?;
        if data.len() != expected {
            return Err(ImageError::PayloadLength { expected, actual: data.len() });
        }
        Ok(RawImage { width, height, data })
    }

    /// Expands one gray value per pixel to RGB.
    pub fn from_gray(width: usize, height: usize, gray: &[u8]) -> Result<Self, ImageError> {
        if gray.len() != width.saturating_mul(height) {
            return Err(ImageError::PayloadLength { expected: width.saturating_mul(height), actual: gray.len() });
        }
        Self::new(width, height, gray.iter().flat_map(|&g| [g, g, g]).collect())
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self, ImageError> {
        let n = width.checked_mul(height).ok_or(ImageError::TooLarge)?;
        Self::new(width, height, rgb.repeat(n))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &'static str) -> Result<usize, ImageError> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos || self.pos - start > 9 {
            return Err(ImageError::BadHeader(what));
        }
        let mut v = 0usize;
        for &d in &self.bytes[start..self.pos] {
            v = v * 10 + (d - b'0') as usize;
        }
        Ok(v)
    }
}

/// Decodes binary `P6` (RGB) and `P5` (gray, expanded to RGB) pixmaps with a
/// maximum value up to 255. Other maxima are rescaled to 0..=255.
pub fn decode_pnm(bytes: &[u8]) -> Result<RawImage, ImageError> {
    let channels = match bytes.get(..2) {
        Some(b"P6") => 3,
        Some(b"P5") => 1,
        Some([b'P', b'1'..=b'4' | b'7']) => return Err(ImageError::UnsupportedFormat("only binary P5/P6 pixmaps")),
        _ => return Err(ImageError::BadHeader("magic")),
    };
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maximum value")?;
    if width == 0 || height == 0 {
        return Err(ImageError::ZeroDimension);
    }
    if maxval == 0 || maxval > 255 {
        return Err(ImageError::UnsupportedFormat("pixmap maximum value must be 1..=255"));
    }
    // exactly one whitespace byte separates the header from the payload
    if !bytes.get(h.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(ImageError::BadHeader("missing separator before pixel data"));
    }
    let payload = &bytes[h.pos + 1..];
    let expected = width.checked_mul(height).and_then(|n| n.checked_mul(channels)).ok_or(ImageError::TooLarge)?;
    if payload.len() < expected {
        return Err(ImageError::Truncated { expected, actual: payload.len() });
    }
    if payload.len() > expected {
        return Err(ImageError::TrailingBytes(payload.len() - expected));
    }
    let scale = |v: u8| -> u8 {
        if maxval == 255 {
            v
        } else {
            ((v.min(maxval as u8) as usize * 255 + maxval / 2) / maxval) as u8
        }
    };
    let pixels: Vec<u8> = payload.iter().map(|&v| scale(v)).collect();
    if channels == 1 {
        RawImage::from_gray(width, height, &pixels)
    } else {
        RawImage::new(width, height, pixels)
    }
}

/// Binary `P6` with maximum value 255.
pub fn encode_ppm(img: &RawImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

/// Bilinear interpolation sampling at pixel centers:
/// `src = (dst + 0.5) · in/out − 0.5`, clamped to the image.
pub fn resize_bilinear(img: &RawImage, out_w: usize, out_h: usize) -> Result<RawImage, ImageError> {
    if out_w == 0 || out_h == 0 {
        return Err(ImageError::ZeroDimension);
    }
    if out_w == img.width && out_h == img.height {
        return Ok(img.clone());
    }
    let taps = |out: usize, input: usize| -> Vec<(usize, usize, f64)> {
        let scale = input as f64 / out as f64;
        (0..out)
            .map(|d| {
                let src = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
                let lo = libm::floor(src) as usize;
                let hi = (lo + 1).min(input - 1);
                (lo, hi, src - lo as f64)
            })
            .collect()
    };
    let xs = taps(out_w, img.width);
    let ys = taps(out_h, img.height);
    let mut data = Vec::with_capacity(out_w * out_h * 3);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let p = |x: usize, y: usize, c: usize| img.data[(y * img.width + x) * 3 + c] as f64;
            for c in 0..3 {
                let top = p(x0, y0, c) * (1.0 - fx) + p(x1, y0, c) * fx;
                let bottom = p(x0, y1, c) * (1.0 - fx) + p(x1, y1, c) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                data.push(libm::rint(v).clamp(0.0, 255.0) as u8);
            }
        }
    }
    RawImage::new(out_w, out_h, data)
}

/// Resizes to the model input and maps each channel value to `v / 127.5 − 1`.
pub fn preprocess(img: &RawImage, spec: &InputSpec) -> Result<Tensor, ImageError> {
    if spec.channels != 3 {
        return Err(ImageError::UnsupportedFormat("model input must have 3 channels"));
    }
    let resized = resize_bilinear(img, spec.width, spec.height)?;
    let shape = Shape::new(1, spec.height, spec.width, 3).map_err(|_| ImageError::ZeroDimension)?;
    let values = resized.data.iter().map(|&v| spec.normalization.apply(v)).collect();
    Tensor::from_f32(shape, values).map_err(|_| ImageError::TooLarge)
}
