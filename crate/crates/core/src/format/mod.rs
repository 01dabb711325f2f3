//! The CSDM binary model format.
//!
//! ```text
//! header      34 bytes, fixed
//! metadata    name, revision, normalization, calibration count, input quant
//! records     one per layer, in execution order
//! labels      u32 count, then u16 length + UTF-8 per label
//! weights     every tensor blob, contiguous, in record order, to end of file
//! ```
//!
//! Little-endian throughout. Offsets in the header and in tensor references
//! must be exactly where a canonical writer would put them; anything else is
//! rejected, so `save(load(b)) == b` for every accepted `b`. See
//! `docs/csdm-format.md` for the byte-level layout.

mod inspect;
mod read;
mod write;

use alloc::vec::Vec;
use core::fmt;

use crate::model::Diagnostic;
use crate::tensor::TensorError;

pub use inspect::inspect;
pub use read::load_model;
pub use write::{save_model, SaveError};

pub const MAGIC: [u8; 4] = *b"CSDM";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 34;

/// Header field positions.
pub mod offsets {
    pub const MAGIC: usize = 0;
    pub const VERSION: usize = 4;
    pub const BACKBONE: usize = 6;
    pub const QUANTIZED: usize = 7;
    pub const HEIGHT: usize = 8;
    pub const WIDTH: usize = 10;
    pub const CHANNELS: usize = 12;
    pub const LAYER_COUNT: usize = 14;
    pub const LABEL_OFFSET: usize = 18;
    pub const WEIGHT_OFFSET: usize = 26;
}

pub(crate) mod op {
    pub const CONV: u8 = 1;
    pub const DEPTHWISE: u8 = 2;
    pub const INVERTED_RESIDUAL: u8 = 3;
    pub const FULLY_CONNECTED: u8 = 4;
    pub const GLOBAL_AVG_POOL: u8 = 5;
    pub const FLATTEN: u8 = 6;
    pub const DROPOUT: u8 = 7;
    pub const SOFTMAX: u8 = 8;

    pub fn name(code: u8) -> &'static str {
        match code {
            CONV => "conv",
            DEPTHWISE => "depthwise_conv",
            INVERTED_RESIDUAL => "inverted_residual",
            FULLY_CONNECTED => "fully_connected",
            GLOBAL_AVG_POOL => "global_avg_pool",
            FLATTEN => "flatten",
            DROPOUT => "dropout",
            SOFTMAX => "softmax",
            _ => "unknown",
        }
    }
}

pub(crate) mod dtype {
    pub const F32: u8 = 0;
    pub const I8: u8 = 1;
    pub const I32: u8 = 2;

    pub fn size(code: u8) -> Option<usize> {
        match code {
            F32 | I32 => Some(4),
            I8 => Some(1),
            _ => None,
        }
    }
}

pub(crate) const FLAG_RESIDUAL: u8 = 1;
pub(crate) const FLAG_EXPAND: u8 = 2;
pub(crate) const PER_TENSOR_AXIS: u8 = 0xFF;

#[derive(Clone, Debug, PartialEq)]
pub enum FormatErrorKind {
    BadMagic,
    UnsupportedVersion(u16),
    /// The stream ends inside a header, record or label.
    Truncated,
    /// The stream ends inside weight blob `index`.
    TruncatedBlob {
        index: usize,
    },
    /// Blob `index` starts before the previous blob ends.
    OverlappingBlobs {
        index: usize,
    },
    /// Blob `index` starts after the previous blob ends.
    BlobGap {
        index: usize,
    },
    /// Blob `index` length disagrees with its dims and dtype.
    BlobLength {
        index: usize,
        expected: u64,
        actual: u64,
    },
    /// A section offset in the header is not where the section starts.
    SectionOffset {
        section: &'static str,
        expected: u64,
        actual: u64,
    },
    InvalidCode {
        field: &'static str,
        value: u8,
    },
    InvalidValue(&'static str),
    InvalidUtf8,
    Quantization(TensorError),
    TrailingBytes,
    Validation(Vec<Diagnostic>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FormatError {
    pub kind: FormatErrorKind,
    /// Byte position the problem was detected at.
    pub offset: u64,
}

impl FormatError {
    pub(crate) fn new(kind: FormatErrorKind, offset: usize) -> Self {
        FormatError { kind, offset: offset as u64 }
    }
}

impl fmt::Display for FormatErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FormatErrorKind::BadMagic => f.write_str("bad magic, not a CSDM file"),
            FormatErrorKind::UnsupportedVersion(v) => write!(f, "unsupported format version {v}"),
            FormatErrorKind::Truncated => f.write_str("truncated stream"),
            FormatErrorKind::TruncatedBlob { index } => write!(f, "truncated weight blob {index}"),
            FormatErrorKind::OverlappingBlobs { index } => {
                write!(f, "weight blob {index} overlaps the previous blob")
            }
            FormatErrorKind::BlobGap { index } => write!(f, "gap before weight blob {index}"),
            FormatErrorKind::BlobLength { index, expected, actual } => {
                write!(f, "weight blob {index} is {actual} bytes, its shape needs {expected}")
            }
            FormatErrorKind::SectionOffset { section, expected, actual } => {
                write!(f, "{section} offset is {actual}, section starts at {expected}")
            }
            FormatErrorKind::InvalidCode { field, value } => write!(f, "invalid {field} code {value}"),
            FormatErrorKind::InvalidValue(what) => write!(f, "invalid {what}"),
            FormatErrorKind::InvalidUtf8 => f.write_str("string is not UTF-8"),
            FormatErrorKind::Quantization(e) => write!(f, "bad quantization block: {e}"),
            FormatErrorKind::TrailingBytes => f.write_str("unexpected bytes after the last weight blob"),
            FormatErrorKind::Validation(diags) => {
                f.write_str("model does not validate")?;
                for d in diags {
                    write!(f, "; {d}")?;
                }
                Ok(())
            }
        }
    }
}

impl fmt::Display for FormatError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "offset {}: {}", self.offset, self.kind)
    }
}

impl core::error::Error for FormatError {}
