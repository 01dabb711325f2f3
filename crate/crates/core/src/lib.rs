//! Inference runtime for MobileNet-based camera scene classifiers.
//!
//! The crate is `no_std` (it needs `alloc`) and does no IO: tensors, the layer
//! kernels in float and INT8 form, the two classifier topologies, the CSDM
//! binary model format, post-training quantization, image preprocessing and
//! the accuracy/latency report types all operate on in-memory buffers. File
//! access, threading and the command line live in the `scenedet` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod exec;
pub mod format;
pub mod image;
pub mod labels;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod quantizer;
pub mod requant;
pub mod tensor;

pub use exec::{RowExecutor, Sequential};
pub use format::{inspect, load_model, save_model, FormatError, FormatErrorKind};
pub use image::{preprocess, resize_bilinear, RawImage};
pub use labels::{CATEGORIES, NUM_CLASSES};
pub use model::{
    build_mobilenet_v1_classifier, build_mobilenet_v2_classifier, infer, validate, Backbone, Diagnostic, InputSpec,
    Layer, Model, ParameterBundle, ScenePrediction,
};
pub use ops::{ActivationKind, BatchNormParams, ConvSpec, Padding};
pub use quantizer::{calibrate, quantize_model, CalibrationStats};
pub use tensor::{dequantize_tensor, quantize_tensor, DType, QuantParams, Shape, Tensor};
