use std::path::PathBuf;

use scenedet_core::format::SaveError;
use scenedet_core::image::ImageError;
use scenedet_core::metrics::MetricsError;
use scenedet_core::model::{BuildError, InferError};
use scenedet_core::quantizer::QuantizeError;
use scenedet_core::FormatError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}", path.display())]
    Image { path: PathBuf, source: ImageError },
    #[error("{}: {message}", path.display())]
    Decode { path: PathBuf, message: String },
    #[error("{}", path.display())]
    Format { path: PathBuf, source: FormatError },
    #[error(transparent)]
    Save(#[from] SaveError),
    #[error(transparent)]
    Infer(#[from] InferError),
    #[error(transparent)]
    Quantize(#[from] QuantizeError),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{0}")]
    Dataset(String),
    #[error("thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

/// The error and its causes on one line, `outer: inner: ...`.
pub fn detailed(e: &(dyn std::error::Error + 'static)) -> String {
    let mut s = e.to_string();
    let mut cur = e.source();
    while let Some(inner) = cur {
        s.push_str(": ");
        s.push_str(&inner.to_string());
        cur = inner.source();
    }
    s
}
