//! Host-side companion to `scenedet-core`: files, datasets, evaluation,
//! benchmarking and the synthetic toy set used by the fixtures.

pub mod annotate;
pub mod bench;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod fixtures;
pub mod io;
pub mod toy;

pub use error::{detailed, Error, Result};
