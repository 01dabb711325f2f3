//! Dataset evaluation and calibration over a worker pool.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use scenedet_core::metrics::{EvalFailure, EvalReport};
use scenedet_core::model::forward;
use scenedet_core::quantizer::{calibrate_one, CalibrationStats};
use scenedet_core::{preprocess, Model, ScenePrediction, Tensor};

use crate::dataset::LabeledDataset;
use crate::error::{detailed, Error, Result};
use crate::io::read_image;

/// Decoded, resized and normalized input for `model`.
pub fn load_input(model: &Model, path: &Path) -> Result<Tensor> {
    let img = read_image(path)?;
    preprocess(&img, &model.input).map_err(|source| Error::Image { path: path.to_owned(), source })
}

/// Why an image failed, without repeating its path.
fn reason(e: &Error) -> String {
    match std::error::Error::source(e) {
        Some(inner) => detailed(inner),
        None => e.to_string(),
    }
}

pub(crate) fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build()?)
}

/// Probabilities for each path, in input order. Per-image failures are kept
/// as messages; the model is shared read-only across workers.
pub fn score_images(model: &Model, paths: &[PathBuf], threads: usize) -> Result<Vec<Result<Vec<f32>, String>>> {
    let run = |p: &PathBuf| -> Result<Vec<f32>, String> {
        let x = load_input(model, p).map_err(|e| reason(&e))?;
        forward(model, &x).map_err(|e| e.to_string())
    };
    Ok(pool(threads)?.install(|| paths.par_iter().map(run).collect()))
}

/// Full-ranking accuracy pass (no rejection threshold). Images that fail to
/// decode are listed in the report and excluded from every metric.
pub fn evaluate(model: &Model, ds: &LabeledDataset, threads: usize) -> Result<EvalReport> {
    let paths: Vec<PathBuf> = ds.paths().map(Path::to_path_buf).collect();
    let scores = score_images(model, &paths, threads)?;
    let mut predictions = Vec::new();
    let mut truths = Vec::new();
    let mut failures = Vec::new();
    for ((path, truth), score) in ds.items.iter().zip(scores) {
        match score {
            Ok(p) => {
                predictions.push(ScenePrediction::from_probabilities(&p, &model.labels, model.labels.len(), 0.0));
                truths.push(*truth);
            }
            Err(reason) => failures.push(EvalFailure { path: path.display().to_string(), reason }),
        }
    }
    if predictions.is_empty() {
        return Err(Error::Dataset(format!("{}: no image could be evaluated", ds.root.display())));
    }
    Ok(EvalReport::new(model, &predictions, &truths, failures, threads)?)
}

/// Min/max statistics over the decodable images, merged in input order.
pub fn calibrate_files(
    model: &Model,
    paths: &[PathBuf],
    threads: usize,
) -> Result<(CalibrationStats, Vec<EvalFailure>)> {
    let per_image: Vec<Result<CalibrationStats, String>> = pool(threads)?.install(|| {
        paths
            .par_iter()
            .map(|p| {
                let x = load_input(model, p).map_err(|e| reason(&e))?;
                calibrate_one(model, &x).map_err(|e| e.to_string())
            })
            .collect()
    });
    let mut stats = CalibrationStats::new();
    let mut failures = Vec::new();
    for (path, r) in paths.iter().zip(per_image) {
        match r {
            Ok(s) => stats.merge(&s),
            Err(reason) => failures.push(EvalFailure { path: path.display().to_string(), reason }),
        }
    }
    Ok((stats, failures))
}
