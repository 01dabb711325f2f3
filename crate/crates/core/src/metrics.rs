//! Accuracy and latency reports.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::{self, Write};

use crate::labels::CATEGORIES;
use crate::model::{Model, ScenePrediction};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MetricsError {
    LengthMismatch { predictions: usize, labels: usize },
    Empty,
    ZeroK,
    LabelOutOfRange(usize),
}

impl fmt::Display for MetricsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricsError::LengthMismatch { predictions, labels } => {
                write!(f, "{predictions} predictions for {labels} labels")
            }
            MetricsError::Empty => f.write_str("nothing to measure"),
            MetricsError::ZeroK => f.write_str("k must be at least 1"),
            MetricsError::LabelOutOfRange(l) => write!(f, "label {l} is not a category index"),
        }
    }
}

impl core::error::Error for MetricsError {}

/// Fraction of items whose label is among the first `k` ranked classes.
pub fn topk_accuracy(predictions: &[ScenePrediction], labels: &[usize], k: usize) -> Result<f64, MetricsError> {
    if predictions.len() != labels.len() {
        return Err(MetricsError::LengthMismatch { predictions: predictions.len(), labels: labels.len() });
    }
    if k == 0 {
        return Err(MetricsError::ZeroK);
    }
    if labels.is_empty() {
        return Err(MetricsError::Empty);
    }
    let hits = predictions.iter().zip(labels).filter(|(p, &l)| p.indices().take(k).any(|i| i == l)).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Rows are true classes, columns top-1 predictions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix { classes, counts: vec![0; classes * classes] }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<(), MetricsError> {
        for v in [truth, predicted] {
            if v >= self.classes {
                return Err(MetricsError::LabelOutOfRange(v));
            }
        }
        self.counts[truth * self.classes + predicted] += 1;
        Ok(())
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        &self.counts[truth * self.classes..(truth + 1) * self.classes]
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        self.row(truth).iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|i| self.get(i, i)).sum()
    }

    /// Per-class recall; `None` for classes without samples.
    pub fn per_class_accuracy(&self) -> Vec<Option<f64>> {
        (0..self.classes)
            .map(|i| {
                let n = self.row_sum(i);
                (n > 0).then(|| self.get(i, i) as f64 / n as f64)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalFailure {
    pub path: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub model_name: String,
    pub model_revision: u32,
    pub backbone: &'static str,
    pub quantized: bool,
    pub calibration_images: u32,
    pub images: usize,
    pub top1: f64,
    pub top3: f64,
    pub confusion: ConfusionMatrix,
    pub per_class: Vec<Option<f64>>,
    pub failures: Vec<EvalFailure>,
    pub threads: usize,
}

impl EvalReport {
    /// Builds the report from ranked predictions (threshold 0) and truths.
    pub fn new(
        model: &Model,
        predictions: &[ScenePrediction],
        labels: &[usize],
        failures: Vec<EvalFailure>,
        threads: usize,
    ) -> Result<Self, MetricsError> {
        let classes = model.labels.len();
        let mut confusion = ConfusionMatrix::new(classes);
        for (p, &truth) in predictions.iter().zip(labels) {
            let top = p.top().map(|t| t.index).ok_or(MetricsError::Empty)?;
            confusion.record(truth, top)?;
        }
        let top1 = topk_accuracy(predictions, labels, 1)?;
        let top3 = topk_accuracy(predictions, labels, 3)?;
        Ok(EvalReport {
            model_name: model.meta.name.clone(),
            model_revision: model.meta.revision,
            backbone: model.meta.backbone.name(),
            quantized: model.meta.quantized,
            calibration_images: model.meta.calibration_images,
            images: labels.len(),
            top1,
            top3,
            per_class: confusion.per_class_accuracy(),
            confusion,
            failures,
            threads,
        })
    }

    fn key(i: usize) -> String {
        CATEGORIES.get(i).map_or_else(|| format!("class_{i:02}"), |c| String::from(c.slug))
    }

    /// `key=value` lines in a fixed order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "model={}", self.model_name);
        let _ = writeln!(s, "revision={}", self.model_revision);
        let _ = writeln!(s, "backbone={}", self.backbone);
        let _ = writeln!(s, "quantized={}", self.quantized);
        let _ = writeln!(s, "calibration_images={}", self.calibration_images);
        let _ = writeln!(s, "threads={}", self.threads);
        let _ = writeln!(s, "images={}", self.images);
        let _ = writeln!(s, "decode_failures={}", self.failures.len());
        let _ = writeln!(s, "top1={:.6}", self.top1);
        let _ = writeln!(s, "top3={:.6}", self.top3);
        for (i, acc) in self.per_class.iter().enumerate() {
            let k = Self::key(i);
            let _ = writeln!(s, "class.{k}.count={}", self.confusion.row_sum(i));
            match acc {
                Some(a) => {
                    let _ = writeln!(s, "class.{k}.accuracy={a:.6}");
                }
                None => {
                    let _ = writeln!(s, "class.{k}.accuracy=none");
                }
            }
        }
        for i in 0..self.confusion.classes() {
            let row: Vec<String> = self.confusion.row(i).iter().map(|c| format!("{c}")).collect();
            let _ = writeln!(s, "confusion.{}={}", Self::key(i), row.join(" "));
        }
        for f in &self.failures {
            let _ = writeln!(s, "failure={}\t{}", f.path, f.reason);
        }
        s
    }

    /// Aligned summary for terminals.
    pub fn to_table(&self, labels: &[String]) -> String {
        let mut s = String::new();
        let kind = if self.quantized { "int8" } else { "float" };
        let _ = writeln!(s, "{} ({}, {kind}): {} images", self.model_name, self.backbone, self.images);
        let _ = writeln!(s, "top-1 {:>7.2}%   top-3 {:>7.2}%", self.top1 * 100.0, self.top3 * 100.0);
        let width = labels.iter().map(String::len).max().unwrap_or(5).max(5);
        let _ = writeln!(s, "{:<width$}  {:>6}  {:>8}", "class", "count", "accuracy");
        for (i, acc) in self.per_class.iter().enumerate() {
            let name = labels.get(i).map_or("?", String::as_str);
            let acc = acc.map_or_else(|| String::from("-"), |a| format!("{:.2}%", a * 100.0));
            let _ = writeln!(s, "{name:<width$}  {:>6}  {acc:>8}", self.confusion.row_sum(i));
        }
        if !self.failures.is_empty() {
            let _ = writeln!(s, "{} images failed to decode", self.failures.len());
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub model_name: String,
    pub quantized: bool,
    pub warmup: usize,
    pub threads: usize,
    /// Milliseconds per timed iteration, in run order.
    pub latencies_ms: Vec<f64>,
    pub fps: f64,
    pub p50_ms: f64,
    pub p90_ms: f64,
    pub p99_ms: f64,
}

/// Nearest-rank percentile of sorted values.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = libm::ceil(p / 100.0 * sorted.len() as f64) as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

impl BenchReport {
    pub fn from_latencies(
        model_name: String,
        quantized: bool,
        warmup: usize,
        threads: usize,
        latencies_ms: Vec<f64>,
    ) -> Result<Self, MetricsError> {
        if latencies_ms.is_empty() {
            return Err(MetricsError::Empty);
        }
        let total_s: f64 = latencies_ms.iter().sum::<f64>() / 1000.0;
        let fps = latencies_ms.len() as f64 / total_s;
        let mut sorted = latencies_ms.clone();
        sorted.sort_by(f64::total_cmp);
        Ok(BenchReport {
            model_name,
            quantized,
            warmup,
            threads,
            fps,
            p50_ms: percentile(&sorted, 50.0),
            p90_ms: percentile(&sorted, 90.0),
            p99_ms: percentile(&sorted, 99.0),
            latencies_ms,
        })
    }

    pub fn iterations(&self) -> usize {
        self.latencies_ms.len()
    }

    pub fn mean_ms(&self) -> f64 {
        self.latencies_ms.iter().sum::<f64>() / self.latencies_ms.len() as f64
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "model={}", self.model_name);
        let _ = writeln!(s, "quantized={}", self.quantized);
        let _ = writeln!(s, "threads={}", self.threads);
        let _ = writeln!(s, "warmup={}", self.warmup);
        let _ = writeln!(s, "iterations={}", self.iterations());
        let _ = writeln!(s, "fps={:.3}", self.fps);
        let _ = writeln!(s, "mean_ms={:.4}", self.mean_ms());
        let _ = writeln!(s, "p50_ms={:.4}", self.p50_ms);
        let _ = writeln!(s, "p90_ms={:.4}", self.p90_ms);
        let _ = writeln!(s, "p99_ms={:.4}", self.p99_ms);
        let lat: Vec<String> = self.latencies_ms.iter().map(|l| format!("{l:.4}")).collect();
        let _ = writeln!(s, "latencies_ms={}", lat.join(" "));
        s
    }
}

/// Float and INT8 runs side by side, one row per model.
pub fn comparison_table(reports: &[BenchReport]) -> String {
    let mut s = String::new();
    let width = reports.iter().map(|r| r.model_name.len()).max().unwrap_or(5).max(5);
    let _ = writeln!(
        s,
        "{:<width$}  {:>5}  {:>7}  {:>10}  {:>9}  {:>9}  {:>9}",
        "model", "type", "threads", "fps", "p50 ms", "p90 ms", "p99 ms"
    );
    for r in reports {
        let kind = if r.quantized { "int8" } else { "float" };
        let _ = writeln!(
            s,
            "{:<width$}  {kind:>5}  {:>7}  {:>10.2}  {:>9.3}  {:>9.3}  {:>9.3}",
            r.model_name, r.threads, r.fps, r.p50_ms, r.p90_ms, r.p99_ms
        );
    }
    s
}
