use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use scenedet::bench::benchmark;
use scenedet::dataset::{image_files, load_dataset, sample_evenly, split_dataset};
use scenedet::evaluate::{calibrate_files, evaluate, load_input};
use scenedet::io::{read_model, write_atomic, write_model};
use scenedet::toy;
use scenedet_core::metrics::comparison_table;
use scenedet_core::model::sample::random_bundle;
use scenedet_core::model::{build_classifier, mobilenet_v1_layout, mobilenet_v2_layout, Backbone, InputSpec};
use scenedet_core::{infer, quantize_model};

const USAGE_ERROR: u8 = 2;
const RUNTIME_ERROR: u8 = 1;

/// Camera scene classification: inference, evaluation, INT8 quantization and
/// benchmarking of CSDM models.
#[derive(Parser)]
#[command(name = "scenedet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rank the 30 scene categories for one image.
    Classify(ClassifyArgs),
    /// Top-1/top-3 accuracy and confusion matrix over a 30-folder dataset.
    Evaluate(EvaluateArgs),
    /// Calibrate on a set of images and write an INT8 model.
    Quantize(QuantizeArgs),
    /// Time single-image inference.
    Bench(BenchArgs),
    /// Describe a model file.
    Inspect(InspectArgs),
    /// Write a randomly initialized V1 or V2 classifier.
    Init(InitArgs),
    /// Write the synthetic palette dataset and its classifier.
    Toy(ToyArgs),
    /// Stratified, seeded train/test copy of a 30-folder dataset.
    Split(SplitArgs),
}

fn parse_unit(s: &str) -> Result<f32, String> {
    let v: f32 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

fn parse_fraction(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} is outside (0, 1)"))
    }
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    image: PathBuf,
    /// Number of ranked categories to print.
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u16).range(1..=30))]
    top: u16,
    /// Minimum top-class probability; below it nothing is reported.
    #[arg(long, default_value_t = 0.0, value_parser = parse_unit)]
    threshold: f32,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Text,
    Table,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data_dir: PathBuf,
    /// Also write the key=value report here.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..=256))]
    threads: u16,
    #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
    format: ReportFormat,
}

#[derive(Args)]
struct QuantizeArgs {
    #[arg(long)]
    model: PathBuf,
    /// Directory searched recursively for calibration images.
    #[arg(long)]
    calib_dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Calibration images used, evenly sampled from the sorted file list.
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u32).range(1..))]
    max_images: u32,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..=256))]
    threads: u16,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    image: PathBuf,
    #[arg(long, default_value_t = 10)]
    warmup: u32,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u32).range(1..))]
    iters: u32,
    /// Threads per kernel; 1 runs the whole pass on the calling thread.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..=256))]
    threads: u16,
    /// A second model timed the same way and tabulated next to the first.
    #[arg(long)]
    compare: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    model: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackboneArg {
    V1,
    V2,
}

#[derive(Args)]
struct InitArgs {
    #[arg(long, value_enum)]
    backbone: BackboneArg,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 224, value_parser = clap::value_parser!(u16).range(32..=1024))]
    input_size: u16,
}

#[derive(Args)]
struct ToyArgs {
    #[arg(long)]
    out_dir: PathBuf,
    /// Images per category in each of calib/ and test/.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u16).range(1..))]
    per_class: u16,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    data_dir: PathBuf,
    /// Receives train/<slug>/ and test/<slug>/.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.1, value_parser = parse_fraction)]
    holdout: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn warn(message: &str) {
    eprintln!("warning: {message}");
}

fn classify(a: ClassifyArgs) -> anyhow::Result<()> {
    let model = read_model(&a.model)?;
    let x = load_input(&model, &a.image)?;
    let top = (a.top as usize).min(model.labels.len());
    let pred = infer(&model, &x, top, a.threshold)?;
    let mut out = std::io::stdout().lock();
    if pred.is_empty() {
        writeln!(out, "no confident prediction")?;
    }
    for p in &pred.ranked {
        writeln!(out, "{}\t{:.6}", p.label, p.probability)?;
    }
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> anyhow::Result<()> {
    let model = read_model(&a.model)?;
    let ds = load_dataset(&a.data_dir)?;
    for w in &ds.warnings {
        warn(w);
    }
    let report = evaluate(&model, &ds, a.threads as usize)?;
    for f in &report.failures {
        warn(&format!("{}: {}", f.path, f.reason));
    }
    let text = report.to_text();
    if let Some(path) = &a.report {
        write_atomic(path, text.as_bytes())?;
    }
    match a.format {
        ReportFormat::Text => print!("{text}"),
        ReportFormat::Table => print!("{}", report.to_table(&model.labels)),
    }
    Ok(())
}

fn quantize_cmd(a: QuantizeArgs) -> anyhow::Result<()> {
    let model = read_model(&a.model)?;
    let files = image_files(&a.calib_dir)?;
    if files.is_empty() {
        bail!("{}: no calibration images found", a.calib_dir.display());
    }
    let chosen = sample_evenly(&files, a.max_images as usize);
    let (stats, failures) = calibrate_files(&model, &chosen, a.threads as usize)?;
    for f in &failures {
        warn(&format!("skipping {}: {}", f.path, f.reason));
    }
    if stats.images() == 0 {
        bail!("{}: none of the calibration images could be used", a.calib_dir.display());
    }
    let q = quantize_model(&model, &stats)?;
    write_model(&a.out, &q)?;
    eprintln!("calibrated on {} images, wrote {}", stats.images(), a.out.display());
    Ok(())
}

fn bench_cmd(a: BenchArgs) -> anyhow::Result<()> {
    let mut paths: Vec<&Path> = vec![&a.model];
    paths.extend(a.compare.as_deref());
    let mut reports = Vec::new();
    for p in paths {
        let model = read_model(p)?;
        let x = load_input(&model, &a.image)?;
        reports.push(benchmark(&model, &x, a.warmup as usize, a.iters as usize, a.threads as usize)?);
    }
    let mut text = String::new();
    for r in &reports {
        text.push_str(&r.to_text());
    }
    if let Some(path) = &a.report {
        write_atomic(path, text.as_bytes())?;
    }
    if reports.len() > 1 {
        print!("{}", comparison_table(&reports));
    } else {
        print!("{text}");
    }
    Ok(())
}

fn inspect_cmd(a: InspectArgs) -> anyhow::Result<()> {
    let bytes = std::fs::read(&a.model).with_context(|| a.model.display().to_string())?;
    let text = scenedet_core::inspect(&bytes);
    print!("{text}");
    if !text.contains("\nstatus: ok\n") {
        bail!("{}: model has problems, see the errors section", a.model.display());
    }
    Ok(())
}

fn init_cmd(a: InitArgs) -> anyhow::Result<()> {
    let (backbone, layout) = match a.backbone {
        BackboneArg::V1 => (Backbone::V1, mobilenet_v1_layout()),
        BackboneArg::V2 => (Backbone::V2, mobilenet_v2_layout()),
    };
    let size = a.input_size as usize;
    let model = build_classifier(backbone, &random_bundle(&layout, a.seed), InputSpec::rgb(size, size))?;
    write_model(&a.out, &model)?;
    eprintln!("wrote {} ({} parameters)", a.out.display(), model.parameter_count());
    Ok(())
}

fn toy_cmd(a: ToyArgs) -> anyhow::Result<()> {
    toy::write_toy_set(&a.out_dir, a.per_class as usize, a.seed)?;
    eprintln!("wrote {}/{{calib,test,toy.csdm}}", a.out_dir.display());
    Ok(())
}

fn split_cmd(a: SplitArgs) -> anyhow::Result<()> {
    let ds = load_dataset(&a.data_dir)?;
    for w in &ds.warnings {
        warn(w);
    }
    let (train, test) = split_dataset(&ds, a.holdout, a.seed);
    for (part, items) in [("train", &train), ("test", &test)] {
        for (path, class) in items {
            let dir = a.out.join(part).join(scenedet_core::CATEGORIES[*class].slug);
            std::fs::create_dir_all(&dir).with_context(|| dir.display().to_string())?;
            let name = path.file_name().context("image path without a file name")?;
            let bytes = std::fs::read(path).with_context(|| path.display().to_string())?;
            write_atomic(&dir.join(name), &bytes)?;
        }
    }
    println!("train={}", train.len());
    println!("test={}", test.len());
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Classify(a) => classify(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Quantize(a) => quantize_cmd(a),
        Command::Bench(a) => bench_cmd(a),
        Command::Inspect(a) => inspect_cmd(a),
        Command::Init(a) => init_cmd(a),
        Command::Toy(a) => toy_cmd(a),
        Command::Split(a) => split_cmd(a),
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.render().to_string();
            let first = rendered.lines().next().unwrap_or("invalid usage");
            eprintln!("{}", one_line(first));
            return ExitCode::from(USAGE_ERROR);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", one_line(&format!("{e:#}")));
            ExitCode::from(RUNTIME_ERROR)
        }
    }
}
