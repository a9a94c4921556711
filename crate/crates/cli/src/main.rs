use std::error::Error as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use reefdet::pipeline::{self, parse_image_id, AnnotationFormat, BenchRow, PipelineConfig};
use reefdet::postprocess::read_jsonl;
use reefdet::preprocess::{encode_png, encode_ppm, read_image};
use reefdet::{Error, Result};

/// Detection post-processing, evaluation and preprocessing driver.
#[derive(Debug, Parser)]
#[command(name = "reefdet", version, about)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON pipeline config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Main input file (annotations, predictions or image, per verb).
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Annotation format: auto, coco_json or csv_jsonboxes.
    #[arg(long, global = true, default_value = "auto")]
    format: String,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Comma list of flag overrides, e.g. `wbf,-mosaic,denoise=off`.
    #[arg(long, global = true)]
    flags: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Normalise annotations and run the enabled preprocessing steps.
    Ingest {
        /// Image directory; overrides `paths.images`.
        #[arg(long)]
        images: Option<PathBuf>,
    },
    /// Apply DIoU-NMS, box fusion and iterative refinement to predictions.
    Postprocess,
    /// Score predictions against annotations.
    Evaluate {
        /// Annotation file; overrides `paths.annotations`.
        #[arg(long)]
        annotations: Option<PathBuf>,
    },
    /// Draw detections over an image as PNG/PPM plus SVG.
    Render {
        /// Predictions file; overrides `paths.predictions`.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Image id to draw; defaults to the image file stem.
        #[arg(long)]
        image_id: Option<String>,
        /// Raster output format: png or ppm.
        #[arg(long, default_value = "png")]
        image_format: String,
    },
    /// Time each enabled stage on synthetic detection clouds.
    Bench {
        /// Comma list of cloud sizes.
        #[arg(long, default_value = "100,1000,10000", value_delimiter = ',')]
        sizes: Vec<usize>,
        /// Repetitions per measurement (median is reported).
        #[arg(long, default_value_t = 5)]
        reps: usize,
    },
    /// Post-process and evaluate across the six cumulative module sets.
    Ablate {
        /// Annotation file; overrides `paths.annotations`.
        #[arg(long)]
        annotations: Option<PathBuf>,
    },
    /// Write a seeded synthetic fixture (annotations, predictions, images, config).
    Synth {
        /// Number of images.
        #[arg(long, default_value_t = 10)]
        images: usize,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(spec) = &common.flags {
        cfg.flags.apply_overrides(spec)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn require(value: Option<PathBuf>, fallback: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    value
        .or_else(|| fallback.clone())
        .ok_or_else(|| Error::Config(format!("no {what} given (flag or config path)")))
}

fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("stage,n,median_ms,reps\n");
    for r in rows {
        s.push_str(&format!("{},{},{:.6},{}\n", r.stage, r.n, r.median_ms, r.reps));
    }
    s
}

fn run(cli: Cli) -> Result<()> {
    let Cli { common, command } = cli;
    let format: AnnotationFormat = common.format.parse()?;
    let mut cfg = load_config(&common)?;
    let output = common.output.clone();
    let out_dir = || require(output.clone(), &cfg.paths.output_dir, "output directory");
    match command {
        Command::Ingest { images } => {
            let input = require(common.input, &cfg.paths.annotations, "annotation input")?;
            let out = out_dir()?;
            if images.is_some() {
                cfg.paths.images = images;
            }
            let s = pipeline::ingest(&cfg, &input, format, &out)?;
            println!(
                "images {} boxes {} denoised {} masks {} mosaics {}",
                s.images, s.boxes, s.denoised, s.masks, s.mosaics
            );
        }
        Command::Postprocess => {
            let input = require(common.input, &cfg.paths.predictions, "predictions input")?;
            let (outcome, _) = pipeline::run_postprocess(&cfg, &input, &out_dir()?)?;
            for s in &outcome.stages {
                let state = if s.enabled { "on" } else { "off" };
                println!(
                    "{:<22} {state:<3} {:>6} -> {:<6} {:.3} ms",
                    s.name, s.detections_in, s.detections_out, s.millis
                );
            }
        }
        Command::Evaluate { annotations } => {
            let input = require(common.input, &cfg.paths.predictions, "predictions input")?;
            let ann = require(annotations, &cfg.paths.annotations, "annotation file")?;
            let report = pipeline::evaluate(&cfg, &input, &ann, format, &out_dir()?)?;
            print!("{}", report.to_text());
        }
        Command::Render {
            predictions,
            image_id,
            image_format,
        } => {
            let input = common
                .input
                .ok_or_else(|| Error::Config("render needs --input IMAGE".into()))?;
            let preds = require(predictions, &cfg.paths.predictions, "predictions file")?;
            let id = match image_id {
                Some(s) => parse_image_id(&s),
                None => {
                    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
                    parse_image_id(stem)
                }
            };
            let img = read_image(&input)?;
            let set = read_jsonl(&preds)?;
            let dets = set.get(&id).cloned().unwrap_or_default();
            let overlay = pipeline::render_overlay(&img, &dets)?;
            let out = out_dir()?;
            create_dir(&out)?;
            let raster = match image_format.as_str() {
                "png" => encode_png(&overlay.image)?,
                "ppm" => encode_ppm(&overlay.image),
                other => return Err(Error::Config(format!("unknown image format `{other}`"))),
            };
            write(&out.join(format!("{id}_overlay.{image_format}")), raster)?;
            write(&out.join(format!("{id}_overlay.svg")), &overlay.svg)?;
            println!("{} detections drawn for image {id}", dets.len());
        }
        Command::Bench { sizes, reps } => {
            let rows = pipeline::bench(&cfg, &sizes, reps)?;
            let csv = bench_csv(&rows);
            if let Some(out) = output.or(cfg.paths.output_dir.clone()) {
                create_dir(&out)?;
                write(&out.join("bench.csv"), &csv)?;
            }
            print!("{csv}");
        }
        Command::Ablate { annotations } => {
            let input = require(common.input, &cfg.paths.predictions, "predictions input")?;
            let ann = require(annotations, &cfg.paths.annotations, "annotation file")?;
            let rows = pipeline::ablate(&cfg, &input, &ann, format, &out_dir()?)?;
            println!(
                "{:<3} {:<22} {:>6} {:>8} {:>8} {:>8} {:>8}",
                "row", "added", "dets", "AP", "AP50", "AP75", "AR"
            );
            for r in &rows {
                let p = &r.report;
                println!(
                    "{:<3} {:<22} {:>6} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
                    r.index, r.added, r.detections, p.ap, p.ap50, p.ap75, p.ar
                );
            }
        }
        Command::Synth { images } => {
            if images == 0 {
                return Err(Error::Config("synth needs at least one image".into()));
            }
            let out = out_dir()?;
            let fx = pipeline::synthetic_fixture(cfg.seed, images);
            let files = pipeline::write_fixture(&fx, &out, cfg.seed)?;
            println!("wrote {} files to {}", files.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut cause = e.source();
            while let Some(c) = cause {
                eprintln!("  caused by: {c}");
                cause = c.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
