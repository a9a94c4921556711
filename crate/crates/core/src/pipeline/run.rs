use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::annotations::{load_annotations, AnnotationFormat, Annotations};
use super::bench::nn_demo;
use super::config::{Flags, PipelineConfig};
use super::{ensure_dir, write_file, write_manifest, FileDigest, RunManifest};
use crate::error::{Error, Result};
use crate::eval::{full_report, EvalReport, RECALL_POINTS};
use crate::postprocess::{diou_nms, iterative_refine, read_jsonl, to_jsonl, wbf, Detection, DetectionSet};
use crate::preprocess::{denoise, encode_pgm, mosaic, read_image, segment_water_boundary, write_image, LabeledImage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub enabled: bool,
    pub detections_in: usize,
    pub detections_out: usize,
    pub millis: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PostprocessOutcome {
    pub detections: DetectionSet,
    pub stages: Vec<StageRecord>,
    pub max_iterations_used: Option<usize>,
    pub total_iterations: Option<usize>,
}

fn count(set: &DetectionSet) -> usize {
    set.values().map(Vec::len).sum()
}

fn in_stage<T>(stage: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage,
        source: Box::new(e),
    })
}

/// Applies the enabled stages in the fixed order DIoU-NMS, WBF, iterative
/// refinement, image by image.
pub fn postprocess_set(input: &DetectionSet, cfg: &PipelineConfig) -> Result<PostprocessOutcome> {
    let refine = cfg.refine;
    let mut current = input.clone();
    let mut stages = Vec::new();
    let mut max_used = None;
    let mut total = None;
    let plan: [(&'static str, bool); 3] = [
        ("diou_nms", cfg.flags.multiscale_anchors),
        ("wbf", cfg.flags.wbf),
        ("iterative_refinement", cfg.flags.iterative_refinement),
    ];
    for (name, enabled) in plan {
        let before = count(&current);
        let start = Instant::now();
        if enabled {
            let mut next = DetectionSet::new();
            for (id, dets) in &current {
                let out: Vec<Detection> = match name {
                    "diou_nms" => in_stage(name, diou_nms(dets, refine.nms_diou_thresh))?,
                    "wbf" => in_stage(name, wbf(std::slice::from_ref(dets), refine.wbf_iou_thresh))?,
                    _ => {
                        let (out, used) = in_stage(name, iterative_refine(dets, &refine))?;
                        if used > refine.max_iterations {
                            return Err(Error::Invariant(format!(
                                "refinement ran {used} rounds, cap is {}",
                                refine.max_iterations
                            )));
                        }
                        max_used = Some(max_used.unwrap_or(0).max(used));
                        total = Some(total.unwrap_or(0) + used);
                        out
                    }
                };
                if out.len() > dets.len() {
                    return Err(Error::Invariant(format!(
                        "stage {name} grew image {id} from {} to {}",
                        dets.len(),
                        out.len()
                    )));
                }
                next.insert(id.clone(), out);
            }
            current = next;
        }
        stages.push(StageRecord {
            name: name.to_string(),
            enabled,
            detections_in: before,
            detections_out: count(&current),
            millis: start.elapsed().as_secs_f64() * 1e3,
        });
    }
    Ok(PostprocessOutcome {
        detections: current,
        stages,
        max_iterations_used: max_used,
        total_iterations: total,
    })
}

/// Reads JSON-lines predictions, post-processes them and writes
/// `predictions.jsonl` plus `postprocess_manifest.json` into `out_dir`.
pub fn run_postprocess(
    cfg: &PipelineConfig,
    input: &Path,
    out_dir: &Path,
) -> Result<(PostprocessOutcome, RunManifest)> {
    let set = read_jsonl(input)?;
    let outcome = postprocess_set(&set, cfg)?;
    ensure_dir(out_dir)?;
    let out = write_file(&out_dir.join("predictions.jsonl"), to_jsonl(&outcome.detections))?;
    let manifest = RunManifest {
        command: "postprocess".into(),
        config_hash: cfg.hash(),
        config: cfg.clone(),
        seed: cfg.seed,
        inputs: vec![FileDigest::of(input)?],
        outputs: vec![out],
        stages: outcome.stages.clone(),
        max_iterations_used: outcome.max_iterations_used,
        total_iterations: outcome.total_iterations,
    };
    write_manifest(out_dir, "postprocess_manifest.json", &manifest)?;
    Ok((outcome, manifest))
}

/// Writes `report.json`, `report.txt` and `pr_curves.csv`.
pub fn write_report(report: &EvalReport, dir: &Path) -> Result<Vec<FileDigest>> {
    ensure_dir(dir)?;
    let json = serde_json::to_string_pretty(report).expect("report always serialises");
    let mut csv = String::from("iou_thresh,recall,precision\n");
    for c in &report.curves {
        for (r, p) in c.precision.iter().enumerate() {
            csv.push_str(&format!(
                "{},{},{}\n",
                c.iou_thresh,
                r as f64 / (RECALL_POINTS - 1) as f64,
                p
            ));
        }
    }
    Ok(vec![
        write_file(&dir.join("report.json"), json)?,
        write_file(&dir.join("report.txt"), report.to_text())?,
        write_file(&dir.join("pr_curves.csv"), csv)?,
    ])
}

/// Scores a predictions file against an annotation file and writes the
/// report files plus `evaluate_manifest.json`.
pub fn evaluate(
    cfg: &PipelineConfig,
    predictions: &Path,
    annotations: &Path,
    format: AnnotationFormat,
    out_dir: &Path,
) -> Result<EvalReport> {
    let preds = read_jsonl(predictions)?;
    let gt = load_annotations(annotations, format)?.ground_truth();
    let report = full_report(&preds, &gt, &cfg.eval)?;
    let outputs = write_report(&report, out_dir)?;
    let manifest = RunManifest {
        command: "evaluate".into(),
        config_hash: cfg.hash(),
        config: cfg.clone(),
        seed: cfg.seed,
        inputs: vec![FileDigest::of(predictions)?, FileDigest::of(annotations)?],
        outputs,
        stages: Vec::new(),
        max_iterations_used: None,
        total_iterations: None,
    };
    write_manifest(out_dir, "evaluate_manifest.json", &manifest)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub images: usize,
    pub boxes: usize,
    pub denoised: usize,
    pub masks: usize,
    pub mosaics: usize,
}

fn image_path(dir: &Path, id: &str, file_name: Option<&str>) -> Option<std::path::PathBuf> {
    if let Some(f) = file_name {
        let p = dir.join(f);
        return p.exists().then_some(p);
    }
    ["png", "ppm", "pgm"]
        .iter()
        .map(|ext| dir.join(format!("{id}.{ext}")))
        .find(|p| p.exists())
}

/// Normalises annotations to `ground_truth.json` and, when an image
/// directory is configured, runs the enabled preprocessing steps on it.
pub fn ingest(cfg: &PipelineConfig, input: &Path, format: AnnotationFormat, out_dir: &Path) -> Result<IngestSummary> {
    let ann: Annotations = load_annotations(input, format)?;
    ensure_dir(out_dir)?;
    let mut outputs = vec![write_file(&out_dir.join("ground_truth.json"), ann.to_coco_json())?];
    let mut summary = IngestSummary {
        images: ann.images.len(),
        boxes: ann.box_count(),
        denoised: 0,
        masks: 0,
        mosaics: 0,
    };
    if let Some(dir) = &cfg.paths.images {
        let img_out = out_dir.join("images");
        ensure_dir(&img_out)?;
        let mut loaded: Vec<LabeledImage> = Vec::new();
        for (id, entry) in &ann.images {
            let Some(path) = image_path(dir, &id.to_string(), entry.file_name.as_deref()) else {
                continue;
            };
            let mut img = read_image(&path)?;
            if cfg.flags.denoise {
                img = in_stage("denoise", denoise(&img, cfg.preprocess.denoise_window))?;
                let p = img_out.join(format!("{id}_denoised.ppm"));
                write_image(&img, &p)?;
                outputs.push(FileDigest::of(&p)?);
                summary.denoised += 1;
            }
            if cfg.flags.segmentation {
                let seg = in_stage(
                    "segmentation",
                    segment_water_boundary(&img, cfg.preprocess.manual_threshold),
                )?;
                let p = img_out.join(format!("{id}_mask.pgm"));
                outputs.push(write_file(&p, encode_pgm(&seg.mask)?)?);
                summary.masks += 1;
            }
            let boxes = entry.boxes.clone();
            if let Ok(item) = LabeledImage::new(img, boxes) {
                loaded.push(item);
            }
        }
        if cfg.flags.mosaic {
            let size = cfg.preprocess.mosaic_size;
            for (k, group) in loaded.chunks_exact(4).enumerate() {
                let m = in_stage("mosaic", mosaic(group, size, size, cfg.seed.wrapping_add(k as u64)))?;
                let p = img_out.join(format!("mosaic_{k}.ppm"));
                write_image(&m.image, &p)?;
                outputs.push(FileDigest::of(&p)?);
                let labels = serde_json::to_string_pretty(&m.boxes).expect("boxes always serialise");
                outputs.push(write_file(&img_out.join(format!("mosaic_{k}.json")), labels)?);
                summary.mosaics += 1;
            }
        }
    }
    let manifest = RunManifest {
        command: "ingest".into(),
        config_hash: cfg.hash(),
        config: cfg.clone(),
        seed: cfg.seed,
        inputs: vec![FileDigest::of(input)?],
        outputs,
        stages: Vec::new(),
        max_iterations_used: None,
        total_iterations: None,
    };
    write_manifest(out_dir, "ingest_manifest.json", &manifest)?;
    Ok(summary)
}

/// The six cumulative module sets of the ablation table. Preprocessing
/// flags keep their configured values.
pub fn ablation_combos(base: &Flags) -> Vec<(&'static str, Flags)> {
    let mut f = *base;
    for name in [
        "se_demo",
        "csp2_demo",
        "dilated_demo",
        "multiscale_anchors",
        "wbf",
        "iterative_refinement",
    ] {
        f.apply_overrides(&format!("{name}=off")).expect("known flag");
    }
    let steps: [(&'static str, &'static str); 6] = [
        ("csp2", "csp2_demo"),
        ("se", "se_demo"),
        ("dilated", "dilated_demo"),
        ("multiscale_anchors", "multiscale_anchors"),
        ("wbf", "wbf"),
        ("iterative_refinement", "iterative_refinement"),
    ];
    steps
        .iter()
        .map(|(label, flag)| {
            f.apply_overrides(flag).expect("known flag");
            (*label, f)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub index: usize,
    pub added: String,
    pub flags: String,
    pub detections: usize,
    pub block_outputs: Vec<(String, f64)>,
    pub report: EvalReport,
}

/// Runs post-processing and evaluation for each ablation combination and
/// writes one report directory per row plus `ablation.csv`.
pub fn ablate(
    cfg: &PipelineConfig,
    predictions: &Path,
    annotations: &Path,
    format: AnnotationFormat,
    out_dir: &Path,
) -> Result<Vec<AblationRow>> {
    let preds = read_jsonl(predictions)?;
    let gt = load_annotations(annotations, format)?.ground_truth();
    ensure_dir(out_dir)?;
    let mut rows = Vec::new();
    let mut csv = String::from("row,added,flags,detections,AP,AP50,AP75,AR,ARs,ARm,ARl\n");
    for (i, (added, flags)) in ablation_combos(&cfg.flags).into_iter().enumerate() {
        let run_cfg = PipelineConfig { flags, ..cfg.clone() };
        let block_outputs = nn_demo(&flags, cfg.seed)?;
        let outcome = postprocess_set(&preds, &run_cfg)?;
        let report = full_report(&outcome.detections, &gt, &cfg.eval)?;
        let dir = out_dir.join(format!("row{}_{added}", i + 1));
        write_report(&report, &dir)?;
        write_file(&dir.join("predictions.jsonl"), to_jsonl(&outcome.detections))?;
        let detections = count(&outcome.detections);
        let cols: Vec<String> = report.columns().iter().map(|(_, v)| format!("{v:.6}")).collect();
        csv.push_str(&format!(
            "{},{added},\"{}\",{detections},{}\n",
            i + 1,
            flags.label(),
            cols.join(",")
        ));
        rows.push(AblationRow {
            index: i + 1,
            added: added.to_string(),
            flags: flags.label(),
            detections,
            block_outputs,
            report,
        });
    }
    write_file(&out_dir.join("ablation.csv"), csv)?;
    write_file(
        &out_dir.join("ablation.json"),
        serde_json::to_string_pretty(&rows).expect("rows always serialise"),
    )?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;
    use crate::postprocess::ImageId;

    fn cloud() -> DetectionSet {
        let mut set = DetectionSet::new();
        let d = |x: f64, s: f64| Detection::new(BBox::new(x, 10.0, x + 20.0, 30.0).unwrap(), s, 0).unwrap();
        set.insert(
            ImageId::Num(1),
            vec![d(10.0, 0.9), d(11.0, 0.8), d(12.0, 0.7), d(80.0, 0.6)],
        );
        set.insert(ImageId::Num(2), vec![d(0.0, 0.02)]);
        set
    }

    #[test]
    fn all_flags_off_is_identity() {
        let cfg = PipelineConfig {
            flags: Flags::all(false),
            ..Default::default()
        };
        let out = postprocess_set(&cloud(), &cfg).unwrap();
        assert_eq!(out.detections, cloud());
        assert!(out.stages.iter().all(|s| !s.enabled));
    }

    #[test]
    fn stages_run_in_order_and_shrink() {
        let out = postprocess_set(&cloud(), &PipelineConfig::default()).unwrap();
        let names: Vec<&str> = out.stages.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["diou_nms", "wbf", "iterative_refinement"]);
        for w in out.stages.windows(2) {
            assert_eq!(w[0].detections_out, w[1].detections_in);
        }
        assert!(out.stages.iter().all(|s| s.detections_out <= s.detections_in));
        assert!(out.max_iterations_used.unwrap() <= PipelineConfig::default().refine.max_iterations);
        assert!(out.detections[&ImageId::Num(2)].is_empty());
    }

    #[test]
    fn combos_are_cumulative() {
        let combos = ablation_combos(&Flags::all(true));
        assert_eq!(combos.len(), 6);
        assert!(combos[0].1.csp2_demo && !combos[0].1.se_demo && !combos[0].1.wbf);
        assert!(combos[5].1.iterative_refinement && combos[5].1.wbf && combos[5].1.se_demo);
        assert!(combos[3].1.multiscale_anchors && !combos[3].1.wbf);
        assert!(combos.iter().all(|(_, f)| f.denoise));
    }
}
