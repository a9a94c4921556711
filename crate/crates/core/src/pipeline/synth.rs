use std::collections::BTreeMap;
use std::path::Path;

use super::annotations::{Annotations, ImageEntry};
use super::config::PipelineConfig;
use super::{ensure_dir, write_file, FileDigest};
use crate::error::Result;
use crate::geometry::BBox;
use crate::postprocess::{to_jsonl, Detection, DetectionSet, ImageId};
use crate::preprocess::{encode_ppm, Image, LabeledBox};
use crate::rng::{int_inclusive, seeded, uniform, unit, SeededRng};

pub const FIXTURE_W: usize = 192;
pub const FIXTURE_H: usize = 160;

/// A small labelled dataset with noisy predictions: jittered duplicates,
/// missed objects and spurious boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub annotations: Annotations,
    pub predictions: DetectionSet,
    pub images: BTreeMap<ImageId, Image>,
}

fn random_gt(rng: &mut SeededRng) -> BBox {
    // one size class per draw so every area bucket is populated
    let (lo, hi) = match int_inclusive(rng, 0, 2) {
        0 => (12.0, 30.0),
        1 => (36.0, 90.0),
        _ => (100.0, 140.0),
    };
    let w = uniform(rng, lo, hi).round();
    let h = uniform(rng, lo, hi).round().min(FIXTURE_H as f64 - 2.0);
    let x = uniform(rng, 0.0, FIXTURE_W as f64 - w).round();
    let y = uniform(rng, 0.0, FIXTURE_H as f64 - h).round();
    BBox::new(x, y, x + w, y + h).expect("sizes are positive")
}

fn jitter(rng: &mut SeededRng, b: &BBox, frac: f64) -> BBox {
    let j = frac * b.width().min(b.height());
    let mut c = b.to_array();
    for v in &mut c {
        *v += uniform(rng, -j, j);
    }
    let x0 = c[0].clamp(0.0, FIXTURE_W as f64 - 1.0);
    let y0 = c[1].clamp(0.0, FIXTURE_H as f64 - 1.0);
    BBox::new(
        x0,
        y0,
        c[2].clamp(x0 + 1.0, FIXTURE_W as f64),
        c[3].clamp(y0 + 1.0, FIXTURE_H as f64),
    )
    .expect("clamped corners are ordered")
}

fn paint(rng: &mut SeededRng, boxes: &[LabeledBox]) -> Image {
    let mut img = Image::filled(FIXTURE_W, FIXTURE_H, 3, 0).expect("fixed size");
    for y in 0..FIXTURE_H {
        for x in 0..FIXTURE_W {
            let n = (unit(rng) * 24.0) as u8;
            img.set(x, y, 0, 10 + n);
            img.set(x, y, 1, (60 + y * 80 / FIXTURE_H) as u8 + n);
            img.set(x, y, 2, (110 + x * 60 / FIXTURE_W) as u8 + n);
        }
    }
    for b in boxes {
        let bb = b.bbox;
        for y in bb.y_min as usize..(bb.y_max as usize).min(FIXTURE_H) {
            for x in bb.x_min as usize..(bb.x_max as usize).min(FIXTURE_W) {
                img.set(x, y, 0, 150);
                img.set(x, y, 1, 70);
                img.set(x, y, 2, 60);
            }
        }
    }
    img
}

/// `n_images` scenes with 1 to 3 objects each.
pub fn synthetic_fixture(seed: u64, n_images: usize) -> Fixture {
    let mut rng = seeded(seed);
    let mut annotations = Annotations::default();
    let mut predictions = DetectionSet::new();
    let mut images = BTreeMap::new();
    for i in 1..=n_images as u64 {
        let id = ImageId::Num(i);
        let n_gt = int_inclusive(&mut rng, 1, 3) as usize;
        let boxes: Vec<LabeledBox> = (0..n_gt)
            .map(|_| LabeledBox {
                bbox: random_gt(&mut rng),
                class_id: 0,
            })
            .collect();
        let mut dets = Vec::new();
        for b in &boxes {
            if unit(&mut rng) < 0.1 {
                continue;
            }
            dets.push(Detection {
                bbox: jitter(&mut rng, &b.bbox, 0.05),
                score: uniform(&mut rng, 0.6, 0.95),
                class_id: 0,
            });
            for _ in 0..int_inclusive(&mut rng, 0, 2) {
                dets.push(Detection {
                    bbox: jitter(&mut rng, &b.bbox, 0.15),
                    score: uniform(&mut rng, 0.3, 0.7),
                    class_id: 0,
                });
            }
        }
        if unit(&mut rng) < 0.6 {
            dets.push(Detection {
                bbox: random_gt(&mut rng),
                score: uniform(&mut rng, 0.1, 0.5),
                class_id: 0,
            });
        }
        images.insert(id.clone(), paint(&mut rng, &boxes));
        annotations.images.insert(
            id.clone(),
            ImageEntry {
                file_name: Some(format!("{i}.ppm")),
                width: Some(FIXTURE_W as u32),
                height: Some(FIXTURE_H as u32),
                boxes,
            },
        );
        predictions.insert(id, dets);
    }
    Fixture {
        annotations,
        predictions,
        images,
    }
}

/// CSV in the video/sequence layout with a single-quoted box-list column.
fn to_csv(ann: &Annotations) -> String {
    let mut s = String::from("video_id,sequence,video_frame,sequence_frame,image_id,annotations\n");
    for (k, (id, e)) in ann.images.iter().enumerate() {
        let boxes: Vec<String> = e
            .boxes
            .iter()
            .map(|b| {
                format!(
                    "{{'x': {}, 'y': {}, 'width': {}, 'height': {}}}",
                    b.bbox.x_min,
                    b.bbox.y_min,
                    b.bbox.width(),
                    b.bbox.height()
                )
            })
            .collect();
        s.push_str(&format!("0,1,{k},{k},{id},\"[{}]\"\n", boxes.join(", ")));
    }
    s
}

/// Writes annotations (COCO JSON and CSV), predictions, images and a config
/// pointing at them.
pub fn write_fixture(fx: &Fixture, dir: &Path, seed: u64) -> Result<Vec<FileDigest>> {
    ensure_dir(&dir.join("images"))?;
    let mut out = vec![
        write_file(&dir.join("annotations.json"), fx.annotations.to_coco_json())?,
        write_file(&dir.join("annotations.csv"), to_csv(&fx.annotations))?,
        write_file(&dir.join("predictions.jsonl"), to_jsonl(&fx.predictions))?,
    ];
    for (id, img) in &fx.images {
        out.push(write_file(
            &dir.join("images").join(format!("{id}.ppm")),
            encode_ppm(img),
        )?);
    }
    let mut cfg = PipelineConfig {
        seed,
        ..Default::default()
    };
    cfg.paths.annotations = Some("annotations.json".into());
    cfg.paths.predictions = Some("predictions.jsonl".into());
    cfg.paths.images = Some("images".into());
    cfg.paths.output_dir = Some("out".into());
    out.push(write_file(&dir.join("config.json"), cfg.to_json())?);
    Ok(out)
}
