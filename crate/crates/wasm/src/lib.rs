//! Browser bindings for the demo page in `www/`. Each export takes plain
//! numbers and returns a JSON string, so the page needs no extra glue.

use reefdet::anchors::{anchor_shapes, assign_targets, generate_grid, AnchorLabel, AnchorSpec};
use reefdet::geometry::{ciou, ciou_gradient, diou, giou, iou};
use reefdet::loss::{background_boxes, combined_loss, Frame, LossConfig};
use reefdet::pipeline::synthetic_cloud;
use reefdet::postprocess::{diou_nms, iterative_refine, wbf, RefineConfig};
use reefdet::{BBox, Detection};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn bbox(c: &[f64]) -> Result<BBox, String> {
    let c: [f64; 4] = c
        .try_into()
        .map_err(|_| format!("a box needs 4 numbers, got {}", c.len()))?;
    BBox::from_array(c).map_err(|e| e.to_string())
}

fn json(v: &impl Serialize) -> String {
    serde_json::to_string(v).expect("plain data always serialises")
}

#[derive(Serialize)]
struct Similarity {
    iou: f64,
    giou: f64,
    diou: f64,
    ciou: Option<f64>,
    ciou_gradient: Option<[f64; 4]>,
    l_ciou: Option<f64>,
    l_raiou: Option<f64>,
    total: Option<f64>,
    backgrounds: Vec<[f64; 4]>,
    note: Option<String>,
}

/// IoU family, CIoU gradient and the combined loss for one box pair. CIoU
/// terms are `null` for zero-width or zero-height boxes.
pub fn similarity_json(
    pred: &[f64],
    gt: &[f64],
    frame_w: f64,
    frame_h: f64,
    sigma: f64,
    seed: u64,
) -> Result<String, String> {
    let (p, g) = (bbox(pred)?, bbox(gt)?);
    let cfg = LossConfig {
        sigma,
        rng_seed: seed,
        ..LossConfig::default()
    };
    let frame = Frame::new(frame_w, frame_h);
    let mut out = Similarity {
        iou: iou(&p, &g),
        giou: giou(&p, &g),
        diou: diou(&p, &g),
        ciou: ciou(&p, &g).ok(),
        ciou_gradient: ciou_gradient(&p, &g).ok(),
        l_ciou: None,
        l_raiou: None,
        total: None,
        backgrounds: Vec::new(),
        note: None,
    };
    match combined_loss(&p, &g, frame, &cfg) {
        Ok(l) => {
            out.l_ciou = Some(l.l_ciou);
            out.l_raiou = Some(l.l_raiou);
            out.total = Some(l.total);
            let bgs = background_boxes(&g, frame, &cfg).map_err(|e| e.to_string())?;
            out.backgrounds = bgs.iter().map(BBox::to_array).collect();
        }
        Err(e) => out.note = Some(e.to_string()),
    }
    Ok(json(&out))
}

#[derive(Serialize)]
struct Stage {
    name: &'static str,
    boxes: Vec<[f64; 5]>,
}

#[derive(Serialize)]
struct Cloud {
    stages: Vec<Stage>,
    refine_iterations: usize,
}

fn rows(dets: &[Detection]) -> Vec<[f64; 5]> {
    dets.iter()
        .map(|d| {
            let [a, b, c, e] = d.bbox.to_array();
            [a, b, c, e, d.score]
        })
        .collect()
}

/// A seeded detection cloud in a 640x640 frame, then DIoU-NMS, box fusion
/// and iterative refinement applied to it independently.
pub fn postprocess_json(n: usize, seed: u64, nms_thresh: f64, wbf_thresh: f64) -> Result<String, String> {
    let cloud = synthetic_cloud(n, seed);
    let cfg = RefineConfig {
        nms_diou_thresh: nms_thresh,
        wbf_iou_thresh: wbf_thresh,
        ..RefineConfig::default()
    };
    let err = |e: reefdet::Error| e.to_string();
    let nms = diou_nms(&cloud, nms_thresh).map_err(err)?;
    let fused = wbf(std::slice::from_ref(&cloud), wbf_thresh).map_err(err)?;
    let (refined, iterations) = iterative_refine(&cloud, &cfg).map_err(err)?;
    Ok(json(&Cloud {
        stages: vec![
            Stage {
                name: "input",
                boxes: rows(&cloud),
            },
            Stage {
                name: "diou_nms",
                boxes: rows(&nms),
            },
            Stage {
                name: "wbf",
                boxes: rows(&fused),
            },
            Stage {
                name: "iterative_refine",
                boxes: rows(&refined),
            },
        ],
        refine_iterations: iterations,
    }))
}

#[derive(Serialize)]
struct Positive {
    anchor: [f64; 4],
    gt: usize,
}

#[derive(Serialize)]
struct AnchorScene {
    shapes: Vec<(f64, f64)>,
    anchors: usize,
    positives: Vec<Positive>,
    ignored: usize,
    backgrounds: Vec<[f64; 4]>,
}

/// Anchor grid over a `w x h` image, labels against `gts` (flat, 4 numbers
/// per box), and `k` background samples around the first box.
#[allow(clippy::too_many_arguments)]
pub fn anchors_json(
    gts: &[f64],
    w: u32,
    h: u32,
    stride: u32,
    pos_thresh: f64,
    neg_thresh: f64,
    k: usize,
    seed: u64,
) -> Result<String, String> {
    if !gts.len().is_multiple_of(4) {
        return Err(format!("box list length {} is not a multiple of 4", gts.len()));
    }
    let boxes = gts.chunks(4).map(bbox).collect::<Result<Vec<_>, _>>()?;
    let spec = AnchorSpec::default();
    let err = |e: reefdet::Error| e.to_string();
    let grid = generate_grid(&spec, w, h, stride).map_err(err)?;
    let labels = assign_targets(&grid, &boxes, pos_thresh, neg_thresh).map_err(err)?;
    let positives = labels
        .iter()
        .zip(&grid.anchors)
        .filter_map(|(l, a)| match l {
            AnchorLabel::Positive(g) => Some(Positive {
                anchor: a.to_array(),
                gt: *g,
            }),
            _ => None,
        })
        .collect();
    let backgrounds = match boxes.first() {
        Some(g) if k > 0 => reefdet::anchors::sample_background_boxes(g, w as f64, h as f64, k, seed).map_err(err)?,
        _ => Vec::new(),
    };
    Ok(json(&AnchorScene {
        shapes: anchor_shapes(&spec).to_vec(),
        anchors: grid.len(),
        positives,
        ignored: labels.iter().filter(|l| **l == AnchorLabel::Ignore).count(),
        backgrounds: backgrounds.iter().map(BBox::to_array).collect(),
    }))
}

fn js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn similarity(
    pred: &[f64],
    gt: &[f64],
    frame_w: f64,
    frame_h: f64,
    sigma: f64,
    seed: u32,
) -> Result<String, JsError> {
    js(similarity_json(pred, gt, frame_w, frame_h, sigma, seed as u64))
}

#[wasm_bindgen]
pub fn postprocess(n: u32, seed: u32, nms_thresh: f64, wbf_thresh: f64) -> Result<String, JsError> {
    js(postprocess_json(n as usize, seed as u64, nms_thresh, wbf_thresh))
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn anchors(
    gts: &[f64],
    w: u32,
    h: u32,
    stride: u32,
    pos_thresh: f64,
    neg_thresh: f64,
    k: u32,
    seed: u32,
) -> Result<String, JsError> {
    js(anchors_json(
        gts,
        w,
        h,
        stride,
        pos_thresh,
        neg_thresh,
        k as usize,
        seed as u64,
    ))
}
