use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{Flags, PipelineConfig};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::nn::{csp2_block, dilated_conv2d, se_block, ConvParams, Csp2Params, FeatureMap, SeParams};
use crate::postprocess::{diou_nms, iterative_refine, wbf, Detection};
use crate::rng::{seeded, uniform};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub stage: String,
    /// Detections for post-processing stages, input elements for blocks.
    pub n: usize,
    pub median_ms: f64,
    pub reps: usize,
}

/// `n` detections in a 640x640 frame, grouped five to a cluster around
/// random objects with jittered corners and random scores.
pub fn synthetic_cloud(n: usize, seed: u64) -> Vec<Detection> {
    let mut rng = seeded(seed);
    let mut out = Vec::with_capacity(n);
    let mut center = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        if i % 5 == 0 {
            let w = uniform(&mut rng, 12.0, 120.0);
            let h = uniform(&mut rng, 12.0, 120.0);
            center = (
                uniform(&mut rng, 0.0, 640.0 - w),
                uniform(&mut rng, 0.0, 640.0 - h),
                w,
                h,
            );
        }
        let (x, y, w, h) = center;
        let j = 0.08 * w.min(h);
        let x0 = x + uniform(&mut rng, -j, j);
        let y0 = y + uniform(&mut rng, -j, j);
        let bbox = BBox::new(
            x0,
            y0,
            x0 + w + uniform(&mut rng, -j, j),
            y0 + h + uniform(&mut rng, -j, j),
        )
        .expect("jitter is smaller than the box");
        out.push(Detection {
            bbox,
            score: uniform(&mut rng, 0.05, 1.0),
            class_id: 0,
        });
    }
    out
}

fn median_ms(reps: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        f()?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(f64::total_cmp);
    Ok(times[reps / 2])
}

fn demo_input(seed: u64) -> FeatureMap {
    FeatureMap::random(1, 8, 16, 16, &mut seeded(seed))
}

/// Runs each enabled block once on a fixed random `1x8x16x16` map and
/// returns the sum of its output.
pub fn nn_demo(flags: &Flags, seed: u64) -> Result<Vec<(String, f64)>> {
    let x = demo_input(seed);
    let mut rng = seeded(seed ^ 0x5eed);
    let mut out = Vec::new();
    if flags.csp2_demo {
        let p = Csp2Params::random(8, seed)?;
        out.push(("csp2_block".into(), csp2_block(&x, &p)?.data.iter().sum()));
    }
    if flags.se_demo {
        let p = SeParams::random(8, 4, &mut rng)?;
        out.push(("se_block".into(), se_block(&x, &p)?.data.iter().sum()));
    }
    if flags.dilated_demo {
        let p = ConvParams::random(8, 8, 3, 2, 2, &mut rng)?;
        out.push(("dilated_conv2d".into(), dilated_conv2d(&x, &p)?.data.iter().sum()));
    }
    Ok(out)
}

/// Median wall time of every enabled stage over `reps` repetitions, for each
/// detection count in `sizes`.
pub fn bench(cfg: &PipelineConfig, sizes: &[usize], reps: usize) -> Result<Vec<BenchRow>> {
    if reps < 5 {
        return Err(Error::param(format!("bench needs at least 5 repetitions, got {reps}")));
    }
    let r = cfg.refine;
    let mut rows = Vec::new();
    for &n in sizes {
        let cloud = synthetic_cloud(n, cfg.seed);
        let mut push = |stage: &str, ms: f64| {
            rows.push(BenchRow {
                stage: stage.into(),
                n,
                median_ms: ms,
                reps,
            })
        };
        if cfg.flags.multiscale_anchors {
            push(
                "diou_nms",
                median_ms(reps, || diou_nms(&cloud, r.nms_diou_thresh).map(drop))?,
            );
        }
        if cfg.flags.wbf {
            let lists = [cloud.clone()];
            push("wbf", median_ms(reps, || wbf(&lists, r.wbf_iou_thresh).map(drop))?);
        }
        if cfg.flags.iterative_refinement {
            push(
                "iterative_refinement",
                median_ms(reps, || iterative_refine(&cloud, &r).map(drop))?,
            );
        }
    }
    let x = demo_input(cfg.seed);
    let mut rng = seeded(cfg.seed);
    let elems = x.len();
    if cfg.flags.csp2_demo {
        let p = Csp2Params::random(8, cfg.seed)?;
        let ms = median_ms(reps, || csp2_block(&x, &p).map(drop))?;
        rows.push(BenchRow {
            stage: "csp2_block".into(),
            n: elems,
            median_ms: ms,
            reps,
        });
    }
    if cfg.flags.se_demo {
        let p = SeParams::random(8, 4, &mut rng)?;
        let ms = median_ms(reps, || se_block(&x, &p).map(drop))?;
        rows.push(BenchRow {
            stage: "se_block".into(),
            n: elems,
            median_ms: ms,
            reps,
        });
    }
    if cfg.flags.dilated_demo {
        let p = ConvParams::random(8, 8, 3, 2, 2, &mut rng)?;
        let ms = median_ms(reps, || dilated_conv2d(&x, &p).map(drop))?;
        rows.push(BenchRow {
            stage: "dilated_conv2d".into(),
            n: elems,
            median_ms: ms,
            reps,
        });
    }
    Ok(rows)
}
