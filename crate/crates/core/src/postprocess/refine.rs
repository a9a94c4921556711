use serde::{Deserialize, Serialize};

use super::{check_unit_open, diou_nms, wbf, Detection};
use crate::error::{Error, Result};
use crate::geometry::iou;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    pub wbf_iou_thresh: f64,
    pub nms_diou_thresh: f64,
    pub score_floor: f64,
    /// Safety cap; refinement normally settles within a handful of rounds.
    pub max_iterations: usize,
    /// Coordinate (pixels) and score drift below which two rounds agree.
    pub stability_epsilon: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            wbf_iou_thresh: 0.55,
            nms_diou_thresh: 0.5,
            score_floor: 0.05,
            max_iterations: 3000,
            stability_epsilon: 1e-3,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        check_unit_open("wbf_iou_thresh", self.wbf_iou_thresh)?;
        check_unit_open("nms_diou_thresh", self.nms_diou_thresh)?;
        if !(0.0..1.0).contains(&self.score_floor) {
            return Err(Error::param(format!(
                "score_floor must lie in [0, 1), got {}",
                self.score_floor
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::param("max_iterations must be >= 1"));
        }
        if self.stability_epsilon.is_nan() || self.stability_epsilon <= 0.0 {
            return Err(Error::param("stability_epsilon must be positive"));
        }
        Ok(())
    }
}

/// True when both sets have the same size and a greedy max-IoU pairing
/// matches every box to one of the same class within `eps` in all four
/// coordinates and in score.
pub fn stable_between(prev: &[Detection], next: &[Detection], eps: f64) -> bool {
    if prev.len() != next.len() {
        return false;
    }
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, a) in prev.iter().enumerate() {
        for (j, b) in next.iter().enumerate() {
            if a.class_id == b.class_id {
                pairs.push((iou(&a.bbox, &b.bbox), i, j));
            }
        }
    }
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut used_prev = vec![false; prev.len()];
    let mut used_next = vec![false; next.len()];
    let mut matched = 0;
    for (_, i, j) in pairs {
        if used_prev[i] || used_next[j] {
            continue;
        }
        let (a, b) = (&prev[i], &next[j]);
        let drift = a
            .bbox
            .to_array()
            .iter()
            .zip(b.bbox.to_array())
            .map(|(p, q)| (p - q).abs())
            .fold((a.score - b.score).abs(), f64::max);
        if drift >= eps {
            return false;
        }
        used_prev[i] = true;
        used_next[j] = true;
        matched += 1;
    }
    matched == prev.len()
}

/// Repeats fusion, DIoU-NMS and the score floor until two consecutive rounds
/// agree or `max_iterations` is reached. Returns the final set and the number
/// of rounds run.
pub fn iterative_refine(dets: &[Detection], cfg: &RefineConfig) -> Result<(Vec<Detection>, usize)> {
    cfg.validate()?;
    let mut current = dets.to_vec();
    for round in 1..=cfg.max_iterations {
        let fused = wbf(&[current.clone()], cfg.wbf_iou_thresh)?;
        let mut next = diou_nms(&fused, cfg.nms_diou_thresh)?;
        next.retain(|d| d.score >= cfg.score_floor);
        let stable = stable_between(&current, &next, cfg.stability_epsilon);
        current = next;
        if stable {
            return Ok((current, round));
        }
    }
    Ok((current, cfg.max_iterations))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{diou, BBox};

    fn det(x0: f64, y0: f64, x1: f64, y1: f64, s: f64) -> Detection {
        Detection::new(BBox::new(x0, y0, x1, y1).unwrap(), s, 0).unwrap()
    }

    #[test]
    fn empty_input_takes_one_round() {
        assert_eq!(iterative_refine(&[], &RefineConfig::default()).unwrap(), (vec![], 1));
    }

    #[test]
    fn stable_set_unchanged() {
        let dets = vec![det(0.0, 0.0, 10.0, 10.0, 0.9), det(50.0, 50.0, 60.0, 70.0, 0.6)];
        assert!(diou(&dets[0].bbox, &dets[1].bbox) < 0.5);
        let (out, rounds) = iterative_refine(&dets, &RefineConfig::default()).unwrap();
        assert_eq!((out, rounds), (dets, 1));
    }

    #[test]
    fn six_box_cloud_collapses() {
        let cloud = vec![
            det(40.0, 40.0, 60.0, 60.0, 0.9),
            det(41.0, 39.0, 61.0, 59.5, 0.85),
            det(39.0, 41.0, 59.0, 61.0, 0.8),
            det(40.5, 40.5, 60.5, 61.5, 0.7),
            det(38.5, 39.5, 59.5, 60.0, 0.6),
            det(41.5, 41.0, 61.0, 60.5, 0.5),
        ];
        let (out, rounds) = iterative_refine(&cloud, &RefineConfig::default()).unwrap();
        assert_eq!(out.len(), 1);
        assert!(rounds <= 3, "{rounds}");
    }

    #[test]
    fn floor_drops_weak_boxes() {
        let dets = vec![det(0.0, 0.0, 10.0, 10.0, 0.9), det(50.0, 50.0, 60.0, 60.0, 0.01)];
        let (out, _) = iterative_refine(&dets, &RefineConfig::default()).unwrap();
        assert_eq!(out, vec![dets[0]]);
    }

    #[test]
    fn cap_is_respected() {
        let cfg = RefineConfig {
            max_iterations: 1,
            ..Default::default()
        };
        let dets = vec![det(0.0, 0.0, 10.0, 10.0, 0.9), det(1.0, 0.0, 11.0, 10.0, 0.8)];
        let (out, rounds) = iterative_refine(&dets, &cfg).unwrap();
        assert_eq!((out.len(), rounds), (1, 1));
    }

    #[test]
    fn stability_needs_matching_sets() {
        let a = det(0.0, 0.0, 10.0, 10.0, 0.9);
        let b = det(0.0, 0.0, 10.0005, 10.0, 0.9);
        let c = det(0.0, 0.0, 10.01, 10.0, 0.9);
        assert!(stable_between(&[a], &[b], 1e-3));
        assert!(!stable_between(&[a], &[c], 1e-3));
        assert!(!stable_between(&[a], &[], 1e-3));
    }

    #[test]
    fn config_validation() {
        assert!(RefineConfig::default().validate().is_ok());
        let bad = RefineConfig {
            score_floor: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = RefineConfig {
            max_iterations: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
