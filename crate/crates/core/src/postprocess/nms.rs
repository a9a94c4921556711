use super::{check_unit_open, score_order, Detection};
use crate::error::Result;
use crate::geometry::diou;

/// Greedy DIoU suppression within each class.
///
/// Candidates are visited by descending score (ties by lower index); a
/// candidate is dropped when its DIoU with an already kept box of the same
/// class exceeds `thresh`. Survivors come out in visiting order.
pub fn diou_nms(dets: &[Detection], thresh: f64) -> Result<Vec<Detection>> {
    check_unit_open("DIoU-NMS threshold", thresh)?;
    let mut kept: Vec<Detection> = Vec::new();
    for i in score_order(dets) {
        let cand = &dets[i];
        let suppressed = kept
            .iter()
            .any(|k| k.class_id == cand.class_id && diou(&k.bbox, &cand.bbox) > thresh);
        if !suppressed {
            kept.push(*cand);
        }
    }
    Ok(kept)
}
