use super::{check_unit_open, score_order, Detection};
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};

struct Cluster {
    class_id: u32,
    members: Vec<Detection>,
    /// Positions of the members in the pooled input.
    indices: Vec<usize>,
    fused: BBox,
}

impl Cluster {
    fn seed(d: Detection, index: usize) -> Self {
        Cluster {
            class_id: d.class_id,
            members: vec![d],
            indices: vec![index],
            fused: d.bbox,
        }
    }

    fn refuse(&mut self) {
        self.fused = fuse_boxes(&self.members);
    }

    fn score(&self, lists: usize) -> f64 {
        let t = self.members.len();
        let mean = self.members.iter().map(|m| m.score).sum::<f64>() / t as f64;
        mean * t.min(lists) as f64 / lists as f64
    }
}

/// Score-weighted mean of member coordinates, clamped to the member envelope.
/// A single member is copied exactly; all-zero scores fall back to the plain mean.
fn fuse_boxes(members: &[Detection]) -> BBox {
    if members.len() == 1 {
        return members[0].bbox;
    }
    let total: f64 = members.iter().map(|m| m.score).sum();
    let weight = |m: &Detection| if total > 0.0 { m.score } else { 1.0 };
    let norm: f64 = members.iter().map(weight).sum();
    let mut acc = [0.0; 4];
    let mut lo = [f64::INFINITY; 4];
    let mut hi = [f64::NEG_INFINITY; 4];
    for m in members {
        let w = weight(m);
        for (k, v) in m.bbox.to_array().into_iter().enumerate() {
            acc[k] += w * v;
            lo[k] = lo[k].min(v);
            hi[k] = hi[k].max(v);
        }
    }
    let c: Vec<f64> = (0..4).map(|k| (acc[k] / norm).clamp(lo[k], hi[k])).collect();
    BBox {
        x_min: c[0],
        y_min: c[1],
        x_max: c[2].max(c[0]),
        y_max: c[3].max(c[1]),
    }
}

/// Best same-class cluster for `bbox` with IoU above `thresh`, ties to the
/// earliest cluster.
fn best_cluster(clusters: &[Cluster], class_id: u32, bbox: &BBox, thresh: f64, skip: Option<usize>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in clusters.iter().enumerate() {
        if c.class_id != class_id || Some(i) == skip {
            continue;
        }
        let v = iou(&c.fused, bbox);
        if v > thresh && best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// One fused detection and the positions of its members in the pooled input
/// (the lists concatenated in order).
#[derive(Debug, Clone, PartialEq)]
pub struct FusedCluster {
    pub detection: Detection,
    pub members: Vec<usize>,
}

/// Weighted boxes fusion over `M = det_lists.len()` prediction lists.
///
/// All detections are pooled and visited by descending score. Each joins the
/// same-class cluster whose fused box has the highest IoU above `iou_thresh`,
/// or starts a new cluster. Clusters whose fused boxes still overlap above the
/// threshold are then merged until none do, which makes the operation
/// idempotent. Fused score is the member mean scaled by `min(T, M) / M`.
pub fn wbf(det_lists: &[Vec<Detection>], iou_thresh: f64) -> Result<Vec<Detection>> {
    Ok(wbf_clusters(det_lists, iou_thresh)?
        .into_iter()
        .map(|c| c.detection)
        .collect())
}

/// [`wbf`] with cluster membership, in the same output order.
pub fn wbf_clusters(det_lists: &[Vec<Detection>], iou_thresh: f64) -> Result<Vec<FusedCluster>> {
    check_unit_open("WBF IoU threshold", iou_thresh)?;
    if det_lists.is_empty() {
        return Err(Error::param("WBF needs at least one detection list"));
    }
    let lists = det_lists.len();
    let pooled: Vec<Detection> = det_lists.iter().flatten().copied().collect();
    let mut clusters: Vec<Cluster> = Vec::new();
    for i in score_order(&pooled) {
        let d = pooled[i];
        match best_cluster(&clusters, d.class_id, &d.bbox, iou_thresh, None) {
            Some(c) => {
                clusters[c].members.push(d);
                clusters[c].indices.push(i);
                clusters[c].refuse();
            }
            None => clusters.push(Cluster::seed(d, i)),
        }
    }
    consolidate(&mut clusters, iou_thresh);
    let fused: Vec<Detection> = clusters
        .iter()
        .map(|c| Detection {
            bbox: c.fused,
            score: c.score(lists),
            class_id: c.class_id,
        })
        .collect();
    let order = score_order(&fused);
    Ok(order
        .into_iter()
        .map(|i| {
            let mut members = clusters[i].indices.clone();
            members.sort_unstable();
            FusedCluster {
                detection: fused[i],
                members,
            }
        })
        .collect())
}

fn consolidate(clusters: &mut Vec<Cluster>, thresh: f64) {
    loop {
        let mut merge = None;
        for i in 0..clusters.len() {
            if let Some(j) = best_cluster(clusters, clusters[i].class_id, &clusters[i].fused, thresh, Some(i)) {
                merge = Some((i.min(j), i.max(j)));
                break;
            }
        }
        let Some((keep, gone)) = merge else { return };
        let absorbed = clusters.remove(gone);
        clusters[keep].members.extend(absorbed.members);
        clusters[keep].indices.extend(absorbed.indices);
        clusters[keep].refuse();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(x0: f64, y0: f64, x1: f64, y1: f64, s: f64) -> Detection {
        Detection::new(BBox::new(x0, y0, x1, y1).unwrap(), s, 0).unwrap()
    }

    #[test]
    fn singleton_is_fixed_point() {
        let d = det(1.25, 2.5, 7.75, 9.0, 0.37);
        assert_eq!(wbf(&[vec![d]], 0.55).unwrap(), vec![d]);
    }

    #[test]
    fn two_lists_identical_pairs() {
        let small = det(0.0, 0.0, 10.0, 10.0, 0.5);
        let large = det(0.0, 0.0, 20.0, 20.0, 0.5);
        let out = wbf(&[vec![small, large], vec![small, large]], 0.4).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.contains(&small) && out.contains(&large));
    }

    #[test]
    fn clusters_partition_the_input() {
        let a = det(0.0, 0.0, 10.0, 10.0, 0.9);
        let b = det(1.0, 1.0, 11.0, 11.0, 0.8);
        let far = det(50.0, 50.0, 60.0, 60.0, 0.95);
        let out = wbf_clusters(&[vec![a, far], vec![b]], 0.5).unwrap();
        assert_eq!(out.len(), 2);
        // the singleton's score is halved by min(T, M) / M with M = 2
        assert_eq!(out[0].members, vec![0, 2]);
        assert_eq!(out[1].members, vec![1]);
        assert!((out[1].detection.score - 0.475).abs() < 1e-12);
    }

    #[test]
    fn weighted_average_example() {
        let out = wbf(
            &[vec![det(0.0, 0.0, 10.0, 10.0, 0.2), det(0.0, 0.0, 20.0, 20.0, 0.6)]],
            0.2,
        )
        .unwrap();
        assert_eq!(out.len(), 1);
        let b = out[0].bbox;
        assert!((b.x_max - 17.5).abs() < 1e-12 && (b.y_max - 17.5).abs() < 1e-12);
        assert_eq!((b.x_min, b.y_min), (0.0, 0.0));
        assert!((out[0].score - 0.4).abs() < 1e-12);
    }

    #[test]
    fn score_scaled_by_list_coverage() {
        let a = det(0.0, 0.0, 10.0, 10.0, 0.8);
        let out = wbf(&[vec![a], vec![], vec![], vec![a]], 0.5).unwrap();
        assert_eq!(out.len(), 1);
        assert!((out[0].score - 0.8 * 2.0 / 4.0).abs() < 1e-12);
    }

    #[test]
    fn consolidation_makes_it_idempotent() {
        // The two outer boxes each miss the first cluster but overlap once fused.
        let dets = vec![
            det(0.0, 0.0, 10.0, 10.0, 0.9),
            det(4.0, 0.0, 14.0, 10.0, 0.8),
            det(2.0, 0.0, 12.0, 10.0, 0.7),
        ];
        let once = wbf(&[dets], 0.5).unwrap();
        let twice = wbf(std::slice::from_ref(&once), 0.5).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn errors() {
        assert!(wbf(&[], 0.5).is_err());
        assert!(wbf(&[vec![]], 1.0).is_err());
        assert!(wbf(&[vec![]], 0.5).unwrap().is_empty());
    }
}
