//! Prediction screening and fusion: DIoU-NMS, weighted boxes fusion and the
//! iterative refinement loop, plus the JSON-lines detection format.

mod nms;
mod refine;
mod wbf;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

pub use nms::diou_nms;
pub use refine::{iterative_refine, stable_between, RefineConfig};
pub use wbf::{wbf, wbf_clusters, FusedCluster};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
    pub class_id: u32,
}

impl Detection {
    pub fn new(bbox: BBox, score: f64, class_id: u32) -> Result<Self> {
        let d = Detection { bbox, score, class_id };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.bbox.is_valid() {
            let b = self.bbox;
            return Err(Error::InvalidBox {
                x_min: b.x_min,
                y_min: b.y_min,
                x_max: b.x_max,
                y_max: b.y_max,
            });
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::param(format!("score {} outside [0, 1]", self.score)));
        }
        Ok(())
    }
}

/// Indices of `dets` in descending score order, ties by lower index.
pub(crate) fn score_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    order
}

pub(crate) fn check_unit_open(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::param(format!("{name} must lie in (0, 1), got {v}")))
    }
}

/// Image key: numeric ids stay numeric, anything else is kept as a string.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ImageId {
    Num(u64),
    Str(String),
}

impl fmt::Display for ImageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ImageId::Num(n) => write!(f, "{n}"),
            ImageId::Str(s) => f.write_str(s),
        }
    }
}

impl From<u64> for ImageId {
    fn from(n: u64) -> Self {
        ImageId::Num(n)
    }
}

impl From<&str> for ImageId {
    fn from(s: &str) -> Self {
        ImageId::Str(s.to_string())
    }
}

/// One line of the predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: ImageId,
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    pub score: f64,
    pub class_id: u32,
}

impl DetectionRecord {
    pub fn from_detection(image_id: ImageId, d: &Detection) -> Self {
        DetectionRecord {
            image_id,
            x_min: d.bbox.x_min,
            y_min: d.bbox.y_min,
            x_max: d.bbox.x_max,
            y_max: d.bbox.y_max,
            score: d.score,
            class_id: d.class_id,
        }
    }

    pub fn detection(&self) -> Result<Detection> {
        Detection::new(
            BBox::new(self.x_min, self.y_min, self.x_max, self.y_max)?,
            self.score,
            self.class_id,
        )
    }
}

/// Detections grouped by image, in file order within each image.
pub type DetectionSet = BTreeMap<ImageId, Vec<Detection>>;

/// Parses JSON-lines detections; blank lines are skipped.
pub fn parse_jsonl(text: &str, source: &str) -> Result<DetectionSet> {
    let mut out = DetectionSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let context = format!("{source}:{}", i + 1);
        let rec: DetectionRecord = serde_json::from_str(line).map_err(|e| Error::parse(&context, e))?;
        let det = rec.detection().map_err(|e| Error::parse(&context, e))?;
        out.entry(rec.image_id).or_default().push(det);
    }
    Ok(out)
}

pub fn read_jsonl(path: &Path) -> Result<DetectionSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text, &path.display().to_string())
}

/// One record per line, images in key order, detections in stored order.
pub fn to_jsonl(set: &DetectionSet) -> String {
    let mut out = String::new();
    for (id, dets) in set {
        for d in dets {
            let rec = DetectionRecord::from_detection(id.clone(), d);
            out.push_str(&serde_json::to_string(&rec).expect("records always serialise"));
            out.push('\n');
        }
    }
    out
}

pub fn write_jsonl(set: &DetectionSet, path: &Path) -> Result<()> {
    std::fs::write(path, to_jsonl(set)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip() {
        let text = "{\"image_id\":3,\"x_min\":1.5,\"y_min\":2.0,\"x_max\":10.0,\"y_max\":12.25,\"score\":0.9,\"class_id\":0}\n\
                    {\"image_id\":\"a-7\",\"x_min\":0.0,\"y_min\":0.0,\"x_max\":1.0,\"y_max\":1.0,\"score\":0.1,\"class_id\":2}\n";
        let set = parse_jsonl(text, "t").unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set[&ImageId::Num(3)][0].bbox.y_max, 12.25);
        assert_eq!(set[&ImageId::from("a-7")][0].class_id, 2);
        assert_eq!(to_jsonl(&set), text);
    }

    #[test]
    fn bad_lines_name_their_position() {
        let text = "\n{\"image_id\":1,\"x_min\":5,\"y_min\":0,\"x_max\":1,\"y_max\":1,\"score\":0.5,\"class_id\":0}\n";
        let err = parse_jsonl(text, "p.jsonl").unwrap_err().to_string();
        assert!(err.contains("p.jsonl:2"), "{err}");
        let err = parse_jsonl("{not json", "q").unwrap_err().to_string();
        assert!(err.contains("q:1"), "{err}");
        let score = "{\"image_id\":1,\"x_min\":0,\"y_min\":0,\"x_max\":1,\"y_max\":1,\"score\":1.5,\"class_id\":0}";
        assert!(parse_jsonl(score, "r").is_err());
    }

    #[test]
    fn score_order_breaks_ties_by_index() {
        let b = BBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        let dets: Vec<Detection> = [0.5, 0.9, 0.5, 0.9]
            .iter()
            .map(|&s| Detection::new(b, s, 0).unwrap())
            .collect();
        assert_eq!(score_order(&dets), vec![1, 3, 0, 2]);
    }
}
