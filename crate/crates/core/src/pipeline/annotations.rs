use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::GroundTruth;
use crate::geometry::BBox;
use crate::postprocess::ImageId;
use crate::preprocess::LabeledBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationFormat {
    Auto,
    CocoJson,
    CsvJsonboxes,
}

impl std::str::FromStr for AnnotationFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(AnnotationFormat::Auto),
            "coco_json" => Ok(AnnotationFormat::CocoJson),
            "csv_jsonboxes" => Ok(AnnotationFormat::CsvJsonboxes),
            other => Err(Error::Config(format!("unknown annotation format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ImageEntry {
    pub file_name: Option<String>,
    pub width: Option<u32>,
    pub height: Option<u32>,
    pub boxes: Vec<LabeledBox>,
}

/// Ground truth plus whatever image metadata the source carried.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Annotations {
    pub images: BTreeMap<ImageId, ImageEntry>,
}

impl Annotations {
    pub fn ground_truth(&self) -> GroundTruth {
        self.images
            .iter()
            .map(|(id, e)| (id.clone(), e.boxes.clone()))
            .collect()
    }

    pub fn box_count(&self) -> usize {
        self.images.values().map(|e| e.boxes.len()).sum()
    }

    /// COCO-style JSON with `bbox = [x, y, width, height]`.
    pub fn to_coco_json(&self) -> String {
        let mut images = Vec::new();
        let mut anns = Vec::new();
        let mut categories = std::collections::BTreeSet::new();
        for (id, e) in &self.images {
            images.push(serde_json::json!({
                "id": id,
                "file_name": e.file_name,
                "width": e.width,
                "height": e.height,
            }));
            for b in &e.boxes {
                categories.insert(b.class_id);
                anns.push(serde_json::json!({
                    "id": anns.len() + 1,
                    "image_id": id,
                    "bbox": [b.bbox.x_min, b.bbox.y_min, b.bbox.width(), b.bbox.height()],
                    "category_id": b.class_id,
                }));
            }
        }
        let cats: Vec<_> = categories
            .into_iter()
            .map(|c| serde_json::json!({"id": c, "name": format!("class_{c}")}))
            .collect();
        serde_json::to_string_pretty(&serde_json::json!({
            "images": images,
            "annotations": anns,
            "categories": cats,
        }))
        .expect("annotations always serialise")
    }
}

/// Numeric strings become numeric ids so they line up with prediction files.
pub fn parse_image_id(s: &str) -> ImageId {
    s.parse::<u64>()
        .map(ImageId::Num)
        .unwrap_or_else(|_| ImageId::Str(s.to_string()))
}

#[derive(Deserialize)]
struct CocoImage {
    id: ImageId,
    #[serde(default)]
    file_name: Option<String>,
    #[serde(default)]
    width: Option<u32>,
    #[serde(default)]
    height: Option<u32>,
}

#[derive(Deserialize)]
struct CocoAnnotation {
    image_id: ImageId,
    bbox: [f64; 4],
    #[serde(default)]
    category_id: u32,
}

#[derive(Deserialize)]
struct CocoFile {
    images: Vec<CocoImage>,
    #[serde(default)]
    annotations: Vec<CocoAnnotation>,
}

fn parse_coco(text: &str, source: &str) -> Result<Annotations> {
    let file: CocoFile = serde_json::from_str(text).map_err(|e| Error::parse(source, e))?;
    let mut out = Annotations::default();
    for (i, img) in file.images.into_iter().enumerate() {
        let entry = ImageEntry {
            file_name: img.file_name,
            width: img.width,
            height: img.height,
            boxes: Vec::new(),
        };
        if out.images.insert(img.id.clone(), entry).is_some() {
            return Err(Error::parse(
                format!("{source}: images[{i}]"),
                format!("duplicate image id `{}`", img.id),
            ));
        }
    }
    for (i, ann) in file.annotations.into_iter().enumerate() {
        let ctx = format!("{source}: annotations[{i}]");
        let [x, y, w, h] = ann.bbox;
        if !(w >= 0.0 && h >= 0.0) {
            return Err(Error::parse(ctx, format!("negative box size {w}x{h}")));
        }
        let bbox = BBox::from_xywh(x, y, w, h).map_err(|e| Error::parse(&ctx, e))?;
        let entry = out
            .images
            .get_mut(&ann.image_id)
            .ok_or_else(|| Error::parse(&ctx, format!("unknown image id `{}`", ann.image_id)))?;
        entry.boxes.push(LabeledBox {
            bbox,
            class_id: ann.category_id,
        });
    }
    Ok(out)
}

#[derive(Deserialize)]
struct CsvBox {
    x: f64,
    y: f64,
    width: f64,
    height: f64,
    #[serde(default, alias = "category_id")]
    class_id: u32,
}

/// Box lists are JSON arrays, possibly written with Python-style single quotes.
fn parse_box_list(cell: &str) -> Option<Vec<CsvBox>> {
    let t = cell.trim();
    if !t.starts_with('[') {
        return None;
    }
    serde_json::from_str(&t.replace('\'', "\"")).ok()
}

fn parse_csv(text: &str, source: &str) -> Result<Annotations> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::parse(source, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(format!("{source}:{}", i + 2), e))?;
        rows.push(rec.iter().map(str::to_string).collect::<Vec<_>>());
    }
    let is_box_column =
        |c: usize| !rows.is_empty() && rows.iter().all(|r| r.get(c).and_then(|v| parse_box_list(v)).is_some());
    let candidates: Vec<usize> = (0..headers.len()).filter(|&c| is_box_column(c)).collect();
    let box_col = candidates
        .iter()
        .copied()
        .find(|&c| headers[c] == "annotations")
        .or_else(|| candidates.first().copied())
        .ok_or_else(|| Error::parse(source, "no column holds JSON box lists"))?;
    let id_col = headers
        .iter()
        .position(|h| h == "image_id")
        .or_else(|| (0..headers.len()).find(|&c| c != box_col))
        .ok_or_else(|| Error::parse(source, "no image id column"))?;
    let mut out = Annotations::default();
    for (i, row) in rows.iter().enumerate() {
        let ctx = format!("{source}:{}", i + 2);
        let id = parse_image_id(row[id_col].trim());
        let boxes = parse_box_list(&row[box_col])
            .expect("column checked above")
            .into_iter()
            .map(|b| {
                if !(b.width >= 0.0 && b.height >= 0.0) {
                    return Err(Error::parse(
                        &ctx,
                        format!("negative box size {}x{}", b.width, b.height),
                    ));
                }
                Ok(LabeledBox {
                    bbox: BBox::from_xywh(b.x, b.y, b.width, b.height).map_err(|e| Error::parse(&ctx, e))?,
                    class_id: b.class_id,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let entry = ImageEntry {
            boxes,
            ..Default::default()
        };
        if out.images.insert(id.clone(), entry).is_some() {
            return Err(Error::parse(ctx, format!("duplicate image id `{id}`")));
        }
    }
    Ok(out)
}

/// Parses annotation text; `Auto` picks COCO JSON for a leading `{`, CSV otherwise.
pub fn parse_annotations(text: &str, format: AnnotationFormat, source: &str) -> Result<Annotations> {
    let format = match format {
        AnnotationFormat::Auto => match text.trim_start().chars().next() {
            Some('{') => AnnotationFormat::CocoJson,
            Some(c) if c.is_alphanumeric() || c == '"' || c == '_' => AnnotationFormat::CsvJsonboxes,
            _ => return Err(Error::parse(source, "cannot detect annotation format")),
        },
        f => f,
    };
    match format {
        AnnotationFormat::CocoJson => parse_coco(text, source),
        _ => parse_csv(text, source),
    }
}

pub fn load_annotations(path: &Path, format: AnnotationFormat) -> Result<Annotations> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text, format, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    const COCO: &str = r#"{"images":[{"id":1,"file_name":"a.png","width":64,"height":48}],
        "annotations":[{"id":1,"image_id":1,"bbox":[10,20,30,40],"category_id":0}],
        "categories":[{"id":0,"name":"cots"}]}"#;

    #[test]
    fn coco_single_box() {
        let a = parse_annotations(COCO, AnnotationFormat::Auto, "t").unwrap();
        let e = &a.images[&ImageId::Num(1)];
        assert_eq!(e.boxes[0].bbox.to_array(), [10.0, 20.0, 40.0, 60.0]);
        assert_eq!(e.file_name.as_deref(), Some("a.png"));
        let again = parse_annotations(&a.to_coco_json(), AnnotationFormat::CocoJson, "t").unwrap();
        assert_eq!(again, a);
    }

    #[test]
    fn csv_rows() {
        let text = "video_id,sequence,video_frame,sequence_frame,image_id,annotations\n\
                    0,40258,0,0,0-0,[]\n\
                    0,40258,1,1,0-1,\"[{'x': 10, 'y': 20, 'width': 30, 'height': 40}]\"\n";
        let a = parse_annotations(text, AnnotationFormat::Auto, "t").unwrap();
        assert!(a.images[&ImageId::from("0-0")].boxes.is_empty());
        assert_eq!(
            a.images[&ImageId::from("0-1")].boxes[0].bbox.to_array(),
            [10.0, 20.0, 40.0, 60.0]
        );
    }

    #[test]
    fn csv_box_column_found_by_content() {
        let text = "frame,boxes\n7,\"[{\"\"x\"\":1,\"\"y\"\":2,\"\"width\"\":3,\"\"height\"\":4}]\"\n";
        let a = parse_annotations(text, AnnotationFormat::CsvJsonboxes, "t").unwrap();
        assert_eq!(a.images[&ImageId::Num(7)].boxes.len(), 1);
    }

    #[test]
    fn errors_name_the_record() {
        let dup = "image_id,annotations\n1,[]\n1,[]\n";
        let err = parse_annotations(dup, AnnotationFormat::Auto, "d.csv")
            .unwrap_err()
            .to_string();
        assert!(err.contains("d.csv:3") && err.contains("duplicate"), "{err}");
        let bad = r#"{"images":[{"id":1}],"annotations":[{"image_id":2,"bbox":[0,0,1,1]}]}"#;
        let err = parse_annotations(bad, AnnotationFormat::Auto, "c.json")
            .unwrap_err()
            .to_string();
        assert!(err.contains("annotations[0]"), "{err}");
        let dup = r#"{"images":[{"id":1},{"id":1}]}"#;
        assert!(parse_annotations(dup, AnnotationFormat::Auto, "c").is_err());
        assert!(parse_annotations("  <xml/>", AnnotationFormat::Auto, "x").is_err());
        assert!(parse_annotations("a,b\n1,2\n", AnnotationFormat::Auto, "x").is_err());
    }
}
