use crate::error::Result;
use crate::postprocess::Detection;
use crate::preprocess::Image;

const PALETTE: [[u8; 3]; 8] = [
    [255, 64, 64],
    [64, 200, 64],
    [64, 128, 255],
    [255, 200, 0],
    [200, 64, 255],
    [0, 220, 220],
    [255, 128, 0],
    [255, 255, 255],
];

/// Fixed color per class id.
pub fn class_color(class_id: u32) -> [u8; 3] {
    PALETTE[class_id as usize % PALETTE.len()]
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Overlay {
    /// Input with box outlines drawn in; gray input is promoted to RGB only
    /// when there is something to draw.
    pub image: Image,
    pub svg: String,
}

fn label(d: &Detection) -> String {
    let b = d.bbox;
    format!(
        "{:.1},{:.1} {:.1}\u{d7}{:.1} s={:.2}",
        b.x_min,
        b.y_min,
        b.width(),
        b.height(),
        d.score
    )
}

fn to_rgb(img: &Image) -> Image {
    if img.channels == 3 {
        return img.clone();
    }
    Image {
        width: img.width,
        height: img.height,
        channels: 3,
        pixels: img.pixels.iter().flat_map(|&p| [p, p, p]).collect(),
    }
}

/// Draws one-pixel outlines whose corners are the rounded box corners
/// (clamped to the image) and builds a matching SVG with a text label
/// `x,y w×h s=score` per detection.
pub fn render_overlay(img: &Image, dets: &[Detection]) -> Result<Overlay> {
    img.validate()?;
    let (w, h) = (img.width, img.height);
    let mut svg =
        format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n");
    if dets.is_empty() {
        svg.push_str("</svg>\n");
        return Ok(Overlay {
            image: img.clone(),
            svg,
        });
    }
    let mut out = to_rgb(img);
    let px = |v: f64, n: usize| (v.round().max(0.0) as usize).min(n - 1);
    for d in dets {
        let [r, g, b] = class_color(d.class_id);
        let (x0, y0) = (px(d.bbox.x_min, w), px(d.bbox.y_min, h));
        let (x1, y1) = (px(d.bbox.x_max, w), px(d.bbox.y_max, h));
        let mut put = |x: usize, y: usize| {
            out.set(x, y, 0, r);
            out.set(x, y, 1, g);
            out.set(x, y, 2, b);
        };
        for x in x0..=x1 {
            put(x, y0);
            put(x, y1);
        }
        for y in y0..=y1 {
            put(x0, y);
            put(x1, y);
        }
        let color = format!("#{r:02x}{g:02x}{b:02x}");
        let bb = d.bbox;
        svg.push_str(&format!(
            "  <rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1\"/>\n",
            bb.x_min,
            bb.y_min,
            bb.width(),
            bb.height()
        ));
        svg.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\" fill=\"{color}\" font-family=\"monospace\" font-size=\"10\">{}</text>\n",
            bb.x_min,
            (bb.y_min - 2.0).max(10.0),
            label(d)
        ));
    }
    svg.push_str("</svg>\n");
    Ok(Overlay { image: out, svg })
}
