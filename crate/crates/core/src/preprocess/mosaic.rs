use super::letterbox::{resize_bilinear, LetterboxTransform};
use super::{Image, LabeledBox, LabeledImage};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::rng::{int_inclusive, seeded};

/// A box survives the quadrant clip only if it keeps this fraction of its area.
pub const MOSAIC_MIN_RETAINED: f64 = 0.2;

/// Pad value for canvas areas no tile covers.
const MOSAIC_PAD: u8 = 114;

/// Composites four items around a seeded center drawn uniformly from the
/// integer points of the middle half of the canvas.
pub fn mosaic(items: &[LabeledImage], canvas_w: usize, canvas_h: usize, seed: u64) -> Result<LabeledImage> {
    check_canvas(canvas_w, canvas_h)?;
    let mut rng = seeded(seed);
    let axis = |n: usize, rng: &mut _| {
        let lo = (n / 4).max(1) as u64;
        let hi = (3 * n / 4).clamp(lo as usize, n - 1) as u64;
        int_inclusive(rng, lo, hi) as usize
    };
    let cx = axis(canvas_w, &mut rng);
    let cy = axis(canvas_h, &mut rng);
    mosaic_with_center(items, canvas_w, canvas_h, cx, cy)
}

fn check_canvas(w: usize, h: usize) -> Result<()> {
    if w < 2 || h < 2 {
        return Err(Error::param(format!("mosaic canvas must be at least 2x2, got {w}x{h}")));
    }
    Ok(())
}

/// Mosaic with an explicit split point. Items fill the top-left, top-right,
/// bottom-left and bottom-right quadrants in that order, each letterboxed into
/// its quadrant. Boxes are clipped to their quadrant and dropped when less
/// than [`MOSAIC_MIN_RETAINED`] of their area remains.
pub fn mosaic_with_center(
    items: &[LabeledImage],
    canvas_w: usize,
    canvas_h: usize,
    cx: usize,
    cy: usize,
) -> Result<LabeledImage> {
    if items.len() != 4 {
        return Err(Error::param(format!(
            "mosaic takes exactly 4 images, got {}",
            items.len()
        )));
    }
    check_canvas(canvas_w, canvas_h)?;
    if cx == 0 || cy == 0 || cx >= canvas_w || cy >= canvas_h {
        return Err(Error::param(format!("mosaic center ({cx}, {cy}) must be interior")));
    }
    let channels = items[0].image.channels;
    if items.iter().any(|it| it.image.channels != channels) {
        return Err(Error::shape("mosaic inputs disagree on channel count"));
    }
    for it in items {
        it.validate()?;
    }
    let quads = [
        (0, 0, cx, cy),
        (cx, 0, canvas_w - cx, cy),
        (0, cy, cx, canvas_h - cy),
        (cx, cy, canvas_w - cx, canvas_h - cy),
    ];
    let mut canvas = Image::filled(canvas_w, canvas_h, channels, MOSAIC_PAD)?;
    let mut boxes = Vec::new();
    for (it, &(ox, oy, qw, qh)) in items.iter().zip(&quads) {
        let t = LetterboxTransform::new(it.image.width, it.image.height, qw, qh)?;
        let content = resize_bilinear(&it.image, t.content_w, t.content_h);
        canvas.blit(&content, ox + t.pad_x as usize, oy + t.pad_y as usize)?;
        let quad = BBox {
            x_min: ox as f64,
            y_min: oy as f64,
            x_max: (ox + qw) as f64,
            y_max: (oy + qh) as f64,
        };
        for b in &it.boxes {
            let moved = t.forward(&b.bbox).translate(ox as f64, oy as f64);
            let Some(clipped) = moved.intersection(&quad) else {
                continue;
            };
            if clipped.width() > 0.0 && clipped.height() > 0.0 && clipped.area() >= MOSAIC_MIN_RETAINED * moved.area() {
                boxes.push(LabeledBox {
                    bbox: clipped,
                    class_id: b.class_id,
                });
            }
        }
    }
    Ok(LabeledImage { image: canvas, boxes })
}
