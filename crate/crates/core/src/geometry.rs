//! Axis-aligned boxes and the IoU similarity family.
//!
//! Boxes are stored in corner form `(x_min, y_min, x_max, y_max)` with real
//! pixel coordinates. All similarity functions are pure and symmetric in their
//! arguments except [`ciou_gradient`], which differentiates with respect to the
//! first (predicted) box only.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `4 / pi^2`, normalises the squared arctan difference into `[0, 1]`.
const ASPECT_SCALE: f64 = 4.0 / (PI * PI);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(Error::InvalidBox {
                x_min,
                y_min,
                x_max,
                y_max,
            })
        }
    }

    /// Builds a box from its center and size.
    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        BBox::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    /// Builds a box from its top-left corner and size (COCO `bbox` layout).
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        BBox::new(x, y, x + w, y + h)
    }

    pub fn is_valid(&self) -> bool {
        [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|v| v.is_finite())
            && self.x_min <= self.x_max
            && self.y_min <= self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)
    }

    /// `(cx, cy, w, h)`.
    pub fn to_center(&self) -> [f64; 4] {
        let (cx, cy) = self.center();
        [cx, cy, self.width(), self.height()]
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn from_array(c: [f64; 4]) -> Result<Self> {
        BBox::new(c[0], c[1], c[2], c[3])
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox {
            x_min: self.x_min + dx,
            y_min: self.y_min + dy,
            x_max: self.x_max + dx,
            y_max: self.y_max + dy,
        }
    }

    /// Uniform scaling by `factor` about the point `(px, py)`.
    pub fn scale_about(&self, factor: f64, px: f64, py: f64) -> BBox {
        BBox {
            x_min: px + (self.x_min - px) * factor,
            y_min: py + (self.y_min - py) * factor,
            x_max: px + (self.x_max - px) * factor,
            y_max: py + (self.y_max - py) * factor,
        }
    }

    /// Smallest box containing both.
    pub fn enclosing(&self, other: &BBox) -> BBox {
        BBox {
            x_min: self.x_min.min(other.x_min),
            y_min: self.y_min.min(other.y_min),
            x_max: self.x_max.max(other.x_max),
            y_max: self.y_max.max(other.y_max),
        }
    }

    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let b = BBox {
            x_min: self.x_min.max(other.x_min),
            y_min: self.y_min.max(other.y_min),
            x_max: self.x_max.min(other.x_max),
            y_max: self.y_max.min(other.y_max),
        };
        (b.x_min <= b.x_max && b.y_min <= b.y_max).then_some(b)
    }

    pub fn contains(&self, other: &BBox) -> bool {
        self.x_min <= other.x_min && self.y_min <= other.y_min && self.x_max >= other.x_max && self.y_max >= other.y_max
    }

    /// Clamps the box to `[0, w] x [0, h]`.
    pub fn clip(&self, w: f64, h: f64) -> BBox {
        BBox {
            x_min: self.x_min.clamp(0.0, w),
            y_min: self.y_min.clamp(0.0, h),
            x_max: self.x_max.clamp(0.0, w),
            y_max: self.y_max.clamp(0.0, h),
        }
    }
}

/// How the denominator offset of the CIoU aspect penalty is chosen.
///
/// The penalty is `v^2 / ((1 - IoU) + beta)`. `StandardV` sets `beta = v`,
/// which is the usual CIoU trade-off weight `alpha = v / ((1 - IoU) + v)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaMode {
    #[default]
    StandardV,
    Fixed(f64),
}

impl BetaMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            BetaMode::StandardV => Ok(()),
            BetaMode::Fixed(b) if b.is_finite() && b >= 0.0 => Ok(()),
            BetaMode::Fixed(b) => Err(Error::param(format!("beta must be finite and >= 0, got {b}"))),
        }
    }
}

fn intersection_area(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    iw * ih
}

pub fn area(b: &BBox) -> f64 {
    b.area()
}

/// Intersection over union; 0 when the union has zero area.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

pub fn giou(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    let base = if union <= 0.0 { 0.0 } else { inter / union };
    let hull = a.enclosing(b).area();
    if hull <= 0.0 {
        base
    } else {
        base - (hull - union) / hull
    }
}

/// Squared center distance over squared enclosing diagonal; 0 when both vanish.
fn distance_term(a: &BBox, b: &BBox) -> f64 {
    let (acx, acy) = a.center();
    let (bcx, bcy) = b.center();
    let rho2 = (acx - bcx).powi(2) + (acy - bcy).powi(2);
    let hull = a.enclosing(b);
    let c2 = hull.width().powi(2) + hull.height().powi(2);
    if c2 <= 0.0 {
        0.0
    } else {
        rho2 / c2
    }
}

pub fn diou(a: &BBox, b: &BBox) -> f64 {
    iou(a, b) - distance_term(a, b)
}

fn require_aspect(b: &BBox) -> Result<()> {
    let (w, h) = (b.width(), b.height());
    if w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite() {
        Ok(())
    } else {
        Err(Error::DegenerateBox { width: w, height: h })
    }
}

/// Aspect-consistency term `v = 4/pi^2 (atan(w_b/h_b) - atan(w_a/h_a))^2`.
pub fn aspect_term(a: &BBox, b: &BBox) -> f64 {
    let d = (b.width() / b.height()).atan() - (a.width() / a.height()).atan();
    ASPECT_SCALE * d * d
}

fn aspect_penalty(iou: f64, v: f64, beta: BetaMode) -> f64 {
    if v == 0.0 {
        return 0.0;
    }
    let offset = match beta {
        BetaMode::StandardV => v,
        BetaMode::Fixed(b) => b,
    };
    v * v / ((1.0 - iou) + offset)
}

/// Complete IoU with the standard `beta = v` weighting.
pub fn ciou(a: &BBox, b: &BBox) -> Result<f64> {
    ciou_with(a, b, BetaMode::StandardV)
}

pub fn ciou_with(a: &BBox, b: &BBox, beta: BetaMode) -> Result<f64> {
    require_aspect(a)?;
    require_aspect(b)?;
    beta.validate()?;
    let iou = iou(a, b);
    let v = aspect_term(a, b);
    Ok(iou - distance_term(a, b) - aspect_penalty(iou, v, beta))
}

pub fn ciou_gradient(pred: &BBox, gt: &BBox) -> Result<[f64; 4]> {
    ciou_gradient_with(pred, gt, BetaMode::StandardV)
}

/// Analytic gradient of `ciou(pred, gt)` with respect to
/// `(x_min, y_min, x_max, y_max)` of `pred`.
///
/// Where a min/max switches branch exactly (coinciding edges) the one-sided
/// derivative for moving the predicted edge inward is reported. Edges that
/// touch with zero overlap width but positive overlap height (or vice versa)
/// have no one-sided convention that is consistent for both sides and return
/// [`Error::NonDifferentiable`].
pub fn ciou_gradient_with(pred: &BBox, gt: &BBox, beta: BetaMode) -> Result<[f64; 4]> {
    require_aspect(pred)?;
    require_aspect(gt)?;
    beta.validate()?;

    let (w, h) = (pred.width(), pred.height());
    let iw_raw = pred.x_max.min(gt.x_max) - pred.x_min.max(gt.x_min);
    let ih_raw = pred.y_max.min(gt.y_max) - pred.y_min.max(gt.y_min);
    if (iw_raw == 0.0 && ih_raw > 0.0) || (ih_raw == 0.0 && iw_raw > 0.0) {
        return Err(Error::NonDifferentiable("box edges exactly touching"));
    }

    // Intersection.
    let overlapping = iw_raw > 0.0 && ih_raw > 0.0;
    let (iw, ih) = if overlapping { (iw_raw, ih_raw) } else { (0.0, 0.0) };
    let active = |cond: bool, s: f64| if overlapping && cond { s } else { 0.0 };
    let d_iw = [
        active(pred.x_min >= gt.x_min, -1.0),
        active(pred.x_max <= gt.x_max, 1.0),
    ];
    let d_ih = [
        active(pred.y_min >= gt.y_min, -1.0),
        active(pred.y_max <= gt.y_max, 1.0),
    ];
    let inter = iw * ih;
    let d_inter = [d_iw[0] * ih, d_ih[0] * iw, d_iw[1] * ih, d_ih[1] * iw];

    let d_area = [-h, -w, h, w];
    let union = w * h + gt.area() - inter;
    let iou = inter / union;
    let mut d_iou = [0.0; 4];
    for i in 0..4 {
        let d_union = d_area[i] - d_inter[i];
        d_iou[i] = (d_inter[i] * union - inter * d_union) / (union * union);
    }

    // Center distance over enclosing diagonal.
    let (pcx, pcy) = pred.center();
    let (gcx, gcy) = gt.center();
    let (dx, dy) = (pcx - gcx, pcy - gcy);
    let rho2 = dx * dx + dy * dy;
    let d_rho2 = [dx, dy, dx, dy];
    let hull = pred.enclosing(gt);
    let (cw, ch) = (hull.width(), hull.height());
    let c2 = cw * cw + ch * ch;
    let d_c2 = [
        if pred.x_min < gt.x_min { -2.0 * cw } else { 0.0 },
        if pred.y_min < gt.y_min { -2.0 * ch } else { 0.0 },
        if pred.x_max > gt.x_max { 2.0 * cw } else { 0.0 },
        if pred.y_max > gt.y_max { 2.0 * ch } else { 0.0 },
    ];
    let mut d_dist = [0.0; 4];
    for i in 0..4 {
        d_dist[i] = (d_rho2[i] * c2 - rho2 * d_c2[i]) / (c2 * c2);
    }

    // Aspect consistency.
    let diff = (gt.width() / gt.height()).atan() - (w / h).atan();
    let v = ASPECT_SCALE * diff * diff;
    let dv_dtheta = -2.0 * ASPECT_SCALE * diff;
    let r2 = w * w + h * h;
    let (dtheta_dw, dtheta_dh) = (h / r2, -w / r2);
    let d_v = [
        -dv_dtheta * dtheta_dw,
        -dv_dtheta * dtheta_dh,
        dv_dtheta * dtheta_dw,
        dv_dtheta * dtheta_dh,
    ];

    let mut d_pen = [0.0; 4];
    if v != 0.0 {
        match beta {
            BetaMode::StandardV => {
                let den = 1.0 - iou + v;
                for i in 0..4 {
                    let d_den = -d_iou[i] + d_v[i];
                    d_pen[i] = (2.0 * v * d_v[i] * den - v * v * d_den) / (den * den);
                }
            }
            BetaMode::Fixed(b) => {
                let den = 1.0 - iou + b;
                for i in 0..4 {
                    d_pen[i] = (2.0 * v * d_v[i] * den + v * v * d_iou[i]) / (den * den);
                }
            }
        }
    }

    let mut grad = [0.0; 4];
    for i in 0..4 {
        grad[i] = d_iou[i] - d_dist[i] - d_pen[i];
    }
    Ok(grad)
}
