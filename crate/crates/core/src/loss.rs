//! Box regression objective: CIoU loss plus the random-anchor (RAIoU) term,
//! and the YOLO-style classification / objectness cross-entropy.
//!
//! The random-anchor term measures how much a prediction resembles boxes of
//! the ground truth's size placed elsewhere in the image. It is the negated
//! mean CIoU between the prediction and `num_background_samples` such boxes,
//! so a prediction that sits on background scores close to `-1` and a
//! prediction far from every background box scores above zero.
//!
//! ```text
//! total = (1 - CIoU(pred, gt)) + sigma * RAIoU(pred) + l_cls + l_conf
//! ```

use serde::{Deserialize, Serialize};

use crate::anchors::sample_background_boxes;
use crate::error::{Error, Result};
use crate::geometry::{ciou_gradient_with, ciou_with, BBox, BetaMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub sigma: f64,
    pub num_background_samples: usize,
    pub rng_seed: u64,
    pub beta_mode: BetaMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            sigma: 0.5,
            num_background_samples: 8,
            rng_seed: 0,
            beta_mode: BetaMode::StandardV,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.sigma) {
            return Err(Error::param(format!("sigma must lie in [0, 1], got {}", self.sigma)));
        }
        if self.num_background_samples == 0 {
            return Err(Error::param("num_background_samples must be >= 1"));
        }
        self.beta_mode.validate()
    }
}

/// Image extent the background boxes are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub width: f64,
    pub height: f64,
}

impl Frame {
    pub fn new(width: f64, height: f64) -> Self {
        Frame { width, height }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_ciou: f64,
    pub l_raiou: f64,
    pub l_cls: f64,
    pub l_conf: f64,
    pub total: f64,
}

/// Logits and binary targets for the classification and objectness heads.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HeadTargets {
    pub cls_logits: Vec<f64>,
    pub cls_targets: Vec<bool>,
    pub conf_logits: Vec<f64>,
    pub conf_targets: Vec<bool>,
}

pub fn ciou_loss(pred: &BBox, gt: &BBox) -> Result<f64> {
    ciou_loss_with(pred, gt, BetaMode::StandardV)
}

pub fn ciou_loss_with(pred: &BBox, gt: &BBox, beta: BetaMode) -> Result<f64> {
    Ok(1.0 - ciou_with(pred, gt, beta)?)
}

/// The frozen background boxes for `(gt, frame, cfg)`.
pub fn background_boxes(gt: &BBox, frame: Frame, cfg: &LossConfig) -> Result<Vec<BBox>> {
    cfg.validate()?;
    sample_background_boxes(gt, frame.width, frame.height, cfg.num_background_samples, cfg.rng_seed)
}

fn raiou_over(pred: &BBox, backgrounds: &[BBox], beta: BetaMode) -> Result<f64> {
    let mut sum = 0.0;
    for bg in backgrounds {
        sum += ciou_with(pred, bg, beta)?;
    }
    Ok(-sum / backgrounds.len() as f64)
}

/// Negated mean CIoU between `pred` and same-size background boxes.
/// Lies in `[-1, 2)`.
pub fn raiou(pred: &BBox, gt: &BBox, frame: Frame, cfg: &LossConfig) -> Result<f64> {
    let bgs = background_boxes(gt, frame, cfg)?;
    raiou_over(pred, &bgs, cfg.beta_mode)
}

pub fn combined_loss(pred: &BBox, gt: &BBox, frame: Frame, cfg: &LossConfig) -> Result<LossBreakdown> {
    cfg.validate()?;
    let l_ciou = ciou_loss_with(pred, gt, cfg.beta_mode)?;
    let l_raiou = raiou(pred, gt, frame, cfg)?;
    Ok(assemble(cfg.sigma, l_ciou, l_raiou, 0.0, 0.0))
}

/// [`combined_loss`] with the classification and objectness terms added.
pub fn combined_loss_with_heads(
    pred: &BBox,
    gt: &BBox,
    frame: Frame,
    cfg: &LossConfig,
    heads: &HeadTargets,
) -> Result<LossBreakdown> {
    let boxes = combined_loss(pred, gt, frame, cfg)?;
    let l_cls = cls_conf_loss(&heads.cls_logits, &heads.cls_targets)?;
    let l_conf = cls_conf_loss(&heads.conf_logits, &heads.conf_targets)?;
    Ok(assemble(cfg.sigma, boxes.l_ciou, boxes.l_raiou, l_cls, l_conf))
}

fn assemble(sigma: f64, l_ciou: f64, l_raiou: f64, l_cls: f64, l_conf: f64) -> LossBreakdown {
    LossBreakdown {
        l_ciou,
        l_raiou,
        l_cls,
        l_conf,
        total: l_ciou + sigma * l_raiou + l_cls + l_conf,
    }
}

/// Mean binary cross-entropy with logits.
pub fn cls_conf_loss(logits: &[f64], targets: &[bool]) -> Result<f64> {
    if logits.len() != targets.len() {
        return Err(Error::shape(format!(
            "{} logits vs {} targets",
            logits.len(),
            targets.len()
        )));
    }
    if logits.is_empty() {
        return Err(Error::shape("cross-entropy needs at least one element"));
    }
    let sum: f64 = logits
        .iter()
        .zip(targets)
        .map(|(&x, &t)| {
            let t = if t { 1.0 } else { 0.0 };
            // log(1 + e^x) - t x, written to avoid overflow
            x.max(0.0) - x * t + (-x.abs()).exp().ln_1p()
        })
        .sum();
    Ok(sum / logits.len() as f64)
}

/// Gradient of [`combined_loss`]'s total with respect to `pred`, background
/// samples held fixed.
pub fn combined_loss_gradient(pred: &BBox, gt: &BBox, frame: Frame, cfg: &LossConfig) -> Result<[f64; 4]> {
    let beta = cfg.beta_mode;
    let bgs = background_boxes(gt, frame, cfg)?;
    let main = ciou_gradient_with(pred, gt, beta)?;
    let mut bg_sum = [0.0; 4];
    for bg in &bgs {
        let g = ciou_gradient_with(pred, bg, beta)?;
        for i in 0..4 {
            bg_sum[i] += g[i];
        }
    }
    let n = bgs.len() as f64;
    let mut grad = [0.0; 4];
    for i in 0..4 {
        grad[i] = -main[i] + cfg.sigma * (-bg_sum[i] / n);
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn ciou_loss_examples() {
        let a = b(0.0, 0.0, 2.0, 2.0);
        assert_eq!(ciou_loss(&a, &a).unwrap(), 0.0);
        assert!(ciou_loss(&a, &b(50.0, 50.0, 52.0, 53.0)).unwrap() > 1.0);
        // IoU 1/7, rho^2 = 2, c^2 = 18, v = 0.
        let l = ciou_loss(&a, &b(1.0, 1.0, 3.0, 3.0)).unwrap();
        assert!((l - (1.0 - (1.0 / 7.0 - 2.0 / 18.0))).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        let mut cfg = LossConfig {
            sigma: 1.5,
            ..LossConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg = LossConfig {
            num_background_samples: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn raiou_on_sampled_background_is_minus_one() {
        let gt = b(40.0, 40.0, 60.0, 60.0);
        let frame = Frame::new(100.0, 100.0);
        let cfg = LossConfig {
            num_background_samples: 1,
            rng_seed: 5,
            ..Default::default()
        };
        let bg = background_boxes(&gt, frame, &cfg).unwrap()[0];
        assert_eq!(raiou(&bg, &gt, frame, &cfg).unwrap(), -1.0);
    }

    #[test]
    fn raiou_deterministic() {
        let gt = b(40.0, 40.0, 60.0, 60.0);
        let pred = b(42.0, 38.0, 61.0, 63.0);
        let frame = Frame::new(100.0, 100.0);
        let cfg = LossConfig {
            rng_seed: 99,
            ..Default::default()
        };
        let a = raiou(&pred, &gt, frame, &cfg).unwrap();
        let c = raiou(&pred, &gt, frame, &cfg).unwrap();
        assert_eq!(a.to_bits(), c.to_bits());
        assert!((-1.0..2.0).contains(&a));
    }

    #[test]
    fn raiou_too_small_frame() {
        let gt = b(0.0, 0.0, 100.0, 100.0);
        let r = raiou(&gt, &gt, Frame::new(100.0, 100.0), &LossConfig::default());
        assert!(matches!(r, Err(Error::EmptyRegion(_))));
    }

    #[test]
    fn sigma_zero_is_plain_ciou_loss() {
        let gt = b(40.0, 40.0, 60.0, 60.0);
        let pred = b(41.0, 44.0, 63.0, 58.0);
        let cfg = LossConfig {
            sigma: 0.0,
            ..Default::default()
        };
        let br = combined_loss(&pred, &gt, Frame::new(100.0, 100.0), &cfg).unwrap();
        assert_eq!(br.total.to_bits(), ciou_loss(&pred, &gt).unwrap().to_bits());
        assert_eq!((br.l_cls, br.l_conf), (0.0, 0.0));
    }

    #[test]
    fn sigma_linearity() {
        let gt = b(40.0, 40.0, 60.0, 60.0);
        let frame = Frame::new(100.0, 100.0);
        let lo = LossConfig {
            sigma: 0.2,
            rng_seed: 42,
            ..Default::default()
        };
        let hi = LossConfig {
            sigma: 0.8,
            ..lo.clone()
        };
        let a = combined_loss(&gt, &gt, frame, &lo).unwrap();
        let c = combined_loss(&gt, &gt, frame, &hi).unwrap();
        assert!((c.total - a.total - 0.6 * a.l_raiou).abs() < 1e-12);
        assert_eq!(a.l_ciou, 0.0);
    }

    #[test]
    fn disjoint_backgrounds_raise_the_total() {
        // Negated similarity: backgrounds that do not overlap pred have
        // negative CIoU, so the term is positive and sigma = 1 adds to the loss.
        let gt = b(45.0, 45.0, 55.0, 55.0);
        let frame = Frame::new(100.0, 100.0);
        let cfg = (0..200u64)
            .map(|seed| LossConfig {
                sigma: 1.0,
                rng_seed: seed,
                ..Default::default()
            })
            .find(|cfg| {
                background_boxes(&gt, frame, cfg)
                    .unwrap()
                    .iter()
                    .all(|bg| crate::geometry::iou(bg, &gt) == 0.0)
            })
            .expect("some seed places every background clear of gt");
        let with = combined_loss(&gt, &gt, frame, &cfg).unwrap();
        let without = combined_loss(
            &gt,
            &gt,
            frame,
            &LossConfig {
                sigma: 0.0,
                ..cfg.clone()
            },
        )
        .unwrap();
        assert!(with.l_raiou > 0.0);
        assert!(with.total > without.total);
        assert_eq!(without.total, 0.0);
    }

    #[test]
    fn bce_examples() {
        let v = cls_conf_loss(&[10.0, -10.0, 10.0], &[true, false, true]).unwrap();
        assert!(v < 1e-4);
        let v = cls_conf_loss(&[0.0, 0.0], &[true, false]).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
        // -(ln sigmoid(2) + ln(1 - sigmoid(1))) / 2
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let expect = -((sig(2.0)).ln() + (1.0 - sig(1.0)).ln()) / 2.0;
        let v = cls_conf_loss(&[2.0, 1.0], &[true, false]).unwrap();
        assert!((v - expect).abs() < 1e-14);
        assert!(cls_conf_loss(&[1.0], &[true, false]).is_err());
        assert!(cls_conf_loss(&[], &[]).is_err());
        // no overflow at extreme logits
        assert!(cls_conf_loss(&[800.0], &[false]).unwrap().is_finite());
    }

    #[test]
    fn heads_add_to_total() {
        let gt = b(40.0, 40.0, 60.0, 60.0);
        let pred = b(41.0, 44.0, 63.0, 58.0);
        let heads = HeadTargets {
            cls_logits: vec![0.0],
            cls_targets: vec![true],
            conf_logits: vec![0.0, 0.0],
            conf_targets: vec![true, false],
        };
        let cfg = LossConfig::default();
        let frame = Frame::new(100.0, 100.0);
        let base = combined_loss(&pred, &gt, frame, &cfg).unwrap();
        let full = combined_loss_with_heads(&pred, &gt, frame, &cfg, &heads).unwrap();
        assert!((full.total - base.total - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn gradient_sigma_zero_is_negated_ciou_gradient() {
        let gt = b(40.0, 40.0, 60.0, 60.0);
        let pred = b(41.0, 44.0, 63.0, 58.0);
        let cfg = LossConfig {
            sigma: 0.0,
            ..Default::default()
        };
        let g = combined_loss_gradient(&pred, &gt, Frame::new(100.0, 100.0), &cfg).unwrap();
        let c = crate::geometry::ciou_gradient(&pred, &gt).unwrap();
        for i in 0..4 {
            assert_eq!(g[i], -c[i]);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let gt = b(40.0, 40.0, 60.0, 60.0);
        let pred = b(37.3, 44.1, 58.2, 66.9);
        let frame = Frame::new(100.0, 100.0);
        let cfg = LossConfig {
            sigma: 0.7,
            rng_seed: 3,
            ..Default::default()
        };
        let g = combined_loss_gradient(&pred, &gt, frame, &cfg).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..4 {
            let (mut p, mut m) = (pred.to_array(), pred.to_array());
            p[i] += h;
            m[i] -= h;
            let fp = combined_loss(&BBox::from_array(p).unwrap(), &gt, frame, &cfg)
                .unwrap()
                .total;
            let fm = combined_loss(&BBox::from_array(m).unwrap(), &gt, frame, &cfg)
                .unwrap()
                .total;
            worst = worst.max(((fp - fm) / (2.0 * h) - g[i]).abs());
        }
        assert!(worst / scale < 1e-4, "{worst} / {scale}");
    }

    /// Scalar re-derivation: replay the sampler stream and evaluate CIoU from
    /// first principles for the seed-42 configuration.
    fn golden_oracle() -> f64 {
        use rand::{RngCore, SeedableRng};
        use std::f64::consts::PI;
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let mut u = || (r.next_u64() >> 11) as f64 / 9007199254740992.0;
        let (g0, g1) = (40.0f64, 60.0f64);
        // left, right, below, above
        let areas = [
            g0 * 100.0,
            (100.0 - g1) * 100.0,
            (g1 - g0) * g0,
            (g1 - g0) * (100.0 - g1),
        ];
        let total: f64 = areas.iter().sum();
        let mut acc = 0.0;
        for _ in 0..8 {
            let mut t = u() * total;
            let mut side = 0;
            while side < 3 && t >= areas[side] {
                t -= areas[side];
                side += 1;
            }
            let (ux, uy) = (u(), u());
            let (px, py) = match side {
                0 => (ux * g0, uy * 100.0),
                1 => (g1 + ux * (100.0 - g1), uy * 100.0),
                2 => (g0 + ux * (g1 - g0), uy * g0),
                _ => (g0 + ux * (g1 - g0), g1 + uy * (100.0 - g1)),
            };
            let q = 65536.0;
            let (dx, dy) = match side {
                0 => (((px - 50.0) * q).floor() / q, ((py - 50.0) * q).round() / q),
                1 => (((px - 50.0) * q).ceil() / q, ((py - 50.0) * q).round() / q),
                2 => (((px - 50.0) * q).round() / q, ((py - 50.0) * q).floor() / q),
                _ => (((px - 50.0) * q).round() / q, ((py - 50.0) * q).ceil() / q),
            };
            // pred = gt = (40,40,60,60); background = gt shifted by (dx, dy)
            let iw = (20.0 - dx.abs()).max(0.0);
            let ih = (20.0 - dy.abs()).max(0.0);
            let inter = iw * ih;
            let iou = inter / (800.0 - inter);
            let c2 = (20.0 + dx.abs()).powi(2) + (20.0 + dy.abs()).powi(2);
            let rho2 = dx * dx + dy * dy;
            // equal aspect ratios: the arctan term is 4/pi^2 * 0
            let v = 4.0 / (PI * PI) * (1.0f64.atan() - 1.0f64.atan()).powi(2);
            acc += iou - rho2 / c2 - v;
        }
        -acc / 8.0
    }

    #[test]
    fn raiou_golden_seed_42() {
        let gt = b(40.0, 40.0, 60.0, 60.0);
        let cfg = LossConfig {
            rng_seed: 42,
            num_background_samples: 8,
            ..Default::default()
        };
        let got = raiou(&gt, &gt, Frame::new(100.0, 100.0), &cfg).unwrap();
        let oracle = golden_oracle();
        assert!((got - oracle).abs() < 1e-12, "{got} vs {oracle}");
        assert!((got - RAIOU_GOLDEN_SEED_42).abs() < 1e-12, "{got}");
    }

    const RAIOU_GOLDEN_SEED_42: f64 = 0.37224413490468516;
}
