use serde::{Deserialize, Serialize};

use super::Image;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segmentation {
    /// Single-channel mask, 1 where gray >= threshold, else 0.
    pub mask: Image,
    pub threshold: u8,
}

/// Rounded luma `0.299 R + 0.587 G + 0.114 B`; single-channel input is copied.
pub fn to_gray(img: &Image) -> Result<Image> {
    img.validate()?;
    if img.channels == 1 {
        return Ok(img.clone());
    }
    let pixels = img
        .pixels
        .chunks_exact(3)
        .map(|p| {
            let y = 0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]);
            y.round().clamp(0.0, 255.0) as u8
        })
        .collect();
    Image::new(img.width, img.height, 1, pixels)
}

/// Threshold `t` maximising the between-class variance of `{v < t}` and
/// `{v >= t}` over a 256-bin histogram; the lowest such `t` wins.
pub fn otsu_threshold(hist: &[u64; 256]) -> u8 {
    let total: u64 = hist.iter().sum();
    let sum_all: u128 = hist.iter().enumerate().map(|(v, &n)| v as u128 * n as u128).sum();
    let mut best = (0u8, 0.0f64);
    let (mut n0, mut s0) = (0u64, 0u128);
    for t in 1..256usize {
        n0 += hist[t - 1];
        s0 += (t as u128 - 1) * hist[t - 1] as u128;
        let n1 = total - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let s1 = sum_all - s0;
        // w0 w1 (mu0 - mu1)^2 up to the constant factor 1 / total^2
        let diff = n0 as i128 * s1 as i128 - n1 as i128 * s0 as i128;
        let var = (diff as f64) * (diff as f64) / (n0 as f64 * n1 as f64);
        if var > best.1 {
            best = (t as u8, var);
        }
    }
    best.0
}

/// Manual threshold if given, otherwise the automatic between-class-variance
/// threshold of the gray image.
pub fn segment_water_boundary(img: &Image, manual_threshold: Option<u8>) -> Result<Segmentation> {
    let gray = to_gray(img)?;
    let threshold = match manual_threshold {
        Some(t) => t,
        None => {
            let mut hist = [0u64; 256];
            for &p in &gray.pixels {
                hist[p as usize] += 1;
            }
            otsu_threshold(&hist)
        }
    };
    let pixels = gray.pixels.iter().map(|&p| u8::from(p >= threshold)).collect();
    Ok(Segmentation {
        mask: Image::new(gray.width, gray.height, 1, pixels)?,
        threshold,
    })
}
