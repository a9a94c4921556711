//! Reference forward passes (and input gradients) for the architectural
//! blocks: squeeze-excitation, two-stage CSP and dilated convolution.
//!
//! Everything runs on a small dense `f64` tensor in `(n, c, h, w)` row-major
//! order. Loops use a fixed summation order so results are bit-reproducible.

mod conv;
mod csp;
mod gradcheck;
mod se;

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, SeededRng};

pub use conv::{conv_output_size, dilated_conv2d, dilated_conv2d_backward, effective_extent, ConvParams};
pub use csp::{csp2_block, csp2_output_channels, Csp2Params, CspStage};
pub use gradcheck::finite_diff_check;
pub use se::{global_avg_pool, se_block, se_gates, SeParams};

/// Negative-side slope of the leaky rectifier used inside the CSP sub-paths.
pub const LEAKY_SLOPE: f64 = 0.1;

pub fn leaky_relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        LEAKY_SLOPE * v
    }
}

fn leaky_relu_grad(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(n: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        let fm = FeatureMap { n, c, h, w, data };
        fm.validate()?;
        Ok(fm)
    }

    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        FeatureMap {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    pub fn filled(n: usize, c: usize, h: usize, w: usize, value: f64) -> Self {
        FeatureMap {
            n,
            c,
            h,
            w,
            data: vec![value; n * c * h * w],
        }
    }

    /// Values uniform in `[-0.5, 0.5)`.
    pub fn random(n: usize, c: usize, h: usize, w: usize, rng: &mut SeededRng) -> Self {
        let data = (0..n * c * h * w).map(|_| rng::uniform(rng, -0.5, 0.5)).collect();
        FeatureMap { n, c, h, w, data }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.c == 0 || self.h == 0 || self.w == 0 {
            return Err(Error::shape(format!("empty dimension in {:?}", self.shape())));
        }
        if self.data.len() != self.n * self.c * self.h * self.w {
            return Err(Error::shape(format!(
                "data length {} does not match shape {:?}",
                self.data.len(),
                self.shape()
            )));
        }
        if let Some(i) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::shape(format!("non-finite value at flat index {i}")));
        }
        Ok(())
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(n, c, y, x)]
    }

    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let start = self.index(n, c, 0, 0);
        &self.data[start..start + self.h * self.w]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> FeatureMap {
        FeatureMap {
            n: self.n,
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|v| f(*v)).collect(),
        }
    }

    /// Channels `[from, to)` as a new map.
    pub fn slice_channels(&self, from: usize, to: usize) -> Result<FeatureMap> {
        if from >= to || to > self.c {
            return Err(Error::shape(format!("channel range {from}..{to} of {}", self.c)));
        }
        let plane = self.h * self.w;
        let mut data = Vec::with_capacity(self.n * (to - from) * plane);
        for n in 0..self.n {
            let start = self.index(n, from, 0, 0);
            data.extend_from_slice(&self.data[start..start + (to - from) * plane]);
        }
        Ok(FeatureMap {
            n: self.n,
            c: to - from,
            h: self.h,
            w: self.w,
            data,
        })
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(parts: &[&FeatureMap]) -> Result<FeatureMap> {
        let first = parts.first().ok_or_else(|| Error::shape("nothing to concatenate"))?;
        let (n, h, w) = (first.n, first.h, first.w);
        if parts.iter().any(|p| p.n != n || p.h != h || p.w != w) {
            return Err(Error::shape("concat parts disagree on batch or spatial size"));
        }
        let c: usize = parts.iter().map(|p| p.c).sum();
        let mut data = Vec::with_capacity(n * c * h * w);
        for b in 0..n {
            for p in parts {
                let start = p.index(b, 0, 0, 0);
                data.extend_from_slice(&p.data[start..start + p.c * h * w]);
            }
        }
        Ok(FeatureMap { n, c, h, w, data })
    }

    pub fn add_assign(&mut self, other: &FeatureMap) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(format!("{:?} vs {:?}", self.shape(), other.shape())));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }
}

/// A differentiable block with a forward pass and the gradient of a scalar
/// objective with respect to its input.
pub trait Block {
    fn forward(&self, x: &FeatureMap) -> Result<FeatureMap>;

    /// Given `grad_out = dL/d forward(x)`, returns `dL/dx`.
    fn backward_input(&self, x: &FeatureMap, grad_out: &FeatureMap) -> Result<FeatureMap>;
}

/// Serialises block parameters (or a feature map) as pretty JSON.
pub fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::parse(path.display().to_string(), e))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))
}
