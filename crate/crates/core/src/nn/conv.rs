use serde::{Deserialize, Serialize};

use super::{Block, FeatureMap};
use crate::error::{Error, Result};
use crate::rng::{self, SeededRng};

/// 2-D convolution weights. `kernel` is `(c_out, c_in, k, k)` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvParams {
    pub c_out: usize,
    pub c_in: usize,
    pub k: usize,
    pub dilation: usize,
    pub stride: usize,
    pub padding: usize,
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Spatial extent covered by a `k`-tap kernel with the given dilation.
pub fn effective_extent(k: usize, dilation: usize) -> usize {
    k + (k - 1) * (dilation - 1)
}

/// `floor((size + 2 pad - extent) / stride) + 1`, or `None` if it would be < 1.
pub fn conv_output_size(size: usize, k: usize, dilation: usize, padding: usize, stride: usize) -> Option<usize> {
    let ext = effective_extent(k, dilation);
    let padded = size + 2 * padding;
    (padded >= ext).then(|| (padded - ext) / stride + 1)
}

impl ConvParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        c_out: usize,
        c_in: usize,
        k: usize,
        dilation: usize,
        stride: usize,
        padding: usize,
        kernel: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        let p = ConvParams {
            c_out,
            c_in,
            k,
            dilation,
            stride,
            padding,
            kernel,
            bias,
        };
        p.validate()?;
        Ok(p)
    }

    /// Kernel and bias uniform in `[-0.5, 0.5)`.
    pub fn random(
        c_out: usize,
        c_in: usize,
        k: usize,
        dilation: usize,
        padding: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let kernel = (0..c_out * c_in * k * k)
            .map(|_| rng::uniform(rng, -0.5, 0.5))
            .collect();
        let bias = (0..c_out).map(|_| rng::uniform(rng, -0.5, 0.5)).collect();
        ConvParams::new(c_out, c_in, k, dilation, 1, padding, kernel, bias)
    }

    /// Same-padded (stride 1) identity map on `channels` channels.
    pub fn identity(channels: usize, k: usize) -> Result<Self> {
        let mut kernel = vec![0.0; channels * channels * k * k];
        let mid = k / 2;
        for c in 0..channels {
            kernel[((c * channels + c) * k + mid) * k + mid] = 1.0;
        }
        ConvParams::new(channels, channels, k, 1, 1, k / 2, kernel, vec![0.0; channels])
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k.is_multiple_of(2) {
            return Err(Error::param(format!("kernel size must be odd, got {}", self.k)));
        }
        if self.dilation == 0 || self.stride == 0 {
            return Err(Error::param("dilation and stride must be >= 1"));
        }
        if self.c_out == 0 || self.c_in == 0 {
            return Err(Error::param("channel counts must be >= 1"));
        }
        if self.kernel.len() != self.c_out * self.c_in * self.k * self.k {
            return Err(Error::shape(format!(
                "kernel has {} values, expected {}",
                self.kernel.len(),
                self.c_out * self.c_in * self.k * self.k
            )));
        }
        if self.bias.len() != self.c_out {
            return Err(Error::shape(format!(
                "bias has {} values, expected {}",
                self.bias.len(),
                self.c_out
            )));
        }
        if self.kernel.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(Error::param("non-finite convolution weight"));
        }
        Ok(())
    }

    #[inline]
    fn weight(&self, o: usize, c: usize, ky: usize, kx: usize) -> f64 {
        self.kernel[((o * self.c_in + c) * self.k + ky) * self.k + kx]
    }

    fn output_dims(&self, x: &FeatureMap) -> Result<(usize, usize)> {
        if x.c != self.c_in {
            return Err(Error::shape(format!(
                "conv expects {} input channels, got {}",
                self.c_in, x.c
            )));
        }
        let oh = conv_output_size(x.h, self.k, self.dilation, self.padding, self.stride);
        let ow = conv_output_size(x.w, self.k, self.dilation, self.padding, self.stride);
        match (oh, ow) {
            (Some(oh), Some(ow)) => Ok((oh, ow)),
            _ => Err(Error::shape(format!(
                "{}x{} input too small for extent {} with padding {}",
                x.h,
                x.w,
                effective_extent(self.k, self.dilation),
                self.padding
            ))),
        }
    }

    /// Input coordinate hit by tap `t` at output position `o`, if in bounds.
    #[inline]
    fn source(&self, o: usize, t: usize, size: usize) -> Option<usize> {
        let pos = (o * self.stride + t * self.dilation) as isize - self.padding as isize;
        (pos >= 0 && (pos as usize) < size).then_some(pos as usize)
    }
}

/// Cross-correlation with dilated taps and zero padding.
pub fn dilated_conv2d(x: &FeatureMap, p: &ConvParams) -> Result<FeatureMap> {
    p.validate()?;
    let (oh, ow) = p.output_dims(x)?;
    let mut out = FeatureMap::zeros(x.n, p.c_out, oh, ow);
    for n in 0..x.n {
        for o in 0..p.c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = p.bias[o];
                    for c in 0..p.c_in {
                        for ky in 0..p.k {
                            let Some(iy) = p.source(oy, ky, x.h) else { continue };
                            for kx in 0..p.k {
                                let Some(ix) = p.source(ox, kx, x.w) else { continue };
                                acc += p.weight(o, c, ky, kx) * x.at(n, c, iy, ix);
                            }
                        }
                    }
                    let idx = out.index(n, o, oy, ox);
                    out.data[idx] = acc;
                }
            }
        }
    }
    Ok(out)
}

/// Input gradient of [`dilated_conv2d`] (the transposed convolution).
pub fn dilated_conv2d_backward(x_shape: [usize; 4], p: &ConvParams, grad_out: &FeatureMap) -> Result<FeatureMap> {
    let [n_b, c_in, h, w] = x_shape;
    let probe = FeatureMap::zeros(1, c_in, h, w);
    let (oh, ow) = p.output_dims(&probe)?;
    if grad_out.shape() != [n_b, p.c_out, oh, ow] {
        return Err(Error::shape(format!(
            "gradient shape {:?}, expected {:?}",
            grad_out.shape(),
            [n_b, p.c_out, oh, ow]
        )));
    }
    let mut gx = FeatureMap::zeros(n_b, c_in, h, w);
    for n in 0..n_b {
        for o in 0..p.c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = grad_out.at(n, o, oy, ox);
                    for c in 0..c_in {
                        for ky in 0..p.k {
                            let Some(iy) = p.source(oy, ky, h) else { continue };
                            for kx in 0..p.k {
                                let Some(ix) = p.source(ox, kx, w) else { continue };
                                let idx = gx.index(n, c, iy, ix);
                                gx.data[idx] += p.weight(o, c, ky, kx) * g;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(gx)
}

impl Block for ConvParams {
    fn forward(&self, x: &FeatureMap) -> Result<FeatureMap> {
        dilated_conv2d(x, self)
    }

    fn backward_input(&self, x: &FeatureMap, grad_out: &FeatureMap) -> Result<FeatureMap> {
        dilated_conv2d_backward(x.shape(), self, grad_out)
    }
}
