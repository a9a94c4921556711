use serde::{Deserialize, Serialize};

use super::{sigmoid, Block, FeatureMap};
use crate::error::{Error, Result};
use crate::rng::{self, SeededRng};

/// Squeeze-excitation weights. `w1` is `(c / r) x c`, `w2` is `c x (c / r)`,
/// both row-major, no biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeParams {
    pub channels: usize,
    pub reduction_ratio: usize,
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
}

impl SeParams {
    pub fn new(channels: usize, reduction_ratio: usize, w1: Vec<f64>, w2: Vec<f64>) -> Result<Self> {
        let p = SeParams {
            channels,
            reduction_ratio,
            w1,
            w2,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn zeros(channels: usize, reduction_ratio: usize) -> Result<Self> {
        let hidden = channels / reduction_ratio.max(1);
        SeParams::new(
            channels,
            reduction_ratio,
            vec![0.0; hidden * channels],
            vec![0.0; channels * hidden],
        )
    }

    pub fn random(channels: usize, reduction_ratio: usize, rng: &mut SeededRng) -> Result<Self> {
        let hidden = channels / reduction_ratio.max(1);
        let w1 = (0..hidden * channels).map(|_| rng::uniform(rng, -0.5, 0.5)).collect();
        let w2 = (0..channels * hidden).map(|_| rng::uniform(rng, -0.5, 0.5)).collect();
        SeParams::new(channels, reduction_ratio, w1, w2)
    }

    pub fn hidden(&self) -> usize {
        self.channels / self.reduction_ratio
    }

    pub fn validate(&self) -> Result<()> {
        if self.reduction_ratio == 0 || self.channels == 0 || !self.channels.is_multiple_of(self.reduction_ratio) {
            return Err(Error::param(format!(
                "{} channels not divisible by reduction ratio {}",
                self.channels, self.reduction_ratio
            )));
        }
        let hidden = self.hidden();
        if self.w1.len() != hidden * self.channels || self.w2.len() != self.channels * hidden {
            return Err(Error::shape(format!(
                "SE weights {} / {}, expected {}",
                self.w1.len(),
                self.w2.len(),
                hidden * self.channels
            )));
        }
        Ok(())
    }
}

/// Mean over each `h x w` plane; result is `n x c` row-major.
pub fn global_avg_pool(x: &FeatureMap) -> Vec<f64> {
    let area = (x.h * x.w) as f64;
    let mut out = Vec::with_capacity(x.n * x.c);
    for n in 0..x.n {
        for c in 0..x.c {
            out.push(x.plane(n, c).iter().sum::<f64>() / area);
        }
    }
    out
}

struct SeTrace {
    hidden_pre: Vec<f64>,
    gates: Vec<f64>,
}

fn excite(x: &FeatureMap, p: &SeParams) -> Result<SeTrace> {
    p.validate()?;
    if x.c != p.channels {
        return Err(Error::shape(format!("SE expects {} channels, got {}", p.channels, x.c)));
    }
    let (c, hdim) = (p.channels, p.hidden());
    let pooled = global_avg_pool(x);
    let mut hidden_pre = vec![0.0; x.n * hdim];
    let mut gates = vec![0.0; x.n * c];
    for n in 0..x.n {
        let z = &pooled[n * c..(n + 1) * c];
        for j in 0..hdim {
            hidden_pre[n * hdim + j] = (0..c).map(|i| p.w1[j * c + i] * z[i]).sum();
        }
        for i in 0..c {
            let a: f64 = (0..hdim)
                .map(|j| p.w2[i * hdim + j] * hidden_pre[n * hdim + j].max(0.0))
                .sum();
            gates[n * c + i] = sigmoid(a);
        }
    }
    Ok(SeTrace { hidden_pre, gates })
}

/// Per-`(n, c)` channel weights `sigmoid(w2 relu(w1 pool(x)))`.
pub fn se_gates(x: &FeatureMap, p: &SeParams) -> Result<Vec<f64>> {
    Ok(excite(x, p)?.gates)
}

/// Squeeze, excite, then rescale each channel by its gate.
pub fn se_block(x: &FeatureMap, p: &SeParams) -> Result<FeatureMap> {
    let gates = se_gates(x, p)?;
    let plane = x.h * x.w;
    let mut out = x.clone();
    for (chunk, g) in out.data.chunks_mut(plane).zip(&gates) {
        chunk.iter_mut().for_each(|v| *v *= g);
    }
    Ok(out)
}

fn se_backward(x: &FeatureMap, p: &SeParams, grad_out: &FeatureMap) -> Result<FeatureMap> {
    if grad_out.shape() != x.shape() {
        return Err(Error::shape("SE gradient must match input shape"));
    }
    let trace = excite(x, p)?;
    let (c, hdim) = (p.channels, p.hidden());
    let plane = x.h * x.w;
    let mut gx = FeatureMap::zeros(x.n, x.c, x.h, x.w);
    for n in 0..x.n {
        let d_gate: Vec<f64> = (0..c)
            .map(|i| {
                let start = x.index(n, i, 0, 0);
                (0..plane).map(|k| grad_out.data[start + k] * x.data[start + k]).sum()
            })
            .collect();
        let d_act: Vec<f64> = (0..c)
            .map(|i| {
                let g = trace.gates[n * c + i];
                d_gate[i] * g * (1.0 - g)
            })
            .collect();
        let d_hidden: Vec<f64> = (0..hdim)
            .map(|j| {
                if trace.hidden_pre[n * hdim + j] > 0.0 {
                    (0..c).map(|i| p.w2[i * hdim + j] * d_act[i]).sum()
                } else {
                    0.0
                }
            })
            .collect();
        let area = plane as f64;
        for i in 0..c {
            let d_pool: f64 = (0..hdim).map(|j| p.w1[j * c + i] * d_hidden[j]).sum();
            let gate = trace.gates[n * c + i];
            let start = x.index(n, i, 0, 0);
            for k in 0..plane {
                gx.data[start + k] = grad_out.data[start + k] * gate + d_pool / area;
            }
        }
    }
    Ok(gx)
}

impl Block for SeParams {
    fn forward(&self, x: &FeatureMap) -> Result<FeatureMap> {
        se_block(x, self)
    }

    fn backward_input(&self, x: &FeatureMap, grad_out: &FeatureMap) -> Result<FeatureMap> {
        se_backward(x, self, grad_out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn pooling_examples() {
        let x = FeatureMap::filled(1, 2, 3, 3, 3.0);
        assert_eq!(global_avg_pool(&x), vec![3.0, 3.0]);
        let x = FeatureMap::new(1, 3, 1, 1, vec![1.0, -2.0, 5.0]).unwrap();
        assert_eq!(global_avg_pool(&x), vec![1.0, -2.0, 5.0]);
        let x = FeatureMap::new(1, 1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(global_avg_pool(&x), vec![2.5]);
    }

    #[test]
    fn zero_weights_halve_input() {
        let mut rng = seeded(4);
        let x = FeatureMap::random(2, 4, 3, 5, &mut rng);
        let out = se_block(&x, &SeParams::zeros(4, 2).unwrap()).unwrap();
        for (o, i) in out.data.iter().zip(&x.data) {
            assert_eq!(*o, 0.5 * i);
        }
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let mut rng = seeded(5);
        let p = SeParams::random(4, 2, &mut rng).unwrap();
        let out = se_block(&FeatureMap::zeros(1, 4, 4, 4), &p).unwrap();
        assert!(out.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn matches_matrix_oracle() {
        let mut rng = seeded(6);
        let x = FeatureMap::random(1, 4, 3, 3, &mut rng);
        let p = SeParams::random(4, 2, &mut rng).unwrap();
        let out = se_block(&x, &p).unwrap();
        // straight-line matrix arithmetic
        let z: Vec<f64> = (0..4).map(|c| x.plane(0, c).iter().sum::<f64>() / 9.0).collect();
        let h: Vec<f64> = (0..2)
            .map(|j| {
                (p.w1[j * 4] * z[0] + p.w1[j * 4 + 1] * z[1] + p.w1[j * 4 + 2] * z[2] + p.w1[j * 4 + 3] * z[3]).max(0.0)
            })
            .collect();
        for c in 0..4 {
            let s = 1.0 / (1.0 + (-(p.w2[c * 2] * h[0] + p.w2[c * 2 + 1] * h[1])).exp());
            for k in 0..9 {
                assert!((out.plane(0, c)[k] - s * x.plane(0, c)[k]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn gates_open_interval_and_nonlinear() {
        let mut rng = seeded(8);
        let x = FeatureMap::random(2, 8, 4, 4, &mut rng).map(|v| v * 6.0);
        let p = SeParams::random(8, 4, &mut rng).unwrap();
        assert!(se_gates(&x, &p).unwrap().iter().all(|g| *g > 0.0 && *g < 1.0));
        let once = se_block(&x, &p).unwrap();
        let twice = se_block(&x.map(|v| 2.0 * v), &p).unwrap();
        let diff = once
            .data
            .iter()
            .zip(&twice.data)
            .map(|(a, b)| (2.0 * a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff > 1e-6);
    }

    #[test]
    fn channel_mismatch() {
        let p = SeParams::zeros(4, 2).unwrap();
        assert!(se_block(&FeatureMap::zeros(1, 3, 2, 2), &p).is_err());
        assert!(SeParams::zeros(6, 4).is_err());
    }
}
