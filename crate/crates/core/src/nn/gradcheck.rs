use super::{Block, FeatureMap};
use crate::error::{Error, Result};

/// Max relative error between the analytic input gradient of
/// `sum(block.forward(x))` and its central finite difference.
///
/// The error is `max|a - n| / max(|a|_inf, |n|_inf)`, zero when both vanish.
pub fn finite_diff_check(block: &impl Block, x: &FeatureMap, step: f64) -> Result<f64> {
    if !(1e-6..=1e-3).contains(&step) {
        return Err(Error::param(format!(
            "finite-difference step {step} outside [1e-6, 1e-3]"
        )));
    }
    let y = block.forward(x)?;
    let ones = FeatureMap::filled(y.n, y.c, y.h, y.w, 1.0);
    let analytic = block.backward_input(x, &ones)?;
    let objective = |probe: &FeatureMap| -> Result<f64> { Ok(block.forward(probe)?.data.iter().sum()) };
    let mut probe = x.clone();
    let mut max_diff = 0.0f64;
    let mut max_a = 0.0f64;
    let mut max_n = 0.0f64;
    for i in 0..x.len() {
        let orig = probe.data[i];
        probe.data[i] = orig + step;
        let up = objective(&probe)?;
        probe.data[i] = orig - step;
        let down = objective(&probe)?;
        probe.data[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        max_diff = max_diff.max((analytic.data[i] - numeric).abs());
        max_a = max_a.max(analytic.data[i].abs());
        max_n = max_n.max(numeric.abs());
    }
    let scale = max_a.max(max_n);
    Ok(if scale == 0.0 { 0.0 } else { max_diff / scale })
}
