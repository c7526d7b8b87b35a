//! Nonlinear energy operator and its smoothed magnitude.

use crate::error::{Error, Result};

/// `x(i)x(i-3) - x(i-1)x(i-2)` for `i >= 3`; the first three outputs are 0.
pub fn nleo(x: &[f64]) -> Result<Vec<f64>> {
    if x.len() < 4 {
        return Err(Error::TooShort {
            needed: 4,
            got: x.len(),
        });
    }
    let mut out = vec![0.0; x.len()];
    for i in 3..x.len() {
        out[i] = x[i] * x[i - 3] - x[i - 1] * x[i - 2];
    }
    Ok(out)
}

/// Centered moving average of `|seq|`. Near the edges the window is truncated
/// and the mean is taken over the samples that exist.
pub fn smooth_abs(seq: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let n = seq.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for v in seq {
        acc += v.abs();
        prefix.push(acc);
    }
    let before = (window - 1) / 2;
    let after = window - 1 - before;
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(before);
            let hi = (i + after + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}
