//! Band-limited resampling with a Kaiser-windowed sinc kernel.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::preprocess::Recording;

/// Zero crossings of the sinc kernel on each side, in output-rate units.
const ZERO_CROSSINGS: f64 = 16.0;
/// Cutoff as a fraction of the lower Nyquist frequency.
const ROLLOFF: f64 = 0.9;
const KAISER_BETA: f64 = 8.6;

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half = x / 2.0;
    for k in 1..64 {
        term *= half / k as f64;
        let t2 = term * term;
        sum += t2;
        if t2 < 1e-17 * sum {
            break;
        }
    }
    sum
}

/// Resample one channel from `rate` to `target`. Output length is
/// `floor(n * target / rate)`.
pub fn resample_channel(signal: &[f64], rate: f64, target: f64) -> Vec<f64> {
    if rate == target {
        return signal.to_vec();
    }
    let n_out = (signal.len() as f64 * target / rate).floor() as usize;
    let step = rate / target;
    // cutoff in cycles per input sample
    let cutoff = 0.5 * ROLLOFF * (target / rate).min(1.0);
    let half_width = ZERO_CROSSINGS / (2.0 * cutoff);
    let norm_i0 = bessel_i0(KAISER_BETA);

    (0..n_out)
        .map(|j| {
            let pos = j as f64 * step;
            let lo = (pos - half_width).ceil().max(0.0) as usize;
            let hi = ((pos + half_width).floor() as usize).min(signal.len() - 1);
            let mut acc = 0.0;
            let mut weight = 0.0;
            for (k, &x) in signal.iter().enumerate().take(hi + 1).skip(lo) {
                let d = pos - k as f64;
                let r = d / half_width;
                let window = bessel_i0(KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / norm_i0;
                let arg = 2.0 * cutoff * d;
                let sinc = if arg.abs() < 1e-12 { 1.0 } else { (PI * arg).sin() / (PI * arg) };
                let w = sinc * window;
                acc += w * x;
                weight += w;
            }
            acc / weight
        })
        .collect()
}

/// Resample every channel of `rec` to `target` Hz. The mask is kept in
/// seconds and clipped to the new duration.
pub fn resample(rec: &Recording, target: f64) -> Result<Recording> {
    if !(target > 0.0) || !target.is_finite() {
        return Err(Error::Config(format!("target rate must be positive, got {target}")));
    }
    let samples = rec
        .samples
        .iter()
        .map(|ch| resample_channel(ch, rec.rate, target))
        .collect();
    rec.with_samples(samples, target)
}
