//! Zero-phase Butterworth band-pass built from second-order sections.
//!
//! Each band edge is a 4th-order Butterworth (two biquads from the bilinear
//! transform with frequency prewarping). The cascade is applied forward and
//! then backward, so the net response is `|H|^2` with zero phase.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::preprocess::Recording;

/// Order of each band edge.
pub const EDGE_ORDER: usize = 4;

/// Biquad in transposed direct form II, normalized so `a0 == 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

#[derive(Debug, Clone, Copy)]
enum Edge {
    Low,
    High,
}

impl Biquad {
    fn butterworth(kind: Edge, cutoff: f64, rate: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * cutoff / rate;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (2.0 * q);
        let a0 = 1.0 + alpha;
        let b = match kind {
            Edge::Low => [(1.0 - cos) / 2.0, 1.0 - cos, (1.0 - cos) / 2.0],
            Edge::High => [(1.0 + cos) / 2.0, -(1.0 + cos), (1.0 + cos) / 2.0],
        };
        Biquad {
            b: [b[0] / a0, b[1] / a0, b[2] / a0],
            a: [-2.0 * cos / a0, (1.0 - alpha) / a0],
        }
    }

    /// DC gain `H(1)`.
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// State that makes a constant input `u` produce the steady-state output.
    fn steady_state(&self, u: f64) -> [f64; 2] {
        let y = self.dc_gain() * u;
        let z2 = self.b[2] * u - self.a[1] * y;
        let z1 = self.b[1] * u - self.a[0] * y + z2;
        [z1, z2]
    }

    fn run(&self, signal: &mut [f64], mut z: [f64; 2]) {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        for v in signal.iter_mut() {
            let x = *v;
            let y = b0 * x + z[0];
            z[0] = b1 * x - a1 * y + z[1];
            z[1] = b2 * x - a2 * y;
            *v = y;
        }
    }
}

/// Butterworth section quality factors for an even order `n`.
fn butterworth_qs(order: usize) -> impl Iterator<Item = f64> {
    (1..=order / 2).map(move |k| 1.0 / (2.0 * ((2 * k - 1) as f64 * PI / (2 * order) as f64).sin()))
}

/// Second-order sections of the band-pass: high-pass at `lo` cascaded with
/// low-pass at `hi`.
pub fn design_bandpass(lo: f64, hi: f64, rate: f64) -> Result<Vec<Biquad>> {
    if !(lo > 0.0 && lo < hi && hi < rate / 2.0) {
        return Err(Error::InvalidBand { lo, hi, rate });
    }
    let mut sos: Vec<Biquad> = butterworth_qs(EDGE_ORDER)
        .map(|q| Biquad::butterworth(Edge::High, lo, rate, q))
        .collect();
    sos.extend(butterworth_qs(EDGE_ORDER).map(|q| Biquad::butterworth(Edge::Low, hi, rate, q)));
    Ok(sos)
}

fn sosfilt_steady(sos: &[Biquad], signal: &mut [f64]) {
    let Some(&first) = signal.first() else {
        return;
    };
    let mut u = first;
    for section in sos {
        let z = section.steady_state(u);
        section.run(signal, z);
        u *= section.dc_gain();
    }
}

/// Forward-backward filtering with mirror (even) padding and steady-state
/// initial conditions at both ends. Mirror padding keeps the boundary level,
/// so the slow high-pass edge does not ring on an artificial step.
pub fn filtfilt(sos: &[Biquad], signal: &[f64], padlen: usize) -> Vec<f64> {
    let n = signal.len();
    if n < 2 {
        return signal.to_vec();
    }
    let pad = padlen.min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|k| signal[k]));
    ext.extend_from_slice(signal);
    ext.extend((1..=pad).map(|k| signal[n - 1 - k]));

    sosfilt_steady(sos, &mut ext);
    ext.reverse();
    sosfilt_steady(sos, &mut ext);
    ext.reverse();
    ext[pad..pad + n].to_vec()
}

/// Zero-phase band-pass every channel of `rec`. Length and mask are kept.
pub fn bandpass_zero_phase(rec: &Recording, lo: f64, hi: f64) -> Result<Recording> {
    let sos = design_bandpass(lo, hi, rec.rate)?;
    // three periods of the low edge absorbs the high-pass transient
    let padlen = (3.0 * rec.rate / lo).ceil() as usize;
    let samples = rec.samples.iter().map(|ch| filtfilt(&sos, ch, padlen)).collect();
    rec.with_samples(samples, rec.rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::Modality;

    fn single(channel: Vec<f64>, rate: f64) -> Recording {
        Recording::new("t", Modality::Eeg, vec!["c".into()], vec![channel], rate, vec![]).unwrap()
    }

    fn sine(freq: f64, rate: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * freq * i as f64 / rate).sin()).collect()
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn butterworth_order4_qs() {
        let qs: Vec<f64> = butterworth_qs(4).collect();
        assert!((qs[0] - 1.306563).abs() < 1e-6);
        assert!((qs[1] - 0.541196).abs() < 1e-6);
    }

    #[test]
    fn band_at_or_above_nyquist_is_rejected() {
        let rec = single(vec![0.0; 100], 256.0);
        assert!(matches!(bandpass_zero_phase(&rec, 0.5, 128.0), Err(Error::InvalidBand { .. })));
        assert!(matches!(bandpass_zero_phase(&rec, 20.0, 5.0), Err(Error::InvalidBand { .. })));
        assert!(matches!(bandpass_zero_phase(&rec, 0.0, 5.0), Err(Error::InvalidBand { .. })));
    }

    #[test]
    fn dc_is_removed() {
        let rec = single(vec![7.5; 4096], 256.0);
        let out = bandpass_zero_phase(&rec, 0.5, 20.0).unwrap();
        assert!(out.samples[0].iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn passband_sine_keeps_amplitude_and_phase() {
        let n = 256 * 20;
        let x = sine(5.0, 256.0, n);
        let out = bandpass_zero_phase(&single(x.clone(), 256.0), 0.5, 20.0).unwrap();
        let y = &out.samples[0];
        let mid = &y[n / 4..3 * n / 4];
        let peak = mid.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak - 1.0).abs() < 0.02, "peak {peak}");

        // lag of the cross-correlation peak over the central half
        let best = (-20i64..=20)
            .max_by(|&a, &b| {
                let xc = |lag: i64| -> f64 {
                    (n / 4..3 * n / 4)
                        .map(|i| x[i] * y[(i as i64 + lag) as usize])
                        .sum()
                };
                xc(a).total_cmp(&xc(b))
            })
            .unwrap();
        assert_eq!(best, 0);
    }

    #[test]
    fn stopband_sine_is_attenuated() {
        let n = 256 * 20;
        let x = sine(40.0, 256.0, n);
        let out = bandpass_zero_phase(&single(x.clone(), 256.0), 0.5, 20.0).unwrap();
        assert!(rms(&out.samples[0]) < 0.1 * rms(&x));
    }

    #[test]
    fn double_application_keeps_interior_amplitude() {
        let n = 256 * 20;
        let x = sine(8.0, 256.0, n);
        let rec = single(x.clone(), 256.0);
        let once = bandpass_zero_phase(&rec, 0.5, 20.0).unwrap();
        let twice = bandpass_zero_phase(&once, 0.5, 20.0).unwrap();
        let a = rms(&once.samples[0][n / 4..3 * n / 4]);
        let b = rms(&twice.samples[0][n / 4..3 * n / 4]);
        assert!(((b - a) / a).abs() < 0.05);
    }
}
