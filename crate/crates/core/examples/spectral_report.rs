//! Band-power and PSD reporting on known signals, plus the reconstruction
//! metrics used for cycle consistency.
//!
//! cargo run --release --example spectral_report

use biobridge::evaluate::{compare_reports, mav, mse, power_spectrum, psd, ratio, Band};
use biobridge::preprocess::{SEGMENT_LEN, SEGMENT_RATE};

fn tone(freq: f64, amp: f64, phase: f64) -> Vec<f64> {
    (0..SEGMENT_LEN)
        .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / SEGMENT_RATE + phase).sin())
        .collect()
}

fn main() -> biobridge::Result<()> {
    let x = tone(5.0, 0.5, 0.3);
    let energy: f64 = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let spectrum: f64 = power_spectrum(&x).iter().sum();
    println!("Parseval: mean square {energy:.6}, spectrum sum {spectrum:.6}");

    let theta: Vec<Vec<f64>> = (0..8).map(|k| tone(5.0, 0.5, k as f64)).collect();
    let report = psd(&theta, SEGMENT_RATE)?;
    let total: f64 = report.band_powers.iter().sum();
    for (band, p) in Band::ALL.iter().zip(&report.band_powers) {
        let (lo, hi) = band.edges();
        println!("  {:<6} [{lo:>4}, {hi:>4}) Hz  {:.1}% of power", band.name(), 100.0 * p / total);
    }

    // one tone per band so every band-mean is well defined
    let segments: Vec<Vec<f64>> = (0..8)
        .map(|k| {
            let parts = [tone(1.5, 0.4, k as f64), tone(5.0, 0.3, 0.0), tone(10.0, 0.2, 1.0), tone(16.0, 0.1, 2.0)];
            (0..SEGMENT_LEN).map(|i| parts.iter().map(|p| p[i]).sum()).collect()
        })
        .collect();
    let noisy: Vec<Vec<f64>> = segments
        .iter()
        .map(|s| s.iter().enumerate().map(|(i, v)| v + 0.01 * ((i * 7919) % 13) as f64 / 13.0).collect())
        .collect();
    let cmp = compare_reports(&psd(&segments, SEGMENT_RATE)?, &psd(&noisy, SEGMENT_RATE)?)?;
    println!("perturbed copy: worst band-mean difference {:.2}%", 100.0 * cmp.max_band_diff());

    let (a, b) = (&segments[0], &noisy[0]);
    println!(
        "first segment: MAV {:.4}, MSE {:.3e}, MSE/MAV {:.4}%",
        mav(a),
        mse(a, b)?,
        ratio(a, b)?
    );
    Ok(())
}
