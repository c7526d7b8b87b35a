//! Walk one recording through each preprocessing step by hand: zero-phase
//! band-pass, artifact rejection, resampling, NLEO burst detection,
//! segmentation and normalization.
//!
//! cargo run --release --example preprocess_chain

use biobridge::preprocess::{
    bandpass_zero_phase, calibrate_threshold, compute_norm_stats, detect_bursts, normalize, reject_amplitude_artifacts,
    resample, segment_bursts, ANALYSIS_RATE, SEGMENT_RATE,
};
use biobridge::synth::{generate_recording, interval_f1, SynthConfig};

fn main() -> biobridge::Result<()> {
    let cfg = SynthConfig {
        artifact_rate: 0.02,
        ..SynthConfig::eeg_like(1, 4)
    };
    let (raw, truth) = generate_recording(&cfg, 0)?;
    println!("raw: {} s, {} channels", raw.duration(), raw.n_channels());

    let filtered = bandpass_zero_phase(&raw, 0.5, 20.0)?;
    let cleaned = reject_amplitude_artifacts(&filtered, raw.modality.artifact_threshold())?;
    let masked = cleaned.masked.iter().fold(0.0, |acc, iv| acc + iv.len());
    println!("artifact rejection masked {masked:.1} s in {} intervals", cleaned.masked.len());

    let rec256 = resample(&cleaned, ANALYSIS_RATE)?;
    let thresholds = calibrate_threshold(&rec256, 3.0)?;
    let ann = detect_bursts(&rec256, &thresholds)?;
    let truth_ivs: Vec<_> = truth.bursts.iter().map(|b| b.interval).collect();
    let score = interval_f1(&truth_ivs, &ann.intervals);
    println!(
        "{} bursts detected ({:.1} s), {} in ground truth, F1 {:.3}",
        ann.intervals.len(),
        ann.total_duration(),
        truth_ivs.len(),
        score.f1
    );

    let rec64 = resample(&rec256, SEGMENT_RATE)?;
    let segments = segment_bursts(&rec64, &ann);
    let stats = compute_norm_stats(&segments)?;
    let (first, _) = normalize(&segments[0], &stats)?;
    println!(
        "{} segments of {} samples; normalization range [{:.1}, {:.1}] uV; first segment starts at {} s on {}",
        segments.len(),
        first.values.len(),
        stats.min,
        stats.max,
        first.provenance.start,
        first.provenance.channel
    );
    Ok(())
}
