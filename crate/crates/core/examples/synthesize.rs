//! Generate both synthetic recording families, run them through the
//! preprocessing chain and score burst detection against the ground truth.
//!
//! cargo run --release --example synthesize -- [n_recordings] [seed]

use biobridge::preprocess::PreprocessConfig;
use biobridge::synth::{burst_ibi_rms_ratio, generate_dataset, generate_recording, SynthConfig};

fn main() -> biobridge::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(6);
    let seed: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(1);

    let cfgs = [SynthConfig::eeg_like(n, seed), SynthConfig::fmeg_like(n, seed)];
    for cfg in &cfgs {
        let (rec, truth) = generate_recording(cfg, 0)?;
        println!(
            "{}: {} channels x {} samples at {} Hz, {} bursts, burst/IBI rms {:.1}",
            rec.id,
            rec.n_channels(),
            rec.len(),
            rec.rate,
            truth.bursts.len(),
            burst_ibi_rms_ratio(&rec, &truth)
        );
    }

    let datasets = generate_dataset(&cfgs, &PreprocessConfig::default())?;
    for ds in &datasets {
        let p = &ds.prepared;
        println!(
            "{}: {} train / {} test segments, range [{:.1}, {:.1}] {}, detection P {:.3} R {:.3} F1 {:.3}",
            p.modality,
            p.train.len(),
            p.test.len(),
            p.stats.min,
            p.stats.max,
            p.modality.units(),
            ds.detection.precision,
            ds.detection.recall,
            ds.detection.f1
        );
    }
    Ok(())
}
