//! Train a small denoiser on synthetic EEG-like segments, save the
//! checkpoint, reload it and measure the held-out denoising loss.
//!
//! cargo run --release --example train_denoiser -- [iterations] [out.ckpt]

use biobridge::diffusion::{smooth, train_with_progress, training_loss, Checkpoint, EdmConfig, TrainConfig};
use biobridge::nn::UNetConfig;
use biobridge::preprocess::{PreprocessConfig, SEGMENT_LEN};
use biobridge::synth::{generate_dataset, SynthConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> biobridge::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let iterations: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(300);
    let out = args.next().unwrap_or_else(|| "eeg_example.ckpt".into());

    let cfgs = [SynthConfig::eeg_like(5, 2), SynthConfig::fmeg_like(5, 2)];
    let [eeg, _] = generate_dataset(&cfgs, &PreprocessConfig::default())?;
    let edm = EdmConfig::default();
    let cfg = TrainConfig {
        iterations,
        batch_size: 16,
        architecture: UNetConfig::tiny(),
        log_every: 50,
        ..TrainConfig::desk()
    };
    let outcome = train_with_progress(&eeg.prepared.train, &edm, &cfg, |_, _| {})?;
    let smoothed = smooth(&outcome.trace, 25);
    println!(
        "loss {:.4} -> {:.4} (smoothed)",
        smoothed[smoothed.len().min(25) - 1],
        smoothed.last().unwrap()
    );

    outcome.checkpoint.save(out.as_ref())?;
    let reloaded = Checkpoint::load(out.as_ref())?;
    let denoiser = reloaded.denoiser();
    let test = eeg.prepared.test.flat_values();
    let held_out = training_loss(&denoiser, &test, SEGMENT_LEN, &edm, &mut ChaCha8Rng::seed_from_u64(0))?;
    println!(
        "checkpoint {out}: {} parameters, held-out loss {held_out:.4}",
        reloaded.net.params.len()
    );
    Ok(())
}
