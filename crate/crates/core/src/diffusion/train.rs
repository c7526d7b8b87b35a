use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::checkpoint::{Checkpoint, TrainingMeta};
use crate::diffusion::edm::EdmConfig;
use crate::diffusion::net::{loss_and_grad, DenoiserNet};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, Ema, UNetConfig};
use crate::preprocess::{SegmentDataset, SEGMENT_LEN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub ema_decay: f64,
    pub seed: u64,
    pub architecture: UNetConfig,
    /// Replace `sigma_data` with the standard deviation of the training set.
    pub estimate_sigma_data: bool,
    /// Log progress every this many iterations; 0 disables.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl TrainConfig {
    /// 30,000 iterations at batch 32 with the full-width network.
    pub fn paper() -> Self {
        Self {
            iterations: 30_000,
            batch_size: 32,
            optimizer: AdamConfig::default(),
            ema_decay: 0.999,
            seed: 0,
            architecture: UNetConfig::paper(),
            estimate_sigma_data: false,
            log_every: 500,
        }
    }

    /// 2,000 iterations at batch 32 with a narrow network and a larger,
    /// warmed-up learning rate.
    pub fn desk() -> Self {
        Self {
            iterations: 2_000,
            batch_size: 32,
            optimizer: AdamConfig {
                lr: 2e-3,
                warmup: 100,
                clip_norm: 1.0,
                ..AdamConfig::default()
            },
            ema_decay: 0.995,
            seed: 0,
            architecture: UNetConfig::desk(),
            estimate_sigma_data: false,
            log_every: 250,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.batch_size == 0 {
            return Err(Error::Config("iterations and batch size must be positive".into()));
        }
        if !(self.optimizer.lr > 0.0) || !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::Config("need lr > 0 and 0 <= ema_decay < 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// Batch loss of every iteration.
    pub trace: Vec<f64>,
}

/// Trailing moving average with the given window (shorter at the start).
pub fn smooth(trace: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(trace.len());
    let mut sum = 0.0;
    for (i, &v) in trace.iter().enumerate() {
        sum += v;
        if i >= window {
            sum -= trace[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

/// Population standard deviation of every sample in the set.
pub fn dataset_std(data: &SegmentDataset) -> f64 {
    let values = data.flat_values();
    let n = values.len().max(1) as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

pub fn train(data: &SegmentDataset, edm: &EdmConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_progress(data, edm, cfg, |_, _| {})
}

/// Train one model on `data`. `progress(iteration, loss)` is called after
/// every step.
pub fn train_with_progress(
    data: &SegmentDataset,
    edm: &EdmConfig,
    cfg: &TrainConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.segments.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let mut edm = *edm;
    if cfg.estimate_sigma_data {
        edm.sigma_data = dataset_std(data);
        log::info!("{}: sigma_data estimated as {:.4}", data.modality, edm.sigma_data);
    }
    let edm = &edm;
    edm.validate()?;
    let len = data.segments[0].values.len();
    if let Some(bad) = data.segments.iter().find(|s| s.values.len() != len) {
        return Err(Error::LengthMismatch {
            left: bad.values.len(),
            right: len,
        });
    }
    if len != SEGMENT_LEN {
        log::warn!("training on {len}-sample segments instead of {SEGMENT_LEN}");
    }

    let mut net = DenoiserNet::new(cfg.architecture.clone(), len, cfg.seed)?;
    let mut adam = Adam::new(cfg.optimizer, net.params.len());
    let mut ema = Ema::new(cfg.ema_decay, &net.params.values);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = Vec::with_capacity(cfg.iterations);
    let mut batch = Vec::with_capacity(cfg.batch_size * len);
    log::info!(
        "training {} model: {} parameters, {} segments, {} iterations",
        data.modality,
        net.params.len(),
        data.segments.len(),
        cfg.iterations
    );
    for it in 0..cfg.iterations {
        batch.clear();
        for _ in 0..cfg.batch_size {
            let k = rng.random_range(0..data.segments.len());
            batch.extend_from_slice(&data.segments[k].values);
        }
        let (loss, grads) = loss_and_grad::<f32, _>(&net, &net.params.values, &batch, edm, &mut rng)?;
        trace.push(loss);
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::TrainingDivergence {
                iteration: it,
                loss,
                trace,
            });
        }
        adam.step(&mut net.params.values, &grads);
        ema.update(&net.params.values);
        progress(it, loss);
        if cfg.log_every > 0 && (it + 1) % cfg.log_every == 0 {
            let recent = &trace[trace.len().saturating_sub(cfg.log_every)..];
            let mean = recent.iter().sum::<f64>() / recent.len() as f64;
            log::info!("{} iteration {}: mean loss {mean:.4}", data.modality, it + 1);
        }
    }
    net.params.values = ema.shadow;
    if !net.params.all_finite() {
        return Err(Error::NonFinite("trained parameters"));
    }
    let final_loss = *trace.last().expect("at least one iteration");
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            modality: data.modality,
            edm: *edm,
            norm_stats: data.stats,
            net,
            training: TrainingMeta {
                iterations: cfg.iterations,
                batch_size: cfg.batch_size,
                final_loss,
                seed: cfg.seed,
                learning_rate: cfg.optimizer.lr,
                ema_decay: cfg.ema_decay,
            },
        },
        trace,
    })
}
