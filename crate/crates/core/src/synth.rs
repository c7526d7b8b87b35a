//! Seeded surrogate recordings with known burst annotations.
//!
//! Recordings alternate bursts and quiescent inter-burst intervals (IBIs).
//! IBIs carry colored background noise; bursts add one labeled event type on
//! top of it. Every recording is a pure function of `(rng_seed, index)`.
//!
//! # Random streams
//!
//! Each recording uses two ChaCha8 streams keyed by `rng_seed`: stream
//! `2 * index` draws the burst/IBI layout and event labels, stream
//! `2 * index + 1` draws waveform details. Layout draws take the top 53 bits
//! of successive `u64` outputs as a uniform in `[0, 1)`, so another
//! implementation of ChaCha8 reproduces the ground-truth file exactly.

use std::f64::consts::PI;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::preprocess::{
    prepare_dataset, BurstAnnotation, Interval, Modality, PreparedData, PreprocessConfig, ProcessedRecording,
    Recording,
};

/// IBI background RMS as a fraction of the burst event RMS.
pub const BACKGROUND_FRACTION: f64 = 0.2;
/// Taper length at each burst edge, seconds.
const EDGE_TAPER: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    /// Slow wave (0.5-1.5 Hz) carrying an amplitude-modulated 8-20 Hz ripple.
    DeltaBrush,
    /// Sharp biphasic slow transients recurring about once per second.
    FrontalTransient,
    /// Theta/alpha/beta rhythm without a slow carrier.
    Oscillatory,
}

impl EventKind {
    pub const ALL: [EventKind; 3] = [EventKind::DeltaBrush, EventKind::FrontalTransient, EventKind::Oscillatory];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::DeltaBrush => "delta-brush",
            EventKind::FrontalTransient => "frontal-transient",
            EventKind::Oscillatory => "oscillatory",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EventKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::format("event label", s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub modality: Modality,
    pub n_recordings: usize,
    /// Seconds.
    pub duration: f64,
    pub rate: f64,
    pub channels: usize,
    pub burst_len_range: [f64; 2],
    pub ibi_len_range: [f64; 2],
    /// Exponent `b` of the `1/f^b` background and the high-frequency roll-off
    /// applied to event components.
    pub spectral_tilt: f64,
    /// Weights for delta-brush, frontal-transient, oscillatory events.
    pub event_mix: [f64; 3],
    /// Peak amplitude bound in physical units (uV or fT).
    pub amplitude_scale: f64,
    /// Expected over-threshold artifact transients per second.
    pub artifact_rate: f64,
    pub rng_seed: u64,
}

impl SynthConfig {
    pub fn eeg_like(n_recordings: usize, rng_seed: u64) -> Self {
        Self {
            modality: Modality::Eeg,
            n_recordings,
            duration: 120.0,
            rate: 256.0,
            channels: 4,
            burst_len_range: [6.0, 12.0],
            ibi_len_range: [10.0, 16.0],
            spectral_tilt: 1.6,
            event_mix: [0.6, 0.25, 0.15],
            amplitude_scale: 150.0,
            artifact_rate: 0.0,
            rng_seed,
        }
    }

    pub fn fmeg_like(n_recordings: usize, rng_seed: u64) -> Self {
        Self {
            modality: Modality::Fmeg,
            n_recordings,
            duration: 120.0,
            rate: 256.0,
            channels: 4,
            burst_len_range: [6.0, 12.0],
            ibi_len_range: [10.0, 16.0],
            spectral_tilt: 0.4,
            event_mix: [0.15, 0.1, 0.75],
            amplitude_scale: 600.0,
            artifact_rate: 0.0,
            rng_seed: rng_seed ^ 0x5eed_f3e6,
        }
    }

    pub fn default_for(modality: Modality, n_recordings: usize, rng_seed: u64) -> Self {
        match modality {
            Modality::Eeg => Self::eeg_like(n_recordings, rng_seed),
            Modality::Fmeg => Self::fmeg_like(n_recordings, rng_seed),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = |r: [f64; 2]| r[0] > 0.0 && r[0] <= r[1];
        let fail = |msg: &str| Err(Error::Config(format!("synth: {msg}")));
        if !ordered(self.burst_len_range) || !ordered(self.ibi_len_range) {
            return fail("length ranges must be positive and ordered");
        }
        if self.event_mix.iter().any(|&w| w < 0.0) || self.event_mix.iter().sum::<f64>() <= 0.0 {
            return fail("event weights must be nonnegative with positive sum");
        }
        if !(self.rate > 0.0 && self.duration > 0.0 && self.amplitude_scale > 0.0) {
            return fail("rate, duration and amplitude scale must be positive");
        }
        if self.channels == 0 {
            return fail("need at least one channel");
        }
        if self.artifact_rate < 0.0 {
            return fail("artifact rate must be nonnegative");
        }
        Ok(())
    }

    pub fn recording_id(&self, index: usize) -> String {
        format!("{}_{index:03}", self.modality)
    }
}

/// One labeled burst of the ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBurst {
    pub interval: Interval,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub recording: String,
    pub bursts: Vec<LabeledBurst>,
}

impl GroundTruth {
    pub fn annotation(&self) -> BurstAnnotation {
        BurstAnnotation {
            intervals: self.bursts.iter().map(|b| b.interval).collect(),
        }
    }
}

fn unit_uniform(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn uniform_in(rng: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
    range[0] + (range[1] - range[0]) * unit_uniform(rng)
}

fn pick_event(rng: &mut ChaCha8Rng, weights: &[f64; 3]) -> EventKind {
    let total: f64 = weights.iter().sum();
    let mut u = unit_uniform(rng) * total;
    for (kind, &w) in EventKind::ALL.iter().zip(weights) {
        if u < w {
            return *kind;
        }
        u -= w;
    }
    EventKind::ALL[weights.iter().rposition(|&w| w > 0.0).unwrap_or(2)]
}

fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Burst layout: bursts start at 0 and alternate with IBIs; a burst that would
/// run past the end of the recording is not placed.
pub fn layout(cfg: &SynthConfig, index: usize) -> Vec<LabeledBurst> {
    let mut rng = stream(cfg.rng_seed, 2 * index as u64);
    let mut bursts = Vec::new();
    let mut t = 0.0;
    loop {
        let len = uniform_in(&mut rng, cfg.burst_len_range);
        if t + len > cfg.duration {
            break;
        }
        let kind = pick_event(&mut rng, &cfg.event_mix);
        bursts.push(LabeledBurst {
            interval: Interval::new(t, t + len),
            kind,
        });
        t += len + uniform_in(&mut rng, cfg.ibi_len_range);
    }
    bursts
}

/// `1/f^tilt` noise band-limited to 0.5-25 Hz, unit RMS.
fn colored_noise(rng: &mut ChaCha8Rng, n: usize, rate: f64, tilt: f64) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|_| Complex::new(StandardNormal.sample(rng), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 * rate / n as f64;
        let gain = if (0.5..=25.0).contains(&f) { f.powf(-tilt / 2.0) } else { 0.0 };
        *c *= gain;
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let mut out: Vec<f64> = buf.into_iter().map(|c| c.re).collect();
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|v| *v /= rms);
    }
    out
}

/// Amplitude weight of a component at `freq` Hz under the configured tilt.
fn tilt_gain(freq: f64, tilt: f64) -> f64 {
    (freq / 4.0).powf(-tilt / 2.0)
}

fn event_waveform(rng: &mut ChaCha8Rng, kind: EventKind, n: usize, rate: f64, tilt: f64) -> Vec<f64> {
    let t = |i: usize| i as f64 / rate;
    match kind {
        EventKind::DeltaBrush => {
            let slow = rng.random_range(0.5..1.5);
            let ripple = rng.random_range(8.0..20.0);
            let (p1, p2) = (rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI));
            let ripple_amp = 0.6 * tilt_gain(ripple, tilt).max(0.25);
            (0..n)
                .map(|i| {
                    let phase = 2.0 * PI * slow * t(i) + p1;
                    let carrier = phase.sin();
                    // ripple rides on the negative half of the slow wave
                    let modulation = 0.5 * (1.0 - carrier);
                    carrier + ripple_amp * modulation * (2.0 * PI * ripple * t(i) + p2).sin()
                })
                .collect()
        }
        EventKind::FrontalTransient => {
            let period = rng.random_range(0.8..1.6);
            let width = rng.random_range(0.08..0.16);
            let theta = rng.random_range(4.0..7.0);
            let p = rng.random_range(0.0..2.0 * PI);
            let offset = rng.random_range(0.0..period);
            let theta_amp = 0.4 * tilt_gain(theta, tilt);
            (0..n)
                .map(|i| {
                    let local = (t(i) + offset) % period - period / 2.0;
                    let z = local / width;
                    // derivative-of-Gaussian pulse, biphasic
                    -z * (-0.5 * z * z).exp() + theta_amp * (2.0 * PI * theta * t(i) + p).sin()
                })
                .collect()
        }
        EventKind::Oscillatory => {
            let comps: Vec<(f64, f64, f64)> = [(4.0, 8.0), (8.0, 12.0), (12.0, 20.0)]
                .iter()
                .map(|&(lo, hi)| {
                    let f = rng.random_range(lo..hi);
                    let amp = tilt_gain(f, tilt) * rng.random_range(0.6..1.0);
                    (f, amp, rng.random_range(0.0..2.0 * PI))
                })
                .collect();
            let wobble = rng.random_range(0.2..0.5);
            (0..n)
                .map(|i| {
                    let env = 1.0 + 0.3 * (2.0 * PI * wobble * t(i)).sin();
                    env * comps.iter().map(|&(f, a, p)| a * (2.0 * PI * f * t(i) + p).sin()).sum::<f64>()
                })
                .collect()
        }
    }
}

/// Every burst carries all three waveforms at unit RMS, weighted by the
/// square root of the event mix with the labeled kind's share doubled.
fn blended_event(rng: &mut ChaCha8Rng, cfg: &SynthConfig, label: EventKind, n: usize) -> Vec<f64> {
    let total: f64 = cfg.event_mix.iter().sum();
    let mut out = vec![0.0; n];
    for (kind, mix) in EventKind::ALL.into_iter().zip(cfg.event_mix) {
        let w = mix / total * if kind == label { 2.0 } else { 1.0 };
        let wave = event_waveform(rng, kind, n, cfg.rate, cfg.spectral_tilt);
        let rms = mean_square(&wave).sqrt();
        if w == 0.0 || rms == 0.0 {
            continue;
        }
        let g = w.sqrt() / rms;
        out.iter_mut().zip(&wave).for_each(|(o, v)| *o += g * v);
    }
    out
}

fn taper(values: &mut [f64], rate: f64) {
    let ramp = ((EDGE_TAPER * rate) as usize).min(values.len() / 2);
    let n = values.len();
    for i in 0..ramp {
        let w = 0.5 * (1.0 - (PI * i as f64 / ramp as f64).cos());
        values[i] *= w;
        values[n - 1 - i] *= w;
    }
}

fn mean_square(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
    }
}

/// Generate recording `index` of the configured family.
pub fn generate_recording(cfg: &SynthConfig, index: usize) -> Result<(Recording, GroundTruth)> {
    cfg.validate()?;
    let bursts = layout(cfg, index);
    let mut rng = stream(cfg.rng_seed, 2 * index as u64 + 1);
    let n = (cfg.duration * cfg.rate).round() as usize;
    let to_range = |iv: &Interval| {
        let lo = (iv.start * cfg.rate).round() as usize;
        let hi = ((iv.end * cfg.rate).round() as usize).min(n);
        lo..hi
    };
    let mut in_burst = vec![false; n];
    for b in &bursts {
        in_burst[to_range(&b.interval)].iter_mut().for_each(|f| *f = true);
    }

    let burst_rms = 0.25 * cfg.amplitude_scale;
    let target_ms = burst_rms * burst_rms * (1.0 + BACKGROUND_FRACTION * BACKGROUND_FRACTION);
    let mut samples = Vec::with_capacity(cfg.channels);
    for _ in 0..cfg.channels {
        let gain = rng.random_range(0.7..1.0);
        let mut x = colored_noise(&mut rng, n, cfg.rate, cfg.spectral_tilt);
        // background sits at exactly BACKGROUND_FRACTION of the burst RMS over the IBIs
        let ibi: Vec<f64> = x.iter().zip(&in_burst).filter(|(_, &b)| !b).map(|(v, _)| *v).collect();
        let scale = if ibi.is_empty() { 1.0 } else { mean_square(&ibi).sqrt() };
        let bg_rms = gain * BACKGROUND_FRACTION * burst_rms;
        x.iter_mut().for_each(|v| *v *= bg_rms / scale);

        for b in &bursts {
            let range = to_range(&b.interval);
            let mut event = blended_event(&mut rng, cfg, b.kind, range.len());
            taper(&mut event, cfg.rate);
            // choose `a` so that mean((a*e + bg)^2) hits the target exactly
            let bg = &x[range.clone()];
            let m = range.len() as f64;
            let ee = event.iter().map(|v| v * v).sum::<f64>() / m;
            let eb = event.iter().zip(bg).map(|(e, b)| e * b).sum::<f64>() / m;
            let bb = mean_square(bg);
            let c = bb - gain * gain * target_ms;
            let a = (-eb + (eb * eb - ee * c).max(0.0).sqrt()) / ee;
            for (xi, e) in x[range].iter_mut().zip(&event) {
                *xi += a * e;
            }
        }
        samples.push(x);
    }

    let mut artifacts = Vec::new();
    if cfg.artifact_rate > 0.0 {
        let expected = cfg.artifact_rate * cfg.duration;
        let count = expected.floor() as usize + usize::from(rng.random::<f64>() < expected.fract());
        for _ in 0..count {
            let i = rng.random_range(0..n);
            let ch = rng.random_range(0..cfg.channels);
            artifacts.push((ch, i));
        }
    }

    let peak = samples.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > cfg.amplitude_scale {
        let s = cfg.amplitude_scale / peak;
        samples.iter_mut().flatten().for_each(|v| *v *= s);
    }
    // 0.4 s raised-cosine bumps sit inside the pass band, so they stay over
    // threshold after filtering
    let width = ((0.4 * cfg.rate) as usize).max(1);
    let height = 3.0 * cfg.modality.artifact_threshold();
    for (ch, i) in artifacts {
        for k in 0..width.min(n - i) {
            let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * k as f64 / width as f64).cos();
            samples[ch][i + k] += height * w;
        }
    }

    let id = cfg.recording_id(index);
    let channels = (0..cfg.channels).map(|c| format!("{}{c:02}", cfg.modality.as_str().to_uppercase())).collect();
    let rec = Recording::new(id.clone(), cfg.modality, channels, samples, cfg.rate, Vec::new())?;
    Ok((rec, GroundTruth { recording: id, bursts }))
}

/// RMS over labeled bursts divided by RMS over the IBIs, pooled over channels.
pub fn burst_ibi_rms_ratio(rec: &Recording, truth: &GroundTruth) -> f64 {
    let mut in_burst = vec![false; rec.len()];
    for b in &truth.bursts {
        let lo = (b.interval.start * rec.rate).round() as usize;
        let hi = ((b.interval.end * rec.rate).round() as usize).min(rec.len());
        in_burst[lo..hi].iter_mut().for_each(|f| *f = true);
    }
    let (mut burst, mut ibi) = (Vec::new(), Vec::new());
    for ch in &rec.samples {
        for (v, &b) in ch.iter().zip(&in_burst) {
            if b {
                burst.push(*v)
            } else {
                ibi.push(*v)
            }
        }
    }
    (mean_square(&burst) / mean_square(&ibi)).sqrt()
}

/// Overlap-duration precision, recall and F1 of `detected` against `truth`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlapScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn interval_f1(truth: &[Interval], detected: &[Interval]) -> OverlapScore {
    let overlap: f64 = truth
        .iter()
        .flat_map(|t| detected.iter().map(move |d| t.overlap(d)))
        .sum();
    let t_total: f64 = truth.iter().map(Interval::len).sum();
    let d_total: f64 = detected.iter().map(Interval::len).sum();
    let precision = if d_total > 0.0 { overlap / d_total } else { 0.0 };
    let recall = if t_total > 0.0 { overlap / t_total } else { 0.0 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    OverlapScore { precision, recall, f1 }
}

pub fn write_ground_truth(path: &Path, truths: &[GroundTruth]) -> Result<()> {
    let mut text = String::new();
    for gt in truths {
        for b in &gt.bursts {
            writeln!(text, "{}\t{}\t{}\t{}", gt.recording, b.interval.start, b.interval.end, b.kind).unwrap();
        }
    }
    io::write_text(path, &text)
}

pub fn read_ground_truth(path: &Path) -> Result<Vec<GroundTruth>> {
    let mut out: Vec<GroundTruth> = Vec::new();
    for line in io::read_text(path)?.lines().filter(|l| !l.trim().is_empty()) {
        let cols: Vec<&str> = line.split('\t').collect();
        let parse = |s: &str| s.parse::<f64>().map_err(|e| Error::format("ground truth", e.to_string()));
        if cols.len() != 4 {
            return Err(Error::format("ground truth", format!("bad row `{line}`")));
        }
        let burst = LabeledBurst {
            interval: Interval::new(parse(cols[1])?, parse(cols[2])?),
            kind: cols[3].parse()?,
        };
        match out.last_mut() {
            Some(gt) if gt.recording == cols[0] => gt.bursts.push(burst),
            _ => out.push(GroundTruth {
                recording: cols[0].to_string(),
                bursts: vec![burst],
            }),
        }
    }
    Ok(out)
}

/// Generate a recording family and write it as `dir/<id>/` containers.
pub fn write_recordings(cfg: &SynthConfig, dir: &Path) -> Result<Vec<GroundTruth>> {
    let mut truths = Vec::with_capacity(cfg.n_recordings);
    for index in 0..cfg.n_recordings {
        let (rec, gt) = generate_recording(cfg, index)?;
        rec.save(&dir.join(&rec.id))?;
        truths.push(gt);
    }
    Ok(truths)
}

/// Pooled overlap score of detected bursts against ground truth, matching
/// recordings by id. Each recording is shifted onto its own stretch of a
/// shared time axis so overlaps never cross recordings.
pub fn detection_score(truths: &[GroundTruth], recordings: &[ProcessedRecording]) -> OverlapScore {
    let span = truths
        .iter()
        .flat_map(|g| g.bursts.iter().map(|b| b.interval.end))
        .chain(recordings.iter().flat_map(|p| p.annotation.intervals.iter().map(|iv| iv.end)))
        .fold(0.0f64, f64::max)
        + 1.0;
    let (mut pooled_truth, mut pooled_detected) = (Vec::new(), Vec::new());
    for (k, gt) in truths.iter().enumerate() {
        let offset = k as f64 * span;
        let shift = |iv: &Interval| Interval::new(iv.start + offset, iv.end + offset);
        pooled_truth.extend(gt.bursts.iter().map(|b| shift(&b.interval)));
        if let Some(p) = recordings.iter().find(|p| p.id == gt.recording) {
            pooled_detected.extend(p.annotation.intervals.iter().map(shift));
        }
    }
    interval_f1(&pooled_truth, &pooled_detected)
}

/// Per-modality result of [`generate_dataset`].
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub prepared: PreparedData,
    pub truths: Vec<GroundTruth>,
    pub detection: OverlapScore,
}

/// Generate both modality families and run them through preprocessing.
/// Needs at least 5 recordings per modality so the 80/20 split has a test
/// recording.
pub fn generate_dataset(cfgs: &[SynthConfig; 2], pre: &PreprocessConfig) -> Result<[SynthDataset; 2]> {
    let build = |cfg: &SynthConfig| -> Result<SynthDataset> {
        if cfg.n_recordings < 5 {
            return Err(Error::Config(format!(
                "synth: need at least 5 recordings per modality, got {}",
                cfg.n_recordings
            )));
        }
        let mut recs = Vec::with_capacity(cfg.n_recordings);
        let mut truths = Vec::with_capacity(cfg.n_recordings);
        for index in 0..cfg.n_recordings {
            let (rec, gt) = generate_recording(cfg, index)?;
            recs.push(rec);
            truths.push(gt);
        }
        let prepared = prepare_dataset(&recs, pre)?;
        let detection = detection_score(&truths, &prepared.recordings);
        Ok(SynthDataset {
            prepared,
            truths,
            detection,
        })
    };
    Ok([build(&cfgs[0])?, build(&cfgs[1])?])
}
