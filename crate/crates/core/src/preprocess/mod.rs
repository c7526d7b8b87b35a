//! Raw recordings to normalized 5-second burst segments.
//!
//! The per-recording chain is: zero-phase band-pass, amplitude artifact
//! masking, resampling to 256 Hz, NLEO burst detection, resampling to 64 Hz,
//! and windowing. [`prepare_dataset`] then normalizes with dataset-wide
//! min/max and splits by recording.

mod artifacts;
mod bursts;
mod filter;
mod nleo;
mod recording;
mod resample;
mod segment;

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use artifacts::{reject_amplitude_artifacts, ARTIFACT_MARGIN};
pub use bursts::{
    calibrate_threshold, detect_bursts, merge_close, nleo_power, vote_bursts, BurstAnnotation, DEFAULT_MULTIPLIER,
    MERGE_GAP, NLEO_WINDOW,
};
pub use filter::{bandpass_zero_phase, design_bandpass, filtfilt, Biquad};
pub use nleo::{nleo, smooth_abs};
pub use recording::{merge_intervals, Interval, Modality, Recording};
pub use resample::{resample, resample_channel};
pub use segment::{
    compute_norm_stats, denormalize, denormalize_values, normalize, segment_bursts, windows_per_burst, NormStats,
    Provenance, Segment, SegmentDataset, SEGMENT_HOP, SEGMENT_LEN, SEGMENT_RATE, SEGMENT_SECONDS,
};

use crate::error::{Error, Result};
use crate::io;

pub const ANALYSIS_RATE: f64 = 256.0;

/// Which segments contribute to the normalization range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormScope {
    /// Every segment of the modality, train and test.
    #[default]
    Dataset,
    /// Training segments only; test segments are clamped into range.
    TrainOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub band_lo: f64,
    pub band_hi: f64,
    /// Overrides the modality default (500 uV / 2000 fT) when set.
    pub artifact_threshold: Option<f64>,
    pub nleo_multiplier: f64,
    pub norm_scope: NormScope,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            band_lo: 0.5,
            band_hi: 20.0,
            artifact_threshold: None,
            nleo_multiplier: DEFAULT_MULTIPLIER,
            norm_scope: NormScope::Dataset,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

/// Output of the per-recording chain, before normalization.
#[derive(Debug, Clone)]
pub struct ProcessedRecording {
    pub id: String,
    pub annotation: BurstAnnotation,
    pub thresholds: Vec<f64>,
    pub masked: Vec<Interval>,
    pub segments: Vec<Segment>,
}

pub fn process_recording(rec: &Recording, cfg: &PreprocessConfig) -> Result<ProcessedRecording> {
    if rec.n_channels() == 0 {
        return Err(Error::EmptyRecording);
    }
    let threshold = cfg.artifact_threshold.unwrap_or_else(|| rec.modality.artifact_threshold());
    let filtered = bandpass_zero_phase(rec, cfg.band_lo, cfg.band_hi)?;
    let cleaned = reject_amplitude_artifacts(&filtered, threshold)?;
    let rec256 = resample(&cleaned, ANALYSIS_RATE)?;
    let thresholds = calibrate_threshold(&rec256, cfg.nleo_multiplier)?;
    let annotation = detect_bursts(&rec256, &thresholds)?;
    let rec64 = resample(&rec256, SEGMENT_RATE)?;
    let segments = segment_bursts(&rec64, &annotation);
    Ok(ProcessedRecording {
        id: rec.id.clone(),
        annotation,
        thresholds,
        masked: rec64.masked.clone(),
        segments,
    })
}

/// Recording-level train/test split. `test_fraction` of the recordings
/// (rounded) go to test, chosen by a seeded shuffle of the sorted ids.
pub fn split_recordings(ids: &[String], test_fraction: f64, seed: u64) -> (Vec<String>, Vec<String>) {
    let mut sorted = ids.to_vec();
    sorted.sort();
    sorted.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sorted.shuffle(&mut rng);
    let n_test = ((sorted.len() as f64 * test_fraction).round() as usize).min(sorted.len());
    let test = sorted.split_off(sorted.len() - n_test);
    let (mut train, mut test) = (sorted, test);
    train.sort();
    test.sort();
    (train, test)
}

/// Normalized, split segment data for one modality.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub modality: Modality,
    pub train: SegmentDataset,
    pub test: SegmentDataset,
    pub stats: NormStats,
    pub recordings: Vec<ProcessedRecording>,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    /// Samples clamped during normalization (only nonzero for train-only scope).
    pub clamped: usize,
}

pub fn prepare_dataset(recs: &[Recording], cfg: &PreprocessConfig) -> Result<PreparedData> {
    let modality = recs.first().ok_or(Error::Empty("recording list"))?.modality;
    if let Some(bad) = recs.iter().find(|r| r.modality != modality) {
        return Err(Error::ModalityMismatch {
            expected: modality.to_string(),
            got: bad.modality.to_string(),
        });
    }
    let processed = recs
        .iter()
        .map(|r| process_recording(r, cfg))
        .collect::<Result<Vec<_>>>()?;
    let ids: Vec<String> = recs.iter().map(|r| r.id.clone()).collect();
    let (train_ids, test_ids) = split_recordings(&ids, cfg.test_fraction, cfg.seed);

    let in_train = |s: &&Segment| train_ids.contains(&s.provenance.recording);
    let all = processed.iter().flat_map(|p| p.segments.iter());
    let stats = match cfg.norm_scope {
        NormScope::Dataset => compute_norm_stats(all.clone())?,
        NormScope::TrainOnly => compute_norm_stats(all.clone().filter(in_train))?,
    };

    let mut clamped = 0;
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for seg in all {
        let (n, c) = normalize(seg, &stats)?;
        clamped += c;
        if train_ids.contains(&seg.provenance.recording) {
            train.push(n);
        } else {
            test.push(n);
        }
    }
    if clamped > 0 {
        log::warn!("{clamped} samples fell outside the {modality} normalization range and were clamped");
    }
    Ok(PreparedData {
        modality,
        train: SegmentDataset {
            modality,
            segments: train,
            stats,
        },
        test: SegmentDataset {
            modality,
            segments: test,
            stats,
        },
        stats,
        recordings: processed,
        train_ids,
        test_ids,
        clamped,
    })
}

impl PreparedData {
    /// Layout: `train/`, `test/`, `norm_stats.toml`, `bursts.tsv`, `split.tsv`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.train.save(&dir.join("train"))?;
        self.test.save(&dir.join("test"))?;
        self.stats.save(&dir.join("norm_stats.toml"))?;
        let mut bursts = String::from("recording\tstart\tend\n");
        for rec in &self.recordings {
            for iv in &rec.annotation.intervals {
                writeln!(bursts, "{}\t{}\t{}", rec.id, iv.start, iv.end).unwrap();
            }
        }
        io::write_text(&dir.join("bursts.tsv"), &bursts)?;
        let mut split = String::from("recording\tsplit\n");
        for id in &self.train_ids {
            writeln!(split, "{id}\ttrain").unwrap();
        }
        for id in &self.test_ids {
            writeln!(split, "{id}\ttest").unwrap();
        }
        io::write_text(&dir.join("split.tsv"), &split)
    }
}
