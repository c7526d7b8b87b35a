//! Multi-channel recordings and their on-disk container.
//!
//! A recording directory holds `recording.toml` (metadata, channel labels,
//! artifact mask) and one `channel_NN.f32` file per channel with the samples
//! packed as little-endian `f32`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

/// Acquisition modality. Determines physical units and default artifact
/// threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Eeg,
    Fmeg,
}

impl Modality {
    pub const ALL: [Modality; 2] = [Modality::Eeg, Modality::Fmeg];

    pub fn units(self) -> &'static str {
        match self {
            Modality::Eeg => "uV",
            Modality::Fmeg => "fT",
        }
    }

    /// Amplitude above which a sample is treated as an artifact.
    pub fn artifact_threshold(self) -> f64 {
        match self {
            Modality::Eeg => 500.0,
            Modality::Fmeg => 2000.0,
        }
    }

    pub fn other(self) -> Modality {
        match self {
            Modality::Eeg => Modality::Fmeg,
            Modality::Fmeg => Modality::Eeg,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Eeg => "eeg",
            Modality::Fmeg => "fmeg",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "eeg" => Ok(Modality::Eeg),
            "fmeg" | "meg" => Ok(Modality::Fmeg),
            other => Err(Error::Config(format!("unknown modality `{other}`"))),
        }
    }
}

/// Half-open time interval `[start, end)` in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub fn new(start: f64, end: f64) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> f64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlaps(&self, other: &Interval) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn overlap(&self, other: &Interval) -> f64 {
        (self.end.min(other.end) - self.start.max(other.start)).max(0.0)
    }
}

/// Sort intervals and merge any that overlap or touch. Empty intervals are
/// dropped.
pub fn merge_intervals(mut intervals: Vec<Interval>) -> Vec<Interval> {
    intervals.retain(|iv| !iv.is_empty());
    intervals.sort_by(|a, b| a.start.total_cmp(&b.start));
    let mut merged: Vec<Interval> = Vec::with_capacity(intervals.len());
    for iv in intervals {
        match merged.last_mut() {
            Some(last) if iv.start <= last.end => last.end = last.end.max(iv.end),
            _ => merged.push(iv),
        }
    }
    merged
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub id: String,
    pub modality: Modality,
    pub channels: Vec<String>,
    /// One sample vector per channel, all the same length.
    pub samples: Vec<Vec<f64>>,
    pub rate: f64,
    /// Canonical (sorted, disjoint) artifact mask in seconds.
    pub masked: Vec<Interval>,
}

impl Recording {
    pub fn new(
        id: impl Into<String>,
        modality: Modality,
        channels: Vec<String>,
        samples: Vec<Vec<f64>>,
        rate: f64,
        masked: Vec<Interval>,
    ) -> Result<Self> {
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(Error::Config(format!("sample rate must be positive, got {rate}")));
        }
        if channels.len() != samples.len() {
            return Err(Error::LengthMismatch {
                left: channels.len(),
                right: samples.len(),
            });
        }
        if let Some(first) = samples.first() {
            if let Some(bad) = samples.iter().find(|s| s.len() != first.len()) {
                return Err(Error::LengthMismatch {
                    left: first.len(),
                    right: bad.len(),
                });
            }
        }
        let mut rec = Self {
            id: id.into(),
            modality,
            channels,
            samples,
            rate,
            masked: Vec::new(),
        };
        rec.set_masked(masked);
        Ok(rec)
    }

    pub fn len(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.rate
    }

    /// Replace the mask with the canonical form of `masked`, clipped to the
    /// recording duration.
    pub fn set_masked(&mut self, masked: Vec<Interval>) {
        let duration = self.duration();
        let clipped = masked
            .into_iter()
            .map(|iv| Interval::new(iv.start.max(0.0), iv.end.min(duration)))
            .collect();
        self.masked = merge_intervals(clipped);
    }

    /// Per-sample mask flags derived from the interval mask.
    pub fn sample_mask(&self) -> Vec<bool> {
        let mut flags = vec![false; self.len()];
        for iv in &self.masked {
            let lo = (iv.start * self.rate).ceil().max(0.0) as usize;
            let hi = ((iv.end * self.rate).ceil() as usize).min(flags.len());
            for f in flags.iter_mut().take(hi).skip(lo) {
                *f = true;
            }
        }
        flags
    }

    pub fn is_masked(&self, window: &Interval) -> bool {
        self.masked.iter().any(|m| m.overlaps(window))
    }

    /// Same metadata, new sample data at a new rate.
    pub fn with_samples(&self, samples: Vec<Vec<f64>>, rate: f64) -> Result<Recording> {
        Recording::new(
            self.id.clone(),
            self.modality,
            self.channels.clone(),
            samples,
            rate,
            self.masked.clone(),
        )
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        io::create_dir(dir)?;
        let meta = RecordingMeta {
            id: self.id.clone(),
            modality: self.modality,
            rate: self.rate,
            units: self.modality.units().to_string(),
            samples_per_channel: self.len(),
            channels: self.channels.clone(),
            masked: self.masked.iter().map(|iv| [iv.start, iv.end]).collect(),
        };
        let text = toml::to_string(&meta)
            .map_err(|e| Error::format("recording manifest", e.to_string()))?;
        io::write_text(&dir.join(MANIFEST), &text)?;
        for (idx, channel) in self.samples.iter().enumerate() {
            io::write_f32(&dir.join(channel_file(idx)), channel)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Recording> {
        let text = io::read_text(&dir.join(MANIFEST))?;
        let meta: RecordingMeta =
            toml::from_str(&text).map_err(|e| Error::format("recording manifest", e.to_string()))?;
        if meta.units != meta.modality.units() {
            return Err(Error::format(
                "recording manifest",
                format!("units `{}` do not match modality {}", meta.units, meta.modality),
            ));
        }
        let mut samples = Vec::with_capacity(meta.channels.len());
        for idx in 0..meta.channels.len() {
            let channel = io::read_f32(&dir.join(channel_file(idx)))?;
            if channel.len() != meta.samples_per_channel {
                return Err(Error::format(
                    "recording channel",
                    format!("channel {idx}: {} samples, manifest says {}", channel.len(), meta.samples_per_channel),
                ));
            }
            samples.push(channel);
        }
        Recording::new(
            meta.id,
            meta.modality,
            meta.channels,
            samples,
            meta.rate,
            meta.masked.into_iter().map(|[a, b]| Interval::new(a, b)).collect(),
        )
    }

    /// Load every recording directory below `dir`, sorted by id.
    pub fn load_all(dir: &Path) -> Result<Vec<Recording>> {
        let mut out = Vec::new();
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        for entry in entries {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.join(MANIFEST).is_file() {
                out.push(Recording::load(&path)?);
            }
        }
        out.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(out)
    }
}

const MANIFEST: &str = "recording.toml";

fn channel_file(idx: usize) -> String {
    format!("channel_{idx:02}.f32")
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordingMeta {
    id: String,
    modality: Modality,
    rate: f64,
    units: String,
    samples_per_channel: usize,
    channels: Vec<String>,
    masked: Vec<[f64; 2]>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_joins_overlapping_and_touching() {
        let merged = merge_intervals(vec![
            Interval::new(5.0, 6.0),
            Interval::new(0.0, 2.0),
            Interval::new(1.5, 3.0),
            Interval::new(3.0, 4.0),
            Interval::new(7.0, 7.0),
        ]);
        assert_eq!(merged, vec![Interval::new(0.0, 4.0), Interval::new(5.0, 6.0)]);
    }

    #[test]
    fn ragged_channels_are_rejected() {
        let err = Recording::new(
            "r",
            Modality::Eeg,
            vec!["a".into(), "b".into()],
            vec![vec![0.0; 4], vec![0.0; 3]],
            256.0,
            vec![],
        );
        assert!(matches!(err, Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn mask_is_clipped_to_duration() {
        let rec = Recording::new(
            "r",
            Modality::Fmeg,
            vec!["a".into()],
            vec![vec![0.0; 512]],
            256.0,
            vec![Interval::new(-1.0, 0.5), Interval::new(1.5, 9.0)],
        )
        .unwrap();
        assert_eq!(rec.masked, vec![Interval::new(0.0, 0.5), Interval::new(1.5, 2.0)]);
        let flags = rec.sample_mask();
        assert!(flags[0] && flags[127] && !flags[128] && flags[384] && flags[511]);
    }

    #[test]
    fn container_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rec = Recording::new(
            "eeg_007",
            Modality::Eeg,
            vec!["Fp2-C4".into(), "Cz-Pz".into()],
            vec![vec![1.0, 2.0, 3.0], vec![-0.5, 0.25, 8.0]],
            256.0,
            vec![Interval::new(0.0, 0.004)],
        )
        .unwrap();
        rec.save(dir.path()).unwrap();
        assert_eq!(Recording::load(dir.path()).unwrap(), rec);
    }
}
