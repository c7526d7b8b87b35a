//! Fixed-length burst windows, min/max normalization, and the segment dataset
//! container.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::preprocess::{BurstAnnotation, Interval, Modality, Recording};

pub const SEGMENT_RATE: f64 = 64.0;
pub const SEGMENT_SECONDS: f64 = 5.0;
pub const SEGMENT_HOP: f64 = 2.5;
/// Samples per segment: 5 s at 64 Hz.
pub const SEGMENT_LEN: usize = 320;

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub recording: String,
    pub channel: String,
    /// Window start in seconds from the recording start.
    pub start: f64,
}

/// One single-channel burst window.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub values: Vec<f64>,
    pub modality: Modality,
    pub provenance: Provenance,
}

/// Number of windows a burst of `len` seconds yields per channel.
pub fn windows_per_burst(len: f64) -> usize {
    if len + EPS < SEGMENT_SECONDS {
        0
    } else {
        ((len - SEGMENT_SECONDS + EPS) / SEGMENT_HOP).floor() as usize + 1
    }
}

/// Cut every burst of at least 5 s into 5 s windows with 2.5 s hop, per
/// channel. Windows touching a masked interval are dropped.
pub fn segment_bursts(rec: &Recording, ann: &BurstAnnotation) -> Vec<Segment> {
    let mut out = Vec::new();
    for burst in &ann.intervals {
        for k in 0..windows_per_burst(burst.len()) {
            let start = burst.start + k as f64 * SEGMENT_HOP;
            let window = Interval::new(start, start + SEGMENT_SECONDS);
            if rec.is_masked(&window) {
                continue;
            }
            let first = (start * rec.rate).round() as usize;
            let len = (SEGMENT_SECONDS * rec.rate).round() as usize;
            if first + len > rec.len() {
                continue;
            }
            for (label, channel) in rec.channels.iter().zip(&rec.samples) {
                out.push(Segment {
                    values: channel[first..first + len].to_vec(),
                    modality: rec.modality,
                    provenance: Provenance {
                        recording: rec.id.clone(),
                        channel: label.clone(),
                        start,
                    },
                });
            }
        }
    }
    out
}

/// Dataset-wide amplitude range used for `[-1, 1]` normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub min: f64,
    pub max: f64,
    pub modality: Modality,
}

impl NormStats {
    pub fn new(min: f64, max: f64, modality: Modality) -> Result<Self> {
        if !(min < max) {
            return Err(Error::DegenerateStats { min, max });
        }
        Ok(Self { min, max, modality })
    }

    pub fn range(&self) -> f64 {
        self.max - self.min
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::format("norm stats", e.to_string()))?;
        io::write_text(path, &text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let stats: NormStats = toml::from_str(&io::read_text(path)?)
            .map_err(|e| Error::format("norm stats", e.to_string()))?;
        NormStats::new(stats.min, stats.max, stats.modality)
    }
}

pub fn compute_norm_stats<'a>(segments: impl IntoIterator<Item = &'a Segment>) -> Result<NormStats> {
    let mut iter = segments.into_iter().peekable();
    let modality = iter.peek().ok_or(Error::Empty("segment list"))?.modality;
    let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
    for seg in iter {
        if seg.modality != modality {
            return Err(Error::ModalityMismatch {
                expected: modality.to_string(),
                got: seg.modality.to_string(),
            });
        }
        for &v in &seg.values {
            min = min.min(v);
            max = max.max(v);
        }
    }
    NormStats::new(min, max, modality)
}

/// Map `[min, max]` onto `[-1, 1]`. Values outside the range are clamped; the
/// second element counts how many were.
pub fn normalize(seg: &Segment, stats: &NormStats) -> Result<(Segment, usize)> {
    check_modality(seg, stats)?;
    let mut clamped = 0;
    let values = seg
        .values
        .iter()
        .map(|&x| {
            let v = 2.0 * (x - stats.min) / stats.range() - 1.0;
            if !(-1.0..=1.0).contains(&v) {
                clamped += 1;
            }
            v.clamp(-1.0, 1.0)
        })
        .collect();
    Ok((
        Segment {
            values,
            ..seg.clone()
        },
        clamped,
    ))
}

/// Inverse of [`normalize`], back to physical units.
pub fn denormalize(seg: &Segment, stats: &NormStats) -> Result<Segment> {
    check_modality(seg, stats)?;
    Ok(Segment {
        values: denormalize_values(&seg.values, stats),
        ..seg.clone()
    })
}

pub fn denormalize_values(values: &[f64], stats: &NormStats) -> Vec<f64> {
    values.iter().map(|&v| (v + 1.0) / 2.0 * stats.range() + stats.min).collect()
}

fn check_modality(seg: &Segment, stats: &NormStats) -> Result<()> {
    if seg.modality != stats.modality {
        return Err(Error::ModalityMismatch {
            expected: stats.modality.to_string(),
            got: seg.modality.to_string(),
        });
    }
    Ok(())
}

/// A set of same-modality segments plus the statistics that normalized them.
///
/// On disk: `manifest.tsv` (one row per segment), `segments.f32` (packed
/// 320-sample records, little-endian `f32`), and `norm_stats.toml`.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentDataset {
    pub modality: Modality,
    pub segments: Vec<Segment>,
    pub stats: NormStats,
}

impl SegmentDataset {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        io::create_dir(dir)?;
        let mut manifest = String::new();
        writeln!(manifest, "# modality\t{}", self.modality).unwrap();
        writeln!(manifest, "# segment_len\t{SEGMENT_LEN}").unwrap();
        writeln!(manifest, "# count\t{}", self.segments.len()).unwrap();
        writeln!(manifest, "index\trecording\tchannel\tstart").unwrap();
        let mut blob = Vec::with_capacity(self.segments.len() * SEGMENT_LEN * 4);
        for (i, seg) in self.segments.iter().enumerate() {
            if seg.values.len() != SEGMENT_LEN {
                return Err(Error::LengthMismatch {
                    left: SEGMENT_LEN,
                    right: seg.values.len(),
                });
            }
            let p = &seg.provenance;
            writeln!(manifest, "{i}\t{}\t{}\t{}", p.recording, p.channel, p.start).unwrap();
            blob.extend(io::encode_f32(seg.values.iter().map(|&v| v as f32)));
        }
        io::write_text(&dir.join("manifest.tsv"), &manifest)?;
        io::write_bytes(&dir.join("segments.f32"), &blob)?;
        self.stats.save(&dir.join("norm_stats.toml"))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let stats = NormStats::load(&dir.join("norm_stats.toml"))?;
        let manifest = io::read_text(&dir.join("manifest.tsv"))?;
        let mut modality = None;
        let mut rows = Vec::new();
        for line in manifest.lines() {
            if let Some(meta) = line.strip_prefix("# ") {
                if let Some(m) = meta.strip_prefix("modality\t") {
                    modality = Some(m.parse::<Modality>()?);
                }
                continue;
            }
            if line.starts_with("index\t") || line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(Error::format("segment manifest", format!("bad row `{line}`")));
            }
            let start = cols[3]
                .parse::<f64>()
                .map_err(|e| Error::format("segment manifest", e.to_string()))?;
            rows.push(Provenance {
                recording: cols[1].to_string(),
                channel: cols[2].to_string(),
                start,
            });
        }
        let modality = modality.ok_or_else(|| Error::format("segment manifest", "missing modality"))?;
        let values = io::read_f32(&dir.join("segments.f32"))?;
        if values.len() != rows.len() * SEGMENT_LEN {
            return Err(Error::format(
                "segment blob",
                format!("{} values for {} segments", values.len(), rows.len()),
            ));
        }
        let segments = rows
            .into_iter()
            .zip(values.chunks_exact(SEGMENT_LEN))
            .map(|(provenance, v)| Segment {
                values: v.to_vec(),
                modality,
                provenance,
            })
            .collect();
        Ok(Self {
            modality,
            segments,
            stats,
        })
    }

    /// Segment values as one contiguous row-major matrix.
    pub fn flat_values(&self) -> Vec<f64> {
        self.segments.iter().flat_map(|s| s.values.iter().copied()).collect()
    }
}
