//! Time-domain error tables and frequency-domain band comparisons.

use std::fmt::{self, Write as _};
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::bridge::TranslationTrace;
use crate::error::{Error, Result};
use crate::io;
use crate::preprocess::{Modality, SEGMENT_RATE};

/// Mean squared difference.
pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::Empty("segment"));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64)
}

/// Mean absolute value.
pub fn mav(a: &[f64]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().map(|v| v.abs()).sum::<f64>() / a.len() as f64
}

/// `100 * mse / mav`, with the MAV taken from the original signal.
pub fn ratio(original: &[f64], other: &[f64]) -> Result<f64> {
    let m = mse(original, other)?;
    let scale = mav(original);
    if scale == 0.0 {
        return Err(Error::ZeroMav);
    }
    Ok(100.0 * m / scale)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// One line of the error table; every statistic is over per-segment values.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub label: String,
    pub count: usize,
    pub mav_mean: f64,
    pub mav_std: f64,
    pub mse_mean: f64,
    pub mse_std: f64,
    pub ratio_mean_pct: f64,
    pub ratio_std_pct: f64,
    pub nfe: usize,
}

pub fn aggregate(label: &str, pairs: &[(&[f64], &[f64])], nfe: usize) -> Result<MetricRow> {
    if pairs.is_empty() {
        return Err(Error::Empty("segment pairs"));
    }
    let mut mavs = Vec::with_capacity(pairs.len());
    let mut mses = Vec::with_capacity(pairs.len());
    let mut ratios = Vec::with_capacity(pairs.len());
    for (orig, other) in pairs {
        mavs.push(mav(orig));
        mses.push(mse(orig, other)?);
        ratios.push(ratio(orig, other)?);
    }
    let (mav_mean, mav_std) = mean_std(&mavs);
    let (mse_mean, mse_std) = mean_std(&mses);
    let (ratio_mean_pct, ratio_std_pct) = mean_std(&ratios);
    Ok(MetricRow {
        label: label.to_string(),
        count: pairs.len(),
        mav_mean,
        mav_std,
        mse_mean,
        mse_std,
        ratio_mean_pct,
        ratio_std_pct,
        nfe,
    })
}

pub const TABLE_HEADER: &str = "label\tcount\tnfe\tmav_mean\tmav_std\tmse_mean\tmse_std\tratio_mean_pct\tratio_std_pct";

impl fmt::Display for MetricRow {
    /// Tab-separated, in [`TABLE_HEADER`] order.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}",
            self.label,
            self.count,
            self.nfe,
            self.mav_mean,
            self.mav_std,
            self.mse_mean,
            self.mse_std,
            self.ratio_mean_pct,
            self.ratio_std_pct
        )
    }
}

/// Full-scale values reported on clinical recordings (MSE and MAV in units
/// of 1e-3, ratio in percent), kept for side-by-side reading of desk-scale
/// tables. Entries are `(label, mse_mean, mse_std, ratio_mean, ratio_std)`.
pub const FULL_SCALE_REFERENCE: [(&str, f64, f64, f64, f64); 3] = [
    ("eeg heun nfe=118", 0.01, 0.06, 0.01, 0.01),
    ("fmeg heun nfe=118", 0.07, 0.61, 0.05, 0.20),
    ("eeg euler nfe=500", 0.17, 0.40, f64::NAN, f64::NAN),
];
/// Reported EEG mean absolute value `(mean, std)` in units of 1e-3.
pub const FULL_SCALE_EEG_MAV: (f64, f64) = (129.0, 122.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Band {
    Delta,
    Theta,
    Alpha,
    Beta,
}

impl Band {
    pub const ALL: [Band; 4] = [Band::Delta, Band::Theta, Band::Alpha, Band::Beta];

    /// `[lo, hi)`, except Beta which includes its 20 Hz upper edge.
    pub fn edges(self) -> (f64, f64) {
        match self {
            Band::Delta => (0.5, 3.0),
            Band::Theta => (3.0, 8.0),
            Band::Alpha => (8.0, 12.0),
            Band::Beta => (12.0, 20.0),
        }
    }

    pub fn contains(self, f: f64) -> bool {
        let (lo, hi) = self.edges();
        f >= lo && (f < hi || (self == Band::Beta && f == hi))
    }

    pub fn name(self) -> &'static str {
        match self {
            Band::Delta => "delta",
            Band::Theta => "theta",
            Band::Alpha => "alpha",
            Band::Beta => "beta",
        }
    }
}

/// One-sided power spectrum `|X_k|^2 / N^2`, doubled for bins that have a
/// negative-frequency twin. Its sum equals the mean square of the signal.
pub fn power_spectrum(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let norm = (n * n) as f64;
    (0..=n / 2)
        .map(|k| {
            let p = buf[k].norm_sqr() / norm;
            let mirrored = k != 0 && !(n % 2 == 0 && k == n / 2);
            if mirrored {
                2.0 * p
            } else {
                p
            }
        })
        .collect()
}

pub fn frequency_grid(n: usize, rate: f64) -> Vec<f64> {
    (0..=n / 2).map(|k| k as f64 * rate / n as f64).collect()
}

/// Segment-averaged spectrum with per-band summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralReport {
    pub rate: f64,
    pub segment_len: usize,
    pub count: usize,
    pub freqs: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Average of the mean-spectrum bins inside each band, in [`Band::ALL`] order.
    pub band_means: [f64; 4],
    /// Sum of the mean-spectrum bins inside each band.
    pub band_powers: [f64; 4],
}

pub fn psd<S: AsRef<[f64]>>(segments: &[S], rate: f64) -> Result<SpectralReport> {
    let first = segments.first().ok_or(Error::Empty("segment list"))?;
    let n = first.as_ref().len();
    if n == 0 {
        return Err(Error::Empty("segment"));
    }
    let spectra = segments
        .iter()
        .map(|s| {
            if s.as_ref().len() != n {
                return Err(Error::LengthMismatch {
                    left: s.as_ref().len(),
                    right: n,
                });
            }
            Ok(power_spectrum(s.as_ref()))
        })
        .collect::<Result<Vec<_>>>()?;
    let bins = n / 2 + 1;
    let mut mean = vec![0.0; bins];
    let mut std = vec![0.0; bins];
    for k in 0..bins {
        let col: Vec<f64> = spectra.iter().map(|s| s[k]).collect();
        (mean[k], std[k]) = mean_std(&col);
    }
    let freqs = frequency_grid(n, rate);
    let mut band_means = [0.0; 4];
    let mut band_powers = [0.0; 4];
    for (i, band) in Band::ALL.iter().enumerate() {
        let inside: Vec<f64> = freqs.iter().zip(&mean).filter(|(f, _)| band.contains(**f)).map(|(_, p)| *p).collect();
        band_powers[i] = inside.iter().sum();
        band_means[i] = if inside.is_empty() { 0.0 } else { band_powers[i] / inside.len() as f64 };
    }
    Ok(SpectralReport {
        rate,
        segment_len: n,
        count: segments.len(),
        freqs,
        mean,
        std,
        band_means,
        band_powers,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralComparison {
    /// `|a - b| / a` per band mean.
    pub band_rel_diff: [f64; 4],
    /// `|mean_a - mean_b| / |mean_a|` over the whole spectrum.
    pub spectrum_rel_l2: f64,
}

impl SpectralComparison {
    pub fn max_band_diff(&self) -> f64 {
        self.band_rel_diff.iter().copied().fold(0.0, f64::max)
    }
}

pub fn compare_reports(a: &SpectralReport, b: &SpectralReport) -> Result<SpectralComparison> {
    if a.freqs != b.freqs {
        return Err(Error::GridMismatch);
    }
    let mut band_rel_diff = [0.0; 4];
    for i in 0..4 {
        let (x, y) = (a.band_means[i], b.band_means[i]);
        band_rel_diff[i] = if x == 0.0 {
            if y == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (x - y).abs() / x
        };
    }
    let num = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den = a.mean.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok(SpectralComparison {
        band_rel_diff,
        spectrum_rel_l2: if den == 0.0 { 0.0 } else { num / den },
    })
}

/// Euclidean distance between the band-mean vectors of two reports.
pub fn band_distance(a: &SpectralReport, b: &SpectralReport) -> f64 {
    a.band_means
        .iter()
        .zip(&b.band_means)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Everything measured for one translation direction.
#[derive(Debug, Clone)]
pub struct DirectionReport {
    pub source: Modality,
    pub target: Modality,
    pub nfe: usize,
    /// Source vs reconstruction after the round trip.
    pub cycle: Option<MetricRow>,
    /// Mean per-segment MSE between each input and its translation.
    pub translation_mse: f64,
    pub original: SpectralReport,
    pub translated: SpectralReport,
    pub reconstructed: Option<SpectralReport>,
    pub reconstruction_vs_original: Option<SpectralComparison>,
}

impl DirectionReport {
    pub fn from_traces(traces: &[TranslationTrace]) -> Result<Self> {
        let first = traces.first().ok_or(Error::Empty("trace list"))?;
        let (source, target, nfe) = (first.source_modality, first.target_modality, first.nfe_total);
        let originals: Vec<&[f64]> = traces.iter().map(|t| t.source.as_slice()).collect();
        let translated: Vec<&[f64]> = traces.iter().map(|t| t.translated.as_slice()).collect();
        let recon: Option<Vec<&[f64]>> = traces.iter().map(|t| t.reconstructed.as_deref()).collect();
        let mut t_mse = Vec::with_capacity(traces.len());
        for (a, b) in originals.iter().zip(&translated) {
            t_mse.push(mse(a, b)?);
        }
        let original = psd(&originals, SEGMENT_RATE)?;
        let translated = psd(&translated, SEGMENT_RATE)?;
        let (cycle, reconstructed, comparison) = match recon {
            Some(recon) => {
                let pairs: Vec<(&[f64], &[f64])> = originals.iter().copied().zip(recon.iter().copied()).collect();
                let row = aggregate(&format!("{source} cycle via {target}"), &pairs, nfe)?;
                let report = psd(&recon, SEGMENT_RATE)?;
                let cmp = compare_reports(&original, &report)?;
                (Some(row), Some(report), Some(cmp))
            }
            None => (None, None, None),
        };
        Ok(Self {
            source,
            target,
            nfe,
            cycle,
            translation_mse: mean_std(&t_mse).0,
            original,
            translated,
            reconstructed,
            reconstruction_vs_original: comparison,
        })
    }
}

/// Translated spectra should sit nearer the real target-modality spectrum
/// than the source spectrum they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Nontriviality {
    pub source: Modality,
    pub target: Modality,
    pub to_target: f64,
    pub to_source: f64,
    /// Mean input-vs-translation MSE over mean cycle MSE.
    pub movement_ratio: f64,
}

impl Nontriviality {
    pub fn closer_to_target(&self) -> bool {
        self.to_target < self.to_source
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub directions: Vec<DirectionReport>,
}

impl Evaluation {
    pub fn from_trace_sets(sets: &[Vec<TranslationTrace>]) -> Result<Self> {
        let directions = sets.iter().map(|t| DirectionReport::from_traces(t)).collect::<Result<Vec<_>>>()?;
        if directions.is_empty() {
            return Err(Error::Empty("trace sets"));
        }
        Ok(Self { directions })
    }

    pub fn direction(&self, source: Modality) -> Option<&DirectionReport> {
        self.directions.iter().find(|d| d.source == source)
    }

    pub fn rows(&self) -> Vec<&MetricRow> {
        self.directions.iter().filter_map(|d| d.cycle.as_ref()).collect()
    }

    /// Needs both directions; the original spectrum of the opposite
    /// direction serves as the real target-modality reference.
    pub fn nontriviality(&self) -> Vec<Nontriviality> {
        self.directions
            .iter()
            .filter_map(|d| {
                let reference = self.direction(d.target)?;
                let cycle_mse = d.cycle.as_ref().map(|c| c.mse_mean)?;
                Some(Nontriviality {
                    source: d.source,
                    target: d.target,
                    to_target: band_distance(&d.translated, &reference.original),
                    to_source: band_distance(&d.translated, &d.original),
                    movement_ratio: if cycle_mse > 0.0 {
                        d.translation_mse / cycle_mse
                    } else {
                        f64::INFINITY
                    },
                })
            })
            .collect()
    }

    pub fn table(&self) -> String {
        let mut out = format!("{TABLE_HEADER}\n");
        for row in self.rows() {
            writeln!(out, "{row}").unwrap();
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for d in &self.directions {
            writeln!(s, "{} -> {} ({} segments, nfe {})", d.source, d.target, d.original.count, d.nfe).unwrap();
            if let Some(row) = &d.cycle {
                writeln!(
                    s,
                    "  cycle mse {:.4e} +- {:.4e}, ratio {:.4}% +- {:.4}%",
                    row.mse_mean, row.mse_std, row.ratio_mean_pct, row.ratio_std_pct
                )
                .unwrap();
            }
            if let Some(cmp) = &d.reconstruction_vs_original {
                let parts: Vec<String> = Band::ALL
                    .iter()
                    .zip(&cmp.band_rel_diff)
                    .map(|(b, v)| format!("{} {:.2}%", b.name(), 100.0 * v))
                    .collect();
                writeln!(s, "  reconstructed band-mean difference: {}", parts.join(", ")).unwrap();
            }
            writeln!(s, "  input vs translation mse {:.4e}", d.translation_mse).unwrap();
        }
        for n in self.nontriviality() {
            writeln!(
                s,
                "{} -> {}: band distance to real {} {:.4e}, to source {:.4e}; translation moved {:.1}x the cycle error",
                n.source, n.target, n.target, n.to_target, n.to_source, n.movement_ratio
            )
            .unwrap();
        }
        s
    }

    /// Writes `table.tsv`, `summary.txt` and per-direction plot data:
    /// `psd_<src>_reconstruction.tsv`, `psd_<src>_translation.tsv` and
    /// `bands_<src>.tsv`. Power is in squared normalized units per bin.
    pub fn save(&self, dir: &Path) -> Result<()> {
        io::create_dir(dir)?;
        io::write_text(&dir.join("table.tsv"), &self.table())?;
        io::write_text(&dir.join("summary.txt"), &self.summary())?;
        for d in &self.directions {
            let src = d.source.as_str();
            if let Some(recon) = &d.reconstructed {
                let mut t = String::from("freq_hz\toriginal_mean\toriginal_std\treconstructed_mean\treconstructed_std\n");
                for k in 0..d.original.freqs.len() {
                    writeln!(
                        t,
                        "{:.3}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}",
                        d.original.freqs[k], d.original.mean[k], d.original.std[k], recon.mean[k], recon.std[k]
                    )
                    .unwrap();
                }
                io::write_text(&dir.join(format!("psd_{src}_reconstruction.tsv")), &t)?;
            }
            let reference = self.direction(d.target).map(|r| &r.original);
            let mut t = String::from("freq_hz\toriginal_mean\ttranslated_mean\ttranslated_std\treal_target_mean\n");
            for k in 0..d.original.freqs.len() {
                let real = reference.map_or(f64::NAN, |r| r.mean[k]);
                writeln!(
                    t,
                    "{:.3}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}",
                    d.original.freqs[k], d.original.mean[k], d.translated.mean[k], d.translated.std[k], real
                )
                .unwrap();
            }
            io::write_text(&dir.join(format!("psd_{src}_translation.tsv")), &t)?;
            let mut t = String::from("band\toriginal\treconstructed\ttranslated\treal_target\n");
            for (i, band) in Band::ALL.iter().enumerate() {
                let recon = d.reconstructed.as_ref().map_or(f64::NAN, |r| r.band_means[i]);
                let real = reference.map_or(f64::NAN, |r| r.band_means[i]);
                writeln!(
                    t,
                    "{}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}",
                    band.name(),
                    d.original.band_means[i],
                    recon,
                    d.translated.band_means[i],
                    real
                )
                .unwrap();
            }
            io::write_text(&dir.join(format!("bands_{src}.tsv")), &t)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn sine(freq: f64, amp: f64) -> Vec<f64> {
        (0..320).map(|i| amp * (2.0 * PI * freq * i as f64 / 64.0).sin()).collect()
    }

    #[test]
    fn metric_examples() {
        let a = [0.1, 0.3];
        let b = [0.12, 0.28];
        assert!((mav(&a) - 0.2).abs() < 1e-15);
        assert!((mse(&a, &b).unwrap() - 4e-4).abs() < 1e-15);
        assert!((ratio(&a, &b).unwrap() - 0.2).abs() < 1e-12);
        assert_eq!(mse(&[0.0; 4], &[1.0; 4]).unwrap(), 1.0);
        assert_eq!(ratio(&a, &a).unwrap(), 0.0);
        assert!(matches!(ratio(&[0.0; 3], &[1.0; 3]), Err(Error::ZeroMav)));
        assert!(matches!(mse(&[0.0; 3], &[1.0; 2]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn aggregate_two_pairs() {
        // per-segment ratios 0.2% and 100 * 0.01 / 1 = 1%
        let (a1, b1) = ([0.1, 0.3], [0.12, 0.28]);
        let (a2, b2) = ([1.0, -1.0], [1.1, -0.9]);
        let row = aggregate("toy", &[(&a1, &b1), (&a2, &b2)], 7).unwrap();
        assert!((row.ratio_mean_pct - 0.6).abs() < 1e-12);
        assert!((row.ratio_std_pct - 0.4).abs() < 1e-12);
        assert!((row.mse_mean - (4e-4 + 1e-2) / 2.0).abs() < 1e-15);
        assert!((row.mav_mean - 0.6).abs() < 1e-15);
        assert_eq!((row.count, row.nfe), (2, 7));
    }

    #[test]
    fn constant_segments_put_power_at_dc() {
        let r = psd(&[vec![0.7; 320]], 64.0).unwrap();
        assert!((r.mean[0] - 0.49).abs() < 1e-12);
        assert!(r.band_means.iter().all(|v| v.abs() < 1e-20));
    }

    #[test]
    fn theta_sine_dominates_theta() {
        let r = psd(&[sine(5.0, 1.0)], 64.0).unwrap();
        let peak = (0..r.mean.len()).max_by(|&a, &b| r.mean[a].total_cmp(&r.mean[b])).unwrap();
        assert_eq!(peak, 25);
        let total: f64 = r.band_powers.iter().sum();
        assert!(r.band_powers[1] / total >= 0.95);
    }

    #[test]
    fn equal_amplitude_sines_share_band_power() {
        let x: Vec<f64> = sine(1.0, 1.0).iter().zip(sine(10.0, 1.0)).map(|(a, b)| a + b).collect();
        let r = psd(&[x], 64.0).unwrap();
        let (delta, alpha) = (r.band_powers[0], r.band_powers[2]);
        assert!((delta - alpha).abs() / delta < 0.05);
    }

    #[test]
    fn band_edges() {
        let grid = frequency_grid(320, 64.0);
        let count = |b: Band| grid.iter().filter(|f| b.contains(**f)).count();
        assert_eq!([count(Band::Delta), count(Band::Theta), count(Band::Alpha), count(Band::Beta)], [12, 25, 20, 41]);
        assert!(Band::Theta.contains(3.0) && !Band::Delta.contains(3.0));
        assert!(Band::Beta.contains(20.0));
    }

    #[test]
    fn comparison_scaling() {
        let mix = |fs: [f64; 4]| -> Vec<f64> {
            let parts: Vec<Vec<f64>> = fs.iter().map(|&f| sine(f, 1.0)).collect();
            (0..320).map(|i| parts.iter().map(|p| p[i]).sum()).collect()
        };
        let segs = vec![mix([2.0, 5.0, 10.0, 15.0]), mix([1.0, 4.0, 9.0, 18.0])];
        let a = psd(&segs, 64.0).unwrap();
        assert_eq!(compare_reports(&a, &a).unwrap().max_band_diff(), 0.0);
        let doubled: Vec<Vec<f64>> = segs.iter().map(|s| s.iter().map(|v| v * 2f64.sqrt()).collect()).collect();
        let b = psd(&doubled, 64.0).unwrap();
        let cmp = compare_reports(&a, &b).unwrap();
        for d in cmp.band_rel_diff {
            assert!((d - 1.0).abs() < 1e-9);
        }
        let other = psd(&[vec![0.0; 64]], 64.0).unwrap();
        assert!(matches!(compare_reports(&a, &other), Err(Error::GridMismatch)));
    }

    proptest! {
        #[test]
        fn parseval(x in prop::collection::vec(-2.0f64..2.0, 320)) {
            let total: f64 = power_spectrum(&x).iter().sum();
            let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
            prop_assert!((total - ms).abs() <= 1e-6 * ms.max(1e-12));
        }

        #[test]
        fn mse_is_symmetric(a in prop::collection::vec(-2.0f64..2.0, 16), b in prop::collection::vec(-2.0f64..2.0, 16)) {
            prop_assert_eq!(mse(&a, &b).unwrap(), mse(&b, &a).unwrap());
        }

        #[test]
        fn band_means_scale_quadratically(k in 0.1f64..10.0, seed in prop::collection::vec(-1.0f64..1.0, 640)) {
            let segs: Vec<Vec<f64>> = seed.chunks(320).map(|c| c.to_vec()).collect();
            let scaled: Vec<Vec<f64>> = segs.iter().map(|s| s.iter().map(|v| v * k).collect()).collect();
            let reversed: Vec<Vec<f64>> = segs.iter().rev().cloned().collect();
            let (a, b, c) = (psd(&segs, 64.0).unwrap(), psd(&scaled, 64.0).unwrap(), psd(&reversed, 64.0).unwrap());
            for i in 0..4 {
                prop_assert!((b.band_means[i] - k * k * a.band_means[i]).abs() <= 1e-9 * b.band_means[i].max(1e-12));
                prop_assert!((c.band_means[i] - a.band_means[i]).abs() <= 1e-12 * a.band_means[i].max(1e-12));
            }
        }
    }
}
