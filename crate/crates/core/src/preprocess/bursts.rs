//! Burst detection by multi-channel voting on smoothed NLEO power.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::nleo::{nleo, smooth_abs};
use crate::preprocess::{merge_intervals, Interval, Recording};

/// Smoothing window for |NLEO|: 1.5 s at 256 Hz.
pub const NLEO_WINDOW: usize = 384;
/// Bursts closer than this (seconds) are merged.
pub const MERGE_GAP: f64 = 2.0;
pub const DEFAULT_MULTIPLIER: f64 = 3.0;

/// Sorted, disjoint burst intervals in seconds. Everything else is IBI.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BurstAnnotation {
    pub intervals: Vec<Interval>,
}

impl BurstAnnotation {
    pub fn total_duration(&self) -> f64 {
        self.intervals.iter().map(Interval::len).sum()
    }

    pub fn min_gap(&self) -> Option<f64> {
        self.intervals
            .windows(2)
            .map(|w| w[1].start - w[0].end)
            .min_by(f64::total_cmp)
    }
}

/// Smoothed |NLEO| of one channel.
pub fn nleo_power(channel: &[f64], window: usize) -> Result<Vec<f64>> {
    Ok(smooth_abs(&nleo(channel)?, window))
}

/// Per-channel threshold: `multiplier * median(smoothed |NLEO|)` over the
/// unmasked samples of that channel.
pub fn calibrate_threshold(rec: &Recording, multiplier: f64) -> Result<Vec<f64>> {
    if !(multiplier > 0.0) {
        return Err(Error::Config(format!("NLEO multiplier must be positive, got {multiplier}")));
    }
    let mask = rec.sample_mask();
    rec.samples
        .iter()
        .zip(&rec.channels)
        .map(|(ch, label)| {
            let power = nleo_power(ch, NLEO_WINDOW)?;
            threshold_from_power(&power, &mask, multiplier).ok_or_else(|| Error::Calibration {
                channel: label.clone(),
            })
        })
        .collect()
}

pub(crate) fn threshold_from_power(power: &[f64], mask: &[bool], multiplier: f64) -> Option<f64> {
    let mut kept: Vec<f64> = power
        .iter()
        .zip(mask)
        .filter(|(_, &m)| !m)
        .map(|(&p, _)| p)
        .collect();
    if kept.is_empty() {
        return None;
    }
    kept.sort_by(f64::total_cmp);
    let n = kept.len();
    let median = if n % 2 == 1 {
        kept[n / 2]
    } else {
        0.5 * (kept[n / 2 - 1] + kept[n / 2])
    };
    Some(multiplier * median)
}

/// Detect bursts on a 256 Hz recording given one threshold per channel.
pub fn detect_bursts(rec: &Recording, thresholds: &[f64]) -> Result<BurstAnnotation> {
    if rec.n_channels() == 0 {
        return Err(Error::EmptyRecording);
    }
    if thresholds.len() != rec.n_channels() {
        return Err(Error::LengthMismatch {
            left: rec.n_channels(),
            right: thresholds.len(),
        });
    }
    let power = rec
        .samples
        .iter()
        .map(|ch| nleo_power(ch, NLEO_WINDOW))
        .collect::<Result<Vec<_>>>()?;
    vote_bursts(&power, thresholds, rec.rate, &rec.sample_mask())
}

/// Voting stage of [`detect_bursts`], on precomputed per-channel power.
///
/// A sample is burst-active when at least `ceil(C/2)` channels exceed their
/// threshold and the sample is not masked. Active runs become intervals and
/// runs separated by less than [`MERGE_GAP`] are merged.
pub fn vote_bursts(power: &[Vec<f64>], thresholds: &[f64], rate: f64, mask: &[bool]) -> Result<BurstAnnotation> {
    let n_channels = power.len();
    if n_channels == 0 {
        return Err(Error::EmptyRecording);
    }
    let quorum = n_channels.div_ceil(2);
    let n = power[0].len();
    let active = (0..n).map(|i| {
        !mask.get(i).copied().unwrap_or(false)
            && power.iter().zip(thresholds).filter(|(p, &thr)| p[i] > thr).count() >= quorum
    });

    let mut runs = Vec::new();
    let mut open: Option<usize> = None;
    for (i, on) in active.enumerate() {
        match (on, open) {
            (true, None) => open = Some(i),
            (false, Some(s)) => {
                runs.push(Interval::new(s as f64 / rate, i as f64 / rate));
                open = None;
            }
            _ => {}
        }
    }
    if let Some(s) = open {
        runs.push(Interval::new(s as f64 / rate, n as f64 / rate));
    }
    Ok(BurstAnnotation {
        intervals: merge_close(runs, MERGE_GAP),
    })
}

/// Merge intervals whose gap is strictly shorter than `gap`.
pub fn merge_close(intervals: Vec<Interval>, gap: f64) -> Vec<Interval> {
    let mut out: Vec<Interval> = Vec::with_capacity(intervals.len());
    for iv in merge_intervals(intervals) {
        match out.last_mut() {
            Some(last) if iv.start - last.end < gap => last.end = iv.end,
            _ => out.push(iv),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::Modality;
    use proptest::prelude::*;

    const RATE: f64 = 256.0;

    fn power_with(intervals: &[(f64, f64)], n: usize) -> Vec<f64> {
        let mut p = vec![0.1; n];
        for &(a, b) in intervals {
            for v in p.iter_mut().take((b * RATE) as usize).skip((a * RATE) as usize) {
                *v = 5.0;
            }
        }
        p
    }

    #[test]
    fn half_of_the_channels_is_enough() {
        let n = (10.0 * RATE) as usize;
        let power = vec![
            power_with(&[(1.0, 6.0)], n),
            power_with(&[(1.0, 6.0)], n),
            power_with(&[], n),
            power_with(&[], n),
        ];
        let ann = vote_bursts(&power, &[1.0; 4], RATE, &[]).unwrap();
        assert_eq!(ann.intervals, vec![Interval::new(1.0, 6.0)]);
    }

    #[test]
    fn one_of_four_is_not_enough() {
        let n = (10.0 * RATE) as usize;
        let power = vec![power_with(&[(1.0, 6.0)], n), power_with(&[], n), power_with(&[], n), power_with(&[], n)];
        assert!(vote_bursts(&power, &[1.0; 4], RATE, &[]).unwrap().intervals.is_empty());
    }

    #[test]
    fn short_gaps_are_merged() {
        let n = (12.0 * RATE) as usize;
        let power = vec![power_with(&[(0.0, 3.0), (4.0, 8.0)], n)];
        let ann = vote_bursts(&power, &[1.0], RATE, &[]).unwrap();
        assert_eq!(ann.intervals, vec![Interval::new(0.0, 8.0)]);
    }

    #[test]
    fn long_gaps_are_kept() {
        let n = (12.0 * RATE) as usize;
        let power = vec![power_with(&[(0.0, 3.0), (5.0, 8.0)], n)];
        let ann = vote_bursts(&power, &[1.0], RATE, &[]).unwrap();
        assert_eq!(ann.intervals.len(), 2);
    }

    #[test]
    fn quiet_recording_has_no_bursts() {
        let n = 1000;
        let power = vec![vec![0.1; n]; 3];
        assert!(vote_bursts(&power, &[1.0; 3], RATE, &[]).unwrap().intervals.is_empty());
    }

    #[test]
    fn masked_samples_do_not_vote() {
        let n = (10.0 * RATE) as usize;
        let power = vec![power_with(&[(1.0, 9.0)], n)];
        let mut mask = vec![false; n];
        for m in mask.iter_mut().take((9.0 * RATE) as usize).skip((4.0 * RATE) as usize) {
            *m = true;
        }
        let ann = vote_bursts(&power, &[1.0], RATE, &mask).unwrap();
        assert_eq!(ann.intervals, vec![Interval::new(1.0, 4.0)]);
    }

    #[test]
    fn zero_channels_is_an_error() {
        assert!(matches!(vote_bursts(&[], &[], RATE, &[]), Err(Error::EmptyRecording)));
        let rec = Recording::new("e", Modality::Eeg, vec![], vec![], RATE, vec![]).unwrap();
        assert!(matches!(detect_bursts(&rec, &[]), Err(Error::EmptyRecording)));
    }

    #[test]
    fn threshold_of_constant_power() {
        let power = vec![2.0; 100];
        assert_eq!(threshold_from_power(&power, &[false; 100], 1.5), Some(3.0));
    }

    #[test]
    fn unit_multiplier_is_the_median() {
        let power: Vec<f64> = (0..101).map(|i| i as f64).collect();
        assert_eq!(threshold_from_power(&power, &vec![false; 101], 1.0), Some(50.0));
    }

    #[test]
    fn fully_masked_channel_cannot_be_calibrated() {
        let rec = Recording::new(
            "m",
            Modality::Eeg,
            vec!["a".into()],
            vec![vec![1.0; 512]],
            RATE,
            vec![Interval::new(0.0, 2.0)],
        )
        .unwrap();
        assert!(matches!(calibrate_threshold(&rec, 3.0), Err(Error::Calibration { .. })));
    }

    #[test]
    fn threshold_separates_burst_and_background() {
        // 10:1 burst/IBI power: amplitudes in ratio sqrt(10)
        let mut x = Vec::new();
        for block in 0..8 {
            let amp = if block % 4 == 0 { 10f64.sqrt() } else { 1.0 };
            x.extend((0..(6.0 * RATE) as usize).map(|i| amp * (2.0 * std::f64::consts::PI * 6.0 * i as f64 / RATE).sin()));
        }
        let power = nleo_power(&x, NLEO_WINDOW).unwrap();
        let thr = threshold_from_power(&power, &vec![false; x.len()], 3.0).unwrap();
        let ibi_level = power[(9.0 * RATE) as usize];
        let burst_level = power[(3.0 * RATE) as usize];
        assert!((burst_level / ibi_level - 10.0).abs() < 0.1);
        assert!(ibi_level < thr && thr < burst_level, "{ibi_level} < {thr} < {burst_level}");
    }

    fn random_power(seed: u64, channels: usize, n: usize) -> Vec<Vec<f64>> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..channels)
            .map(|_| {
                let mut level: f64 = 0.5;
                (0..n)
                    .map(|_| {
                        if rng.random::<f64>() < 0.002 {
                            level = if level > 1.0 { 0.5 } else { 2.0 };
                        }
                        level * (0.8 + 0.4 * rng.random::<f64>())
                    })
                    .collect()
            })
            .collect()
    }

    proptest! {
        #[test]
        fn channel_order_does_not_matter(seed in 0u64..500, rot in 0usize..5) {
            let power = random_power(seed, 5, 4000);
            let thr = vec![1.0, 1.1, 0.9, 1.2, 1.0];
            let a = vote_bursts(&power, &thr, RATE, &[]).unwrap();
            let mut p2 = power.clone();
            let mut t2 = thr.clone();
            p2.rotate_left(rot);
            t2.rotate_left(rot);
            p2.swap(0, 4);
            t2.swap(0, 4);
            prop_assert_eq!(a, vote_bursts(&p2, &t2, RATE, &[]).unwrap());
        }

        #[test]
        fn joint_scaling_does_not_matter(seed in 0u64..500, k in 0.01f64..100.0) {
            let power = random_power(seed, 4, 4000);
            let thr = vec![1.0; 4];
            let a = vote_bursts(&power, &thr, RATE, &[]).unwrap();
            let scaled: Vec<Vec<f64>> = power.iter().map(|p| p.iter().map(|v| v * k * k).collect()).collect();
            let thr2: Vec<f64> = thr.iter().map(|t| t * k * k).collect();
            prop_assert_eq!(a, vote_bursts(&scaled, &thr2, RATE, &[]).unwrap());
        }

        #[test]
        fn output_gaps_are_at_least_two_seconds(seed in 0u64..500) {
            let power = random_power(seed, 3, 6000);
            let ann = vote_bursts(&power, &[1.0; 3], RATE, &[]).unwrap();
            if let Some(gap) = ann.min_gap() {
                prop_assert!(gap >= MERGE_GAP);
            }
            prop_assert_eq!(merge_close(ann.intervals.clone(), MERGE_GAP), ann.intervals);
        }
    }
}
