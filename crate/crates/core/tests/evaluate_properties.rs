use std::f64::consts::PI;

use biobridge::evaluate::{aggregate, compare_reports, mav, mse, power_spectrum, psd, ratio, Band};
use biobridge::preprocess::{PreprocessConfig, SEGMENT_LEN, SEGMENT_RATE};
use biobridge::synth::{generate_dataset, SynthConfig};
use proptest::prelude::*;

fn tone(freq: f64, amp: f64, phase: f64) -> Vec<f64> {
    (0..SEGMENT_LEN)
        .map(|i| amp * (2.0 * PI * freq * i as f64 / SEGMENT_RATE + phase).sin())
        .collect()
}

fn two_pass(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mut mean = 0.0;
    for v in values {
        mean += v;
    }
    mean /= n;
    let mut var = 0.0;
    for v in values {
        var += (v - mean) * (v - mean);
    }
    (mean, (var / n).sqrt())
}

#[test]
fn hand_computed_pair() {
    let a = [0.1, 0.3];
    let b = [0.12, 0.28];
    assert!((mav(&a) - 0.2).abs() < 1e-15);
    assert!((mse(&a, &b).unwrap() - 4e-4).abs() < 1e-15);
    assert!((ratio(&a, &b).unwrap() - 0.2).abs() < 1e-12);
    assert_eq!(mse(&a, &a).unwrap(), 0.0);
    assert_eq!(ratio(&a, &a).unwrap(), 0.0);
    assert_eq!(mse(&[0.0; 5], &[1.0; 5]).unwrap(), 1.0);
}

#[test]
fn two_pair_toy_set() {
    // Pair 1: mav 0.2, mse 4e-4, ratio 0.2 %. Pair 2: mav 1, mse 0.01, ratio 1 %.
    let a1 = [0.1, 0.3];
    let b1 = [0.12, 0.28];
    let a2 = [1.0, -1.0];
    let b2 = [1.1, -0.9];
    let row = aggregate("toy", &[(&a1[..], &b1[..]), (&a2[..], &b2[..])], 118).unwrap();
    assert_eq!(row.count, 2);
    assert!((row.mav_mean - 0.6).abs() < 1e-12 && (row.mav_std - 0.4).abs() < 1e-12);
    assert!((row.mse_mean - 0.0052).abs() < 1e-12 && (row.mse_std - 0.0048).abs() < 1e-12);
    assert!((row.ratio_mean_pct - 0.6).abs() < 1e-9 && (row.ratio_std_pct - 0.4).abs() < 1e-9);

    let same = aggregate("same", &[(&a1[..], &a1[..]), (&a2[..], &a2[..])], 0).unwrap();
    assert_eq!((same.mse_mean, same.mse_std), (0.0, 0.0));
}

#[test]
fn constant_segments_have_empty_bands() {
    let r = psd(&[vec![0.7; SEGMENT_LEN]], SEGMENT_RATE).unwrap();
    assert!((r.mean[0] - 0.49).abs() < 1e-12);
    assert!(r.band_means.iter().all(|b| b.abs() < 1e-20));
}

#[test]
fn five_hertz_lives_in_theta() {
    let r = psd(&[tone(5.0, 1.0, 0.0), tone(5.0, 1.0, 1.0)], SEGMENT_RATE).unwrap();
    let total: f64 = r.band_powers.iter().sum();
    assert!(r.band_powers[1] / total >= 0.95);
    let peak = (0..r.mean.len()).max_by(|&a, &b| r.mean[a].total_cmp(&r.mean[b])).unwrap();
    assert_eq!(peak, 25);
    assert!((r.freqs[25] - 5.0).abs() < 1e-12);
}

fn one_and_ten_hertz() -> biobridge::evaluate::SpectralReport {
    let x: Vec<f64> = tone(1.0, 1.0, 0.0).iter().zip(tone(10.0, 1.0, 0.3)).map(|(a, b)| a + b).collect();
    psd(&[x], SEGMENT_RATE).unwrap()
}

#[test]
fn one_and_ten_hertz_share_band_power() {
    let r = one_and_ten_hertz();
    let (delta, alpha) = (r.band_powers[0], r.band_powers[2]);
    assert!((delta - alpha).abs() / alpha < 0.05, "{delta} vs {alpha}");
    assert!(Band::Delta.contains(1.0) && Band::Alpha.contains(10.0));
}

#[test]
fn one_and_ten_hertz_share_band_means() {
    let r = one_and_ten_hertz();
    let (delta, alpha) = (r.band_means[0], r.band_means[2]);
    assert!((delta - alpha).abs() / alpha < 0.05, "delta {delta:.4e} vs alpha {alpha:.4e}");
}

#[test]
fn band_edges_belong_upward() {
    assert!(Band::Theta.contains(3.0) && !Band::Delta.contains(3.0));
    assert!(Band::Alpha.contains(8.0) && Band::Beta.contains(12.0));
    assert!(Band::Beta.contains(20.0) && !Band::Delta.contains(0.0));
}

#[test]
fn doubled_report_differs_by_one() {
    let segs = [tone(2.0, 1.0, 0.0), tone(9.0, 0.5, 0.2), tone(15.0, 0.3, 0.0)];
    let a = psd(&segs, SEGMENT_RATE).unwrap();
    assert!(compare_reports(&a, &a).unwrap().band_rel_diff.iter().all(|d| *d == 0.0));
    let mut b = a.clone();
    b.band_means.iter_mut().for_each(|v| *v *= 2.0);
    for d in compare_reports(&a, &b).unwrap().band_rel_diff {
        assert!((d - 1.0).abs() < 1e-12);
    }
}

#[test]
fn disjoint_halves_of_one_dataset_agree() {
    let cfgs = [SynthConfig::eeg_like(10, 0), SynthConfig::fmeg_like(10, 0)];
    for d in generate_dataset(&cfgs, &PreprocessConfig::default()).unwrap() {
        let values: Vec<&Vec<f64>> = d
            .prepared
            .train
            .segments
            .iter()
            .chain(&d.prepared.test.segments)
            .map(|s| &s.values)
            .collect();
        let even: Vec<&Vec<f64>> = values.iter().step_by(2).copied().collect();
        let odd: Vec<&Vec<f64>> = values.iter().skip(1).step_by(2).copied().collect();
        let cmp = compare_reports(&psd(&even, SEGMENT_RATE).unwrap(), &psd(&odd, SEGMENT_RATE).unwrap()).unwrap();
        assert!(cmp.max_band_diff() < 0.15, "{}: {:?}", d.prepared.modality, cmp.band_rel_diff);
    }
}

proptest! {
    #[test]
    fn parseval(x in prop::collection::vec(-2.0f64..2.0, 8..400)) {
        let total: f64 = power_spectrum(&x).iter().sum();
        let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
        prop_assume!(ms > 1e-12);
        prop_assert!((total - ms).abs() <= 1e-6 * ms);
    }

    #[test]
    fn band_means_ignore_order_and_scale_quadratically(
        seed_vals in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, SEGMENT_LEN), 2..6),
        k in 0.1f64..10.0,
        rot in 0usize..6,
    ) {
        let a = psd(&seed_vals, SEGMENT_RATE).unwrap();
        let mut shuffled = seed_vals.clone();
        let r = rot % shuffled.len();
        shuffled.rotate_left(r);
        shuffled.reverse();
        let b = psd(&shuffled, SEGMENT_RATE).unwrap();
        for (x, y) in a.band_means.iter().zip(&b.band_means) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-30));
        }
        let scaled: Vec<Vec<f64>> = seed_vals.iter().map(|s| s.iter().map(|v| v * k).collect()).collect();
        let c = psd(&scaled, SEGMENT_RATE).unwrap();
        for (x, y) in a.band_means.iter().zip(&c.band_means) {
            prop_assert!((y - k * k * x).abs() <= 1e-9 * (k * k * x).abs().max(1e-30));
        }
    }

    #[test]
    fn mse_is_symmetric(pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..50)) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        prop_assert_eq!(mse(&a, &b).unwrap(), mse(&b, &a).unwrap());
    }

    #[test]
    fn aggregate_matches_two_pass(
        rows in prop::collection::vec(prop::collection::vec((0.05f64..3.0, -0.5f64..0.5), 4), 1..8),
    ) {
        let originals: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|p| p.0).collect()).collect();
        let others: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|p| p.0 + p.1).collect()).collect();
        let pairs: Vec<(&[f64], &[f64])> = originals.iter().zip(&others).map(|(a, b)| (a.as_slice(), b.as_slice())).collect();
        let row = aggregate("p", &pairs, 0).unwrap();

        let mut mses = Vec::new();
        let mut ratios = Vec::new();
        for (a, b) in originals.iter().zip(&others) {
            let m = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
            let scale = a.iter().map(|x| x.abs()).sum::<f64>() / a.len() as f64;
            mses.push(m);
            ratios.push(100.0 * m / scale);
        }
        let (m, s) = two_pass(&mses);
        prop_assert!((row.mse_mean - m).abs() <= 1e-12 * m.max(1e-12));
        prop_assert!((row.mse_std - s).abs() <= 1e-9 * m.max(1e-12));
        let (m, s) = two_pass(&ratios);
        prop_assert!((row.ratio_mean_pct - m).abs() <= 1e-12 * m.max(1e-12));
        prop_assert!((row.ratio_std_pct - s).abs() <= 1e-9 * m.max(1e-12));
    }
}
