//! Acceptance battery. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.
//!
//! cargo test --release --test acceptance

use std::f64::consts::PI;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use biobridge::bridge::{cycle, load_traces, translate, SolverKind, SolverSpec, TranslationTrace};
use biobridge::diffusion::{CountingDenoiser, Denoiser, EdmConfig, GaussianMixtureOracle, MixtureComponent};
use biobridge::evaluate::{mse, power_spectrum, psd, ratio, SpectralReport};
use biobridge::pipeline::{self, PipelineConfig, StageStatus, REPORTS, TRACES};
use biobridge::preprocess::{
    compute_norm_stats, denormalize, merge_close, nleo, normalize, segment_bursts, vote_bursts, BurstAnnotation,
    Interval, Modality, PreprocessConfig, Provenance, Recording, Segment, MERGE_GAP, SEGMENT_RATE,
};
use biobridge::synth::{generate_dataset, SynthConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn seg(values: Vec<f64>, modality: Modality) -> Segment {
    Segment {
        values,
        modality,
        provenance: Provenance {
            recording: "acceptance".into(),
            channel: "c0".into(),
            start: 0.0,
        },
    }
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den
}

fn nfe_reproduction() -> Outcome {
    let edm = EdmConfig::default();
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, leg) in [("paper-heun", 59), ("paper-ddib", 250)] {
        let spec = SolverSpec::preset(name, &edm).unwrap();
        let src = CountingDenoiser::new(GaussianMixtureOracle::standard_gaussian());
        let tgt = CountingDenoiser::new(GaussianMixtureOracle::dirac(0.3));
        let t = translate(&src, &tgt, &seg(vec![0.2; 16], Modality::Eeg), &spec).unwrap();
        let (f, r) = (src.calls(), tgt.calls());
        ok &= f == leg && r == leg && t.nfe_forward == leg && t.nfe_reverse == leg && t.nfe_total == 2 * leg && f + r == t.nfe_total;
        parts.push(format!("{name} reported {} counted {f}/{r}", t.nfe_total));
    }
    outcome(ok, parts.join(", "))
}

fn solver_order() -> Outcome {
    let edm = EdmConfig::default();
    let start = [1.3, -0.4, 2.2];
    let g = GaussianMixtureOracle::standard_gaussian();
    let mut ok = true;
    let mut parts = Vec::new();
    for (kind, lo, hi) in [(SolverKind::Heun, 1.7, 2.2), (SolverKind::Euler, 0.8, 1.2)] {
        let errs: Vec<f64> = [10, 20, 40]
            .iter()
            .map(|&n| {
                let spec = SolverSpec::karras(kind, n, &edm).unwrap();
                let (out, _) = biobridge::bridge::ode_solve_reverse(&g, &start, 3, &spec).unwrap();
                out.iter()
                    .zip(&start)
                    .map(|(o, s)| (o - s / (1.0 + edm.sigma_max * edm.sigma_max).sqrt()).abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        let p: Vec<f64> = errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
        ok &= p.iter().all(|v| (lo..=hi).contains(v));
        parts.push(format!("{kind} p(10,20)={:.3} p(20,40)={:.3} in [{lo}, {hi}]", p[0], p[1]));
    }
    outcome(ok, parts.join(", "))
}

fn exact_bridge() -> Outcome {
    let (a, b) = (0.75, -1.25);
    let mut worst = 0.0f64;
    for kind in [SolverKind::Heun, SolverKind::Euler] {
        let spec = SolverSpec::karras(kind, 10, &EdmConfig::default()).unwrap();
        let x = seg(vec![a; 8], Modality::Eeg);
        let t = cycle(&GaussianMixtureOracle::dirac(a), &GaussianMixtureOracle::dirac(b), &x, &spec).unwrap();
        worst = worst
            .max(rel(&t.translated, &[b; 8]))
            .max(rel(t.reconstructed.as_ref().unwrap(), &x.values));
    }
    outcome(worst <= 1e-10, format!("worst relative error {worst:.2e} (<= 1e-10)"))
}

// log sum_k w_k N(x; mu_k, (s_k^2 + sigma^2) I), written out independently.
fn mixture_log_density(comps: &[MixtureComponent], x: &[f64], sigma: f64) -> f64 {
    let total: f64 = comps.iter().map(|c| c.weight).sum();
    let terms: Vec<f64> = comps
        .iter()
        .map(|c| {
            let var = c.std * c.std + sigma * sigma;
            let sq: f64 = x.iter().zip(&c.mean).map(|(xi, m)| (xi - m).powi(2)).sum();
            (c.weight / total).ln() - 0.5 * sq / var - 0.5 * x.len() as f64 * (2.0 * PI * var).ln()
        })
        .collect();
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

fn score_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let dim = 3;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let comps: Vec<MixtureComponent> = (0..rng.random_range(1..=3))
            .map(|_| MixtureComponent {
                weight: rng.random_range(0.2..1.0),
                mean: (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect(),
                std: rng.random_range(0.1..1.5),
            })
            .collect();
        let oracle = GaussianMixtureOracle::new(comps.clone()).unwrap();
        let sigma = 10f64.powf(rng.random_range(-2.0..1.0));
        let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
        let d = oracle.denoise(&x, sigma).unwrap();
        let score: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| (di - xi) / (sigma * sigma)).collect();
        let h = 1e-5 * sigma.max(0.05);
        let fd: Vec<f64> = (0..dim)
            .map(|i| {
                let (mut up, mut down) = (x.clone(), x.clone());
                up[i] += h;
                down[i] -= h;
                (mixture_log_density(&comps, &up, sigma) - mixture_log_density(&comps, &down, sigma)) / (2.0 * h)
            })
            .collect();
        worst = worst.max(rel(&score, &fd));
    }
    outcome(worst <= 1e-3, format!("worst relative error {worst:.2e} over 100 draws (<= 1e-3)"))
}

fn preprocessing_golden() -> Outcome {
    let mut failures = Vec::new();
    let ramp: Vec<f64> = (0..40).map(|i| i as f64).collect();
    if !nleo(&ramp).unwrap()[3..].iter().all(|v| *v == -2.0) {
        failures.push("nleo ramp");
    }
    let sine: Vec<f64> = (0..40).map(|i| (PI / 2.0 * i as f64).sin()).collect();
    if !nleo(&sine).unwrap()[3..].iter().all(|v| v.abs() < 1e-12) {
        failures.push("nleo sinusoid");
    }

    let rate = 256.0;
    let n = 8 * 256;
    let power: Vec<Vec<f64>> = (0..4)
        .map(|c| {
            (0..n)
                .map(|i| if c < 2 && (256..1536).contains(&i) { 5.0 } else { 0.0 })
                .collect()
        })
        .collect();
    if vote_bursts(&power, &[1.0; 4], rate, &[]).unwrap().intervals != vec![Interval::new(1.0, 6.0)] {
        failures.push("half-channel vote");
    }
    if merge_close(vec![Interval::new(0.0, 3.0), Interval::new(4.0, 8.0)], MERGE_GAP) != vec![Interval::new(0.0, 8.0)] {
        failures.push("merge");
    }

    let rec = |channels: usize| {
        let samples = (0..channels).map(|_| vec![0.0; 64 * 20]).collect();
        let names = (0..channels).map(|c| format!("c{c}")).collect();
        Recording::new("g", Modality::Eeg, names, samples, 64.0, vec![]).unwrap()
    };
    let ann = |a: f64, b: f64| BurstAnnotation {
        intervals: vec![Interval::new(a, b)],
    };
    let counts = [
        segment_bursts(&rec(1), &ann(0.0, 5.0)).len(),
        segment_bursts(&rec(2), &ann(0.0, 7.5)).len(),
        segment_bursts(&rec(1), &ann(0.0, 4.99)).len(),
    ];
    if counts != [1, 4, 0] {
        failures.push("segment counts");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let raw = seg((0..320).map(|_| rng.random_range(-300.0..300.0)).collect(), Modality::Eeg);
    let stats = compute_norm_stats(std::slice::from_ref(&raw)).unwrap();
    let (normed, _) = normalize(&raw, &stats).unwrap();
    let back = denormalize(&normed, &stats).unwrap();
    let dev = back.values.iter().zip(&raw.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let extremes = normed.values.iter().copied().fold(f64::INFINITY, f64::min) == -1.0
        && normed.values.iter().copied().fold(f64::NEG_INFINITY, f64::max) == 1.0;
    if dev > 1e-6 * stats.range() || !extremes {
        failures.push("normalization round trip");
    }
    let detail = if failures.is_empty() {
        "nleo, voting, merge, segment counts 1/4/0, normalization round trip".to_string()
    } else {
        format!("failed: {}", failures.join(", "))
    };
    outcome(failures.is_empty(), detail)
}

fn burst_detection() -> Outcome {
    let cfgs = [SynthConfig::eeg_like(10, 0), SynthConfig::fmeg_like(10, 0)];
    let sets = generate_dataset(&cfgs, &PreprocessConfig::default()).unwrap();
    let f1: Vec<f64> = sets.iter().map(|s| s.detection.f1).collect();
    outcome(
        f1.iter().all(|f| *f >= 0.9),
        format!("F1 eeg {:.3}, fmeg {:.3} (>= 0.9)", f1[0], f1[1]),
    )
}

fn evaluation_arithmetic() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut parseval = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(16..400);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let total: f64 = power_spectrum(&x).iter().sum();
        let ms = x.iter().map(|v| v * v).sum::<f64>() / n as f64;
        parseval = parseval.max((total - ms).abs() / ms);
    }
    let tone: Vec<f64> = (0..320).map(|i| (2.0 * PI * 5.0 * i as f64 / SEGMENT_RATE).sin()).collect();
    let r = psd(&[tone], SEGMENT_RATE).unwrap();
    let theta = r.band_powers[1] / r.band_powers.iter().sum::<f64>();
    let a = [0.1, 0.3];
    let b = [0.12, 0.28];
    let hand = (mse(&a, &b).unwrap() - 4e-4).abs() < 1e-15
        && (ratio(&a, &b).unwrap() - 0.2).abs() < 1e-12
        && mse(&a, &a).unwrap() == 0.0
        && mse(&[0.0; 4], &[1.0; 4]).unwrap() == 1.0;
    outcome(
        parseval <= 1e-6 && theta >= 0.95 && hand,
        format!("parseval {parseval:.1e} (<= 1e-6), theta share {:.4} (>= 0.95), hand examples {}", theta, if hand { "exact" } else { "wrong" }),
    )
}

fn determinism() -> Outcome {
    let run = |ws: &Path| {
        let mut cfg = PipelineConfig::smoke();
        cfg.workspace = ws.to_path_buf();
        let m = pipeline::run(&cfg).unwrap();
        let table = std::fs::read_to_string(ws.join(REPORTS).join("table.tsv")).unwrap();
        let skipped = m.stages.iter().filter(|r| r.status == StageStatus::Skipped).count();
        ((m.checksums(), table), skipped)
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (first, _) = run(a.path());
    let (again, skipped) = run(a.path());
    let (fresh, _) = run(b.path());
    let stages = first.0.len();
    let ok = first == again && first == fresh && skipped == stages;
    outcome(
        ok,
        format!("{stages} stage checksums and metric table identical across fresh workspaces, rerun skipped {skipped}/{stages}"),
    )
}

fn per_segment_ratio(t: &TranslationTrace) -> f64 {
    let r = t.reconstructed.as_ref().unwrap();
    let m = r.iter().zip(&t.source).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / r.len() as f64;
    let scale = t.source.iter().map(|v| v.abs()).sum::<f64>() / r.len() as f64;
    100.0 * m / scale
}

fn band_means(rows: &[&Vec<f64>]) -> SpectralReport {
    psd(rows, SEGMENT_RATE).unwrap()
}

fn desk_end_to_end() -> (Outcome, Outcome) {
    let ws = tempfile::tempdir().unwrap();
    let mut cfg = PipelineConfig::desk();
    cfg.workspace = ws.path().to_path_buf();
    let started = Instant::now();
    let manifest = pipeline::run(&cfg);
    let minutes = started.elapsed().as_secs_f64() / 60.0;
    if let Err(e) = manifest {
        let fail = || outcome(false, format!("pipeline failed: {e}"));
        return (fail(), fail());
    }
    let iters = (cfg.diffusion.eeg.iterations, cfg.diffusion.eeg.batch_size);

    let mut sets = Vec::new();
    for m in Modality::ALL {
        let dir = ws.path().join(TRACES).join(format!("{m}_to_{}", m.other()));
        sets.push(load_traces(&dir).unwrap());
    }

    let mut ok7 = minutes <= 45.0 && iters.0 >= 2000 && iters.1 == 32;
    let mut parts7 = vec![format!("{} iterations at batch {}, {minutes:.1} min (<= 45)", iters.0, iters.1)];
    for traces in &sets {
        let nfe = traces[0].nfe_total;
        let ratios: Vec<f64> = traces.iter().map(per_segment_ratio).collect();
        let mean_ratio = ratios.iter().sum::<f64>() / ratios.len() as f64;
        let orig: Vec<&Vec<f64>> = traces.iter().map(|t| &t.source).collect();
        let recon: Vec<&Vec<f64>> = traces.iter().map(|t| t.reconstructed.as_ref().unwrap()).collect();
        let (a, b) = (band_means(&orig), band_means(&recon));
        let diffs: Vec<f64> = a.band_means.iter().zip(&b.band_means).map(|(x, y)| (x - y).abs() / x).collect();
        let worst = diffs.iter().copied().fold(0.0, f64::max);
        ok7 &= mean_ratio <= 2.0 && worst <= 0.10 && nfe == 236;
        parts7.push(format!(
            "{}: {} segments, NFE {nfe}, mean ratio {mean_ratio:.4}% (<= 2%), band diffs [{}] (<= 10%)",
            traces[0].source_modality,
            traces.len(),
            diffs.iter().map(|d| format!("{:.1}%", 100.0 * d)).collect::<Vec<_>>().join(" ")
        ));
    }

    let originals: Vec<SpectralReport> = sets
        .iter()
        .map(|s| band_means(&s.iter().map(|t| &t.source).collect::<Vec<_>>()))
        .collect();
    let dist = |a: &SpectralReport, b: &SpectralReport| {
        a.band_means.iter().zip(&b.band_means).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    };
    let mut ok8 = true;
    let mut parts8 = Vec::new();
    for (i, traces) in sets.iter().enumerate() {
        let translated = band_means(&traces.iter().map(|t| &t.translated).collect::<Vec<_>>());
        let (to_target, to_source) = (dist(&translated, &originals[1 - i]), dist(&translated, &originals[i]));
        let n = traces.len() as f64;
        let moved = traces.iter().map(|t| mse(&t.source, &t.translated).unwrap()).sum::<f64>() / n;
        let cyc = traces
            .iter()
            .map(|t| mse(&t.source, t.reconstructed.as_ref().unwrap()).unwrap())
            .sum::<f64>()
            / n;
        let movement = moved / cyc;
        ok8 &= to_target < to_source && movement >= 10.0;
        parts8.push(format!(
            "{}->{}: to target {to_target:.3e} vs to source {to_source:.3e}, movement {movement:.1}x (>= 10)",
            traces[0].source_modality, traces[0].target_modality
        ));
    }
    (outcome(ok7, parts7.join("; ")), outcome(ok8, parts8.join("; ")))
}

fn main() -> ExitCode {
    // Numeric arguments select criteria; anything else (libtest flags) is ignored.
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |id: usize| only.is_empty() || only.contains(&id);
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |id: usize, name: &'static str, o: Outcome| {
        println!("{} {id:>2} {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        results.push((id, name, o));
    };
    let quick: [(usize, &'static str, fn() -> Outcome); 8] = [
        (1, "NFE reproduction", nfe_reproduction),
        (2, "solver order", solver_order),
        (3, "exact bridge", exact_bridge),
        (4, "oracle score", score_correctness),
        (5, "preprocessing golden suite", preprocessing_golden),
        (6, "burst detection closed loop", burst_detection),
        (9, "evaluation arithmetic", evaluation_arithmetic),
        (10, "determinism", determinism),
    ];
    for (id, name, f) in quick {
        if wanted(id) {
            report(id, name, f());
        }
    }
    if wanted(7) || wanted(8) {
        let (seven, eight) = desk_end_to_end();
        report(7, "desk-scale end-to-end", seven);
        report(8, "translation nontriviality", eight);
    }
    drop(report);

    results.sort_by_key(|r| r.0);
    let failed: Vec<String> = results.iter().filter(|r| !r.2.passed).map(|r| r.0.to_string()).collect();
    println!("acceptance: {}/{} criteria passed", results.len() - failed.len(), results.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed: {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
