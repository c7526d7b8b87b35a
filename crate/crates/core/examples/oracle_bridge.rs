//! Translate between two analytic Gaussian-mixture "domains" with the
//! dual-bridge solver, count denoiser passes, and check the point-mass case
//! where the bridge is exact.
//!
//! cargo run --release --example oracle_bridge

use biobridge::bridge::{cycle_batch, translate_batch, SolverKind, SolverSpec};
use biobridge::diffusion::{CountingDenoiser, EdmConfig, GaussianMixtureOracle, MixtureComponent};
use biobridge::preprocess::{Modality, Provenance, Segment};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn segments(values: &[f64], dim: usize, modality: Modality) -> Vec<Segment> {
    values
        .chunks(dim)
        .enumerate()
        .map(|(i, v)| Segment {
            values: v.to_vec(),
            modality,
            provenance: Provenance {
                recording: format!("draw_{i}"),
                channel: "x".into(),
                start: 0.0,
            },
        })
        .collect()
}

fn main() -> biobridge::Result<()> {
    let edm = EdmConfig::default();
    let dim = 16;
    let src = GaussianMixtureOracle::new(vec![
        MixtureComponent { weight: 0.5, mean: vec![-0.6], std: 0.1 },
        MixtureComponent { weight: 0.5, mean: vec![0.6], std: 0.1 },
    ])?
    .with_modality(Modality::Eeg);
    let tgt = GaussianMixtureOracle::new(vec![MixtureComponent { weight: 1.0, mean: vec![0.0], std: 0.3 }])?
        .with_modality(Modality::Fmeg);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let xs = src.sample(8, dim, &mut rng)?;
    let batch = segments(&xs, dim, Modality::Eeg);

    for spec in [SolverSpec::paper_heun(&edm), SolverSpec::paper_ddib(&edm)] {
        let (cs, ct) = (CountingDenoiser::new(&src), CountingDenoiser::new(&tgt));
        let traces = translate_batch(&cs, &ct, &batch, &spec)?;
        println!(
            "{spec}: forward {} + reverse {} = {} passes (counted {} + {})",
            traces[0].nfe_forward,
            traces[0].nfe_reverse,
            traces[0].nfe_total,
            cs.calls(),
            ct.calls()
        );
    }

    let spec = SolverSpec::paper_heun(&edm);
    let traces = cycle_batch(&src, &tgt, &batch, &spec)?;
    let worst = traces
        .iter()
        .flat_map(|t| t.source.iter().zip(t.reconstructed.as_ref().unwrap()).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max);
    let spread = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
    println!(
        "mixture cycle: worst reconstruction error {worst:.2e}; rms source {:.3}, translated {:.3}",
        spread(&traces[0].source),
        spread(&traces[0].translated)
    );

    for kind in [SolverKind::Heun, SolverKind::Euler] {
        let spec = SolverSpec::karras(kind, 10, &edm)?;
        let (a, b) = (GaussianMixtureOracle::dirac(0.8), GaussianMixtureOracle::dirac(-0.3));
        let t = cycle_batch(&a, &b, &segments(&[0.8; 4], 4, Modality::Eeg), &spec)?.remove(0);
        println!(
            "point masses with {kind}: translated {:?}, reconstructed {:?}",
            t.translated,
            t.reconstructed.unwrap()
        );
    }
    Ok(())
}
