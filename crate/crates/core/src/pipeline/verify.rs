use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bridge::{cycle_batch, ode_solve_reverse, translate_batch, SolverKind, SolverSpec};
use crate::diffusion::{precondition, CountingDenoiser, Denoiser, EdmConfig, GaussianMixtureOracle, MixtureComponent};
use crate::error::Result;
use crate::preprocess::{Modality, Provenance, Segment};

/// One property of the training-free battery with its measured value.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleCheck {
    pub name: &'static str,
    pub measured: f64,
    /// Human-readable acceptance condition.
    pub expected: String,
    pub passed: bool,
}

impl fmt::Display for OracleCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<28} measured {:<12.6e} expected {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.expected
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub checks: Vec<OracleCheck>,
}

impl OracleReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&OracleCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for OracleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        Ok(())
    }
}

fn within(name: &'static str, measured: f64, lo: f64, hi: f64) -> OracleCheck {
    OracleCheck {
        name,
        measured,
        expected: format!("in [{lo}, {hi}]"),
        passed: (lo..=hi).contains(&measured),
    }
}

fn at_most(name: &'static str, measured: f64, bound: f64) -> OracleCheck {
    OracleCheck {
        name,
        measured,
        expected: format!("<= {bound:e}"),
        passed: measured <= bound,
    }
}

fn exactly(name: &'static str, measured: usize, expected: usize) -> OracleCheck {
    OracleCheck {
        name,
        measured: measured as f64,
        expected: format!("= {expected}"),
        passed: measured == expected,
    }
}

/// Observed order between consecutive resolutions:
/// `ln(e_{k-1} / e_k) / ln(N_k / N_{k-1})`, one value per pair.
pub fn observed_orders(steps: &[usize], errors: &[f64]) -> Vec<f64> {
    steps
        .windows(2)
        .zip(errors.windows(2))
        .map(|(n, e)| (e[0] / e[1]).ln() / (n[1] as f64 / n[0] as f64).ln())
        .collect()
}

/// Empirical order of the reverse solve on the standard normal, whose
/// trajectories are `x(s) = x(s_max) sqrt((1 + s^2) / (1 + s_max^2))`.
pub fn gaussian_order(kind: SolverKind, steps: &[usize], edm: &EdmConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    let oracle = GaussianMixtureOracle::standard_gaussian();
    let start = [1.3, -0.4, 2.2];
    let exact: Vec<f64> = start
        .iter()
        .map(|x| x / (1.0 + edm.sigma_max * edm.sigma_max).sqrt())
        .collect();
    let mut errors = Vec::new();
    for &n in steps {
        let spec = SolverSpec::karras(kind, n, edm)?;
        let (out, _) = ode_solve_reverse(&oracle, &start, start.len(), &spec)?;
        let err = out.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        errors.push(err);
    }
    Ok((observed_orders(steps, &errors), errors))
}

fn segment(values: Vec<f64>) -> Segment {
    Segment {
        values,
        modality: Modality::Eeg,
        provenance: Provenance {
            recording: "oracle".into(),
            channel: "c0".into(),
            start: 0.0,
        },
    }
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}

/// Worst relative error of `a -> b -> a` between two point masses.
fn dirac_errors(kind: SolverKind, edm: &EdmConfig) -> Result<(f64, f64)> {
    let (a, b) = (0.75, -1.25);
    let src = GaussianMixtureOracle::dirac(a);
    let tgt = GaussianMixtureOracle::dirac(b);
    let spec = SolverSpec::karras(kind, 10, edm)?;
    let seg = segment(vec![a; 8]);
    let t = cycle_batch(&src, &tgt, std::slice::from_ref(&seg), &spec)?.remove(0);
    let recon = t.reconstructed.expect("cycle fills reconstruction");
    Ok((rel_err(&t.translated, &vec![b; 8]), rel_err(&recon, &seg.values)))
}

/// Counted passes of one translation: `(forward, reverse, total)`.
fn counted_nfe(spec: &SolverSpec) -> Result<(usize, usize, usize)> {
    let src = CountingDenoiser::new(GaussianMixtureOracle::standard_gaussian());
    let tgt = CountingDenoiser::new(GaussianMixtureOracle::dirac(0.5));
    let seg = segment(vec![0.1; 4]);
    let t = translate_batch(&src, &tgt, std::slice::from_ref(&seg), spec)?.remove(0);
    debug_assert_eq!(t.nfe_total, src.calls() + tgt.calls());
    Ok((src.calls(), tgt.calls(), src.calls() + tgt.calls()))
}

/// Worst violation of `c_skip + c_out^2 / sd^2 = 1`, `lambda c_out^2 = 1`
/// and `c_in^2 (s^2 + sd^2) = 1` over a log grid of noise levels.
fn precondition_residual(edm: &EdmConfig) -> Result<f64> {
    let mut worst = 0.0f64;
    for k in 0..=60 {
        let sigma = 10f64.powf(-3.0 + 5.0 * k as f64 / 60.0);
        let p = precondition(sigma, edm.sigma_data)?;
        let sd2 = edm.sigma_data * edm.sigma_data;
        worst = worst
            .max((p.c_skip + p.c_out * p.c_out / sd2 - 1.0).abs())
            .max((edm.loss_weight(sigma) * p.c_out * p.c_out - 1.0).abs())
            .max((p.c_in * p.c_in * (sigma * sigma + sd2) - 1.0).abs());
    }
    Ok(worst)
}

/// Worst relative gap between the denoiser-implied score `(D - x) / s^2`
/// and a central difference of `ln p_s` over random mixtures.
pub(crate) fn score_fd_error(draws: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = 3;
    let mut worst = 0.0f64;
    for _ in 0..draws {
        let k = rng.random_range(1..=3);
        let comps = (0..k)
            .map(|_| MixtureComponent {
                weight: rng.random_range(0.2..1.0),
                mean: (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect(),
                std: rng.random_range(0.1..1.5),
            })
            .collect();
        let oracle = GaussianMixtureOracle::new(comps)?;
        let sigma = 10f64.powf(rng.random_range(-1.5..1.0));
        let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
        let d = oracle.denoise(&x, sigma)?;
        let score: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| (di - xi) / (sigma * sigma)).collect();
        let h = 1e-5 * sigma.max(0.1);
        let mut fd = Vec::with_capacity(dim);
        for i in 0..dim {
            let (mut up, mut down) = (x.clone(), x.clone());
            up[i] += h;
            down[i] -= h;
            fd.push((oracle.log_density(&up, sigma)? - oracle.log_density(&down, sigma)?) / (2.0 * h));
        }
        let gap: f64 = score.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
        worst = worst.max(gap / norm.max(1e-3));
    }
    Ok(worst)
}

/// Run the training-free property battery with default noise settings.
pub fn verify_oracles() -> Result<OracleReport> {
    let edm = EdmConfig::default();
    let steps = [10, 20, 40];
    let mut checks = Vec::new();

    let (heun, _) = gaussian_order(SolverKind::Heun, &steps, &edm)?;
    checks.push(within("heun order 10-20", heun[0], 1.7, 2.2));
    checks.push(within("heun order 20-40", heun[1], 1.7, 2.2));
    let (euler, _) = gaussian_order(SolverKind::Euler, &steps, &edm)?;
    checks.push(within("euler order 10-20", euler[0], 0.8, 1.2));
    checks.push(within("euler order 20-40", euler[1], 0.8, 1.2));

    for (kind, t_name, c_name) in [
        (SolverKind::Heun, "dirac translation heun", "dirac cycle heun"),
        (SolverKind::Euler, "dirac translation euler", "dirac cycle euler"),
    ] {
        let (t, c) = dirac_errors(kind, &edm)?;
        checks.push(at_most(t_name, t, 1e-10));
        checks.push(at_most(c_name, c, 1e-10));
    }

    let (f, r, total) = counted_nfe(&SolverSpec::paper_heun(&edm))?;
    checks.push(exactly("nfe paper-heun forward", f, 59));
    checks.push(exactly("nfe paper-heun reverse", r, 59));
    checks.push(exactly("nfe paper-heun", total, 118));
    let (f, r, total) = counted_nfe(&SolverSpec::paper_ddib(&edm))?;
    checks.push(exactly("nfe paper-ddib forward", f, 250));
    checks.push(exactly("nfe paper-ddib reverse", r, 250));
    checks.push(exactly("nfe paper-ddib", total, 500));

    checks.push(at_most("preconditioning identities", precondition_residual(&edm)?, 1e-12));
    checks.push(at_most("mixture score vs fd", score_fd_error(100, 7)?, 1e-3));
    Ok(OracleReport { checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn observed_orders_recover_power_law() {
        let steps = [10, 20, 40];
        let errs: Vec<f64> = steps.iter().map(|&n| 3.0 * (n as f64).powf(-2.0)).collect();
        for p in observed_orders(&steps, &errs) {
            assert!((p - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn default_battery_passes() {
        let report = verify_oracles().unwrap();
        assert!(report.all_passed(), "\n{report}");
    }
}
