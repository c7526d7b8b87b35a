//! Closed-form denoisers for data drawn from a Gaussian mixture.

use std::cell::Cell;

use rand::Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::preprocess::Modality;

/// Anything that maps a noisy batch to its denoised estimate `D(x; sigma)`.
pub trait Denoiser {
    /// `xs` holds `xs.len() / dim` row-major vectors sharing one noise level.
    fn denoise_batch(&self, xs: &[f64], dim: usize, sigma: f64) -> Result<Vec<f64>>;

    fn denoise(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
        self.denoise_batch(x, x.len(), sigma)
    }

    /// Modality the denoiser was trained on; oracles have none.
    fn modality(&self) -> Option<Modality> {
        None
    }
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn denoise_batch(&self, xs: &[f64], dim: usize, sigma: f64) -> Result<Vec<f64>> {
        (**self).denoise_batch(xs, dim, sigma)
    }

    fn modality(&self) -> Option<Modality> {
        (**self).modality()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureComponent {
    pub weight: f64,
    /// One value broadcasts to every coordinate.
    pub mean: Vec<f64>,
    pub std: f64,
}

/// `p = sum_k w_k N(mu_k, s_k^2 I)`; noised at level sigma the components
/// become `N(mu_k, (s_k^2 + sigma^2) I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixtureOracle {
    components: Vec<MixtureComponent>,
    modality: Option<Modality>,
}

impl GaussianMixtureOracle {
    pub fn new(components: Vec<MixtureComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Empty("mixture components"));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if components.iter().any(|c| !(c.weight > 0.0) || !(c.std >= 0.0) || c.mean.is_empty()) {
            return Err(Error::Config("mixture weights must be positive, stds non-negative".into()));
        }
        let components = components
            .into_iter()
            .map(|c| MixtureComponent {
                weight: c.weight / total,
                ..c
            })
            .collect();
        Ok(Self {
            components,
            modality: None,
        })
    }

    pub fn dirac(at: f64) -> Self {
        Self::new(vec![MixtureComponent {
            weight: 1.0,
            mean: vec![at],
            std: 0.0,
        }])
        .expect("valid single component")
    }

    pub fn standard_gaussian() -> Self {
        Self::new(vec![MixtureComponent {
            weight: 1.0,
            mean: vec![0.0],
            std: 1.0,
        }])
        .expect("valid single component")
    }

    /// Tag the oracle as a stand-in for a model of `modality`.
    pub fn with_modality(mut self, modality: Modality) -> Self {
        self.modality = Some(modality);
        self
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    fn mean_at(c: &MixtureComponent, i: usize) -> f64 {
        if c.mean.len() == 1 {
            c.mean[0]
        } else {
            c.mean[i]
        }
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        match self.components.iter().find(|c| c.mean.len() != 1 && c.mean.len() != dim) {
            Some(c) => Err(Error::LengthMismatch {
                left: c.mean.len(),
                right: dim,
            }),
            None => Ok(()),
        }
    }

    /// Per-component `ln w_k + ln N(x; mu_k, v_k I)` with `v_k = s_k^2 + sigma^2`.
    fn log_terms(&self, x: &[f64], sigma: f64) -> Vec<f64> {
        let d = x.len() as f64;
        self.components
            .iter()
            .map(|c| {
                let v = c.std * c.std + sigma * sigma;
                let sq: f64 = x.iter().enumerate().map(|(i, &xi)| (xi - Self::mean_at(c, i)).powi(2)).sum();
                if v == 0.0 {
                    return if sq == 0.0 { f64::INFINITY } else { f64::NEG_INFINITY };
                }
                c.weight.ln() - 0.5 * d * (2.0 * std::f64::consts::PI * v).ln() - sq / (2.0 * v)
            })
            .collect()
    }

    fn responsibilities(&self, x: &[f64], sigma: f64) -> Vec<f64> {
        let logs = self.log_terms(x, sigma);
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::INFINITY {
            // x sits exactly on a noiseless point mass
            let hits = logs.iter().filter(|&&l| l == f64::INFINITY).count() as f64;
            return logs.iter().map(|&l| if l == f64::INFINITY { 1.0 / hits } else { 0.0 }).collect();
        }
        let w: Vec<f64> = logs.iter().map(|&l| (l - max).exp()).collect();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|v| v / total).collect()
    }

    /// `ln p_sigma(x)`.
    pub fn log_density(&self, x: &[f64], sigma: f64) -> Result<f64> {
        self.check_dim(x.len())?;
        let logs = self.log_terms(x, sigma);
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Ok(max);
        }
        Ok(max + logs.iter().map(|&l| (l - max).exp()).sum::<f64>().ln())
    }

    /// Mixture mean `sum_k w_k mu_k`.
    pub fn mean(&self, dim: usize) -> Vec<f64> {
        (0..dim)
            .map(|i| self.components.iter().map(|c| c.weight * Self::mean_at(c, i)).sum())
            .collect()
    }

    /// Draw `n` clean vectors of length `dim`, row-major.
    pub fn sample<R: Rng>(&self, n: usize, dim: usize, rng: &mut R) -> Result<Vec<f64>> {
        self.check_dim(dim)?;
        let pick = WeightedIndex::new(self.components.iter().map(|c| c.weight))
            .map_err(|e| Error::Config(e.to_string()))?;
        let mut out = Vec::with_capacity(n * dim);
        for _ in 0..n {
            let c = &self.components[pick.sample(rng)];
            for i in 0..dim {
                let z: f64 = StandardNormal.sample(rng);
                out.push(Self::mean_at(c, i) + c.std * z);
            }
        }
        Ok(out)
    }
}

impl Denoiser for GaussianMixtureOracle {
    fn denoise_batch(&self, xs: &[f64], dim: usize, sigma: f64) -> Result<Vec<f64>> {
        if dim == 0 || xs.len() % dim != 0 {
            return Err(Error::LengthMismatch {
                left: xs.len(),
                right: dim,
            });
        }
        if !(sigma >= 0.0) {
            return Err(Error::Config(format!("sigma must be non-negative, got {sigma}")));
        }
        if xs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("denoiser input"));
        }
        self.check_dim(dim)?;
        if sigma == 0.0 {
            return Ok(xs.to_vec());
        }
        let mut out = vec![0.0; xs.len()];
        for (x, o) in xs.chunks(dim).zip(out.chunks_mut(dim)) {
            let r = self.responsibilities(x, sigma);
            for (c, &rk) in self.components.iter().zip(&r) {
                if rk == 0.0 {
                    continue;
                }
                let v = c.std * c.std;
                let shrink = v / (v + sigma * sigma);
                for (i, (oi, &xi)) in o.iter_mut().zip(x).enumerate() {
                    let mu = Self::mean_at(c, i);
                    *oi += rk * (mu + shrink * (xi - mu));
                }
            }
        }
        Ok(out)
    }

    fn modality(&self) -> Option<Modality> {
        self.modality
    }
}

/// Counts network evaluations: one per (batch, sigma) call.
pub struct CountingDenoiser<D> {
    pub inner: D,
    calls: Cell<usize>,
}

impl<D: Denoiser> CountingDenoiser<D> {
    pub fn new(inner: D) -> Self {
        Self {
            inner,
            calls: Cell::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.get()
    }
}

impl<D: Denoiser> Denoiser for CountingDenoiser<D> {
    fn denoise_batch(&self, xs: &[f64], dim: usize, sigma: f64) -> Result<Vec<f64>> {
        self.calls.set(self.calls.get() + 1);
        self.inner.denoise_batch(xs, dim, sigma)
    }

    fn modality(&self) -> Option<Modality> {
        self.inner.modality()
    }
}
