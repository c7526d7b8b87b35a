//! Preconditioned network denoiser and the denoising score-matching loss.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::diffusion::edm::{precondition, EdmConfig, Precond};
use crate::diffusion::oracle::Denoiser;
use crate::error::{Error, Result};
use crate::nn::{ParamStore, Real, Tape, UNet, UNetConfig};
use crate::preprocess::Modality;

/// Raw U-Net plus its parameters.
#[derive(Debug, Clone)]
pub struct DenoiserNet {
    pub net: UNet,
    pub params: ParamStore,
}

impl DenoiserNet {
    pub fn new(arch: UNetConfig, length: usize, seed: u64) -> Result<Self> {
        let (net, params) = UNet::new(arch, length, seed)?;
        Ok(Self { net, params })
    }

    pub fn length(&self) -> usize {
        self.net.length
    }

    /// Record `D(y_i; sigma_i)` for each row on `tape`. Returns the raw output
    /// node `F` and the per-row coefficients.
    fn record<T: Real>(
        &self,
        tape: &mut Tape<T>,
        params: &[T],
        ys: &[f64],
        sigmas: &[f64],
        sigma_data: f64,
    ) -> Result<(crate::nn::Var, Vec<Precond>)> {
        let len = self.length();
        let pre = sigmas
            .iter()
            .map(|&s| precondition(s, sigma_data))
            .collect::<Result<Vec<_>>>()?;
        let input: Vec<T> = ys
            .chunks(len)
            .zip(&pre)
            .flat_map(|(row, p)| row.iter().map(move |&v| T::of(p.c_in * v)))
            .collect();
        let c_noise: Vec<T> = pre.iter().map(|p| T::of(p.c_noise)).collect();
        let x = tape.input(input, &[sigmas.len(), 1, len]);
        let out = self.net.forward(tape, &self.params, params, x, &c_noise);
        Ok((out, pre))
    }

    /// `D(y_i; sigma_i)` row by row, evaluated with parameter vector `params`.
    pub fn denoise_rows<T: Real>(&self, params: &[T], ys: &[f64], sigmas: &[f64], sigma_data: f64) -> Result<Vec<f64>> {
        let len = self.length();
        let mut tape = Tape::new();
        let (out, pre) = self.record(&mut tape, params, ys, sigmas, sigma_data)?;
        let f = tape.value(out);
        let mut d = Vec::with_capacity(ys.len());
        for (i, p) in pre.iter().enumerate() {
            for j in 0..len {
                d.push(p.c_skip * ys[i * len + j] + p.c_out * f[i * len + j].as_f64());
            }
        }
        Ok(d)
    }
}

/// Per-row training noise: `ln sigma ~ N(p_mean, p_std^2)` and a standard
/// normal noise vector, drawn in row order.
pub fn draw_training_noise<R: Rng>(rng: &mut R, rows: usize, dim: usize, cfg: &EdmConfig) -> (Vec<f64>, Vec<f64>) {
    let mut sigmas = Vec::with_capacity(rows);
    let mut noise = Vec::with_capacity(rows * dim);
    for _ in 0..rows {
        let z: f64 = StandardNormal.sample(rng);
        sigmas.push((cfg.p_mean + cfg.p_std * z).exp());
        noise.extend((0..dim).map(|_| -> f64 { StandardNormal.sample(rng) }));
    }
    (sigmas, noise)
}

fn check_batch(batch: &[f64], dim: usize) -> Result<usize> {
    if batch.is_empty() {
        return Err(Error::Empty("training batch"));
    }
    if dim == 0 || batch.len() % dim != 0 {
        return Err(Error::LengthMismatch {
            left: batch.len(),
            right: dim,
        });
    }
    Ok(batch.len() / dim)
}

/// `mean_i lambda(sigma_i) |D(x_i + sigma_i n_i; sigma_i) - x_i|^2 / dim`.
/// The squared norm is averaged over coordinates so the value does not
/// scale with segment length.
pub fn training_loss<D: Denoiser, R: Rng>(d: &D, batch: &[f64], dim: usize, cfg: &EdmConfig, rng: &mut R) -> Result<f64> {
    let rows = check_batch(batch, dim)?;
    let (sigmas, noise) = draw_training_noise(rng, rows, dim, cfg);
    let mut total = 0.0;
    for (i, x) in batch.chunks(dim).enumerate() {
        let y: Vec<f64> = x.iter().zip(&noise[i * dim..(i + 1) * dim]).map(|(a, n)| a + sigmas[i] * n).collect();
        let out = d.denoise(&y, sigmas[i])?;
        let sq: f64 = out.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum();
        total += cfg.loss_weight(sigmas[i]) * sq / dim as f64;
    }
    Ok(total / rows as f64)
}

/// Same loss as [`training_loss`] for a network, plus its gradient with
/// respect to `params`. Consumes the rng identically.
pub fn loss_and_grad<T: Real, R: Rng>(
    net: &DenoiserNet,
    params: &[T],
    batch: &[f64],
    cfg: &EdmConfig,
    rng: &mut R,
) -> Result<(f64, Vec<T>)> {
    let dim = net.length();
    let rows = check_batch(batch, dim)?;
    let (sigmas, noise) = draw_training_noise(rng, rows, dim, cfg);
    let ys: Vec<f64> = batch
        .iter()
        .zip(&noise)
        .enumerate()
        .map(|(k, (x, n))| x + sigmas[k / dim] * n)
        .collect();
    let mut tape = Tape::new();
    let (out, pre) = net.record(&mut tape, params, &ys, &sigmas, cfg.sigma_data)?;
    let f = tape.value(out);
    let mut loss = 0.0;
    let mut seed = Vec::with_capacity(f.len());
    let scale = 1.0 / (rows * dim) as f64;
    for (i, p) in pre.iter().enumerate() {
        let w = cfg.loss_weight(sigmas[i]);
        for j in 0..dim {
            let k = i * dim + j;
            let err = p.c_skip * ys[k] + p.c_out * f[k].as_f64() - batch[k];
            loss += w * err * err;
            seed.push(T::of(2.0 * scale * w * err * p.c_out));
        }
    }
    let mut grads = vec![T::zero(); params.len()];
    tape.backward(out, seed, &mut grads);
    Ok((loss * scale, grads))
}

/// A trained network used as `D(x; sigma)`. Noise levels below `sigma_min`
/// are clamped up to it, so `c_noise` is never evaluated at zero.
#[derive(Debug, Clone)]
pub struct NetDenoiser {
    pub net: DenoiserNet,
    pub edm: EdmConfig,
    pub modality: Modality,
    /// Rows per forward pass.
    pub chunk: usize,
}

impl NetDenoiser {
    pub fn new(net: DenoiserNet, edm: EdmConfig, modality: Modality) -> Self {
        Self {
            net,
            edm,
            modality,
            chunk: 64,
        }
    }
}

impl Denoiser for NetDenoiser {
    fn denoise_batch(&self, xs: &[f64], dim: usize, sigma: f64) -> Result<Vec<f64>> {
        if dim != self.net.length() || xs.len() % dim != 0 {
            return Err(Error::LengthMismatch {
                left: xs.len(),
                right: self.net.length(),
            });
        }
        if xs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("denoiser input"));
        }
        let sigma = sigma.max(self.edm.sigma_min);
        let mut out = Vec::with_capacity(xs.len());
        for rows in xs.chunks(self.chunk.max(1) * dim) {
            let sigmas = vec![sigma; rows.len() / dim];
            out.extend(self.net.denoise_rows(&self.net.params.values, rows, &sigmas, self.edm.sigma_data)?);
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network output"));
        }
        Ok(out)
    }

    fn modality(&self) -> Option<Modality> {
        Some(self.modality)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> DenoiserNet {
        let mut net = DenoiserNet::new(UNetConfig::tiny(), 16, 3).unwrap();
        // zero-initialized output layers would hide most of the graph from the check
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for v in net.params.values.iter_mut() {
            *v += rng.random_range(-0.2..0.2);
        }
        net
    }

    #[test]
    fn fused_loss_matches_generic_loss() {
        let net = tiny();
        let cfg = EdmConfig::default();
        let batch: Vec<f64> = (0..48).map(|i| (i as f64 * 0.37).sin()).collect();
        let d = NetDenoiser::new(net.clone(), cfg, Modality::Eeg);
        let generic = training_loss(&d, &batch, 16, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let params: Vec<f64> = net.params.values.iter().map(|&v| v as f64).collect();
        let (fused, _) = loss_and_grad(&net, &params, &batch, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        // the generic path clamps nothing here (all sigmas > sigma_min in practice)
        assert!((generic - fused).abs() <= 1e-4 * fused, "{generic} vs {fused}");
    }

    #[test]
    fn output_shape_does_not_depend_on_batch() {
        let net = tiny();
        let d = NetDenoiser::new(net, EdmConfig::default(), Modality::Eeg);
        for rows in [1, 3, 7] {
            let out = d.denoise_batch(&vec![0.1; rows * 16], 16, 0.5).unwrap();
            assert_eq!(out.len(), rows * 16);
        }
    }

    #[test]
    fn empty_batch_is_an_error() {
        let d = NetDenoiser::new(tiny(), EdmConfig::default(), Modality::Eeg);
        let err = training_loss(&d, &[], 16, &EdmConfig::default(), &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(err, Err(Error::Empty(_))));
    }
}
