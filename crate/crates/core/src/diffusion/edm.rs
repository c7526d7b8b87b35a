use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Noise-level parameters of the probability-flow ODE with `sigma(t) = t`,
/// `s(t) = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EdmConfig {
    pub sigma_data: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
    /// Mean and std of `ln(sigma)` during training.
    pub p_mean: f64,
    pub p_std: f64,
}

impl Default for EdmConfig {
    fn default() -> Self {
        Self {
            sigma_data: 0.5,
            sigma_min: 0.002,
            sigma_max: 80.0,
            rho: 7.0,
            p_mean: -1.2,
            p_std: 1.2,
        }
    }
}

impl EdmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_data > 0.0) {
            return Err(Error::Config(format!("sigma_data must be positive, got {}", self.sigma_data)));
        }
        if !(self.sigma_min > 0.0 && self.sigma_min < self.sigma_max) {
            return Err(Error::Config(format!(
                "need 0 < sigma_min < sigma_max, got {} and {}",
                self.sigma_min, self.sigma_max
            )));
        }
        if !(self.rho > 0.0) || !(self.p_std > 0.0) || !self.p_mean.is_finite() {
            return Err(Error::Config("rho and p_std must be positive".into()));
        }
        Ok(())
    }

    /// Loss weight `(sigma^2 + sigma_d^2) / (sigma sigma_d)^2`.
    pub fn loss_weight(&self, sigma: f64) -> f64 {
        let sd = self.sigma_data;
        (sigma * sigma + sd * sd) / (sigma * sd).powi(2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Precond {
    pub c_skip: f64,
    pub c_out: f64,
    pub c_in: f64,
    /// `ln(sigma) / 4`; `-inf` at `sigma = 0`.
    pub c_noise: f64,
}

/// `D(x; sigma) = c_skip x + c_out F(c_in x, c_noise)`.
pub fn precondition(sigma: f64, sigma_data: f64) -> Result<Precond> {
    if !(sigma_data > 0.0) {
        return Err(Error::Config(format!("sigma_data must be positive, got {sigma_data}")));
    }
    if !(sigma >= 0.0) {
        return Err(Error::Config(format!("sigma must be non-negative, got {sigma}")));
    }
    let sd2 = sigma_data * sigma_data;
    let norm = (sigma * sigma + sd2).sqrt();
    Ok(Precond {
        c_skip: sd2 / (sigma * sigma + sd2),
        c_out: sigma * sigma_data / norm,
        c_in: 1.0 / norm,
        c_noise: sigma.ln() / 4.0,
    })
}

/// Strictly decreasing noise levels `sigma_1 = sigma_max > ... > sigma_N =
/// sigma_min`. Reverse integration ends at an implicit `sigma_{N+1} = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaSchedule {
    sigmas: Vec<f64>,
}

impl SigmaSchedule {
    pub fn new(sigmas: Vec<f64>) -> Result<Self> {
        if sigmas.len() < 2 {
            return Err(Error::Schedule(sigmas.len()));
        }
        if sigmas.windows(2).any(|w| !(w[0] > w[1])) || !(sigmas[sigmas.len() - 1] > 0.0) {
            return Err(Error::Config("sigma schedule must be strictly decreasing and positive".into()));
        }
        Ok(Self { sigmas })
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn len(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigmas.is_empty()
    }

    /// Nodes followed by the terminal zero.
    pub fn with_terminal(&self) -> Vec<f64> {
        let mut s = self.sigmas.clone();
        s.push(0.0);
        s
    }
}

/// `sigma_i = (smax^(1/rho) + (i-1)/(N-1) (smin^(1/rho) - smax^(1/rho)))^rho`.
pub fn karras_schedule(n: usize, cfg: &EdmConfig) -> Result<SigmaSchedule> {
    if n < 2 {
        return Err(Error::Schedule(n));
    }
    cfg.validate()?;
    let inv = 1.0 / cfg.rho;
    let (hi, lo) = (cfg.sigma_max.powf(inv), cfg.sigma_min.powf(inv));
    let mut sigmas: Vec<f64> = (0..n)
        .map(|i| (hi + i as f64 / (n - 1) as f64 * (lo - hi)).powf(cfg.rho))
        .collect();
    // pin the endpoints against rounding in powf
    sigmas[0] = cfg.sigma_max;
    sigmas[n - 1] = cfg.sigma_min;
    SigmaSchedule::new(sigmas)
}
