use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Linear learning-rate ramp over this many steps.
    pub warmup: usize,
    /// Global gradient-norm clip; 0 disables.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            warmup: 0,
            clip_norm: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: usize,
}

impl Adam {
    pub fn new(config: AdamConfig, n: usize) -> Self {
        Self {
            config,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn steps(&self) -> usize {
        self.step
    }

    pub fn step(&mut self, params: &mut [f32], grads: &[f32]) {
        let c = self.config;
        self.step += 1;
        let t = self.step as f64;
        let mut scale = 1.0;
        if c.clip_norm > 0.0 {
            let norm = grads.iter().map(|&g| (g as f64).powi(2)).sum::<f64>().sqrt();
            if norm > c.clip_norm {
                scale = c.clip_norm / norm;
            }
        }
        let lr = if c.warmup > 0 { c.lr * (t / c.warmup as f64).min(1.0) } else { c.lr };
        let bc1 = 1.0 - c.beta1.powf(t);
        let bc2 = 1.0 - c.beta2.powf(t);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let g = g as f64 * scale;
            *m = c.beta1 * *m + (1.0 - c.beta1) * g;
            *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
            let update = lr * (*m / bc1) / ((*v / bc2).sqrt() + c.eps);
            *p = (*p as f64 - update) as f32;
        }
    }
}

/// Exponential moving average of parameters. The effective decay ramps up as
/// `min(decay, (1 + t) / (10 + t))` so short runs are not dominated by the
/// initialization.
#[derive(Debug, Clone)]
pub struct Ema {
    pub decay: f64,
    pub shadow: Vec<f32>,
    updates: usize,
}

impl Ema {
    pub fn new(decay: f64, params: &[f32]) -> Self {
        Self {
            decay,
            shadow: params.to_vec(),
            updates: 0,
        }
    }

    pub fn update(&mut self, params: &[f32]) {
        self.updates += 1;
        let t = self.updates as f64;
        let d = self.decay.min((1.0 + t) / (10.0 + t));
        for (s, &p) in self.shadow.iter_mut().zip(params) {
            *s = (d * *s as f64 + (1.0 - d) * p as f64) as f32;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut p = vec![3.0f32, -2.0];
        let mut opt = Adam::new(
            AdamConfig {
                lr: 0.05,
                ..AdamConfig::default()
            },
            2,
        );
        for _ in 0..2000 {
            let g: Vec<f32> = p.iter().map(|&x| 2.0 * x).collect();
            opt.step(&mut p, &g);
        }
        assert!(p.iter().all(|x| x.abs() < 1e-2), "{p:?}");
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut p = vec![1.0f32];
        let mut opt = Adam::new(
            AdamConfig {
                lr: 0.1,
                ..AdamConfig::default()
            },
            1,
        );
        opt.step(&mut p, &[123.0]);
        assert!((p[0] - 0.9).abs() < 1e-6);
    }

    #[test]
    fn ema_tracks_a_constant() {
        let mut ema = Ema::new(0.999, &[0.0]);
        for _ in 0..20_000 {
            ema.update(&[1.0]);
        }
        assert!((ema.shadow[0] - 1.0).abs() < 1e-6);
    }
}
