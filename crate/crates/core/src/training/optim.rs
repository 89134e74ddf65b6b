use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| (0.0..1.0).contains(&b);
        if !unit(self.beta1) || !unit(self.beta2) || !(self.eps > 0.0) {
            return Err(invalid("adam needs betas in [0, 1) and eps > 0"));
        }
        Ok(())
    }
}

/// Bias-corrected first and second moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl Adam {
    pub fn new(n_params: usize, config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Adam { config, m: vec![0.0; n_params], v: vec![0.0; n_params], step: 0 })
    }

    /// One update of `params` in place. Non-finite gradients abort without touching any state.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::DimensionMismatch { expected: self.m.len(), got: grads.len().min(params.len()) });
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient entry {i} = {}", grads[i])));
        }
        if !lr.is_finite() || lr < 0.0 {
            return Err(invalid(format!("learning rate {lr}")));
        }
        let AdamConfig { beta1, beta2, eps } = self.config;
        self.step += 1;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Rescales `grads` so that their Euclidean norm is at most `max_norm`.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    Cosine,
    /// `boundaries` are fractions of the run; `factors` has one more entry.
    Piecewise { boundaries: Vec<f64>, factors: Vec<f64> },
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if let Schedule::Piecewise { boundaries, factors } = self {
            if factors.len() != boundaries.len() + 1 {
                return Err(invalid("piecewise schedule needs one more factor than boundaries"));
            }
            if boundaries.windows(2).any(|w| w[1] <= w[0]) || boundaries.iter().any(|b| !(0.0..=1.0).contains(b)) {
                return Err(invalid("piecewise boundaries must increase within [0, 1]"));
            }
            if factors.iter().any(|f| !f.is_finite() || *f < 0.0) {
                return Err(invalid("piecewise factors must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

/// Learning rate at `step` of a run with `total` steps.
pub fn lr_schedule(schedule: &Schedule, step: usize, total: usize, base: f64) -> Result<f64> {
    if step > total {
        return Err(invalid(format!("step {step} exceeds total {total}")));
    }
    let frac = if total == 0 { 0.0 } else { step as f64 / total as f64 };
    Ok(match schedule {
        Schedule::Cosine => base * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos()),
        Schedule::Piecewise { boundaries, factors } => {
            let k = boundaries.iter().filter(|&&b| frac >= b).count();
            base * factors[k.min(factors.len() - 1)]
        }
    })
}
