//! The DDPM noise schedule and forward process.

use super::DiffusionError;
use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

/// Linear beta schedule with the cumulative signal-retention products.
/// `alpha_bar[t]` holds the product over s <= t, with `alpha_bar[0] = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub t_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub beta: Vec<f64>,
    pub alpha_bar: Vec<f64>,
}

/// Builds a linear schedule of `t_steps` betas in [beta_start, beta_end].
pub fn make_schedule(
    t_steps: usize,
    beta_start: f64,
    beta_end: f64,
) -> Result<NoiseSchedule, DiffusionError> {
    if t_steps < 1 {
        return Err(DiffusionError::Domain("t_steps must be >= 1".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(DiffusionError::Domain(format!(
            "need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
        )));
    }
    let beta: Vec<f64> = (0..t_steps)
        .map(|i| {
            if t_steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (t_steps - 1) as f64
            }
        })
        .collect();
    let mut alpha_bar = Vec::with_capacity(t_steps + 1);
    alpha_bar.push(1.0);
    let mut prod = 1.0;
    for &b in &beta {
        prod *= 1.0 - b;
        alpha_bar.push(prod);
    }
    Ok(NoiseSchedule {
        t_steps,
        beta_start,
        beta_end,
        beta,
        alpha_bar,
    })
}

impl NoiseSchedule {
    /// beta for 1-based timestep t.
    pub fn beta_at(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    /// alpha_bar for timestep t (t = 0 gives 1).
    pub fn alpha_bar_at(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }
}

/// z_t = sqrt(alpha_bar_t) * z0 + sqrt(1 - alpha_bar_t) * eps
pub fn forward_diffuse(
    z0: &ArrayD<f64>,
    t: usize,
    eps: &ArrayD<f64>,
    sched: &NoiseSchedule,
) -> Result<ArrayD<f64>, DiffusionError> {
    if t < 1 || t > sched.t_steps {
        return Err(DiffusionError::Domain(format!(
            "timestep {t} outside 1..={}",
            sched.t_steps
        )));
    }
    if z0.shape() != eps.shape() {
        return Err(DiffusionError::Shape(format!(
            "z0 {:?} vs eps {:?}",
            z0.shape(),
            eps.shape()
        )));
    }
    let ab = sched.alpha_bar_at(t);
    Ok(z0 * ab.sqrt() + eps * (1.0 - ab).sqrt())
}
