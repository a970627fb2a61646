use serde::{Deserialize, Serialize};

use super::DiffusionError;

/// Variance schedule over `N` diffusion steps. Arrays are stored 0-based;
/// the accessors take the 1-based step index `i ∈ 1..=N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    pub n_steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
}

impl DiffusionSchedule {
    /// Variance-preserving schedule:
    /// `β_i = 1 − exp(−β_min/N − ½(β_max − β_min)(2i − 1)/N²)`.
    pub fn vp(n_steps: usize, beta_min: f64, beta_max: f64) -> Result<Self, DiffusionError> {
        if n_steps == 0 {
            return Err(DiffusionError::Argument("n_steps must be at least 1".into()));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max.is_finite()) {
            return Err(DiffusionError::Argument(format!(
                "need 0 < beta_min <= beta_max, got ({beta_min}, {beta_max})"
            )));
        }
        let n = n_steps as f64;
        let beta: Vec<f64> = (1..=n_steps)
            .map(|i| {
                let i = i as f64;
                -(-beta_min / n - 0.5 * (beta_max - beta_min) * (2.0 * i - 1.0) / (n * n)).exp_m1()
            })
            .collect();
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let alpha_bar = alpha
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self {
            n_steps,
            beta_min,
            beta_max,
            beta,
            alpha,
            alpha_bar,
        })
    }

    pub fn check_step(&self, i: usize) -> Result<(), DiffusionError> {
        if i == 0 || i > self.n_steps {
            return Err(DiffusionError::StepOutOfRange {
                step: i,
                n_steps: self.n_steps,
            });
        }
        Ok(())
    }

    pub fn beta(&self, i: usize) -> f64 {
        self.beta[i - 1]
    }

    pub fn alpha(&self, i: usize) -> f64 {
        self.alpha[i - 1]
    }

    pub fn alpha_bar(&self, i: usize) -> f64 {
        self.alpha_bar[i - 1]
    }
}

/// `a_i = √ᾱ_i · a0 + √(1 − ᾱ_i) · ε`.
pub fn forward_noise(
    a0: &[f64],
    i: usize,
    eps: &[f64],
    sched: &DiffusionSchedule,
) -> Result<Vec<f64>, DiffusionError> {
    sched.check_step(i)?;
    if a0.len() != eps.len() {
        return Err(DiffusionError::Dimension(format!(
            "action has {} entries, noise has {}",
            a0.len(),
            eps.len()
        )));
    }
    let ab = sched.alpha_bar(i);
    let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(a0.iter().zip(eps).map(|(a, e)| sa * a + sn * e).collect())
}
