use serde::{Deserialize, Serialize};

use crate::numerics::ParamStore;

use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

/// One bias-corrected adaptive-moment update with decoupled weight decay.
/// `t` is the 1-based step index after this update.
pub fn adamw_step(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    hp: &AdamHyper,
) -> Result<(), TrainError> {
    let n = params.len();
    if grads.len() != n || m.len() != n || v.len() != n {
        return Err(TrainError::Argument(format!(
            "{n} params but {} grads, {} first and {} second moments",
            grads.len(),
            m.len(),
            v.len()
        )));
    }
    if t == 0 {
        return Err(TrainError::Argument("adam step index starts at 1".into()));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(TrainError::NonFinite(format!("gradient entry {i} is {}", grads[i])));
    }
    let c1 = 1.0 - hp.beta1.powf(t as f64);
    let c2 = 1.0 - hp.beta2.powf(t as f64);
    for i in 0..n {
        let g = grads[i];
        m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g;
        v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g * g;
        let mhat = m[i] / c1;
        let vhat = v[i] / c2;
        params[i] -= hp.lr * hp.weight_decay * params[i];
        params[i] -= hp.lr * mhat / (vhat.sqrt() + hp.eps);
    }
    Ok(())
}

/// AdamW state for every array of a [`ParamStore`], in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub hyper: AdamHyper,
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(params: &ParamStore, hyper: AdamHyper) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, a)| vec![0.0; a.len()]).collect();
        Self {
            hyper,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Applies the accumulated gradients. On error no parameter is modified.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<(), TrainError> {
        if self.m.len() != params.len() {
            return Err(TrainError::Argument(format!(
                "optimizer tracks {} arrays, store has {}",
                self.m.len(),
                params.len()
            )));
        }
        for id in params.ids() {
            let a = params.get(id);
            if let Some(g) = a.grad() {
                if let Some(i) = g.iter().position(|x| !x.is_finite()) {
                    return Err(TrainError::NonFinite(format!(
                        "gradient of {} entry {i} is {}",
                        params.name(id),
                        g[i]
                    )));
                }
            }
        }
        self.t += 1;
        for (k, id) in params.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let a = params.get_mut(id);
            let g = a.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; a.len()]);
            adamw_step(a.values_mut(), &g, &mut self.m[k], &mut self.v[k], self.t, &self.hyper)?;
        }
        Ok(())
    }
}

/// Global L2 norm of all accumulated gradients.
pub fn global_grad_norm(params: &ParamStore) -> f64 {
    params.grad_norm("")
}

/// Rescales all gradients so their global norm is at most `max_norm`.
/// Returns the norm before clipping. `max_norm = 0` disables clipping.
pub fn clip_grad_norm(params: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = global_grad_norm(params);
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for id in params.ids().collect::<Vec<_>>() {
            let a = params.get_mut(id);
            if let Some(g) = a.grad() {
                let scaled: Vec<f64> = g.iter().map(|x| x * s).collect();
                a.zero_grad();
                a.accumulate_grad(&scaled);
            }
        }
    }
    norm
}
