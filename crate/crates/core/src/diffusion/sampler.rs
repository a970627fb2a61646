use rand::Rng;
use rand_distr::StandardNormal;

use crate::numerics::ParamStore;

use super::{DiffusionError, DiffusionSchedule, NoiseApproximator};

/// Anything that can play the role of `ε_θ(a_i, ã, i)` in the reverse chain.
pub trait NoisePredictor {
    fn predict(&self, noisy: &[f64], cond: &[f64], step: usize) -> Result<Vec<f64>, DiffusionError>;
}

/// A trained approximator paired with its parameter values.
pub struct ModelPredictor<'a> {
    pub model: &'a NoiseApproximator,
    pub params: &'a ParamStore,
}

impl NoisePredictor for ModelPredictor<'_> {
    fn predict(&self, noisy: &[f64], cond: &[f64], step: usize) -> Result<Vec<f64>, DiffusionError> {
        self.model.predict_noise_vec(self.params, noisy, cond, step)
    }
}

impl<F> NoisePredictor for F
where
    F: Fn(&[f64], &[f64], usize) -> Vec<f64>,
{
    fn predict(&self, noisy: &[f64], cond: &[f64], step: usize) -> Result<Vec<f64>, DiffusionError> {
        Ok(self(noisy, cond, step))
    }
}

/// How the reverse chain scales its injected noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerOptions {
    /// `true`: `√β_i · z` (standard DDPM); `false`: `β_i · z`.
    pub sqrt_beta_noise: bool,
    /// Symmetric clamp applied to the final action.
    pub action_bound: f64,
}

/// One reverse-step record.
#[derive(Debug, Clone, PartialEq)]
pub struct ReverseStep {
    pub step: usize,
    pub input: Vec<f64>,
    pub predicted_noise: Vec<f64>,
    pub output: Vec<f64>,
}

/// Records of a whole reverse chain, step `N` first.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReverseStepTrace {
    pub steps: Vec<ReverseStep>,
}

/// Posterior-mean update plus injected noise:
/// `a_{i−1} = (a_i − (1−α_i)/√(1−ᾱ_i) · ε̂) / √α_i + σ_i · z`.
///
/// `σ_i = β_i`, or `√β_i` when `sqrt_beta_noise` is set. `noise` must be zero at `i = 1`.
pub fn denoise_from_prediction(
    noisy: &[f64],
    predicted_noise: &[f64],
    step: usize,
    sched: &DiffusionSchedule,
    noise: &[f64],
    sqrt_beta_noise: bool,
) -> Result<Vec<f64>, DiffusionError> {
    sched.check_step(step)?;
    if predicted_noise.len() != noisy.len() || noise.len() != noisy.len() {
        return Err(DiffusionError::Dimension(format!(
            "a_i has {} entries, prediction {}, noise {}",
            noisy.len(),
            predicted_noise.len(),
            noise.len()
        )));
    }
    if step == 1 && noise.iter().any(|&z| z != 0.0) {
        return Err(DiffusionError::Contract(
            "the final reverse step must not inject noise".into(),
        ));
    }
    let alpha = sched.alpha(step);
    let beta = sched.beta(step);
    let coef = (1.0 - alpha) / (1.0 - sched.alpha_bar(step)).sqrt();
    let inv_sqrt_alpha = 1.0 / alpha.sqrt();
    let sigma = if sqrt_beta_noise { beta.sqrt() } else { beta };
    Ok(noisy
        .iter()
        .zip(predicted_noise)
        .zip(noise)
        .map(|((x, e), z)| inv_sqrt_alpha * (x - coef * e) + sigma * z)
        .collect())
}

/// One reverse step using `predictor` for `ε_θ`.
pub fn denoise_step<P: NoisePredictor + ?Sized>(
    predictor: &P,
    noisy: &[f64],
    cond: &[f64],
    step: usize,
    sched: &DiffusionSchedule,
    noise: &[f64],
    sqrt_beta_noise: bool,
) -> Result<Vec<f64>, DiffusionError> {
    sched.check_step(step)?;
    let eps = predictor.predict(noisy, cond, step)?;
    denoise_from_prediction(noisy, &eps, step, sched, noise, sqrt_beta_noise)
}

/// Runs the full reverse chain from `a_N ~ N(0, I)` and clamps the result.
pub fn sample_action<P, R>(
    predictor: &P,
    cond: &[f64],
    sched: &DiffusionSchedule,
    opts: SamplerOptions,
    rng: &mut R,
    mut trace: Option<&mut ReverseStepTrace>,
) -> Result<Vec<f64>, DiffusionError>
where
    P: NoisePredictor + ?Sized,
    R: Rng + ?Sized,
{
    let dim = cond.len();
    let mut a: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    for step in (1..=sched.n_steps).rev() {
        let noise: Vec<f64> = if step > 1 {
            (0..dim).map(|_| rng.sample(StandardNormal)).collect()
        } else {
            vec![0.0; dim]
        };
        let eps = predictor.predict(&a, cond, step)?;
        let next = denoise_from_prediction(&a, &eps, step, sched, &noise, opts.sqrt_beta_noise)?;
        if let Some(t) = trace.as_deref_mut() {
            t.steps.push(ReverseStep {
                step,
                input: a.clone(),
                predicted_noise: eps,
                output: next.clone(),
            });
        }
        a = next;
    }
    let bound = opts.action_bound;
    a.iter_mut().for_each(|x| *x = x.clamp(-bound, bound));
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_eps(x: &[f64], _: &[f64], _: usize) -> Vec<f64> {
        vec![0.0; x.len()]
    }

    #[test]
    fn noise_forbidden_on_last_step() {
        let s = DiffusionSchedule::vp(3, 0.1, 10.0).unwrap();
        let r = denoise_step(&zero_eps, &[0.3], &[0.0], 1, &s, &[0.5], false);
        assert!(matches!(r, Err(DiffusionError::Contract(_))));
    }

    #[test]
    fn zero_noise_is_deterministic_map() {
        let s = DiffusionSchedule::vp(3, 0.1, 10.0).unwrap();
        let a = denoise_step(&zero_eps, &[0.3], &[0.0], 2, &s, &[0.0], false).unwrap();
        assert_eq!(a, vec![0.3 / s.alpha(2).sqrt()]);
    }

    #[test]
    fn beta_versus_sqrt_beta_noise() {
        let s = DiffusionSchedule::vp(3, 0.1, 10.0).unwrap();
        let plain = denoise_step(&zero_eps, &[0.0], &[0.0], 3, &s, &[1.0], false).unwrap();
        let root = denoise_step(&zero_eps, &[0.0], &[0.0], 3, &s, &[1.0], true).unwrap();
        assert!((plain[0] - s.beta(3)).abs() < 1e-15);
        assert!((root[0] - s.beta(3).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn single_step_closed_form_and_trace() {
        let s = DiffusionSchedule::vp(1, 0.1, 10.0).unwrap();
        let opts = SamplerOptions {
            sqrt_beta_noise: false,
            action_bound: 100.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a_n: f64 = rng.sample(StandardNormal);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut trace = ReverseStepTrace::default();
        let a0 = sample_action(&zero_eps, &[0.0], &s, opts, &mut rng, Some(&mut trace)).unwrap();
        assert_eq!(a0, vec![a_n / s.alpha(1).sqrt()]);
        assert_eq!(trace.steps.len(), 1);
        assert_eq!(trace.steps[0].step, 1);
    }

    #[test]
    fn clamp_and_seed_determinism() {
        let s = DiffusionSchedule::vp(5, 0.1, 10.0).unwrap();
        let opts = SamplerOptions {
            sqrt_beta_noise: false,
            action_bound: 0.25,
        };
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample_action(&zero_eps, &[0.0, 0.0], &s, opts, &mut rng, None).unwrap()
        };
        assert_eq!(run(11), run(11));
        assert!(run(12).iter().all(|x| x.abs() <= 0.25));
    }
}
