//! The combined DT3 + diffusion policy and frozen inference over it.

use std::cell::RefCell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{
    sample_action, DiffusionError, DiffusionSchedule, NoiseApproxConfig, NoiseApproximator,
    NoisePredictor, ReverseStepTrace, SamplerOptions,
};
use crate::dt3::{ContextWindow, Dt3Config, Dt3Error, Dt3Model};
use crate::envdata::{DatasetStats, EvalMode};
use crate::numerics::{Binding, NumericsError, ParamStore, Tape};

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error("contract violated: {0}")]
    Contract(String),
    #[error(transparent)]
    Dt3(#[from] Dt3Error),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Input normalisation constants taken from the training dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub state_mean: Vec<f64>,
    pub state_std: Vec<f64>,
    /// RTG inputs are divided by this (max |trajectory return|, or 1 if that is 0).
    pub return_scale: f64,
    /// Best trajectory return in the dataset; seeds the evaluation RTG.
    pub max_return: f64,
}

impl Normalization {
    pub fn from_stats(stats: &DatasetStats) -> Self {
        Self {
            state_mean: stats.state_mean.clone(),
            state_std: stats.state_std.clone(),
            return_scale: if stats.max_abs_return > 1e-6 {
                stats.max_abs_return
            } else {
                1.0
            },
            max_return: stats.max_return,
        }
    }

    pub fn identity(state_dim: usize) -> Self {
        Self {
            state_mean: vec![0.0; state_dim],
            state_std: vec![1.0; state_dim],
            return_scale: 1.0,
            max_return: 0.0,
        }
    }

    /// Standardises a flat `n × d_s` block of states.
    pub fn states(&self, states: &[f64]) -> Vec<f64> {
        let d = self.state_mean.len();
        states
            .iter()
            .enumerate()
            .map(|(j, s)| (s - self.state_mean[j % d]) / self.state_std[j % d])
            .collect()
    }
}

/// Everything except parameter values needed to rebuild a [`Policy`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub dt3: Dt3Config,
    pub eps: NoiseApproxConfig,
    pub diffusion_steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub sqrt_beta_noise: bool,
    pub action_bound: f64,
    pub context_len: usize,
    /// When false, RTG tokens are fed as zeros.
    pub rtg_conditioning: bool,
    pub normalization: Normalization,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub spec: PolicySpec,
    pub dt3: Dt3Model,
    pub eps: NoiseApproximator,
    pub params: ParamStore,
    pub schedule: DiffusionSchedule,
}

/// One chosen action and the coarse action it was refined from.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub action: Vec<f64>,
    pub coarse: Vec<f64>,
}

impl Policy {
    /// Builds a policy with freshly initialised parameters drawn from `rng`.
    pub fn new<R: Rng + ?Sized>(spec: PolicySpec, rng: &mut R) -> Result<Self, PolicyError> {
        if spec.dt3.action_dim != spec.eps.action_dim {
            return Err(PolicyError::Contract(format!(
                "DT3 action dim {} differs from noise approximator action dim {}",
                spec.dt3.action_dim, spec.eps.action_dim
            )));
        }
        if spec.normalization.state_mean.len() != spec.dt3.state_dim
            || spec.normalization.state_std.len() != spec.dt3.state_dim
        {
            return Err(PolicyError::Contract(format!(
                "normalisation has {} state entries, model expects {}",
                spec.normalization.state_mean.len(),
                spec.dt3.state_dim
            )));
        }
        if spec.context_len == 0 {
            return Err(PolicyError::Contract("context_len must be at least 1".into()));
        }
        if !(spec.action_bound > 0.0) {
            return Err(PolicyError::Contract(format!(
                "action bound must be positive, got {}",
                spec.action_bound
            )));
        }
        let schedule = DiffusionSchedule::vp(spec.diffusion_steps, spec.beta_min, spec.beta_max)?;
        let mut params = ParamStore::new();
        let dt3 = Dt3Model::new(spec.dt3.clone(), &mut params, rng);
        let eps = NoiseApproximator::new(spec.eps.clone(), &mut params, rng);
        Ok(Self {
            spec,
            dt3,
            eps,
            params,
            schedule,
        })
    }

    /// Rebuilds the architecture from `spec` and installs `params` into it.
    pub fn with_params(spec: PolicySpec, params: &ParamStore) -> Result<Self, PolicyError> {
        let mut policy = Self::new(spec, &mut ChaCha8Rng::seed_from_u64(0))?;
        policy.params.copy_values_from(params)?;
        Ok(policy)
    }

    pub fn state_dim(&self) -> usize {
        self.spec.dt3.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.spec.dt3.action_dim
    }

    pub fn sampler_options(&self) -> SamplerOptions {
        SamplerOptions {
            sqrt_beta_noise: self.spec.sqrt_beta_noise,
            action_bound: self.spec.action_bound,
        }
    }

    /// Normalised K-step window over raw history (`rtgs`, `states`, `actions`
    /// all `n` rows long, row 0 at environment step `first_timestep`).
    pub fn context(
        &self,
        rtgs: &[f64],
        states: &[f64],
        actions: &[f64],
        first_timestep: usize,
    ) -> Result<ContextWindow, PolicyError> {
        let (ds, da) = (self.state_dim(), self.action_dim());
        let k = self.spec.context_len;
        let n = rtgs.len();
        let keep = n.min(k);
        let from = n - keep;
        let scale = self.spec.normalization.return_scale;
        let rtgs: Vec<f64> = rtgs[from..]
            .iter()
            .map(|g| if self.spec.rtg_conditioning { g / scale } else { 0.0 })
            .collect();
        let states = states
            .get(from * ds..)
            .map(|s| self.spec.normalization.states(s))
            .unwrap_or_default();
        let actions = actions.get(from * da..).unwrap_or_default();
        Ok(ContextWindow::from_history(
            k,
            ds,
            da,
            &rtgs,
            &states,
            actions,
            first_timestep + from,
        )?)
    }

    /// A frozen snapshot of the parameters for repeated inference.
    pub fn session(&self) -> Session<'_> {
        let mut tape = Tape::new();
        let binding = tape.bind_frozen(&self.params);
        let base = tape.len();
        Session {
            policy: self,
            tape: RefCell::new(tape),
            binding,
            base,
        }
    }
}

/// Inference over frozen parameters. Parameters are recorded on the tape once;
/// every query rewinds the tape afterwards.
pub struct Session<'a> {
    policy: &'a Policy,
    tape: RefCell<Tape>,
    binding: Binding,
    base: usize,
}

impl Session<'_> {
    pub fn policy(&self) -> &Policy {
        self.policy
    }

    /// Coarse actions for every row of `ctx`, `K × d_a` row-major.
    pub fn coarse_actions(&self, ctx: &ContextWindow) -> Result<Vec<f64>, PolicyError> {
        let mut tape = self.tape.borrow_mut();
        let out = self
            .policy
            .dt3
            .predict_coarse_actions(&mut tape, &self.binding, ctx)
            .map(|v| tape.value(v).to_vec());
        tape.truncate(self.base);
        Ok(out?)
    }

    /// Chooses the action for the newest row of `ctx`.
    pub fn act<R: Rng + ?Sized>(
        &self,
        ctx: &ContextWindow,
        mode: EvalMode,
        rng: &mut R,
        trace: Option<&mut ReverseStepTrace>,
    ) -> Result<Decision, PolicyError> {
        let da = self.policy.action_dim();
        let all = self.coarse_actions(ctx)?;
        let coarse = all[all.len() - da..].to_vec();
        let action = match mode {
            EvalMode::Drdt3 => sample_action(
                self,
                &coarse,
                &self.policy.schedule,
                self.policy.sampler_options(),
                rng,
                trace,
            )?,
            EvalMode::Dt3Only => {
                let b = self.policy.spec.action_bound;
                coarse.iter().map(|a| a.clamp(-b, b)).collect()
            }
        };
        Ok(Decision { action, coarse })
    }
}

impl NoisePredictor for Session<'_> {
    fn predict(&self, noisy: &[f64], cond: &[f64], step: usize) -> Result<Vec<f64>, DiffusionError> {
        let da = self.policy.action_dim();
        let mut tape = self.tape.borrow_mut();
        let out = (|| {
            let x = tape.constant(&[1, da], noisy.to_vec())?;
            let c = tape.constant(&[1, da], cond.to_vec())?;
            let e = self
                .policy
                .eps
                .predict_noise(&mut tape, &self.binding, x, c, &[step])?;
            Ok(tape.value(e).to_vec())
        })();
        tape.truncate(self.base);
        out
    }
}
