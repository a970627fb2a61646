//! Return-conditioned evaluation rollouts.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::policy::{Policy, PolicyError};

use super::{normalized_score, scale_return, Env, EnvDataError, EnvSpec, Trajectory};

/// Which action a rollout executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    /// Coarse action refined by the reverse diffusion chain.
    Drdt3,
    /// The coarse action itself; the diffusion chain is never run.
    Dt3Only,
}

impl EvalMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalMode::Drdt3 => "drdt3",
            EvalMode::Dt3Only => "dt3-only",
        }
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EvalMode {
    type Err = EnvDataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "drdt3" => Ok(EvalMode::Drdt3),
            "dt3-only" => Ok(EvalMode::Dt3Only),
            _ => Err(EnvDataError::Argument(format!("unknown eval mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// η: scales the best dataset return into the initial RTG.
    pub rtg_scale: f64,
    pub episodes: usize,
    pub seed: u64,
    pub mode: EvalMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            rtg_scale: 1.0,
            episodes: 10,
            seed: 0,
            mode: EvalMode::Drdt3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub total_return: f64,
    pub trajectory: Trajectory,
    /// Desired return fed at each step, starting with ĝ_0.
    pub target_rtgs: Vec<f64>,
    pub success: bool,
}

impl EpisodeResult {
    pub fn initial_rtg(&self) -> f64 {
        self.target_rtgs[0]
    }

    pub fn len(&self) -> usize {
        self.trajectory.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectory.is_empty()
    }
}

/// Runs one episode, decrementing the desired return by each observed reward.
pub fn rollout<R: Rng + ?Sized>(
    policy: &Policy,
    spec: &EnvSpec,
    cfg: &EvalConfig,
    rng: &mut R,
) -> Result<EpisodeResult, PolicyError> {
    if policy.state_dim() != spec.state_dim || policy.action_dim() != spec.action_dim {
        return Err(PolicyError::Contract(format!(
            "policy has d_s={}, d_a={} but {} has d_s={}, d_a={}",
            policy.state_dim(),
            policy.action_dim(),
            spec.id,
            spec.state_dim,
            spec.action_dim
        )));
    }
    let g0 = scale_return(policy.spec.normalization.max_return, cfg.rtg_scale)
        .map_err(|e| PolicyError::Contract(e.to_string()))?;
    let session = policy.session();
    let (ds, da) = (spec.state_dim, spec.action_dim);
    let mut env = Env::new(spec.id);
    let mut s = env.reset(rng);
    let (mut rtgs, mut states, mut actions, mut rewards) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut g = g0;
    let mut total = 0.0;
    loop {
        let t = rewards.len();
        rtgs.push(g);
        states.extend_from_slice(&s);
        actions.extend(std::iter::repeat_n(0.0, da));
        let first = (t + 1).saturating_sub(policy.spec.context_len);
        let ctx = policy.context(
            &rtgs[first..],
            &states[first * ds..],
            &actions[first * da..],
            first,
        )?;
        let decision = session.act(&ctx, cfg.mode, rng, None)?;
        actions[t * da..].copy_from_slice(&decision.action);
        let out = env.step(&decision.action);
        rewards.push(out.reward);
        total += out.reward;
        g -= out.reward;
        s = out.state;
        if out.done {
            break;
        }
    }
    let success = env.succeeded();
    let trajectory = Trajectory::new(ds, da, states, actions, rewards)
        .map_err(|e| PolicyError::Contract(e.to_string()))?;
    Ok(EpisodeResult {
        total_return: total,
        trajectory,
        target_rtgs: rtgs,
        success,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub episodes: Vec<EpisodeResult>,
    pub mean_return: f64,
    pub std_return: f64,
    pub success_rate: f64,
    pub normalized_score: f64,
}

/// Evaluates `cfg.episodes` episodes. Episode `e` draws from stream `e` of a
/// generator seeded with `cfg.seed`, so results do not depend on order.
pub fn evaluate(policy: &Policy, spec: &EnvSpec, cfg: &EvalConfig) -> Result<EvalSummary, PolicyError> {
    if cfg.episodes == 0 {
        return Err(PolicyError::Contract("at least one episode is required".into()));
    }
    let mut episodes = Vec::with_capacity(cfg.episodes);
    for e in 0..cfg.episodes {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(e as u64);
        episodes.push(rollout(policy, spec, cfg, &mut rng)?);
    }
    let n = episodes.len() as f64;
    let mean = episodes.iter().map(|e| e.total_return).sum::<f64>() / n;
    let var = episodes
        .iter()
        .map(|e| (e.total_return - mean).powi(2))
        .sum::<f64>()
        / n;
    let success_rate = episodes.iter().filter(|e| e.success).count() as f64 / n;
    let norm = normalized_score(mean, spec).map_err(|e| PolicyError::Contract(e.to_string()))?;
    Ok(EvalSummary {
        episodes,
        mean_return: mean,
        std_return: var.sqrt(),
        success_rate,
        normalized_score: norm,
    })
}
