use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diffusion::NoiseApproxVariant;
use crate::envdata::{EvalConfig, EvalMode};

use super::TrainError;

/// Per-coordinate penalty of the DT3 action loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossNorm {
    L1,
    L2,
}

impl fmt::Display for LossNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossNorm::L1 => "l1",
            LossNorm::L2 => "l2",
        })
    }
}

impl FromStr for LossNorm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(LossNorm::L1),
            "l2" => Ok(LossNorm::L2),
            _ => Err(format!("expected l1 or l2, got {s:?}")),
        }
    }
}

macro_rules! train_config {
    ($( $(#[doc = $doc:literal])* $field:ident : $ty:ty = $default:expr ),+ $(,)?) => {
        /// Training, model-shape and evaluation settings. Every field has a default.
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        pub struct TrainConfig {
            $( $(#[doc = $doc])* pub $field: $ty, )+
        }

        impl Default for TrainConfig {
            fn default() -> Self {
                Self { $( $field: $default, )+ }
            }
        }

        impl TrainConfig {
            /// Every addressable key, in canonical order.
            pub const KEYS: &'static [&'static str] = &[$( stringify!($field) ),+];

            /// Parses `value` into the field named `key`.
            pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
                match key {
                    $( stringify!($field) => {
                        self.$field = parse_value::<$ty>(value)?;
                        Ok(())
                    } )+
                    _ => Err(format!("unknown key {key:?}")),
                }
            }

            /// `(key, value)` pairs in canonical order and formatting.
            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$( (stringify!($field), self.$field.to_string()) ),+]
            }
        }
    };
}

fn parse_value<T>(value: &str) -> Result<T, String>
where
    T: FromStr,
    T::Err: fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| format!("cannot parse {value:?}: {e}"))
}

train_config! {
    seed: u64 = 0,
    /// K.
    context_len: usize = 6,
    batch_size: usize = 64,
    learning_rate: f64 = 3e-4,
    epochs: usize = 20,
    updates_per_epoch: usize = 200,
    /// ζ.
    zeta: f64 = 0.2,
    dt3_loss_norm: LossNorm = LossNorm::L1,
    weight_decay: f64 = 1e-4,
    /// Global gradient-norm clip; 0 disables clipping.
    grad_clip: f64 = 0.25,
    adam_beta1: f64 = 0.9,
    adam_beta2: f64 = 0.999,
    adam_eps: f64 = 1e-8,
    embed_dim: usize = 128,
    n_heads: usize = 1,
    n_blocks: usize = 1,
    inner_lr: f64 = 1.0,
    /// 0 means full-rank θ_Q/θ_K/θ_V.
    ttt_proj_rank: usize = 0,
    include_action_tokens: bool = true,
    dt_mode: bool = false,
    /// Timestep table rows; 0 derives it from the dataset and horizon.
    max_timestep: usize = 0,
    diffusion_steps: usize = 5,
    beta_min: f64 = 0.1,
    beta_max: f64 = 10.0,
    time_embed_dim: usize = 16,
    noise_hidden_dim: usize = 64,
    noise_expansion: usize = 4,
    noise_approx_variant: NoiseApproxVariant = NoiseApproxVariant::Full,
    sqrt_beta_noise: bool = false,
    rtg_conditioning: bool = true,
    /// When false the diffusion loss is dropped and only ζ·L_dt3 is minimised.
    train_diffusion: bool = true,
    eval_episodes: usize = 10,
    /// η.
    rtg_scale: f64 = 1.0,
    eval_mode: EvalMode = EvalMode::Drdt3,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::Config(msg));
        if self.context_len == 0 {
            return bad("context_len must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.zeta >= 0.0) || !self.zeta.is_finite() {
            return bad(format!("zeta must be non-negative, got {}", self.zeta));
        }
        if !(self.weight_decay >= 0.0) || !(self.grad_clip >= 0.0) {
            return bad("weight_decay and grad_clip must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)".into());
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive".into());
        }
        if self.embed_dim == 0 || self.n_heads == 0 || !self.embed_dim.is_multiple_of(self.n_heads) {
            return bad(format!(
                "embed_dim {} must be a positive multiple of n_heads {}",
                self.embed_dim, self.n_heads
            ));
        }
        if self.n_blocks == 0 {
            return bad("n_blocks must be at least 1".into());
        }
        if !(self.inner_lr >= 0.0) {
            return bad(format!("inner_lr must be non-negative, got {}", self.inner_lr));
        }
        if self.diffusion_steps == 0 {
            return bad("diffusion_steps must be at least 1".into());
        }
        if self.time_embed_dim == 0 || self.noise_hidden_dim == 0 || self.noise_expansion == 0 {
            return bad("noise approximator widths must be positive".into());
        }
        if !(self.rtg_scale > 0.0) {
            return bad(format!("rtg_scale must be positive, got {}", self.rtg_scale));
        }
        if self.eval_episodes == 0 {
            return bad("eval_episodes must be at least 1".into());
        }
        if !self.train_diffusion && self.zeta == 0.0 {
            return bad("train_diffusion=false with zeta=0 leaves nothing to minimise".into());
        }
        Ok(())
    }

    /// Evaluation settings for a given seed.
    pub fn eval_config(&self, seed: u64) -> EvalConfig {
        EvalConfig {
            rtg_scale: self.rtg_scale,
            episodes: self.eval_episodes,
            seed,
            mode: self.eval_mode,
        }
    }

    /// Canonical `key = value` text, one line per field.
    pub fn to_kv_string(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}
