//! Noise approximator `ε_θ(a_i, ã, i)`.
//!
//! The condition is the concatenation of a sinusoidal embedding of the
//! diffusion step and the coarse action. In the full variant it drives an
//! adaptive layer norm (scale, shift and residual gate, zero-initialised),
//! and the normalised stream goes through a gated MLP:
//! `down(gelu(up_a(m)) ⊙ up_b(m))`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::layers::{plain_layer_norm, LayerNorm, Linear};
use crate::numerics::{Binding, NumericsError, ParamStore, Tape, Var};

use super::DiffusionError;

/// Noise-approximator architecture variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseApproxVariant {
    /// adaLN conditioning + gated MLP.
    #[default]
    Full,
    /// Condition concatenated onto the input instead of adaLN.
    NoAdaLn,
    /// adaLN with a plain two-layer MLP.
    NoGatedMlp,
    /// Concatenated condition and plain MLP.
    NoBoth,
}

impl NoiseApproxVariant {
    pub const ALL: [NoiseApproxVariant; 4] = [
        NoiseApproxVariant::Full,
        NoiseApproxVariant::NoAdaLn,
        NoiseApproxVariant::NoGatedMlp,
        NoiseApproxVariant::NoBoth,
    ];

    pub fn uses_adaln(self) -> bool {
        matches!(self, NoiseApproxVariant::Full | NoiseApproxVariant::NoGatedMlp)
    }

    pub fn uses_gated_mlp(self) -> bool {
        matches!(self, NoiseApproxVariant::Full | NoiseApproxVariant::NoAdaLn)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NoiseApproxVariant::Full => "full",
            NoiseApproxVariant::NoAdaLn => "no-adaln",
            NoiseApproxVariant::NoGatedMlp => "no-gated-mlp",
            NoiseApproxVariant::NoBoth => "no-both",
        }
    }
}

impl fmt::Display for NoiseApproxVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NoiseApproxVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown noise approximator variant {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseApproxConfig {
    pub action_dim: usize,
    /// Width of the sinusoidal diffusion-step embedding.
    pub time_embed_dim: usize,
    pub hidden_dim: usize,
    /// Branch expansion factor `M`.
    pub expansion: usize,
    pub variant: NoiseApproxVariant,
}

#[derive(Debug, Clone, PartialEq)]
enum Mlp {
    Gated { up_a: Linear, up_b: Linear, down: Linear },
    Plain { up: Linear, down: Linear },
}

#[derive(Debug, Clone, PartialEq)]
enum Conditioning {
    /// `ada` maps the condition embedding to `[γ | β_shift | α_gate]`.
    AdaLn { input: Linear, ada: Linear },
    /// `input` reads `[cond_emb | a_i]`; the norm carries its own affine.
    InContext { input: Linear, norm: LayerNorm },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseApproximator {
    pub config: NoiseApproxConfig,
    cond_proj: Linear,
    conditioning: Conditioning,
    mlp: Mlp,
    out: Linear,
}

/// Sinusoidal embedding of the diffusion step, `[sin(i·f_j) | cos(i·f_j)]`.
pub fn sinusoidal_embedding(step: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for j in 0..half {
        let freq = (-(10_000f64.ln()) * j as f64 / half.max(1) as f64).exp();
        let arg = step as f64 * freq;
        out[j] = arg.sin();
        out[half + j] = arg.cos();
    }
    out
}

impl NoiseApproximator {
    /// Registers all parameters under the `eps.` prefix.
    pub fn new<R: Rng + ?Sized>(
        config: NoiseApproxConfig,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Self {
        let (da, dc, dh) = (config.action_dim, config.time_embed_dim, config.hidden_dim);
        let wide = config.expansion * dh;
        let cond_proj = Linear::new(store, "eps.cond_proj", dc + da, dh, true, rng);
        let conditioning = if config.variant.uses_adaln() {
            Conditioning::AdaLn {
                input: Linear::new(store, "eps.input", da, dh, true, rng),
                ada: Linear::zeros(store, "eps.adaln", dh, 3 * dh),
            }
        } else {
            Conditioning::InContext {
                input: Linear::new(store, "eps.input", dh + da, dh, true, rng),
                norm: LayerNorm::new(store, "eps.norm", dh),
            }
        };
        let mlp = if config.variant.uses_gated_mlp() {
            Mlp::Gated {
                up_a: Linear::new(store, "eps.mlp.up_gelu", dh, wide, true, rng),
                up_b: Linear::new(store, "eps.mlp.up_linear", dh, wide, true, rng),
                down: Linear::new(store, "eps.mlp.down", wide, dh, true, rng),
            }
        } else {
            Mlp::Plain {
                up: Linear::new(store, "eps.mlp.up", dh, wide, true, rng),
                down: Linear::new(store, "eps.mlp.down", wide, dh, true, rng),
            }
        };
        let out = Linear::new(store, "eps.out", dh, da, true, rng);
        Self {
            config,
            cond_proj,
            conditioning,
            mlp,
            out,
        }
    }

    fn mlp_forward(&self, tape: &mut Tape, p: &Binding, m: Var) -> Result<Var, NumericsError> {
        match &self.mlp {
            Mlp::Gated { up_a, up_b, down } => {
                let a = up_a.forward(tape, p, m)?;
                let a = tape.gelu(a);
                let b = up_b.forward(tape, p, m)?;
                let y = tape.mul(a, b)?;
                down.forward(tape, p, y)
            }
            Mlp::Plain { up, down } => {
                let a = up.forward(tape, p, m)?;
                let a = tape.gelu(a);
                down.forward(tape, p, a)
            }
        }
    }

    /// Predicts the noise for a batch: `noisy`, `cond` are `B × d_a`,
    /// `steps[b] ∈ 1..=N` is the diffusion step of row `b`. Returns `B × d_a`.
    pub fn predict_noise(
        &self,
        tape: &mut Tape,
        p: &Binding,
        noisy: Var,
        cond: Var,
        steps: &[usize],
    ) -> Result<Var, DiffusionError> {
        let da = self.config.action_dim;
        let dh = self.config.hidden_dim;
        let rows = tape.shape(noisy)[0];
        if tape.shape(noisy) != [rows, da] || tape.shape(cond) != [rows, da] || steps.len() != rows
        {
            return Err(DiffusionError::Dimension(format!(
                "noisy {:?}, cond {:?}, {} steps for action dim {da}",
                tape.shape(noisy),
                tape.shape(cond),
                steps.len()
            )));
        }
        let dc = self.config.time_embed_dim;
        let temb: Vec<f64> = steps
            .iter()
            .flat_map(|&i| sinusoidal_embedding(i, dc))
            .collect();
        let temb = tape.constant(&[rows, dc], temb)?;
        let c = tape.concat_last(&[temb, cond])?;
        let c = self.cond_proj.forward(tape, p, c)?;
        let c = tape.gelu(c);

        let h = match &self.conditioning {
            Conditioning::AdaLn { input, ada } => {
                let h = input.forward(tape, p, noisy)?;
                let mods = ada.forward(tape, p, c)?;
                let gamma = tape.slice_last(mods, 0, dh)?;
                let shift = tape.slice_last(mods, dh, 2 * dh)?;
                let gate = tape.slice_last(mods, 2 * dh, 3 * dh)?;
                let n = plain_layer_norm(tape, h)?;
                let scale = tape.add_scalar(gamma, 1.0);
                let m = tape.mul(n, scale)?;
                let m = tape.add(m, shift)?;
                let y = self.mlp_forward(tape, p, m)?;
                let y = tape.mul(gate, y)?;
                tape.add(h, y)?
            }
            Conditioning::InContext { input, norm } => {
                let x = tape.concat_last(&[c, noisy])?;
                let h = input.forward(tape, p, x)?;
                let m = norm.forward(tape, p, h)?;
                let y = self.mlp_forward(tape, p, m)?;
                tape.add(h, y)?
            }
        };
        Ok(self.out.forward(tape, p, h)?)
    }

    /// Single-sample convenience over frozen parameters.
    pub fn predict_noise_vec(
        &self,
        store: &ParamStore,
        noisy: &[f64],
        cond: &[f64],
        step: usize,
    ) -> Result<Vec<f64>, DiffusionError> {
        let mut tape = Tape::new();
        let p = tape.bind_frozen(store);
        let da = self.config.action_dim;
        let x = tape.constant(&[1, da], noisy.to_vec())?;
        let c = tape.constant(&[1, da], cond.to_vec())?;
        let out = self.predict_noise(&mut tape, &p, x, c, &[step])?;
        Ok(tape.value(out).to_vec())
    }

    /// The adaLN modulation head, when the variant has one.
    pub fn gate_head(&self) -> Option<Linear> {
        match &self.conditioning {
            Conditioning::AdaLn { ada, .. } => Some(*ada),
            Conditioning::InContext { .. } => None,
        }
    }

    /// The input projection (applied to `a_i` in adaLN variants).
    pub fn input_proj(&self) -> Linear {
        match &self.conditioning {
            Conditioning::AdaLn { input, .. } | Conditioning::InContext { input, .. } => *input,
        }
    }

    pub fn output_head(&self) -> Linear {
        self.out
    }
}
