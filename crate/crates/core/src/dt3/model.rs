use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::layers::{LayerNorm, Linear, INIT_STD};
use crate::numerics::{Binding, DArray, ParamId, ParamStore, Tape, Var};

use super::attention::AttentionTttBlock;
use super::{ContextWindow, Dt3Error};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dt3Config {
    pub state_dim: usize,
    pub action_dim: usize,
    pub embed_dim: usize,
    pub n_heads: usize,
    pub n_blocks: usize,
    /// Inner-loop step size of the TTT fast weight.
    pub inner_lr: f64,
    /// Factor rank for θ_Q/θ_K/θ_V; `None` means full `d × d`.
    pub ttt_proj_rank: Option<usize>,
    pub include_action_tokens: bool,
    /// Replace every TTT sub-layer with identity (plain decision transformer).
    pub dt_mode: bool,
    /// Rows of the timestep embedding table.
    pub max_timestep: usize,
}

impl Dt3Config {
    pub fn tokens_per_step(&self) -> usize {
        if self.include_action_tokens {
            3
        } else {
            2
        }
    }
}

/// Decision-TTT sequence model producing coarse action predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct Dt3Model {
    pub config: Dt3Config,
    pub rtg_proj: Linear,
    pub state_proj: Linear,
    pub action_proj: Linear,
    pub timestep_table: ParamId,
    pub blocks: Vec<AttentionTttBlock>,
    pub final_norm: LayerNorm,
    pub head: Linear,
}

/// Embedded token sequence plus its per-token padding mask (true = real).
pub struct Tokens {
    pub x: Var,
    pub mask: Vec<bool>,
}

impl Dt3Model {
    /// Registers all parameters under the `dt3.` prefix.
    pub fn new<R: Rng + ?Sized>(config: Dt3Config, store: &mut ParamStore, rng: &mut R) -> Self {
        let d = config.embed_dim;
        let rtg_proj = Linear::new(store, "dt3.embed_rtg", 1, d, true, rng);
        let state_proj = Linear::new(store, "dt3.embed_state", config.state_dim, d, true, rng);
        let action_proj = Linear::new(store, "dt3.embed_action", config.action_dim, d, true, rng);
        let timestep_table = store.add(
            "dt3.embed_timestep",
            DArray::randn(&[config.max_timestep, d], INIT_STD, rng),
        );
        let blocks = (0..config.n_blocks)
            .map(|b| {
                AttentionTttBlock::new(
                    store,
                    &format!("dt3.block{b}"),
                    d,
                    config.n_heads,
                    config.inner_lr,
                    config.ttt_proj_rank,
                    !config.dt_mode,
                    rng,
                )
            })
            .collect();
        let final_norm = LayerNorm::new(store, "dt3.final_norm", d);
        let head = Linear::new(store, "dt3.action_head", d, config.action_dim, true, rng);
        Self {
            config,
            rtg_proj,
            state_proj,
            action_proj,
            timestep_table,
            blocks,
            final_norm,
            head,
        }
    }

    fn check_context(&self, ctx: &ContextWindow) -> Result<(), Dt3Error> {
        if ctx.d_s != self.config.state_dim || ctx.d_a != self.config.action_dim {
            return Err(Dt3Error::Context(format!(
                "context dims (d_s={}, d_a={}) do not match model (d_s={}, d_a={})",
                ctx.d_s, ctx.d_a, self.config.state_dim, self.config.action_dim
            )));
        }
        if let Some(&t) = ctx.timesteps.iter().find(|&&t| t >= self.config.max_timestep) {
            return Err(Dt3Error::TimestepOutOfRange {
                timestep: t,
                table: self.config.max_timestep,
            });
        }
        Ok(())
    }

    /// Interleaves `(ĝ_t, s_t, a_t)` tokens, each a modality projection plus
    /// the embedding of its timestep. Result is `(tokens_per_step·K) × d`.
    pub fn embed_context(
        &self,
        tape: &mut Tape,
        p: &Binding,
        ctx: &ContextWindow,
    ) -> Result<Tokens, Dt3Error> {
        self.check_context(ctx)?;
        let k = ctx.k;
        let d = self.config.embed_dim;
        let time = tape.embedding(p.var(self.timestep_table), &ctx.timesteps)?;

        let rtg_in = tape.constant(&[k, 1], ctx.rtgs.clone())?;
        let rtg = self.rtg_proj.forward(tape, p, rtg_in)?;
        let rtg = tape.add(rtg, time)?;
        let state_in = tape.constant(&[k, ctx.d_s], ctx.states.clone())?;
        let state = self.state_proj.forward(tape, p, state_in)?;
        let state = tape.add(state, time)?;
        let mut parts = vec![rtg, state];
        if self.config.include_action_tokens {
            let action_in = tape.constant(&[k, ctx.d_a], ctx.actions.clone())?;
            let action = self.action_proj.forward(tape, p, action_in)?;
            parts.push(tape.add(action, time)?);
        }
        let per_step = parts.len();
        // [k, per_step·d] row-major is exactly the interleaved [per_step·k, d] layout.
        let wide = tape.concat_last(&parts)?;
        let x = tape.reshape(wide, &[per_step * k, d])?;
        let mask = ctx
            .pad_mask
            .iter()
            .flat_map(|&m| std::iter::repeat_n(m, per_step))
            .collect();
        Ok(Tokens { x, mask })
    }

    /// Final hidden states of every token, `(tokens_per_step·K) × d`.
    pub fn hidden(
        &self,
        tape: &mut Tape,
        p: &Binding,
        ctx: &ContextWindow,
    ) -> Result<Var, Dt3Error> {
        let tokens = self.embed_context(tape, p, ctx)?;
        let mut h = tokens.x;
        for block in &self.blocks {
            h = block.forward(tape, p, h, &tokens.mask)?;
        }
        Ok(self.final_norm.forward(tape, p, h)?)
    }

    /// Predicts one action per context step (`K × d_a`), read from the hidden
    /// state at each step's state token. The last row is the coarse action for
    /// the current step.
    pub fn predict_coarse_actions(
        &self,
        tape: &mut Tape,
        p: &Binding,
        ctx: &ContextWindow,
    ) -> Result<Var, Dt3Error> {
        let h = self.hidden(tape, p, ctx)?;
        let d = self.config.embed_dim;
        let per_step = self.config.tokens_per_step();
        let wide = tape.reshape(h, &[ctx.k, per_step * d])?;
        let state_rows = tape.slice_last(wide, d, 2 * d)?;
        Ok(self.head.forward(tape, p, state_rows)?)
    }
}
