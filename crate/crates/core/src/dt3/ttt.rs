//! Linear test-time-training layer.
//!
//! Tokens are row vectors, so every projection is applied on the right:
//! `k = x·θ_K`, `v = x·θ_V`, `q = x·θ_Q` and the fast model is `f(k; W) = k·W`.
//! The per-token self-supervised loss is `ℓ(W; x) = ‖k·W − v‖²`, whose gradient
//! is `2·kᵀ(k·W − v)`. Each real token takes one descent step on `W` and then
//! reads out `z = q·W`. The whole recurrence is built from tape primitives,
//! so outer-loop gradients flow through every inner update.

use rand::Rng;

use crate::layers::INIT_STD;
use crate::numerics::{Binding, DArray, NumericsError, ParamId, ParamStore, Tape, Var};

/// A projection `θ`, either full `d × d` or factored `A·B` with `A: d × r`, `B: r × d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    Full(ParamId),
    LowRank(ParamId, ParamId),
}

impl Projection {
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        rank: Option<usize>,
        rng: &mut R,
    ) -> Self {
        match rank {
            Some(r) if r < d => Projection::LowRank(
                store.add(format!("{name}.a"), DArray::randn(&[d, r], INIT_STD, rng)),
                store.add(format!("{name}.b"), DArray::randn(&[r, d], INIT_STD, rng)),
            ),
            _ => Projection::Full(store.add(name, DArray::randn(&[d, d], INIT_STD, rng))),
        }
    }

    /// `x · θ` for a `rows × d` input.
    pub fn apply(&self, tape: &mut Tape, p: &Binding, x: Var) -> Result<Var, NumericsError> {
        match *self {
            Projection::Full(theta) => tape.matmul(x, p.var(theta)),
            Projection::LowRank(a, b) => {
                let xa = tape.matmul(x, p.var(a))?;
                tape.matmul(xa, p.var(b))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TttLinear {
    pub d: usize,
    pub w0: ParamId,
    pub theta_q: Projection,
    pub theta_k: Projection,
    pub theta_v: Projection,
    pub inner_lr: f64,
}

/// Result of the raw recurrence, before the residual and norm.
pub struct TttTrace {
    /// `L × d` outputs `z_t`.
    pub outputs: Var,
    /// Fast weight after each token (unchanged for padded tokens).
    pub weights: Vec<Var>,
}

impl TttLinear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        inner_lr: f64,
        proj_rank: Option<usize>,
        rng: &mut R,
    ) -> Self {
        assert!(inner_lr >= 0.0, "inner learning rate must be non-negative");
        Self {
            d,
            w0: store.add(format!("{name}.w0"), DArray::zeros(&[d, d])),
            theta_q: Projection::new(store, &format!("{name}.theta_q"), d, proj_rank, rng),
            theta_k: Projection::new(store, &format!("{name}.theta_k"), d, proj_rank, rng),
            theta_v: Projection::new(store, &format!("{name}.theta_v"), d, proj_rank, rng),
            inner_lr,
        }
    }

    /// Runs the sequential inner loop over the rows of `x` (`L × d`).
    ///
    /// `W` starts from `W0` for every call. Rows with `real[t] == false` are
    /// padding: they neither update `W` nor depend on later rows.
    pub fn recurrence(
        &self,
        tape: &mut Tape,
        p: &Binding,
        x: Var,
        real: &[bool],
    ) -> Result<TttTrace, NumericsError> {
        let len = tape.shape(x)[0];
        if real.len() != len {
            return Err(NumericsError::Dimension {
                op: "ttt_forward",
                lhs: tape.shape(x).to_vec(),
                rhs: vec![real.len()],
            });
        }
        let keys = self.theta_k.apply(tape, p, x)?;
        let values = self.theta_v.apply(tape, p, x)?;
        let queries = self.theta_q.apply(tape, p, x)?;

        let mut w = p.var(self.w0);
        let mut weights = Vec::with_capacity(len);
        let mut outputs = Vec::with_capacity(len);
        for (t, &is_real) in real.iter().enumerate() {
            let q = tape.slice_rows(queries, t, t + 1)?;
            if is_real {
                let k = tape.slice_rows(keys, t, t + 1)?;
                let v = tape.slice_rows(values, t, t + 1)?;
                let pred = tape.matmul(k, w)?;
                let resid = tape.sub(pred, v)?;
                let kt = tape.transpose(k)?;
                let outer = tape.matmul(kt, resid)?;
                let step = tape.scale(outer, 2.0 * self.inner_lr);
                w = tape.sub(w, step)?;
            }
            weights.push(w);
            outputs.push(tape.matmul(q, w)?);
        }
        Ok(TttTrace {
            outputs: tape.concat_rows(&outputs)?,
            weights,
        })
    }

    /// `ℓ(W; x) = ‖x·θ_K·W − x·θ_V‖²` for a single `1 × d` token.
    pub fn reconstruction_loss(
        &self,
        tape: &mut Tape,
        p: &Binding,
        w: Var,
        x: Var,
    ) -> Result<Var, NumericsError> {
        let k = self.theta_k.apply(tape, p, x)?;
        let v = self.theta_v.apply(tape, p, x)?;
        let pred = tape.matmul(k, w)?;
        let r = tape.sub(pred, v)?;
        let sq = tape.square(r);
        Ok(tape.sum(sq))
    }
}
