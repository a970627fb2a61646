use rand::Rng;

use crate::layers::{LayerNorm, Linear};
use crate::numerics::{Binding, NumericsError, ParamStore, Tape, Var};

use super::ttt::TttLinear;

/// Masked multi-head self-attention followed by a TTT layer, each wrapped in
/// residual-add and layer norm.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTttBlock {
    pub d: usize,
    pub n_heads: usize,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub attn_norm: LayerNorm,
    /// `None` in pure-attention mode.
    pub ttt: Option<TttLinear>,
    pub ttt_norm: Option<LayerNorm>,
}

/// Additive mask: query `j` may read key `i` iff `i ≤ j` and the key is real.
/// Every query can always read itself, so no row is fully masked.
pub fn causal_mask(key_mask: &[bool]) -> Vec<f64> {
    let n = key_mask.len();
    let mut m = vec![f64::NEG_INFINITY; n * n];
    for j in 0..n {
        for i in 0..=j {
            if key_mask[i] || i == j {
                m[j * n + i] = 0.0;
            }
        }
    }
    m
}

impl AttentionTttBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        n_heads: usize,
        inner_lr: f64,
        proj_rank: Option<usize>,
        with_ttt: bool,
        rng: &mut R,
    ) -> Self {
        assert!(n_heads > 0 && d.is_multiple_of(n_heads), "d must be divisible by n_heads");
        Self {
            d,
            n_heads,
            query: Linear::new(store, &format!("{name}.attn.query"), d, d, true, rng),
            key: Linear::new(store, &format!("{name}.attn.key"), d, d, true, rng),
            value: Linear::new(store, &format!("{name}.attn.value"), d, d, true, rng),
            output: Linear::new(store, &format!("{name}.attn.output"), d, d, true, rng),
            attn_norm: LayerNorm::new(store, &format!("{name}.attn_norm"), d),
            ttt: with_ttt.then(|| {
                TttLinear::new(store, &format!("{name}.ttt"), d, inner_lr, proj_rank, rng)
            }),
            ttt_norm: with_ttt.then(|| LayerNorm::new(store, &format!("{name}.ttt_norm"), d)),
        }
    }

    /// Attention sub-layer only: `LN(x + MHA(x))`.
    pub fn causal_attention(
        &self,
        tape: &mut Tape,
        p: &Binding,
        x: Var,
        key_mask: &[bool],
    ) -> Result<Var, NumericsError> {
        let len = tape.shape(x)[0];
        if key_mask.len() != len {
            return Err(NumericsError::Dimension {
                op: "causal_attention",
                lhs: tape.shape(x).to_vec(),
                rhs: vec![key_mask.len()],
            });
        }
        let q = self.query.forward(tape, p, x)?;
        let k = self.key.forward(tape, p, x)?;
        let v = self.value.forward(tape, p, x)?;
        let mask = tape.constant(&[len, len], causal_mask(key_mask))?;
        let dh = self.d / self.n_heads;
        let scale = 1.0 / (dh as f64).sqrt();

        let mut heads = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let (qh, kh, vh) = if self.n_heads == 1 {
                (q, k, v)
            } else {
                (
                    tape.slice_last(q, h * dh, (h + 1) * dh)?,
                    tape.slice_last(k, h * dh, (h + 1) * dh)?,
                    tape.slice_last(v, h * dh, (h + 1) * dh)?,
                )
            };
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale(scores, scale);
            let scores = tape.add(scores, mask)?;
            let weights = tape.softmax(scores);
            heads.push(tape.matmul(weights, vh)?);
        }
        let merged = if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat_last(&heads)?
        };
        let attn = self.output.forward(tape, p, merged)?;
        let resid = tape.add(x, attn)?;
        self.attn_norm.forward(tape, p, resid)
    }

    /// TTT sub-layer only: `LN(x + TTT(x))`. Identity in pure-attention mode.
    pub fn ttt_forward(
        &self,
        tape: &mut Tape,
        p: &Binding,
        x: Var,
        real: &[bool],
    ) -> Result<Var, NumericsError> {
        let (Some(ttt), Some(norm)) = (&self.ttt, &self.ttt_norm) else {
            return Ok(x);
        };
        let trace = ttt.recurrence(tape, p, x, real)?;
        let resid = tape.add(x, trace.outputs)?;
        norm.forward(tape, p, resid)
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &Binding,
        x: Var,
        key_mask: &[bool],
    ) -> Result<Var, NumericsError> {
        let h = self.causal_attention(tape, p, x, key_mask)?;
        self.ttt_forward(tape, p, h, key_mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_layout() {
        let m = causal_mask(&[false, true, true]);
        let inf = f64::NEG_INFINITY;
        assert_eq!(m, vec![0.0, inf, inf, inf, 0.0, inf, inf, 0.0, 0.0]);
    }
}
