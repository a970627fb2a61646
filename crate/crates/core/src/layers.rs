//! Parameterised building blocks shared by the sequence model and the noise
//! approximator.

use rand::Rng;

use crate::numerics::{Binding, DArray, NumericsError, ParamId, ParamStore, Tape, Var, LAYER_NORM_EPS};

/// Std of the zero-mean normal used for weight initialisation.
pub const INIT_STD: f64 = 0.02;

/// `x · W + b` with `W: d_in × d_out`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        Self::with_std(store, name, d_in, d_out, bias, INIT_STD, rng)
    }

    /// Zero-initialised weight and bias.
    pub fn zeros(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize) -> Self {
        let weight = store.add(format!("{name}.weight"), DArray::zeros(&[d_in, d_out]));
        let bias = Some(store.add(format!("{name}.bias"), DArray::zeros(&[d_out])));
        Self {
            weight,
            bias,
            d_in,
            d_out,
        }
    }

    pub fn with_std<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        std: f64,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            DArray::randn(&[d_in, d_out], std, rng),
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), DArray::zeros(&[d_out])));
        Self {
            weight,
            bias,
            d_in,
            d_out,
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Binding, x: Var) -> Result<Var, NumericsError> {
        let y = tape.matmul(x, p.var(self.weight))?;
        match self.bias {
            Some(b) => tape.add_row(y, p.var(b)),
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), DArray::filled(&[d], 1.0)),
            bias: store.add(format!("{name}.bias"), DArray::zeros(&[d])),
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Binding, x: Var) -> Result<Var, NumericsError> {
        tape.layer_norm(x, p.var(self.gain), p.var(self.bias), LAYER_NORM_EPS)
    }
}

/// Layer norm without learnable affine parameters.
pub fn plain_layer_norm(tape: &mut Tape, x: Var) -> Result<Var, NumericsError> {
    let d = *tape.shape(x).last().unwrap_or(&1);
    let ones = tape.constant(&[d], vec![1.0; d])?;
    let zeros = tape.constant(&[d], vec![0.0; d])?;
    tape.layer_norm(x, ones, zeros, LAYER_NORM_EPS)
}
