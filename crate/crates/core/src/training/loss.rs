use crate::numerics::{Tape, Var};

use super::{LossNorm, TrainError};

/// Action-representation loss `(1/(K·a_max)) Σ_{real rows} ‖a_t − ã_t‖₁`.
///
/// `pred` is `K × d_a`; with stacked batches (`B·K` rows) the result is the
/// batch mean of the per-window loss. The L2 variant squares each coordinate
/// instead of taking its absolute value.
pub fn dt3_loss(
    tape: &mut Tape,
    pred: Var,
    target: &[f64],
    pad_mask: &[bool],
    a_max: f64,
    norm: LossNorm,
) -> Result<Var, TrainError> {
    if !(a_max > 0.0) {
        return Err(TrainError::Argument(format!("a_max must be positive, got {a_max}")));
    }
    let shape = tape.shape(pred).to_vec();
    if shape.len() != 2 || shape[0] != pad_mask.len() || target.len() != shape[0] * shape[1] {
        return Err(TrainError::Argument(format!(
            "prediction {shape:?}, {} target values, {} mask rows",
            target.len(),
            pad_mask.len()
        )));
    }
    let (k, da) = (shape[0], shape[1]);
    let target = tape.constant(&shape, target.to_vec())?;
    let mask: Vec<f64> = pad_mask
        .iter()
        .flat_map(|&m| std::iter::repeat_n(if m { 1.0 } else { 0.0 }, da))
        .collect();
    let mask = tape.constant(&shape, mask)?;
    let diff = tape.sub(pred, target)?;
    let pen = match norm {
        LossNorm::L1 => tape.abs(diff),
        LossNorm::L2 => tape.square(diff),
    };
    let pen = tape.mul(pen, mask)?;
    let total = tape.sum(pen);
    Ok(tape.scale(total, 1.0 / (k as f64 * a_max)))
}

/// `l_diff + ζ·l_dt3` on the tape.
pub fn unified_loss(tape: &mut Tape, l_diff: Var, l_dt3: Var, zeta: f64) -> Result<Var, TrainError> {
    let weighted = tape.scale(l_dt3, zeta);
    Ok(tape.add(l_diff, weighted)?)
}

/// Scalar form of [`unified_loss`].
pub fn unified_loss_value(l_diff: f64, l_dt3: f64, zeta: f64) -> f64 {
    l_diff + zeta * l_dt3
}
