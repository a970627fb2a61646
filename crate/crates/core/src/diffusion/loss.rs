use crate::numerics::{Binding, Tape, Var};

use super::{forward_noise, DiffusionError, DiffusionSchedule, NoiseApproximator};

/// Simplified denoising loss, `mean_b ‖ε_b − ε_θ(√ᾱ_i a0_b + √(1−ᾱ_i) ε_b, ã_b, i_b)‖²`.
///
/// `clean` is the batch of dataset actions (`B × d_a`, row-major), `cond` a
/// tape node (`B × d_a`) so the gradient reaches whatever produced it.
#[allow(clippy::too_many_arguments)]
pub fn diffusion_loss(
    tape: &mut Tape,
    p: &Binding,
    model: &NoiseApproximator,
    sched: &DiffusionSchedule,
    clean: &[f64],
    cond: Var,
    steps: &[usize],
    eps: &[f64],
) -> Result<Var, DiffusionError> {
    let da = model.config.action_dim;
    let batch = steps.len();
    if batch == 0
        || clean.len() != batch * da
        || eps.len() != batch * da
        || tape.shape(cond) != [batch, da]
    {
        return Err(DiffusionError::Dimension(format!(
            "batch of {batch} steps with {} clean values, {} noise values and condition {:?} (d_a={da})",
            clean.len(),
            eps.len(),
            tape.shape(cond)
        )));
    }
    let mut noisy = Vec::with_capacity(batch * da);
    for (b, &i) in steps.iter().enumerate() {
        let rows = b * da..(b + 1) * da;
        noisy.extend(forward_noise(&clean[rows.clone()], i, &eps[rows], sched)?);
    }
    let noisy = tape.constant(&[batch, da], noisy)?;
    let target = tape.constant(&[batch, da], eps.to_vec())?;
    let pred = model.predict_noise(tape, p, noisy, cond, steps)?;
    let diff = tape.sub(target, pred)?;
    let sq = tape.square(diff);
    let total = tape.sum(sq);
    Ok(tape.scale(total, 1.0 / batch as f64))
}
