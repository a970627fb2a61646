use super::Dt3Error;

/// K-step slice of (return-to-go, state, action) tokens.
///
/// Padding occupies a contiguous prefix: row `i` is real iff `pad_mask[i]`.
/// Padded rows are all zero and carry timestep 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextWindow {
    pub k: usize,
    pub d_s: usize,
    pub d_a: usize,
    pub rtgs: Vec<f64>,
    /// `K × d_s`, row-major.
    pub states: Vec<f64>,
    /// `K × d_a`, row-major.
    pub actions: Vec<f64>,
    pub timesteps: Vec<usize>,
    pub pad_mask: Vec<bool>,
}

impl ContextWindow {
    /// Builds a window from the most recent `min(K, n)` of `n` history steps.
    ///
    /// `states`/`actions` are row-major `n × d_s` / `n × d_a`; `first_timestep`
    /// is the environment step index of history row 0.
    pub fn from_history(
        k: usize,
        d_s: usize,
        d_a: usize,
        rtgs: &[f64],
        states: &[f64],
        actions: &[f64],
        first_timestep: usize,
    ) -> Result<Self, Dt3Error> {
        let n = rtgs.len();
        if k == 0 {
            return Err(Dt3Error::Context("context length must be at least 1".into()));
        }
        if n == 0 {
            return Err(Dt3Error::Context("empty history".into()));
        }
        if states.len() != n * d_s || actions.len() != n * d_a {
            return Err(Dt3Error::Context(format!(
                "history of {n} steps has {} state and {} action values (d_s={d_s}, d_a={d_a})",
                states.len(),
                actions.len()
            )));
        }
        let real = n.min(k);
        let pad = k - real;
        let from = n - real;
        let mut ctx = Self::empty(k, d_s, d_a);
        for i in 0..real {
            let src = from + i;
            let dst = pad + i;
            ctx.rtgs[dst] = rtgs[src];
            ctx.states[dst * d_s..(dst + 1) * d_s]
                .copy_from_slice(&states[src * d_s..(src + 1) * d_s]);
            ctx.actions[dst * d_a..(dst + 1) * d_a]
                .copy_from_slice(&actions[src * d_a..(src + 1) * d_a]);
            ctx.timesteps[dst] = first_timestep + src;
            ctx.pad_mask[dst] = true;
        }
        Ok(ctx)
    }

    pub fn empty(k: usize, d_s: usize, d_a: usize) -> Self {
        Self {
            k,
            d_s,
            d_a,
            rtgs: vec![0.0; k],
            states: vec![0.0; k * d_s],
            actions: vec![0.0; k * d_a],
            timesteps: vec![0; k],
            pad_mask: vec![false; k],
        }
    }

    pub fn num_real(&self) -> usize {
        self.pad_mask.iter().filter(|&&m| m).count()
    }

    pub fn num_padded(&self) -> usize {
        self.k - self.num_real()
    }

    pub fn state(&self, row: usize) -> &[f64] {
        &self.states[row * self.d_s..(row + 1) * self.d_s]
    }

    pub fn action(&self, row: usize) -> &[f64] {
        &self.actions[row * self.d_a..(row + 1) * self.d_a]
    }

    /// Checks every structural invariant of the window.
    pub fn validate(&self) -> Result<(), Dt3Error> {
        let k = self.k;
        if self.rtgs.len() != k
            || self.states.len() != k * self.d_s
            || self.actions.len() != k * self.d_a
            || self.timesteps.len() != k
            || self.pad_mask.len() != k
        {
            return Err(Dt3Error::Context("field lengths disagree with K".into()));
        }
        let pad = self.num_padded();
        if self.pad_mask[..pad].iter().any(|&m| m) || self.pad_mask[pad..].iter().any(|&m| !m) {
            return Err(Dt3Error::Context("padding is not a contiguous prefix".into()));
        }
        for row in 0..pad {
            if self.rtgs[row] != 0.0
                || self.state(row).iter().any(|&v| v != 0.0)
                || self.action(row).iter().any(|&v| v != 0.0)
                || self.timesteps[row] != 0
            {
                return Err(Dt3Error::Context(format!("padded row {row} is not zero")));
            }
        }
        for row in pad + 1..k {
            if self.timesteps[row] != self.timesteps[row - 1] + 1 {
                return Err(Dt3Error::Context(format!(
                    "timesteps not consecutive at row {row}"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_history_is_left_padded() {
        let ctx =
            ContextWindow::from_history(6, 1, 1, &[3.0, 2.0], &[0.1, 0.2], &[0.5, 0.6], 0).unwrap();
        assert_eq!(ctx.pad_mask, vec![false, false, false, false, true, true]);
        assert_eq!(ctx.rtgs, vec![0.0, 0.0, 0.0, 0.0, 3.0, 2.0]);
        assert_eq!(ctx.timesteps, vec![0, 0, 0, 0, 0, 1]);
        ctx.validate().unwrap();
    }

    #[test]
    fn long_history_keeps_latest() {
        let r: Vec<f64> = (0..10).map(f64::from).collect();
        let ctx = ContextWindow::from_history(3, 1, 1, &r, &r, &r, 5).unwrap();
        assert_eq!(ctx.rtgs, vec![7.0, 8.0, 9.0]);
        assert_eq!(ctx.timesteps, vec![12, 13, 14]);
        assert_eq!(ctx.num_padded(), 0);
        ctx.validate().unwrap();
    }

    #[test]
    fn validate_rejects_gap_and_dirty_padding() {
        let mut ctx = ContextWindow::from_history(3, 1, 1, &[1.0, 2.0], &[0.0; 2], &[0.0; 2], 0)
            .unwrap();
        ctx.states[0] = 1.0;
        assert!(ctx.validate().is_err());
        let mut ctx = ContextWindow::from_history(3, 1, 1, &[1.0; 3], &[0.0; 3], &[0.0; 3], 0)
            .unwrap();
        ctx.timesteps[2] = 7;
        assert!(ctx.validate().is_err());
    }
}
