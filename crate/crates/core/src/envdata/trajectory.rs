use serde::{Deserialize, Serialize};

use super::{EnvDataError, EnvId};

/// Undiscounted suffix sums `ĝ_t = Σ_{t' ≥ t} r_{t'}`.
pub fn compute_rtg(rewards: &[f64]) -> Result<Vec<f64>, EnvDataError> {
    if rewards.is_empty() {
        return Err(EnvDataError::Argument("no rewards".into()));
    }
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (o, r) in out.iter_mut().zip(rewards).rev() {
        acc += r;
        *o = acc;
    }
    Ok(out)
}

/// One episode. `states` is `T × d_s` and `actions` `T × d_a`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub state_dim: usize,
    pub action_dim: usize,
    states: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    rtgs: Vec<f64>,
}

impl Trajectory {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        states: Vec<f64>,
        actions: Vec<f64>,
        rewards: Vec<f64>,
    ) -> Result<Self, EnvDataError> {
        let t = rewards.len();
        if states.len() != t * state_dim || actions.len() != t * action_dim {
            return Err(EnvDataError::Dimension(format!(
                "{t} rewards but {} state values (d_s={state_dim}) and {} action values (d_a={action_dim})",
                states.len(),
                actions.len()
            )));
        }
        let rtgs = compute_rtg(&rewards)?;
        Ok(Self {
            state_dim,
            action_dim,
            states,
            actions,
            rewards,
            rtgs,
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn actions(&self) -> &[f64] {
        &self.actions
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn rtgs(&self) -> &[f64] {
        &self.rtgs
    }

    pub fn state(&self, t: usize) -> &[f64] {
        &self.states[t * self.state_dim..(t + 1) * self.state_dim]
    }

    pub fn action(&self, t: usize) -> &[f64] {
        &self.actions[t * self.action_dim..(t + 1) * self.action_dim]
    }

    pub fn total_return(&self) -> f64 {
        self.rtgs[0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub count: usize,
    pub state_mean: Vec<f64>,
    pub state_std: Vec<f64>,
    pub max_return: f64,
    pub max_abs_return: f64,
    pub mean_return: f64,
}

/// Offline dataset of trajectories for one environment.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStore {
    pub env: EnvId,
    pub state_dim: usize,
    pub action_dim: usize,
    trajectories: Vec<Trajectory>,
    stats: DatasetStats,
}

/// Standard deviations below this are replaced by 1 when normalising.
const MIN_STD: f64 = 1e-6;

impl TrajectoryStore {
    pub fn new(env: EnvId, state_dim: usize, action_dim: usize) -> Self {
        let mut s = Self {
            env,
            state_dim,
            action_dim,
            trajectories: Vec::new(),
            stats: DatasetStats {
                count: 0,
                state_mean: Vec::new(),
                state_std: Vec::new(),
                max_return: 0.0,
                max_abs_return: 0.0,
                mean_return: 0.0,
            },
        };
        s.recompute_stats();
        s
    }

    pub fn push(&mut self, traj: Trajectory) -> Result<(), EnvDataError> {
        self.push_unchecked(traj)?;
        self.recompute_stats();
        Ok(())
    }

    pub fn extend(&mut self, trajs: impl IntoIterator<Item = Trajectory>) -> Result<(), EnvDataError> {
        for t in trajs {
            self.push_unchecked(t)?;
        }
        self.recompute_stats();
        Ok(())
    }

    fn push_unchecked(&mut self, traj: Trajectory) -> Result<(), EnvDataError> {
        if traj.state_dim != self.state_dim || traj.action_dim != self.action_dim {
            return Err(EnvDataError::Dimension(format!(
                "trajectory dims (d_s={}, d_a={}) differ from store (d_s={}, d_a={})",
                traj.state_dim, traj.action_dim, self.state_dim, self.action_dim
            )));
        }
        if traj.is_empty() {
            return Err(EnvDataError::Argument("empty trajectory".into()));
        }
        self.trajectories.push(traj);
        Ok(())
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn stats(&self) -> &DatasetStats {
        &self.stats
    }

    pub fn num_steps(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    pub fn max_len(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).max().unwrap_or(0)
    }

    fn recompute_stats(&mut self) {
        let d = self.state_dim;
        let n = self.num_steps();
        let mut mean = vec![0.0; d];
        let mut std = vec![1.0; d];
        if n > 0 {
            for tr in &self.trajectories {
                for (j, v) in tr.states.iter().enumerate() {
                    mean[j % d] += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n as f64);
            let mut var = vec![0.0; d];
            for tr in &self.trajectories {
                for (j, v) in tr.states.iter().enumerate() {
                    let c = v - mean[j % d];
                    var[j % d] += c * c;
                }
            }
            for (s, v) in std.iter_mut().zip(&var) {
                let sd = (v / n as f64).sqrt();
                *s = if sd < MIN_STD { 1.0 } else { sd };
            }
        }
        let returns: Vec<f64> = self.trajectories.iter().map(Trajectory::total_return).collect();
        let max_return = returns.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        self.stats = DatasetStats {
            count: self.trajectories.len(),
            state_mean: mean,
            state_std: std,
            max_return: if returns.is_empty() { 0.0 } else { max_return },
            max_abs_return: returns.iter().map(|r| r.abs()).fold(0.0, f64::max),
            mean_return: if returns.is_empty() {
                0.0
            } else {
                returns.iter().sum::<f64>() / returns.len() as f64
            },
        };
    }
}

/// Desired return for evaluation: `η·G` if the best dataset return `G ≥ 0`, else `G/η`.
pub fn initial_rtg(store: &TrajectoryStore, eta: f64) -> Result<f64, EnvDataError> {
    if store.is_empty() {
        return Err(EnvDataError::Argument("empty trajectory store".into()));
    }
    scale_return(store.stats().max_return, eta)
}

/// The scaling rule of [`initial_rtg`] applied to an explicit best return.
pub fn scale_return(best: f64, eta: f64) -> Result<f64, EnvDataError> {
    if !(eta > 0.0) {
        return Err(EnvDataError::Argument(format!("rtg scale must be positive, got {eta}")));
    }
    Ok(if best >= 0.0 { eta * best } else { best / eta })
}
