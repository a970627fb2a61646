//! Toy continuous-control environments.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::EnvDataError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvId {
    PointReach,
    StitchChain,
}

impl EnvId {
    pub const ALL: [EnvId; 2] = [EnvId::PointReach, EnvId::StitchChain];

    pub fn as_str(self) -> &'static str {
        match self {
            EnvId::PointReach => "point-reach",
            EnvId::StitchChain => "stitch-chain",
        }
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvId {
    type Err = EnvDataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| EnvDataError::Argument(format!("unknown environment {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardKind {
    Dense,
    Sparse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub id: EnvId,
    pub state_dim: usize,
    pub action_dim: usize,
    /// Actions are clamped to `[-action_bound, action_bound]` per coordinate.
    pub action_bound: f64,
    pub horizon: usize,
    pub reward: RewardKind,
    /// Mean return of the uniform-random policy (in-repo reference).
    pub random_score: f64,
    /// Mean return of the hand-coded expert controller (in-repo reference).
    pub expert_score: f64,
    /// Recorded only; returns-to-go are undiscounted.
    pub discount: f64,
}

pub const POINT_REACH_DT: f64 = 0.1;
pub const POINT_REACH_GOAL: [f64; 2] = [0.0, 0.0];
pub const POINT_REACH_SUCCESS_RADIUS: f64 = 0.1;
pub const STITCH_GOAL: f64 = 8.0;
pub const STITCH_MIDPOINT: f64 = 4.0;

const REFERENCE_EPISODES: usize = 100;
const REFERENCE_SEED: u64 = 0x5eed;

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// A value-semantic environment instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Env {
    pub id: EnvId,
    state: Vec<f64>,
    t: usize,
    reached: bool,
}

impl Env {
    pub fn new(id: EnvId) -> Self {
        let state = match id {
            EnvId::PointReach => vec![0.0; 4],
            EnvId::StitchChain => vec![0.0],
        };
        Self {
            id,
            state,
            t: 0,
            reached: false,
        }
    }

    pub fn state_dim(id: EnvId) -> usize {
        match id {
            EnvId::PointReach => 4,
            EnvId::StitchChain => 1,
        }
    }

    pub fn action_dim(id: EnvId) -> usize {
        match id {
            EnvId::PointReach => 2,
            EnvId::StitchChain => 1,
        }
    }

    pub fn horizon(id: EnvId) -> usize {
        match id {
            EnvId::PointReach => 50,
            EnvId::StitchChain => 20,
        }
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn timestep(&self) -> usize {
        self.t
    }

    /// Starts a new episode. PointReach draws its start position uniformly
    /// from `[-1, 1]²`; StitchChain always starts at 0.
    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64> {
        let state = match self.id {
            EnvId::PointReach => vec![
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                0.0,
                0.0,
            ],
            EnvId::StitchChain => vec![0.0],
        };
        self.reset_to(state)
    }

    /// Whether `state` can be produced by [`Env::reset`].
    pub fn is_initial_state(id: EnvId, state: &[f64]) -> bool {
        if state.len() != Self::state_dim(id) {
            return false;
        }
        match id {
            EnvId::PointReach => {
                state[..2].iter().all(|p| (-1.0..1.0).contains(p)) && state[2..] == [0.0, 0.0]
            }
            EnvId::StitchChain => state == [0.0],
        }
    }

    /// Starts an episode from an explicit state (used for dataset construction).
    pub fn reset_to(&mut self, state: Vec<f64>) -> Vec<f64> {
        assert_eq!(state.len(), Self::state_dim(self.id));
        self.state = state;
        self.t = 0;
        self.reached = false;
        self.state.clone()
    }

    pub fn step(&mut self, action: &[f64]) -> StepOutcome {
        assert_eq!(action.len(), Self::action_dim(self.id), "action dimension");
        let a: Vec<f64> = action.iter().map(|x| x.clamp(-1.0, 1.0)).collect();
        self.t += 1;
        let (reward, mut done) = match self.id {
            EnvId::PointReach => {
                let s = &mut self.state;
                s[0] += POINT_REACH_DT * s[2];
                s[1] += POINT_REACH_DT * s[3];
                s[2] += POINT_REACH_DT * a[0];
                s[3] += POINT_REACH_DT * a[1];
                let dx = s[0] - POINT_REACH_GOAL[0];
                let dy = s[1] - POINT_REACH_GOAL[1];
                (-(dx * dx + dy * dy).sqrt(), false)
            }
            EnvId::StitchChain => {
                let pos = (self.state[0] + a[0]).clamp(0.0, STITCH_GOAL);
                self.state[0] = pos;
                if pos >= STITCH_GOAL && !self.reached {
                    self.reached = true;
                    (1.0, true)
                } else {
                    (0.0, false)
                }
            }
        };
        if self.t >= Self::horizon(self.id) {
            done = true;
        }
        StepOutcome {
            state: self.state.clone(),
            reward,
            done,
        }
    }

    /// Whether the current state counts as task success.
    pub fn succeeded(&self) -> bool {
        match self.id {
            EnvId::PointReach => {
                let dx = self.state[0] - POINT_REACH_GOAL[0];
                let dy = self.state[1] - POINT_REACH_GOAL[1];
                (dx * dx + dy * dy).sqrt() < POINT_REACH_SUCCESS_RADIUS
            }
            EnvId::StitchChain => self.reached,
        }
    }
}

/// Hand-coded expert: PD control toward the goal, or full speed right.
pub fn expert_action(id: EnvId, state: &[f64]) -> Vec<f64> {
    match id {
        EnvId::PointReach => {
            const KP: f64 = 4.0;
            const KD: f64 = 3.0;
            (0..2)
                .map(|j| {
                    (KP * (POINT_REACH_GOAL[j] - state[j]) - KD * state[2 + j]).clamp(-1.0, 1.0)
                })
                .collect()
        }
        EnvId::StitchChain => vec![1.0],
    }
}

pub fn random_action<R: Rng + ?Sized>(id: EnvId, rng: &mut R) -> Vec<f64> {
    (0..Env::action_dim(id))
        .map(|_| rng.random_range(-1.0..1.0))
        .collect()
}

/// Mean return of `policy` over `episodes` episodes.
pub fn mean_return<R, F>(id: EnvId, episodes: usize, rng: &mut R, mut policy: F) -> f64
where
    R: Rng + ?Sized,
    F: FnMut(&[f64], &mut R) -> Vec<f64>,
{
    let mut env = Env::new(id);
    let mut total = 0.0;
    for _ in 0..episodes {
        let mut s = env.reset(rng);
        loop {
            let a = policy(&s, rng);
            let out = env.step(&a);
            total += out.reward;
            s = out.state;
            if out.done {
                break;
            }
        }
    }
    total / episodes as f64
}

impl EnvSpec {
    /// Builds the spec, computing reference scores from 100 random and 100
    /// expert episodes with a fixed seed.
    pub fn for_env(id: EnvId) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(REFERENCE_SEED);
        let random_score = mean_return(id, REFERENCE_EPISODES, &mut rng, |_, r| random_action(id, r));
        let expert_score =
            mean_return(id, REFERENCE_EPISODES, &mut rng, |s, _| expert_action(id, s));
        Self {
            id,
            state_dim: Env::state_dim(id),
            action_dim: Env::action_dim(id),
            action_bound: 1.0,
            horizon: Env::horizon(id),
            reward: match id {
                EnvId::PointReach => RewardKind::Dense,
                EnvId::StitchChain => RewardKind::Sparse,
            },
            random_score,
            expert_score,
            discount: 1.0,
        }
    }
}

/// `100 · (raw − random) / (expert − random)`.
pub fn normalized_score(raw: f64, spec: &EnvSpec) -> Result<f64, EnvDataError> {
    let span = spec.expert_score - spec.random_score;
    if !(span > 0.0) {
        return Err(EnvDataError::Argument(format!(
            "degenerate reference scores: random {} expert {}",
            spec.random_score, spec.expert_score
        )));
    }
    Ok(100.0 * (raw - spec.random_score) / span)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stitch_chain_reaches_goal_once() {
        let mut env = Env::new(EnvId::StitchChain);
        env.reset_to(vec![7.5]);
        let out = env.step(&[1.0]);
        assert_eq!(out.state, vec![8.0]);
        assert_eq!(out.reward, 1.0);
        assert!(out.done);
    }

    #[test]
    fn stitch_chain_idle_returns_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = mean_return(EnvId::StitchChain, 3, &mut rng, |_, _| vec![0.0]);
        assert_eq!(r, 0.0);
    }

    #[test]
    fn stitch_chain_horizon() {
        let mut env = Env::new(EnvId::StitchChain);
        env.reset_to(vec![0.0]);
        let mut steps = 0;
        loop {
            steps += 1;
            if env.step(&[0.1]).done {
                break;
            }
        }
        assert_eq!(steps, 20);
    }

    #[test]
    fn point_reach_at_rest_stays_put() {
        let mut env = Env::new(EnvId::PointReach);
        env.reset_to(vec![0.3, -0.4, 0.0, 0.0]);
        let r0 = env.step(&[0.0, 0.0]);
        let r1 = env.step(&[0.0, 0.0]);
        assert_eq!(r0.state, vec![0.3, -0.4, 0.0, 0.0]);
        assert_eq!(r0.reward, r1.reward);
        assert!((r0.reward + 0.5).abs() < 1e-12);
    }

    #[test]
    fn reference_scores_are_ordered() {
        for id in EnvId::ALL {
            let spec = EnvSpec::for_env(id);
            assert!(spec.expert_score > spec.random_score, "{id}");
        }
        let spec = EnvSpec::for_env(EnvId::StitchChain);
        assert_eq!(spec.expert_score, 1.0);
    }

    #[test]
    fn normalized_score_anchors() {
        let mut spec = EnvSpec::for_env(EnvId::StitchChain);
        spec.random_score = 0.0;
        spec.expert_score = 10.0;
        assert_eq!(normalized_score(5.0, &spec).unwrap(), 50.0);
        assert_eq!(normalized_score(10.0, &spec).unwrap(), 100.0);
        assert_eq!(normalized_score(0.0, &spec).unwrap(), 0.0);
        spec.expert_score = 0.0;
        assert!(normalized_score(1.0, &spec).is_err());
    }
}
