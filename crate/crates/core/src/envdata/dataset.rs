//! Offline dataset generation.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::env::{expert_action, random_action, Env, EnvId, STITCH_MIDPOINT};
use super::{EnvDataError, Trajectory, TrajectoryStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetTier {
    /// Single noisy controller at roughly a third of the expert's normalised score.
    Medium,
    /// Per-trajectory mixture of random and medium behaviour.
    MediumReplay,
    /// StitchChain only: two disjoint half-routes, none solving the task alone.
    Stitch,
}

impl DatasetTier {
    pub const ALL: [DatasetTier; 3] = [
        DatasetTier::Medium,
        DatasetTier::MediumReplay,
        DatasetTier::Stitch,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetTier::Medium => "medium",
            DatasetTier::MediumReplay => "medium-replay",
            DatasetTier::Stitch => "stitch",
        }
    }
}

impl fmt::Display for DatasetTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetTier {
    type Err = EnvDataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| EnvDataError::Argument(format!("unknown dataset tier {s:?}")))
    }
}

/// Gaussian action noise added to the PointReach expert for the medium tier.
/// Chosen by sweeping σ until the normalised score sits near 33 (σ = 3.5 → 37,
/// 3.8 → 33, 4.0 → 31 over 400 episodes). Large because actions saturate at ±1.
pub const POINT_REACH_MEDIUM_SIGMA: f64 = 3.8;
/// StitchChain medium controller: mean rightward speed and its noise.
pub const STITCH_MEDIUM_DRIFT: f64 = 0.4;
pub const STITCH_MEDIUM_SIGMA: f64 = 0.6;
/// Rightward speed range of the stitch tier's purposeful segments.
const STITCH_SPEED: (f64, f64) = (0.5, 1.0);
/// Upper edge of the wandering region of the first stitch family.
pub const STITCH_WANDER_CEILING: f64 = 5.0;
/// Action range of the first family's wandering (drifts back left).
const STITCH_WANDER: (f64, f64) = (-1.0, 0.6);
/// Second family: idle steps at the midpoint before heading right, and the
/// action range while idling (creeps right).
const STITCH_IDLE_STEPS: usize = 8;
const STITCH_IDLE: (f64, f64) = (-0.25, 0.5);
const STITCH_IDLE_FLOOR: f64 = 3.5;

fn medium_action<R: Rng + ?Sized>(id: EnvId, state: &[f64], rng: &mut R) -> Vec<f64> {
    match id {
        EnvId::PointReach => {
            let noise = Normal::new(0.0, POINT_REACH_MEDIUM_SIGMA).unwrap();
            expert_action(id, state)
                .into_iter()
                .map(|a| (a + noise.sample(rng)).clamp(-1.0, 1.0))
                .collect()
        }
        EnvId::StitchChain => {
            let noise = Normal::new(STITCH_MEDIUM_DRIFT, STITCH_MEDIUM_SIGMA).unwrap();
            vec![noise.sample(rng).clamp(-1.0, 1.0)]
        }
    }
}

/// Rolls out one episode from `start` (or a fresh reset) under `policy`.
fn record<R, F>(
    id: EnvId,
    start: Option<Vec<f64>>,
    rng: &mut R,
    mut policy: F,
) -> Result<Trajectory, EnvDataError>
where
    R: Rng + ?Sized,
    F: FnMut(&[f64], usize, &mut R) -> Vec<f64>,
{
    let mut env = Env::new(id);
    let mut s = match start {
        Some(s) => env.reset_to(s),
        None => env.reset(rng),
    };
    let (mut states, mut actions, mut rewards) = (Vec::new(), Vec::new(), Vec::new());
    for t in 0.. {
        let a = policy(&s, t, rng);
        let out = env.step(&a);
        states.extend_from_slice(&s);
        actions.extend(a.iter().map(|x| x.clamp(-1.0, 1.0)));
        rewards.push(out.reward);
        s = out.state;
        if out.done {
            break;
        }
    }
    Trajectory::new(Env::state_dim(id), Env::action_dim(id), states, actions, rewards)
}

/// Generates `n_traj` trajectories of the requested tier, deterministically in `seed`.
pub fn generate_dataset(
    id: EnvId,
    tier: DatasetTier,
    n_traj: usize,
    seed: u64,
) -> Result<TrajectoryStore, EnvDataError> {
    if n_traj == 0 {
        return Err(EnvDataError::Argument("n_traj must be at least 1".into()));
    }
    if tier == DatasetTier::Stitch && id != EnvId::StitchChain {
        return Err(EnvDataError::Argument(format!(
            "tier {tier} is only defined for {}",
            EnvId::StitchChain
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trajs = Vec::with_capacity(n_traj);
    for k in 0..n_traj {
        let traj = match tier {
            DatasetTier::Medium => record(id, None, &mut rng, |s, _, r| medium_action(id, s, r))?,
            DatasetTier::MediumReplay => {
                let p_random: f64 = rng.random_range(0.3..1.0);
                record(id, None, &mut rng, |s, _, r| {
                    if r.random_bool(p_random) {
                        random_action(id, r)
                    } else {
                        medium_action(id, s, r)
                    }
                })?
            }
            DatasetTier::Stitch if k % 2 == 0 => stitch_first_half(&mut rng)?,
            DatasetTier::Stitch => stitch_second_half(&mut rng)?,
        };
        trajs.push(traj);
    }
    let mut store = TrajectoryStore::new(id, Env::state_dim(id), Env::action_dim(id));
    store.extend(trajs)?;
    Ok(store)
}

/// Keeps `pos + a` inside `[floor, ceiling)` by flipping the sign of `a`.
fn reflect(pos: f64, a: f64, floor: f64, ceiling: f64) -> f64 {
    if pos + a >= ceiling {
        -a.abs()
    } else if pos + a < floor {
        a.abs()
    } else {
        a
    }
}

/// From 0 to the midpoint, then wander below the ceiling until the horizon.
fn stitch_first_half<R: Rng + ?Sized>(rng: &mut R) -> Result<Trajectory, EnvDataError> {
    let mut arrived = false;
    record(EnvId::StitchChain, Some(vec![0.0]), rng, |s, _, r| {
        arrived |= s[0] >= STITCH_MIDPOINT;
        if !arrived {
            return vec![r.random_range(STITCH_SPEED.0..STITCH_SPEED.1)];
        }
        let a = r.random_range(STITCH_WANDER.0..STITCH_WANDER.1);
        vec![reflect(s[0], a, f64::NEG_INFINITY, STITCH_WANDER_CEILING)]
    })
}

/// Teleported start at the midpoint, a few idle steps, then straight to the goal.
fn stitch_second_half<R: Rng + ?Sized>(rng: &mut R) -> Result<Trajectory, EnvDataError> {
    let idle = rng.random_range(0..=STITCH_IDLE_STEPS);
    let traj = record(EnvId::StitchChain, Some(vec![STITCH_MIDPOINT]), rng, |s, t, r| {
        if t < idle {
            let a = r.random_range(STITCH_IDLE.0..STITCH_IDLE.1);
            vec![reflect(s[0], a, STITCH_IDLE_FLOOR, STITCH_WANDER_CEILING)]
        } else {
            vec![r.random_range(STITCH_SPEED.0..STITCH_SPEED.1)]
        }
    })?;
    debug_assert_eq!(traj.total_return(), 1.0);
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tier_env_pairs() {
        assert!(generate_dataset(EnvId::PointReach, DatasetTier::Stitch, 2, 0).is_err());
        assert!(generate_dataset(EnvId::StitchChain, DatasetTier::Medium, 0, 0).is_err());
        assert!(generate_dataset(EnvId::PointReach, DatasetTier::MediumReplay, 3, 0).is_ok());
    }

    #[test]
    fn same_seed_same_data() {
        let a = generate_dataset(EnvId::PointReach, DatasetTier::Medium, 4, 9).unwrap();
        let b = generate_dataset(EnvId::PointReach, DatasetTier::Medium, 4, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn point_reach_medium_is_a_third_of_expert() {
        let spec = crate::envdata::EnvSpec::for_env(EnvId::PointReach);
        let store = generate_dataset(EnvId::PointReach, DatasetTier::Medium, 300, 11).unwrap();
        let score = crate::envdata::normalized_score(store.stats().mean_return, &spec).unwrap();
        let target = 100.0 / 3.0;
        assert!((score / target - 1.0).abs() < 0.15, "normalised score {score}");
    }

    #[test]
    fn medium_replay_is_worse_than_medium() {
        let medium = generate_dataset(EnvId::PointReach, DatasetTier::Medium, 100, 4).unwrap();
        let replay = generate_dataset(EnvId::PointReach, DatasetTier::MediumReplay, 100, 4).unwrap();
        assert!(replay.stats().mean_return < medium.stats().mean_return);
    }

    #[test]
    fn stitch_families_are_disjoint() {
        let store = generate_dataset(EnvId::StitchChain, DatasetTier::Stitch, 40, 3).unwrap();
        for tr in store.trajectories() {
            let starts_at_zero = tr.state(0)[0] == 0.0;
            let reaches_goal = tr.total_return() > 0.0;
            assert!(!(starts_at_zero && reaches_goal));
            if starts_at_zero {
                assert_eq!(tr.total_return(), 0.0);
                assert!(tr.states().iter().all(|&p| p < STITCH_WANDER_CEILING));
            } else {
                assert_eq!(tr.state(0)[0], STITCH_MIDPOINT);
                assert_eq!(tr.total_return(), 1.0);
            }
        }
        assert_eq!(store.stats().max_return, 1.0);
    }
}
