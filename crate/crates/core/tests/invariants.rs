use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use drdt3::cli::{moving_average, parse_config, PolicyBundle};
use drdt3::diffusion::{denoise_from_prediction, forward_noise, DiffusionSchedule};
use drdt3::dt3::{ContextWindow, Dt3Config, Dt3Model};
use drdt3::envdata::{
    compute_rtg, decode_store, encode_store, normalized_score, scale_return, EnvId, EnvSpec,
    Trajectory, TrajectoryStore,
};
use drdt3::numerics::{ParamStore, Tape};
use drdt3::training::TrainConfig;

fn model(seed: u64) -> (Dt3Model, ParamStore) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let model = Dt3Model::new(
        Dt3Config {
            state_dim: 2,
            action_dim: 1,
            embed_dim: 8,
            n_heads: 2,
            n_blocks: 1,
            inner_lr: 0.1,
            ttt_proj_rank: None,
            include_action_tokens: true,
            dt_mode: false,
            max_timestep: 32,
        },
        &mut store,
        &mut rng,
    );
    (model, store)
}

fn coarse(model: &Dt3Model, store: &ParamStore, ctx: &ContextWindow) -> Vec<f64> {
    let mut tape = Tape::new();
    let p = tape.bind_frozen(store);
    let out = model.predict_coarse_actions(&mut tape, &p, ctx).unwrap();
    tape.value(out).to_vec()
}

fn history(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    (
        prop::collection::vec(-2.0..2.0f64, n),
        prop::collection::vec(-2.0..2.0f64, n * 2),
        prop::collection::vec(-1.0..1.0f64, n),
    )
}

proptest! {
    #[test]
    fn rtg_is_suffix_sum(rewards in prop::collection::vec(-5.0..5.0f64, 1..40)) {
        let rtg = compute_rtg(&rewards).unwrap();
        for t in 0..rewards.len() {
            let tail: f64 = rewards[t..].iter().sum();
            assert_relative_eq!(rtg[t], tail, epsilon = 1e-9);
        }
        for t in 0..rewards.len() - 1 {
            assert_relative_eq!(rtg[t] - rtg[t + 1], rewards[t], epsilon = 1e-9);
        }
    }

    #[test]
    fn schedule_is_monotone_and_bounded(n in 1usize..60, lo in 0.01..2.0f64, extra in 0.0..15.0f64) {
        let s = DiffusionSchedule::vp(n, lo, lo + extra).unwrap();
        let mut prev = 1.0;
        for i in 1..=n {
            let b = s.beta(i);
            prop_assert!(b > 0.0 && b < 1.0);
            prop_assert!(s.alpha_bar(i) < prev);
            assert_relative_eq!(s.alpha(i), 1.0 - b, epsilon = 1e-15);
            prev = s.alpha_bar(i);
        }
    }

    #[test]
    fn exact_noise_prediction_inverts_one_step(
        a0 in prop::collection::vec(-1.0..1.0f64, 1..6),
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps: Vec<f64> = a0.iter().map(|_| rng.random_range(-3.0..3.0)).collect();
        let s = DiffusionSchedule::vp(1, 0.1, 10.0).unwrap();
        let a1 = forward_noise(&a0, 1, &eps, &s).unwrap();
        let back = denoise_from_prediction(&a1, &eps, 1, &s, &vec![0.0; a0.len()], false).unwrap();
        for (x, y) in back.iter().zip(&a0) {
            assert_relative_eq!(*x, *y, epsilon = 1e-12);
        }
    }

    #[test]
    fn normalized_score_is_affine(x in -50.0..50.0f64, y in -50.0..50.0f64, t in 0.0..1.0f64) {
        let spec = EnvSpec { random_score: -3.0, expert_score: 7.0, ..EnvSpec::for_env(EnvId::StitchChain) };
        let mix = normalized_score(t * x + (1.0 - t) * y, &spec).unwrap();
        let sep = t * normalized_score(x, &spec).unwrap() + (1.0 - t) * normalized_score(y, &spec).unwrap();
        assert_relative_eq!(mix, sep, epsilon = 1e-9);
        assert_relative_eq!(normalized_score(-3.0, &spec).unwrap(), 0.0);
        assert_relative_eq!(normalized_score(7.0, &spec).unwrap(), 100.0);
    }

    #[test]
    fn scaled_return_never_falls_below_best_when_eta_above_one(best in -20.0..20.0f64, eta in 1.0..4.0f64) {
        prop_assert!(scale_return(best, eta).unwrap() >= best);
    }

    #[test]
    fn store_roundtrips(lens in prop::collection::vec(1usize..12, 1..6), seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = TrajectoryStore::new(EnvId::PointReach, 4, 2);
        for n in lens {
            let s = (0..n * 4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let a = (0..n * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let r = (0..n).map(|_| rng.random_range(-1.0..0.0)).collect();
            store.push(Trajectory::new(4, 2, s, a, r).unwrap()).unwrap();
        }
        let bytes = encode_store(&store);
        let back = decode_store(&bytes).unwrap();
        prop_assert_eq!(back.trajectories(), store.trajectories());
        prop_assert_eq!(encode_store(&back), bytes);
    }

    #[test]
    fn moving_average_stays_within_range(xs in prop::collection::vec(-10.0..10.0f64, 1..50), w in 1usize..15) {
        let out = moving_average(&xs, w);
        prop_assert_eq!(out.len(), xs.len());
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for v in out {
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }

    #[test]
    fn config_text_roundtrips(zeta in 0.0..1.0f64, lr in 1e-6..1e-2f64, seed in any::<u64>(), k in 1usize..30) {
        let c = TrainConfig { zeta, learning_rate: lr, seed, context_len: k, ..TrainConfig::default() };
        prop_assert_eq!(parse_config(&c.to_kv_string()).unwrap(), c);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn future_tokens_do_not_leak((r, s, a) in history(5), j in 0usize..5, delta in 0.1..3.0f64, seed in 0u64..4) {
        let (m, store) = model(seed);
        let base_ctx = ContextWindow::from_history(5, 2, 1, &r, &s, &a, 0).unwrap();
        let base = coarse(&m, &store, &base_ctx);
        let mut ctx = base_ctx.clone();
        ctx.states[j * 2] += delta;
        let out = coarse(&m, &store, &ctx);
        prop_assert_eq!(&out[..j], &base[..j]);
        let mut ctx = base_ctx;
        ctx.actions[j] += delta;
        let out = coarse(&m, &store, &ctx);
        prop_assert_eq!(&out[..=j], &base[..=j]);
    }

    #[test]
    fn left_padding_is_invisible((r, s, a) in history(3), pad in 1usize..6, seed in 0u64..4) {
        let (m, store) = model(seed);
        let tight = coarse(&m, &store, &ContextWindow::from_history(3, 2, 1, &r, &s, &a, 2).unwrap());
        let padded = coarse(&m, &store, &ContextWindow::from_history(3 + pad, 2, 1, &r, &s, &a, 2).unwrap());
        for (x, y) in padded[pad..].iter().zip(&tight) {
            assert_relative_eq!(*x, *y, epsilon = 1e-10);
        }
    }
}

#[test]
fn dt_mode_bundle_is_flagged_as_baseline() {
    use drdt3::envdata::generate_dataset;
    use drdt3::training::train;
    let data = generate_dataset(EnvId::StitchChain, drdt3::envdata::DatasetTier::Medium, 10, 0).unwrap();
    let env = EnvSpec::for_env(EnvId::StitchChain);
    for dt_mode in [false, true] {
        let config = TrainConfig {
            dt_mode,
            embed_dim: 8,
            batch_size: 4,
            epochs: 1,
            updates_per_epoch: 2,
            noise_hidden_dim: 8,
            noise_expansion: 2,
            time_embed_dim: 4,
            eval_episodes: 1,
            ..TrainConfig::default()
        };
        let state = train(&config, &env, &data).unwrap().state;
        let bundle = PolicyBundle::from_state(EnvId::StitchChain, &config, &state);
        let back = PolicyBundle::decode(&bundle.encode()).unwrap();
        assert_eq!(back.is_dt_baseline(), dt_mode);
    }
}
