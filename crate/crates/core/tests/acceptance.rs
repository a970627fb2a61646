//! Acceptance suite. Every criterion writes one `criterion N: PASS|FAIL ...`
//! line straight to stderr (bypassing the test harness capture) and then
//! asserts, so a failure is reported honestly rather than hidden.

use std::io::Write as _;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use drdt3::cli::{
    cmd_eval, cmd_gen_data, cmd_train, run_checks, CheckScope, EvalArgs, GenDataArgs,
    PolicyBundle, TrainArgs,
};
use drdt3::diffusion::{
    denoise_from_prediction, diffusion_loss, forward_noise, sample_action, DiffusionSchedule,
    ModelPredictor, NoiseApproxConfig, NoiseApproxVariant, NoiseApproximator, SamplerOptions,
};
use drdt3::dt3::{ContextWindow, Dt3Config, Dt3Model, Projection, TttLinear};
use drdt3::envdata::{
    decode_store, encode_store, evaluate, generate_dataset, load_store, DatasetTier, EnvId,
    EnvSpec, EvalConfig, EvalMode,
};
use drdt3::numerics::{DArray, OpKind, ParamStore, Tape};
use drdt3::training::{train, AdamHyper, AdamW, LossNorm, TrainConfig, Trainer};

fn report(n: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {n}: {verdict} {detail}");
}

fn perturb(store: &mut ParamStore, std: f64, rng: &mut ChaCha8Rng) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.get_mut(id).values_mut() {
            *v += std * rng.sample::<f64, _>(StandardNormal);
        }
    }
}

fn tiny_config() -> TrainConfig {
    TrainConfig {
        embed_dim: 8,
        batch_size: 4,
        epochs: 2,
        updates_per_epoch: 5,
        noise_hidden_dim: 8,
        noise_expansion: 2,
        time_embed_dim: 4,
        eval_episodes: 2,
        ..TrainConfig::default()
    }
}

#[test]
fn criterion_1_gradient_suite() {
    let start = Instant::now();
    let report_ = run_checks(CheckScope::All, None);
    let elapsed = start.elapsed();
    let grads: Vec<_> = report_
        .outcomes
        .iter()
        .filter(|o| o.name.starts_with("grad "))
        .collect();
    let missing: Vec<&str> = OpKind::ALL
        .iter()
        .map(|k| k.name())
        .filter(|n| !grads.iter().any(|o| o.name == format!("grad {n}")))
        .collect();
    let models = [
        "grad ttt inner loop",
        "grad dt3 model",
        "grad noise approximator full",
        "grad noise approximator no-adaln",
        "grad noise approximator no-gated-mlp",
        "grad noise approximator no-both",
        "grad unified loss l1",
        "grad unified loss l2",
    ];
    let models_present = models.iter().all(|m| grads.iter().any(|o| o.name == *m));
    let worst = grads
        .iter()
        .map(|o| o.metric / o.tolerance)
        .fold(0.0, f64::max);
    let pass = grads.iter().all(|o| o.passed)
        && missing.is_empty()
        && models_present
        && elapsed < Duration::from_secs(120);
    report(
        1,
        pass,
        &format!(
            "{} gradient checks, worst error/tolerance {worst:.2e}, missing ops {missing:?}, {:.1}s",
            grads.len(),
            elapsed.as_secs_f64()
        ),
    );
    for o in grads.iter().filter(|o| !o.passed) {
        eprintln!("{o}");
    }
    assert!(pass);
}

/// `k = x·θ_K`, `v = x·θ_V`, `‖k·W − v‖²` with plain loops.
fn recon_loss(x: &[f64], tk: &[f64], tv: &[f64], w: &[f64], d: usize) -> f64 {
    let proj = |theta: &[f64]| -> Vec<f64> {
        (0..d)
            .map(|j| (0..d).map(|i| x[i] * theta[i * d + j]).sum())
            .collect()
    };
    let (k, v) = (proj(tk), proj(tv));
    (0..d)
        .map(|j| {
            let r: f64 = (0..d).map(|i| k[i] * w[i * d + j]).sum::<f64>() - v[j];
            r * r
        })
        .sum()
}

fn full(p: Projection) -> drdt3::numerics::ParamId {
    match p {
        Projection::Full(id) => id,
        Projection::LowRank(..) => panic!("full projection expected"),
    }
}

#[test]
fn criterion_2_ttt_mechanics() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let d = 6;

    // (a) zero inner step: every output is x_t·θ_Q·W0, independent of the other tokens.
    let mut store = ParamStore::new();
    let layer = TttLinear::new(&mut store, "ttt", d, 0.0, None, &mut rng);
    perturb(&mut store, 0.5, &mut rng);
    let n = 7;
    let x = DArray::randn(&[n, d], 1.0, &mut rng);
    let mut tape = Tape::new();
    let p = tape.bind_frozen(&store);
    let xv = tape.leaf(&x);
    let trace = layer.recurrence(&mut tape, &p, xv, &[true; 7]).unwrap();
    let out = tape.value(trace.outputs).to_vec();
    let tq = store.get(full(layer.theta_q)).values().to_vec();
    let w0 = store.get(layer.w0).values().to_vec();
    let mut dev_a: f64 = 0.0;
    for t in 0..n {
        let row = &x.values()[t * d..(t + 1) * d];
        let q: Vec<f64> = (0..d)
            .map(|j| (0..d).map(|i| row[i] * tq[i * d + j]).sum())
            .collect();
        for j in 0..d {
            let z: f64 = (0..d).map(|i| q[i] * w0[i * d + j]).sum();
            dev_a = dev_a.max((z - out[t * d + j]).abs());
        }
    }
    let weights_fixed = trace.weights.iter().all(|w| tape.value(*w) == w0.as_slice());
    let pass_a = dev_a == 0.0 && weights_fixed;

    // (b) descent on 1000 unit-norm tokens.
    let mut pass_b = true;
    let mut worst_ratio: f64 = 0.0;
    for lr in [1e-3, 1e-2] {
        let mut store = ParamStore::new();
        let layer = TttLinear::new(&mut store, "ttt", d, lr, None, &mut rng);
        perturb(&mut store, 0.3, &mut rng);
        let n = 1000;
        let mut rows = Vec::with_capacity(n * d);
        for _ in 0..n {
            let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            rows.extend(v.iter().map(|a| a / norm));
        }
        let x = DArray::new(&[n, d], rows).unwrap();
        let mut tape = Tape::new();
        let p = tape.bind_frozen(&store);
        let xv = tape.leaf(&x);
        let trace = layer.recurrence(&mut tape, &p, xv, &vec![true; n]).unwrap();
        let tk = store.get(full(layer.theta_k)).values().to_vec();
        let tv = store.get(full(layer.theta_v)).values().to_vec();
        let mut prev = store.get(layer.w0).values().to_vec();
        for t in 0..n {
            let xt = &x.values()[t * d..(t + 1) * d];
            let cur = tape.value(trace.weights[t]).to_vec();
            let before = recon_loss(xt, &tk, &tv, &prev, d);
            let after = recon_loss(xt, &tk, &tv, &cur, d);
            if after > before {
                pass_b = false;
            }
            if before > 0.0 {
                worst_ratio = worst_ratio.max(after / before);
            }
            prev = cur;
        }
    }

    // (c) scalar hand case.
    let eta = 0.05;
    let mut store = ParamStore::new();
    let layer = TttLinear::new(&mut store, "ttt", 1, eta, None, &mut rng);
    for name in ["ttt.theta_q", "ttt.theta_k", "ttt.theta_v"] {
        let id = store.find(name).unwrap();
        store.get_mut(id).values_mut()[0] = 1.0;
    }
    let mut tape = Tape::new();
    let p = tape.bind_frozen(&store);
    let one = tape.constant(&[1, 1], vec![1.0]).unwrap();
    let trace = layer.recurrence(&mut tape, &p, one, &[true]).unwrap();
    let w1 = tape.value(trace.weights[0])[0];
    let pass_c = (w1 - 2.0 * eta).abs() <= 1e-12;

    let pass = pass_a && pass_b && pass_c;
    report(
        2,
        pass,
        &format!(
            "(a) zero-step deviation {dev_a:e}, weights fixed {weights_fixed}; \
             (b) descent held {pass_b}, worst loss ratio {worst_ratio:.6}; (c) W1 = {w1}"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_3_diffusion_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    let sched = DiffusionSchedule::vp(1, 0.1, 10.0).unwrap();
    let mut err_a: f64 = 0.0;
    for _ in 0..100 {
        let a0: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let eps: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
        let a1 = forward_noise(&a0, 1, &eps, &sched).unwrap();
        let back = denoise_from_prediction(&a1, &eps, 1, &sched, &[0.0; 3], false).unwrap();
        for (x, y) in back.iter().zip(&a0) {
            err_a = err_a.max((x - y).abs());
        }
    }

    let mut err_b: f64 = 0.0;
    for n in [1, 5, 20] {
        for (lo, hi) in [(0.1, 10.0), (1.0, 1.0)] {
            let sched = DiffusionSchedule::vp(n, lo, hi).unwrap();
            let a_n: Vec<f64> = (0..2).map(|_| rng.sample(StandardNormal)).collect();
            let mut a = a_n.clone();
            for i in (1..=n).rev() {
                a = denoise_from_prediction(&a, &[0.0; 2], i, &sched, &[0.0; 2], false).unwrap();
            }
            let ab: f64 = (1..=n).map(|i| 1.0 - sched.beta(i)).product();
            for (x, y) in a.iter().zip(&a_n) {
                let expect = y / ab.sqrt();
                err_b = err_b.max((x - expect).abs() / expect.abs().max(1.0));
            }
        }
    }

    let mut err_c: f64 = 0.0;
    let mut monotone = true;
    for n in [1usize, 5, 20] {
        for (lo, hi) in [(0.1, 10.0), (1.0, 1.0)] {
            let s = DiffusionSchedule::vp(n, lo, hi).unwrap();
            let nf = n as f64;
            let mut prod = 1.0;
            for i in 1..=n {
                let fi = i as f64;
                let beta = 1.0 - (-lo / nf - 0.5 * (hi - lo) * (2.0 * fi - 1.0) / (nf * nf)).exp();
                err_c = err_c.max((s.beta(i) - beta).abs());
                err_c = err_c.max((s.beta(i) - (1.0 - s.alpha(i))).abs());
                prod *= s.alpha(i);
                err_c = err_c.max((s.alpha_bar(i) - prod).abs());
                if i > 1 && s.alpha_bar(i) >= s.alpha_bar(i - 1) {
                    monotone = false;
                }
            }
        }
    }

    let pass = err_a <= 1e-12 && err_b <= 1e-10 && err_c <= 1e-14 && monotone;
    report(
        3,
        pass,
        &format!(
            "(a) N=1 round trip {err_a:.1e}; (b) telescoping {err_b:.1e}; \
             (c) schedule {err_c:.1e}, alpha_bar decreasing {monotone}"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_4_generative_sanity() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let config = NoiseApproxConfig {
        action_dim: 1,
        time_embed_dim: 16,
        hidden_dim: 64,
        expansion: 4,
        variant: NoiseApproxVariant::Full,
    };
    let mut store = ParamStore::new();
    let model = NoiseApproximator::new(config, &mut store, &mut rng);
    let steps_n = 20;
    let sched = DiffusionSchedule::vp(steps_n, 0.1, 10.0).unwrap();
    let mut opt = AdamW::new(
        &store,
        AdamHyper {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        },
    );
    let batch = 64;
    for _ in 0..3000 {
        let clean: Vec<f64> = (0..batch)
            .map(|_| if rng.random::<bool>() { 0.8 } else { -0.8 })
            .collect();
        let steps: Vec<usize> = (0..batch).map(|_| rng.random_range(1..=steps_n)).collect();
        let eps: Vec<f64> = (0..batch).map(|_| rng.sample(StandardNormal)).collect();
        let mut tape = Tape::new();
        let p = tape.bind(&store);
        let cond = tape.constant(&[batch, 1], vec![0.0; batch]).unwrap();
        let loss = diffusion_loss(&mut tape, &p, &model, &sched, &clean, cond, &steps, &eps).unwrap();
        tape.backward(loss).unwrap();
        store.zero_grad();
        store.accumulate_grads(&tape, &p);
        opt.step(&mut store).unwrap();
    }

    let predictor = ModelPredictor {
        model: &model,
        params: &store,
    };
    let opts = SamplerOptions {
        sqrt_beta_noise: false,
        action_bound: 1.0,
    };
    let samples: Vec<f64> = (0..10_000)
        .map(|_| sample_action(&predictor, &[0.0], &sched, opts, &mut rng, None).unwrap()[0])
        .collect();

    let bins = 20;
    let mut hist = vec![0usize; bins];
    for &a in &samples {
        let b = (((a + 1.0) / 2.0 * bins as f64) as usize).min(bins - 1);
        hist[b] += 1;
    }
    let argmax = |r: std::ops::Range<usize>| r.max_by_key(|&i| hist[i]).unwrap();
    let (lo_mode, hi_mode) = (argmax(0..bins / 2), argmax(bins / 2..bins));
    let valley = hist[lo_mode + 1..hi_mode].iter().min().copied().unwrap_or(0);
    let two_modes = valley * 2 < hist[lo_mode].min(hist[hi_mode]);
    let mean = |it: Vec<f64>| it.iter().sum::<f64>() / it.len().max(1) as f64;
    let neg = mean(samples.iter().copied().filter(|&a| a < 0.0).collect());
    let pos = mean(samples.iter().copied().filter(|&a| a >= 0.0).collect());
    let elapsed = start.elapsed();
    let pass = two_modes
        && (neg + 0.8).abs() < 0.1
        && (pos - 0.8).abs() < 0.1
        && elapsed < Duration::from_secs(300);
    report(
        4,
        pass,
        &format!(
            "mode means {neg:.3} / {pos:.3}, histogram {hist:?}, {:.1}s",
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

fn dt3_for_causality(rng: &mut ChaCha8Rng) -> (Dt3Model, ParamStore) {
    let mut store = ParamStore::new();
    let model = Dt3Model::new(
        Dt3Config {
            state_dim: 3,
            action_dim: 2,
            embed_dim: 8,
            n_heads: 2,
            n_blocks: 2,
            inner_lr: 0.1,
            ttt_proj_rank: None,
            include_action_tokens: true,
            dt_mode: false,
            max_timestep: 32,
        },
        &mut store,
        rng,
    );
    perturb(&mut store, 0.3, rng);
    (model, store)
}

fn coarse(model: &Dt3Model, store: &ParamStore, ctx: &ContextWindow) -> Vec<f64> {
    let mut tape = Tape::new();
    let p = tape.bind_frozen(store);
    let out = model.predict_coarse_actions(&mut tape, &p, ctx).unwrap();
    tape.value(out).to_vec()
}

#[test]
fn criterion_5_causality_and_padding() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (model, store) = dt3_for_causality(&mut rng);
    let (k, ds, da) = (6, 3, 2);
    let history = |n: usize, rng: &mut ChaCha8Rng| {
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s: Vec<f64> = (0..n * ds).map(|_| rng.sample(StandardNormal)).collect();
        let a: Vec<f64> = (0..n * da).map(|_| rng.random_range(-1.0..1.0)).collect();
        (r, s, a)
    };

    let mut causal_dev: f64 = 0.0;
    for _ in 0..5 {
        let (r, s, a) = history(k, &mut rng);
        let base_ctx = ContextWindow::from_history(k, ds, da, &r, &s, &a, 3).unwrap();
        let base = coarse(&model, &store, &base_ctx);
        for j in 0..k {
            for field in 0..3 {
                let mut ctx = base_ctx.clone();
                let delta = rng.random_range(0.5..2.0);
                match field {
                    0 => ctx.rtgs[j] += delta,
                    1 => ctx.states[j * ds + 1] += delta,
                    _ => ctx.actions[j * da] += delta,
                }
                let out = coarse(&model, &store, &ctx);
                let visible = if field == 2 { j + 1 } else { j };
                for i in 0..visible * da {
                    causal_dev = causal_dev.max((out[i] - base[i]).abs());
                }
            }
        }
    }

    let mut pad_dev: f64 = 0.0;
    for real in 1..=4 {
        let (r, s, a) = history(real, &mut rng);
        let tight = coarse(
            &model,
            &store,
            &ContextWindow::from_history(real, ds, da, &r, &s, &a, 7).unwrap(),
        );
        for k in real + 1..=real + 5 {
            let out = coarse(
                &model,
                &store,
                &ContextWindow::from_history(k, ds, da, &r, &s, &a, 7).unwrap(),
            );
            let pad = k - real;
            for i in 0..real * da {
                pad_dev = pad_dev.max((out[pad * da + i] - tight[i]).abs());
            }
        }
    }

    let pass = causal_dev == 0.0 && pad_dev <= 1e-10;
    report(
        5,
        pass,
        &format!("future perturbation changed past outputs by {causal_dev:e}; padding deviation {pad_dev:.1e}"),
    );
    assert!(pass);
}

fn smoke_data() -> drdt3::envdata::TrajectoryStore {
    generate_dataset(EnvId::PointReach, DatasetTier::Medium, 20, 1).unwrap()
}

#[test]
fn criterion_6_unified_objective() {
    let data = smoke_data();
    let env = EnvSpec::for_env(EnvId::PointReach);
    let config = TrainConfig {
        zeta: 0.2,
        epochs: 3,
        updates_per_epoch: 10,
        ..tiny_config()
    };
    let outcome = train(&config, &env, &data).unwrap();
    let worst = outcome
        .metrics
        .updates
        .iter()
        .map(|r| (r.l_total - (r.l_diff + config.zeta * r.l_dt3)).abs())
        .fold(0.0, f64::max);
    let logged = outcome.metrics.updates.len();

    let mut trainer = Trainer::new(config.clone(), env.clone(), &data).unwrap();
    trainer.step().unwrap();
    let first = trainer.probes[0];

    let alone = TrainConfig {
        zeta: 0.0,
        ..config.clone()
    };
    let mut trainer = Trainer::new(alone, env, &data).unwrap();
    for _ in 0..3 {
        trainer.step().unwrap();
    }
    let diffusion_only = trainer.probes[2];

    let pass = logged == 30
        && worst <= 1e-12
        && first.dt3 > 0.0
        && first.eps > 0.0
        && diffusion_only.dt3 > 0.0;
    report(
        6,
        pass,
        &format!(
            "max |L - (L_diff + zeta L_dt3)| = {worst:e} over {logged} updates; update 1 grad norms \
             dt3 {:.3e} eps {:.3e}; zeta=0 dt3 grad at update 3 {:.3e}",
            first.dt3, first.eps, diffusion_only.dt3
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_7_stitching() {
    let start = Instant::now();
    let data = generate_dataset(EnvId::StitchChain, DatasetTier::Stitch, 200, 7).unwrap();
    let env = EnvSpec::for_env(EnvId::StitchChain);
    let config = TrainConfig {
        seed: 1,
        embed_dim: 32,
        batch_size: 32,
        epochs: 20,
        updates_per_epoch: 200,
        ..TrainConfig::default()
    };
    let bc = TrainConfig {
        rtg_conditioning: false,
        train_diffusion: false,
        eval_mode: EvalMode::Dt3Only,
        ..config.clone()
    };
    let eval = |policy: &drdt3::policy::Policy, mode| {
        let cfg = EvalConfig {
            rtg_scale: 1.0,
            episodes: 50,
            seed: 123,
            mode,
        };
        evaluate(policy, &env, &cfg).unwrap().success_rate
    };
    let drdt3 = train(&config, &env, &data).unwrap().state.policy;
    let bc_policy = train(&bc, &env, &data).unwrap().state.policy;
    let full = eval(&drdt3, EvalMode::Drdt3);
    let coarse_only = eval(&drdt3, EvalMode::Dt3Only);
    let bc_rate = eval(&bc_policy, EvalMode::Dt3Only);
    let elapsed = start.elapsed();
    let pass = full > 0.0
        && full >= coarse_only
        && full > bc_rate
        && coarse_only > bc_rate
        && elapsed < Duration::from_secs(900);
    report(
        7,
        pass,
        &format!(
            "success over 50 episodes: drdt3 {full:.2}, dt3-only {coarse_only:.2}, \
             behaviour cloning {bc_rate:.2}; {:.0}s",
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_8_ablation_plumbing() {
    let data = smoke_data();
    let env = EnvSpec::for_env(EnvId::PointReach);
    let mut variants: Vec<(String, TrainConfig)> = NoiseApproxVariant::ALL
        .iter()
        .map(|&v| {
            (
                format!("{v}/l1"),
                TrainConfig {
                    noise_approx_variant: v,
                    ..tiny_config()
                },
            )
        })
        .collect();
    variants.push((
        "full/l2".into(),
        TrainConfig {
            dt3_loss_norm: LossNorm::L2,
            ..tiny_config()
        },
    ));
    let mut logs = Vec::new();
    let mut finite = true;
    let mut reproducible = true;
    for (_, c) in &variants {
        let a = train(c, &env, &data).unwrap().metrics;
        let b = train(c, &env, &data).unwrap().metrics;
        finite &= a.updates.iter().all(|r| r.l_total.is_finite());
        reproducible &= a.updates_csv() == b.updates_csv() && a.epochs_csv() == b.epochs_csv();
        logs.push(a.updates_csv());
    }
    let mut distinct = true;
    for i in 0..logs.len() {
        for j in i + 1..logs.len() {
            distinct &= logs[i] != logs[j];
        }
    }
    let pass = finite && reproducible && distinct;
    let names: Vec<&str> = variants.iter().map(|(n, _)| n.as_str()).collect();
    report(
        8,
        pass,
        &format!("{names:?}: finite {finite}, reproducible {reproducible}, pairwise distinct {distinct}"),
    );
    assert!(pass);
}

#[test]
fn criterion_9_determinism_and_persistence() {
    let dir = tempfile::tempdir().unwrap();
    let path = |name: &str| dir.path().join(name);
    let mut sink = Vec::new();

    let gen = |out| GenDataArgs {
        env: EnvId::PointReach,
        tier: DatasetTier::MediumReplay,
        n_traj: 20,
        seed: 9,
        out,
    };
    cmd_gen_data(&gen(path("a.bin")), &mut sink).unwrap();
    cmd_gen_data(&gen(path("b.bin")), &mut sink).unwrap();
    let (a, b) = (std::fs::read(path("a.bin")).unwrap(), std::fs::read(path("b.bin")).unwrap());
    let store = decode_store(&a).unwrap();
    let store_ok = a == b && encode_store(&store) == a;

    std::fs::write(path("c.cfg"), tiny_config().to_kv_string()).unwrap();
    let train_args = |out| TrainArgs {
        config: Some(path("c.cfg")),
        data: path("a.bin"),
        out_dir: out,
        seed: Some(5),
        resume: false,
    };
    cmd_train(&train_args(path("run1")), &mut sink).unwrap();
    cmd_train(&train_args(path("run2")), &mut sink).unwrap();
    let same = |f: &str| {
        std::fs::read(path("run1").join(f)).unwrap() == std::fs::read(path("run2").join(f)).unwrap()
    };
    let metrics_ok = same("updates.csv") && same("epochs.csv") && same("policy.bundle");

    let bundle_bytes = std::fs::read(path("run1").join("policy.bundle")).unwrap();
    let bundle = PolicyBundle::decode(&bundle_bytes).unwrap();
    let checkpoint_bytes = std::fs::read(path("run1").join("checkpoint.bundle")).unwrap();
    let bundle_ok = bundle.encode() == bundle_bytes
        && PolicyBundle::decode(&checkpoint_bytes).unwrap().encode() == checkpoint_bytes;

    let eval_args = |out| EvalArgs {
        bundle: path("run1").join("policy.bundle"),
        env: None,
        episodes: 4,
        eta: 1.0,
        seed: 11,
        mode: EvalMode::Drdt3,
        out_csv: Some(out),
    };
    let e1 = cmd_eval(&eval_args(path("e1.csv")), &mut sink).unwrap();
    let e2 = cmd_eval(&eval_args(path("e2.csv")), &mut sink).unwrap();
    let eval_ok = e1 == e2 && std::fs::read(path("e1.csv")).unwrap() == std::fs::read(path("e2.csv")).unwrap();

    let data = load_store(&path("a.bin")).unwrap();
    let env = EnvSpec::for_env(EnvId::PointReach);
    let config = TrainConfig {
        seed: 5,
        ..tiny_config()
    };
    let in_memory = train(&config, &env, &data).unwrap().state.policy;
    let cfg = EvalConfig {
        rtg_scale: 1.0,
        episodes: 4,
        seed: 11,
        mode: EvalMode::Drdt3,
    };
    let values = |p: &drdt3::policy::Policy| -> Vec<(String, Vec<usize>, Vec<f64>)> {
        p.params
            .iter()
            .map(|(n, a)| (n.to_string(), a.shape().to_vec(), a.values().to_vec()))
            .collect()
    };
    let reload_ok = in_memory.spec == bundle.policy.spec
        && values(&in_memory) == values(&bundle.policy)
        && evaluate(&in_memory, &env, &cfg).unwrap() == evaluate(&bundle.policy, &env, &cfg).unwrap();

    let pass = store_ok && metrics_ok && bundle_ok && eval_ok && reload_ok;
    report(
        9,
        pass,
        &format!(
            "store round trip {store_ok}, metrics/bundle reproducible {metrics_ok}, bundle round trip \
             {bundle_ok}, eval CSV reproducible {eval_ok}, reloaded bundle evaluates identically {reload_ok}"
        ),
    );
    assert!(pass);
}
