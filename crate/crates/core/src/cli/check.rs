//! Finite-difference and invariant suites behind `drdt3 check`.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::diffusion::{
    denoise_from_prediction, forward_noise, DiffusionSchedule, NoiseApproxConfig,
    NoiseApproxVariant, NoiseApproximator,
};
use crate::dt3::{ContextWindow, Dt3Config, Dt3Model, TttLinear};
use crate::numerics::{
    check_gradients_with, Binding, DArray, GradCheckReport, NumericsError, OpKind, ParamStore,
    Tape, Var,
};
use crate::policy::{Normalization, Policy, PolicySpec};
use crate::training::{compute_losses, Batch, LossNorm, TrainConfig, TrainError};

/// Tolerance on the relative error of single primitives.
pub const PRIMITIVE_TOL: f64 = 1e-4;
/// Tolerance on the relative error of composed models.
pub const MODEL_TOL: f64 = 1e-3;
const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckScope {
    Numerics,
    Dt3,
    Diffusion,
    All,
}

impl CheckScope {
    pub const ALL: [CheckScope; 4] = [
        CheckScope::Numerics,
        CheckScope::Dt3,
        CheckScope::Diffusion,
        CheckScope::All,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CheckScope::Numerics => "numerics",
            CheckScope::Dt3 => "dt3",
            CheckScope::Diffusion => "diffusion",
            CheckScope::All => "all",
        }
    }

    fn covers(self, other: CheckScope) -> bool {
        self == CheckScope::All || self == other
    }
}

impl fmt::Display for CheckScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CheckScope {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown check scope {s:?} (numerics, dt3, diffusion, all)"))
    }
}

/// Result of one check: `metric` is compared against `tolerance`
/// (`metric <= tolerance` passes; exact checks use tolerance 0).
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub metric: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckOutcome {
    fn severity(&self) -> f64 {
        if self.metric.is_nan() {
            f64::INFINITY
        } else if self.tolerance > 0.0 {
            self.metric / self.tolerance
        } else if self.metric > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    }
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<32} {:.3e} (tol {:.0e}) {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.metric,
            self.tolerance,
            self.detail
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CheckReport {
    pub outcomes: Vec<CheckOutcome>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckOutcome> {
        self.outcomes.iter().filter(|o| !o.passed)
    }

    /// The check closest to (or furthest past) its tolerance.
    pub fn worst(&self) -> Option<&CheckOutcome> {
        self.outcomes
            .iter()
            .max_by(|a, b| a.severity().total_cmp(&b.severity()))
    }

    fn push(&mut self, o: CheckOutcome) {
        self.outcomes.push(o);
    }
}

fn gradient_outcome(
    name: &str,
    tol: f64,
    result: Result<GradCheckReport, String>,
) -> CheckOutcome {
    match result {
        Ok(r) => CheckOutcome {
            name: name.to_string(),
            passed: r.passes(tol),
            metric: r.max_rel_error,
            tolerance: tol,
            detail: r.to_string(),
        },
        Err(e) => CheckOutcome {
            name: name.to_string(),
            passed: false,
            metric: f64::NAN,
            tolerance: tol,
            detail: format!("error: {e}"),
        },
    }
}

fn bounded_outcome(name: &str, metric: f64, tol: f64, detail: String) -> CheckOutcome {
    CheckOutcome {
        name: name.to_string(),
        passed: metric <= tol,
        metric,
        tolerance: tol,
        detail,
    }
}

/// Fixed readout weights so every objective is a generic linear functional.
fn readout(tape: &mut Tape, out: Var) -> Result<Var, NumericsError> {
    let shape = tape.shape(out).to_vec();
    let n: usize = shape.iter().product();
    let w = (0..n).map(|i| (1.3 * i as f64 + 0.7).sin() + 0.5).collect();
    let w = tape.constant(&shape, w)?;
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}

fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> DArray {
    DArray::randn(shape, 1.0, rng)
}

/// Values in ±[0.2, 1.2], away from the kink of `abs`.
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> DArray {
    let n = shape.iter().product();
    let v = (0..n)
        .map(|_| {
            let m = rng.random_range(0.2..1.2);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    DArray::new(shape, v).expect("shape matches")
}

fn perturb_all(store: &mut ParamStore, std: f64, rng: &mut ChaCha8Rng) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.get_mut(id).values_mut() {
            *v += std * rng.sample::<f64, _>(StandardNormal);
        }
    }
}

type Objective = Box<dyn Fn(&mut Tape, &Binding) -> Result<Var, NumericsError>>;

fn primitive_cases(rng: &mut ChaCha8Rng) -> Vec<(OpKind, ParamStore, Objective)> {
    let mut cases: Vec<(OpKind, ParamStore, Objective)> = Vec::new();
    for kind in OpKind::ALL {
        let mut s = ParamStore::new();
        let f: Objective = match kind {
            OpKind::Leaf => {
                let x = s.add("x", randn(&[2, 3], rng));
                Box::new(move |t, p| readout(t, p.var(x)))
            }
            OpKind::Add | OpKind::Sub | OpKind::Mul => {
                let x = s.add("x", randn(&[3, 4], rng));
                let y = s.add("y", randn(&[3, 4], rng));
                Box::new(move |t, p| {
                    let (a, b) = (p.var(x), p.var(y));
                    let out = match kind {
                        OpKind::Add => t.add(a, b)?,
                        OpKind::Sub => t.sub(a, b)?,
                        _ => t.mul(a, b)?,
                    };
                    readout(t, out)
                })
            }
            OpKind::AddRow => {
                let x = s.add("x", randn(&[3, 4], rng));
                let b = s.add("bias", randn(&[4], rng));
                Box::new(move |t, p| {
                    let out = t.add_row(p.var(x), p.var(b))?;
                    readout(t, out)
                })
            }
            OpKind::Scale => {
                let x = s.add("x", randn(&[3, 4], rng));
                Box::new(move |t, p| {
                    let out = t.scale(p.var(x), -1.7);
                    readout(t, out)
                })
            }
            OpKind::AddScalar => {
                let x = s.add("x", randn(&[3, 4], rng));
                Box::new(move |t, p| {
                    let out = t.add_scalar(p.var(x), 0.3);
                    let out = t.square(out);
                    readout(t, out)
                })
            }
            OpKind::MatMul => {
                let x = s.add("x", randn(&[3, 4], rng));
                let y = s.add("y", randn(&[4, 2], rng));
                Box::new(move |t, p| {
                    let out = t.matmul(p.var(x), p.var(y))?;
                    readout(t, out)
                })
            }
            OpKind::Transpose => {
                let x = s.add("x", randn(&[3, 4], rng));
                Box::new(move |t, p| {
                    let out = t.transpose(p.var(x))?;
                    readout(t, out)
                })
            }
            OpKind::Reshape => {
                let x = s.add("x", randn(&[3, 4], rng));
                Box::new(move |t, p| {
                    let out = t.reshape(p.var(x), &[4, 3])?;
                    readout(t, out)
                })
            }
            OpKind::ConcatLast => {
                let x = s.add("x", randn(&[3, 2], rng));
                let y = s.add("y", randn(&[3, 3], rng));
                Box::new(move |t, p| {
                    let out = t.concat_last(&[p.var(x), p.var(y)])?;
                    readout(t, out)
                })
            }
            OpKind::ConcatRows => {
                let x = s.add("x", randn(&[2, 3], rng));
                let y = s.add("y", randn(&[4, 3], rng));
                Box::new(move |t, p| {
                    let out = t.concat_rows(&[p.var(x), p.var(y)])?;
                    readout(t, out)
                })
            }
            OpKind::SliceRows => {
                let x = s.add("x", randn(&[5, 3], rng));
                Box::new(move |t, p| {
                    let out = t.slice_rows(p.var(x), 1, 4)?;
                    readout(t, out)
                })
            }
            OpKind::SliceLast => {
                let x = s.add("x", randn(&[3, 5], rng));
                Box::new(move |t, p| {
                    let out = t.slice_last(p.var(x), 1, 4)?;
                    readout(t, out)
                })
            }
            OpKind::Sum | OpKind::Mean => {
                let x = s.add("x", randn(&[3, 4], rng));
                Box::new(move |t, p| {
                    let sq = t.square(p.var(x));
                    let out = if kind == OpKind::Sum { t.sum(sq) } else { t.mean(sq) };
                    readout(t, out)
                })
            }
            OpKind::Abs => {
                let x = s.add("x", away_from_zero(&[3, 4], rng));
                Box::new(move |t, p| {
                    let out = t.abs(p.var(x));
                    readout(t, out)
                })
            }
            OpKind::Square => {
                let x = s.add("x", randn(&[3, 4], rng));
                Box::new(move |t, p| {
                    let out = t.square(p.var(x));
                    readout(t, out)
                })
            }
            OpKind::Gelu => {
                let x = s.add("x", randn(&[3, 4], rng));
                Box::new(move |t, p| {
                    let out = t.gelu(p.var(x));
                    readout(t, out)
                })
            }
            OpKind::Softmax => {
                let x = s.add("x", randn(&[3, 4], rng));
                Box::new(move |t, p| {
                    let out = t.softmax(p.var(x));
                    readout(t, out)
                })
            }
            OpKind::LayerNorm => {
                let x = s.add("x", randn(&[3, 5], rng));
                let g = s.add("gain", randn(&[5], rng));
                let b = s.add("bias", randn(&[5], rng));
                Box::new(move |t, p| {
                    let out = t.layer_norm(p.var(x), p.var(g), p.var(b), 1e-5)?;
                    readout(t, out)
                })
            }
            OpKind::Embedding => {
                let table = s.add("table", randn(&[5, 3], rng));
                Box::new(move |t, p| {
                    let out = t.embedding(p.var(table), &[0, 2, 2, 4])?;
                    readout(t, out)
                })
            }
        };
        cases.push((kind, s, f));
    }
    cases
}

fn numerics_suite(report: &mut CheckReport, fault: Option<(OpKind, f64)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for (kind, mut store, f) in primitive_cases(&mut rng) {
        let r = check_gradients_with::<_, NumericsError>(&mut store, FD_STEP, fault, |t, p| f(t, p));
        report.push(gradient_outcome(
            &format!("grad {}", kind.name()),
            PRIMITIVE_TOL,
            r.map_err(|e| e.to_string()),
        ));
    }
}

fn small_dt3(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    inner_lr: f64,
    rank: Option<usize>,
) -> Dt3Model {
    let config = Dt3Config {
        state_dim: 3,
        action_dim: 2,
        embed_dim: 8,
        n_heads: 2,
        n_blocks: 1,
        inner_lr,
        ttt_proj_rank: rank,
        include_action_tokens: true,
        dt_mode: false,
        max_timestep: 16,
    };
    let model = Dt3Model::new(config, store, rng);
    perturb_all(store, 0.3, rng);
    model
}

fn random_context(k: usize, real: usize, first_t: usize, rng: &mut ChaCha8Rng) -> ContextWindow {
    let (ds, da) = (3, 2);
    let n = real;
    let rtgs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let states: Vec<f64> = (0..n * ds).map(|_| rng.sample(StandardNormal)).collect();
    let actions: Vec<f64> = (0..n * da).map(|_| rng.random_range(-1.0..1.0)).collect();
    ContextWindow::from_history(k, ds, da, &rtgs, &states, &actions, first_t)
        .expect("well-formed history")
}

fn predict(model: &Dt3Model, store: &ParamStore, ctx: &ContextWindow) -> Vec<f64> {
    let mut tape = Tape::new();
    let p = tape.bind_frozen(store);
    let out = model
        .predict_coarse_actions(&mut tape, &p, ctx)
        .expect("valid context");
    tape.value(out).to_vec()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn dt3_suite(report: &mut CheckReport, fault: Option<(OpKind, f64)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(202);

    for rank in [None, Some(2)] {
        let mut store = ParamStore::new();
        let layer = TttLinear::new(&mut store, "ttt", 4, 0.1, rank, &mut rng);
        perturb_all(&mut store, 0.5, &mut rng);
        let x = randn(&[5, 4], &mut rng);
        let real = [false, true, true, true, true];
        let r = check_gradients_with::<_, NumericsError>(&mut store, FD_STEP, fault, |t, p| {
            let xv = t.leaf(&x);
            let trace = layer.recurrence(t, p, xv, &real)?;
            readout(t, trace.outputs)
        });
        let name = match rank {
            None => "grad ttt inner loop".to_string(),
            Some(r) => format!("grad ttt inner loop rank {r}"),
        };
        report.push(gradient_outcome(&name, MODEL_TOL, r.map_err(|e| e.to_string())));
    }

    let mut store = ParamStore::new();
    let model = small_dt3(&mut store, &mut rng, 0.1, None);
    let ctx = random_context(3, 2, 4, &mut rng);
    let r = check_gradients_with::<_, TrainError>(&mut store, FD_STEP, fault, |t, p| {
        let out = model.predict_coarse_actions(t, p, &ctx).map_err(TrainError::from)?;
        Ok(readout(t, out)?)
    });
    report.push(gradient_outcome("grad dt3 model", MODEL_TOL, r.map_err(|e| e.to_string())));

    causality_check(report, &model, &store, &mut rng);
    padding_check(report, &model, &store, &mut rng);
    ttt_identities(report, &mut rng);
}

fn causality_check(
    report: &mut CheckReport,
    model: &Dt3Model,
    store: &ParamStore,
    rng: &mut ChaCha8Rng,
) {
    let k = 4;
    let da = 2;
    let base_ctx = random_context(k, k, 0, rng);
    let base = predict(model, store, &base_ctx);
    let mut worst: f64 = 0.0;
    let mut where_ = String::from("none");
    for j in 0..k {
        for field in ["rtg", "state", "action"] {
            let mut ctx = base_ctx.clone();
            match field {
                "rtg" => ctx.rtgs[j] += 0.7,
                "state" => ctx.states[j * 3] += 0.7,
                _ => ctx.actions[j * da] += 0.7,
            }
            let out = predict(model, store, &ctx);
            // An action token comes after its step's state token.
            let visible = if field == "action" { j + 1 } else { j };
            let dev = max_abs_diff(&base[..visible * da], &out[..visible * da]);
            if dev > worst {
                worst = dev;
                where_ = format!("{field} at row {j}");
            }
        }
    }
    report.push(bounded_outcome(
        "dt3 causality",
        worst,
        0.0,
        format!("largest change of an earlier prediction: {where_}"),
    ));
}

fn padding_check(
    report: &mut CheckReport,
    model: &Dt3Model,
    store: &ParamStore,
    rng: &mut ChaCha8Rng,
) {
    let real = 2;
    let da = 2;
    let tight = random_context(real, real, 5, rng);
    let reference = predict(model, store, &tight);
    let mut worst: f64 = 0.0;
    for k in [3, 5, 8] {
        let rows: Vec<usize> = (0..real).collect();
        let ctx = ContextWindow::from_history(
            k,
            3,
            da,
            &tight.rtgs,
            &tight.states,
            &tight.actions,
            5,
        )
        .expect("well-formed history");
        let out = predict(model, store, &ctx);
        let pad = k - real;
        for r in rows {
            let dev = max_abs_diff(
                &reference[r * da..(r + 1) * da],
                &out[(pad + r) * da..(pad + r + 1) * da],
            );
            worst = worst.max(dev);
        }
    }
    report.push(bounded_outcome(
        "dt3 padding invariance",
        worst,
        1e-10,
        "padding of 1, 3 and 6 rows".into(),
    ));
}

fn ttt_identities(report: &mut CheckReport, rng: &mut ChaCha8Rng) {
    let d = 4;

    // Zero inner step: the fast weight never moves and z = x·θ_Q·W0.
    let mut store = ParamStore::new();
    let layer = TttLinear::new(&mut store, "ttt", d, 0.0, None, rng);
    perturb_all(&mut store, 0.5, rng);
    let x = randn(&[6, d], rng);
    let mut tape = Tape::new();
    let p = tape.bind_frozen(&store);
    let xv = tape.leaf(&x);
    let trace = layer
        .recurrence(&mut tape, &p, xv, &[true; 6])
        .expect("shapes agree");
    let w0 = store.get(layer.w0).values().to_vec();
    let mut dev: f64 = 0.0;
    for w in &trace.weights {
        dev = dev.max(max_abs_diff(tape.value(*w), &w0));
    }
    let q = tape.matmul(xv, p.var(match layer.theta_q {
        crate::dt3::Projection::Full(id) => id,
        crate::dt3::Projection::LowRank(..) => unreachable!("full rank requested"),
    }));
    let q = q.expect("shapes agree");
    let expect = tape.matmul(q, p.var(layer.w0)).expect("shapes agree");
    dev = dev.max(max_abs_diff(tape.value(trace.outputs), tape.value(expect)));
    report.push(bounded_outcome(
        "ttt zero inner step is linear",
        dev,
        0.0,
        "6 tokens, d=4".into(),
    ));

    // Descent: one inner step never increases the current token's loss.
    let lr = 1e-2;
    let mut store = ParamStore::new();
    let layer = TttLinear::new(&mut store, "ttt", d, lr, None, rng);
    perturb_all(&mut store, 0.5, rng);
    let n = 1000;
    let mut rows = Vec::with_capacity(n * d);
    for _ in 0..n {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        rows.extend(v.iter().map(|a| a / norm));
    }
    let x = DArray::new(&[n, d], rows).expect("shape matches");
    let mut tape = Tape::new();
    let p = tape.bind_frozen(&store);
    let xv = tape.leaf(&x);
    let trace = layer
        .recurrence(&mut tape, &p, xv, &vec![true; n])
        .expect("shapes agree");
    let mut worst = f64::NEG_INFINITY;
    let mut prev = p.var(layer.w0);
    for t in 0..n {
        let xt = tape.slice_rows(xv, t, t + 1).expect("row in range");
        let before = layer.reconstruction_loss(&mut tape, &p, prev, xt).expect("shapes agree");
        let after = layer
            .reconstruction_loss(&mut tape, &p, trace.weights[t], xt)
            .expect("shapes agree");
        worst = worst.max(tape.scalar(after) - tape.scalar(before));
        prev = trace.weights[t];
    }
    report.push(bounded_outcome(
        "ttt inner step descends",
        worst.max(0.0),
        0.0,
        format!("{n} unit tokens, inner_lr {lr}, max increase {worst:.3e}"),
    ));

    // Scalar hand case: θ = 1, W0 = 0, x = 1 gives W1 = 2·η.
    let eta = 0.05;
    let mut store = ParamStore::new();
    let layer = TttLinear::new(&mut store, "ttt", 1, eta, None, rng);
    for name in ["ttt.theta_q", "ttt.theta_k", "ttt.theta_v"] {
        let id = store.find(name).expect("registered");
        store.get_mut(id).values_mut()[0] = 1.0;
    }
    let mut tape = Tape::new();
    let p = tape.bind_frozen(&store);
    let xv = tape.constant(&[1, 1], vec![1.0]).expect("shape matches");
    let trace = layer.recurrence(&mut tape, &p, xv, &[true]).expect("shapes agree");
    let w1 = tape.value(trace.weights[0])[0];
    report.push(bounded_outcome(
        "ttt scalar hand case",
        (w1 - 2.0 * eta).abs(),
        1e-12,
        format!("W1 = {w1}, expected {}", 2.0 * eta),
    ));
}

fn noise_model(variant: NoiseApproxVariant, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> NoiseApproximator {
    let config = NoiseApproxConfig {
        action_dim: 2,
        time_embed_dim: 4,
        hidden_dim: 6,
        expansion: 2,
        variant,
    };
    let m = NoiseApproximator::new(config, store, rng);
    perturb_all(store, 0.3, rng);
    m
}

fn small_policy(rng: &mut ChaCha8Rng) -> Policy {
    let spec = PolicySpec {
        dt3: Dt3Config {
            state_dim: 3,
            action_dim: 2,
            embed_dim: 8,
            n_heads: 1,
            n_blocks: 1,
            inner_lr: 0.1,
            ttt_proj_rank: None,
            include_action_tokens: true,
            dt_mode: false,
            max_timestep: 16,
        },
        eps: NoiseApproxConfig {
            action_dim: 2,
            time_embed_dim: 4,
            hidden_dim: 8,
            expansion: 2,
            variant: NoiseApproxVariant::Full,
        },
        diffusion_steps: 3,
        beta_min: 0.1,
        beta_max: 10.0,
        sqrt_beta_noise: false,
        action_bound: 1.0,
        context_len: 3,
        rtg_conditioning: true,
        normalization: Normalization::identity(3),
    };
    let mut policy = Policy::new(spec, rng).expect("valid spec");
    perturb_all(&mut policy.params, 0.3, rng);
    policy
}

fn small_batch(rng: &mut ChaCha8Rng) -> Batch {
    let contexts: Vec<ContextWindow> = [1, 2, 3, 3]
        .iter()
        .enumerate()
        .map(|(i, &real)| random_context(3, real, i, rng))
        .collect();
    let last_actions = contexts
        .iter()
        .flat_map(|c| c.action(c.k - 1).to_vec())
        .collect();
    Batch {
        contexts,
        last_actions,
        steps: vec![1, 2, 3, 2],
        noise: (0..8).map(|_| rng.sample(StandardNormal)).collect(),
    }
}

fn diffusion_suite(report: &mut CheckReport, fault: Option<(OpKind, f64)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(303);

    for variant in NoiseApproxVariant::ALL {
        let mut store = ParamStore::new();
        let model = noise_model(variant, &mut store, &mut rng);
        let noisy = randn(&[3, 2], &mut rng);
        let cond = randn(&[3, 2], &mut rng);
        let r = check_gradients_with::<_, TrainError>(&mut store, FD_STEP, fault, |t, p| {
            let x = t.leaf(&noisy);
            let c = t.leaf(&cond);
            let out = model.predict_noise(t, p, x, c, &[1, 2, 3])?;
            Ok(readout(t, out)?)
        });
        report.push(gradient_outcome(
            &format!("grad noise approximator {variant}"),
            MODEL_TOL,
            r.map_err(|e| e.to_string()),
        ));
    }

    for norm in [LossNorm::L1, LossNorm::L2] {
        let policy = small_policy(&mut rng);
        let batch = small_batch(&mut rng);
        let config = TrainConfig {
            dt3_loss_norm: norm,
            ..TrainConfig::default()
        };
        let mut store = policy.params.clone();
        let r = check_gradients_with::<_, TrainError>(&mut store, FD_STEP, fault, |t, p| {
            Ok(compute_losses(&policy, &config, t, p, &batch)?.total)
        });
        report.push(gradient_outcome(
            &format!("grad unified loss {norm}"),
            MODEL_TOL,
            r.map_err(|e| e.to_string()),
        ));
    }

    schedule_grid(report);
    diffusion_identities(report, &mut rng);
}

fn schedule_grid(report: &mut CheckReport) {
    let mut worst: f64 = 0.0;
    let mut monotone = true;
    for n in [1, 5, 20] {
        for (lo, hi) in [(0.1, 10.0), (1.0, 1.0)] {
            let s = DiffusionSchedule::vp(n, lo, hi).expect("valid grid point");
            let mut prod = 1.0;
            for i in 1..=n {
                worst = worst.max((s.beta(i) - (1.0 - s.alpha(i))).abs());
                prod *= s.alpha(i);
                worst = worst.max((s.alpha_bar(i) - prod).abs());
                if i > 1 && s.alpha_bar(i) >= s.alpha_bar(i - 1) {
                    monotone = false;
                }
                if !(s.beta(i) > 0.0 && s.beta(i) < 1.0) {
                    monotone = false;
                }
            }
        }
    }
    report.push(bounded_outcome(
        "schedule identities",
        if monotone { worst } else { f64::INFINITY },
        1e-15,
        format!("N in {{1, 5, 20}}, two beta ranges, alpha_bar decreasing: {monotone}"),
    ));
}

fn diffusion_identities(report: &mut CheckReport, rng: &mut ChaCha8Rng) {
    let a0: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let eps: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
    let sched = DiffusionSchedule::vp(1, 0.1, 10.0).expect("valid");
    let a1 = forward_noise(&a0, 1, &eps, &sched).expect("valid step");
    let back = denoise_from_prediction(&a1, &eps, 1, &sched, &[0.0; 3], false).expect("valid step");
    report.push(bounded_outcome(
        "diffusion single-step round trip",
        max_abs_diff(&back, &a0),
        1e-12,
        "N=1".into(),
    ));

    let mut worst: f64 = 0.0;
    for n in [1, 5, 20] {
        let sched = DiffusionSchedule::vp(n, 0.1, 10.0).expect("valid");
        let a_n: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
        let mut a = a_n.clone();
        for i in (1..=n).rev() {
            a = denoise_from_prediction(&a, &[0.0; 3], i, &sched, &[0.0; 3], false)
                .expect("valid step");
        }
        let scale = sched.alpha_bar(n).sqrt();
        for (x, y) in a.iter().zip(&a_n) {
            let expect = y / scale;
            worst = worst.max((x - expect).abs() / expect.abs().max(1.0));
        }
    }
    report.push(bounded_outcome(
        "diffusion zero-noise telescoping",
        worst,
        1e-10,
        "N in {1, 5, 20}".into(),
    ));
}

/// Runs every suite covered by `scope`. `fault` scales the adjoint of one
/// primitive kind, as a negative control for the gradient suites.
pub fn run_checks(scope: CheckScope, fault: Option<(OpKind, f64)>) -> CheckReport {
    let mut report = CheckReport::default();
    if scope.covers(CheckScope::Numerics) {
        numerics_suite(&mut report, fault);
    }
    if scope.covers(CheckScope::Dt3) {
        dt3_suite(&mut report, fault);
    }
    if scope.covers(CheckScope::Diffusion) {
        diffusion_suite(&mut report, fault);
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numerics_scope_passes() {
        let r = run_checks(CheckScope::Numerics, None);
        assert_eq!(r.outcomes.len(), OpKind::ALL.len());
        for o in &r.outcomes {
            assert!(o.passed, "{o}");
        }
    }

    #[test]
    fn corrupted_adjoint_is_named() {
        let r = run_checks(CheckScope::Numerics, Some((OpKind::Softmax, 1.5)));
        assert!(!r.passed());
        let failing: Vec<_> = r.failures().map(|o| o.name.as_str()).collect();
        assert_eq!(failing, ["grad softmax"]);
        assert_eq!(r.worst().unwrap().name, "grad softmax");
    }

    #[test]
    fn scope_names() {
        for s in CheckScope::ALL {
            assert_eq!(s.as_str().parse::<CheckScope>().unwrap(), s);
        }
        assert!("everything".parse::<CheckScope>().is_err());
    }
}
