//! Single-stage joint training of the sequence model and the noise approximator.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::diffusion::{diffusion_loss, NoiseApproxConfig};
use crate::dt3::{ContextWindow, Dt3Config};
use crate::envdata::{evaluate, EnvSpec, TrajectoryStore};
use crate::numerics::{Binding, Tape, Var};
use crate::policy::{Normalization, Policy, PolicySpec};

use super::{
    clip_grad_norm, dt3_loss, unified_loss, AdamHyper, AdamW, EpochRecord, GradProbe, MetricsLog,
    TrainConfig, TrainError, UpdateRecord,
};

/// Builds the model/sampler description implied by `config` for `data`.
pub fn policy_spec(
    config: &TrainConfig,
    spec: &EnvSpec,
    data: &TrajectoryStore,
) -> Result<PolicySpec, TrainError> {
    config.validate()?;
    if data.is_empty() {
        return Err(TrainError::Argument("dataset is empty".into()));
    }
    if data.state_dim != spec.state_dim || data.action_dim != spec.action_dim || data.env != spec.id {
        return Err(TrainError::Argument(format!(
            "dataset for {} (d_s={}, d_a={}) does not match environment {} (d_s={}, d_a={})",
            data.env, data.state_dim, data.action_dim, spec.id, spec.state_dim, spec.action_dim
        )));
    }
    let max_timestep = if config.max_timestep > 0 {
        config.max_timestep
    } else {
        data.max_len().max(spec.horizon)
    };
    Ok(PolicySpec {
        dt3: Dt3Config {
            state_dim: spec.state_dim,
            action_dim: spec.action_dim,
            embed_dim: config.embed_dim,
            n_heads: config.n_heads,
            n_blocks: config.n_blocks,
            inner_lr: config.inner_lr,
            ttt_proj_rank: (config.ttt_proj_rank > 0).then_some(config.ttt_proj_rank),
            include_action_tokens: config.include_action_tokens,
            dt_mode: config.dt_mode,
            max_timestep,
        },
        eps: NoiseApproxConfig {
            action_dim: spec.action_dim,
            time_embed_dim: config.time_embed_dim,
            hidden_dim: config.noise_hidden_dim,
            expansion: config.noise_expansion,
            variant: config.noise_approx_variant,
        },
        diffusion_steps: config.diffusion_steps,
        beta_min: config.beta_min,
        beta_max: config.beta_max,
        sqrt_beta_noise: config.sqrt_beta_noise,
        action_bound: spec.action_bound,
        context_len: config.context_len,
        rtg_conditioning: config.rtg_conditioning,
        normalization: Normalization::from_stats(data.stats()),
    })
}

/// One minibatch of K-step windows plus the diffusion draws for their last actions.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub contexts: Vec<ContextWindow>,
    /// Dataset action at each window's newest step, `B × d_a`.
    pub last_actions: Vec<f64>,
    /// Diffusion step `i ∈ 1..=N` per window.
    pub steps: Vec<usize>,
    /// `ε ~ N(0, I)`, `B × d_a`.
    pub noise: Vec<f64>,
}

/// Draws `batch_size` windows: a trajectory with probability proportional to
/// its length, then a uniform end index. Early windows are zero-padded.
pub fn sample_batch<R: Rng + ?Sized>(
    policy: &Policy,
    data: &TrajectoryStore,
    lengths: &WeightedIndex<usize>,
    batch_size: usize,
    rng: &mut R,
) -> Result<Batch, TrainError> {
    let (ds, da) = (data.state_dim, data.action_dim);
    let k = policy.spec.context_len;
    let mut batch = Batch {
        contexts: Vec::with_capacity(batch_size),
        last_actions: Vec::with_capacity(batch_size * da),
        steps: Vec::with_capacity(batch_size),
        noise: Vec::with_capacity(batch_size * da),
    };
    for _ in 0..batch_size {
        let tr = &data.trajectories()[lengths.sample(rng)];
        let end = rng.random_range(0..tr.len());
        let first = (end + 1).saturating_sub(k);
        let ctx = policy.context(
            &tr.rtgs()[first..=end],
            &tr.states()[first * ds..(end + 1) * ds],
            &tr.actions()[first * da..(end + 1) * da],
            first,
        )?;
        batch.contexts.push(ctx);
        batch.last_actions.extend_from_slice(tr.action(end));
        batch.steps.push(rng.random_range(1..=policy.schedule.n_steps));
        batch
            .noise
            .extend((0..da).map(|_| rng.sample::<f64, _>(StandardNormal)));
    }
    Ok(batch)
}

/// Tape nodes of the three loss terms. `l_diff` is absent when the diffusion
/// loss is switched off.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub l_diff: Option<Var>,
    pub l_dt3: Var,
    pub total: Var,
}

/// Records `L_DRDT3 = L_diff + ζ·L_dt3` for `batch` on `tape`.
///
/// The diffusion condition is the coarse action of each window's newest row,
/// left attached to the graph so `L_diff` also trains the sequence model.
pub fn compute_losses(
    policy: &Policy,
    config: &TrainConfig,
    tape: &mut Tape,
    p: &Binding,
    batch: &Batch,
) -> Result<LossTerms, TrainError> {
    let k = policy.spec.context_len;
    let mut preds = Vec::with_capacity(batch.contexts.len());
    let mut conds = Vec::with_capacity(batch.contexts.len());
    let mut targets = Vec::new();
    let mut mask = Vec::new();
    for ctx in &batch.contexts {
        let pred = policy.dt3.predict_coarse_actions(tape, p, ctx)?;
        conds.push(tape.slice_rows(pred, k - 1, k)?);
        preds.push(pred);
        targets.extend_from_slice(&ctx.actions);
        mask.extend_from_slice(&ctx.pad_mask);
    }
    let pred = tape.concat_rows(&preds)?;
    let l_dt3 = dt3_loss(
        tape,
        pred,
        &targets,
        &mask,
        policy.spec.action_bound,
        config.dt3_loss_norm,
    )?;
    if !config.train_diffusion {
        let total = tape.scale(l_dt3, config.zeta);
        return Ok(LossTerms {
            l_diff: None,
            l_dt3,
            total,
        });
    }
    let cond = tape.concat_rows(&conds)?;
    let l_diff = diffusion_loss(
        tape,
        p,
        &policy.eps,
        &policy.schedule,
        &batch.last_actions,
        cond,
        &batch.steps,
        &batch.noise,
    )?;
    let total = unified_loss(tape, l_diff, l_dt3, config.zeta)?;
    Ok(LossTerms {
        l_diff: Some(l_diff),
        l_dt3,
        total,
    })
}

/// Generator position, enough to resume a run bit-for-bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Everything a run needs to continue after a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub policy: Policy,
    pub optimizer: AdamW,
    pub rng: RngState,
    /// Updates completed so far; the next update index is `update + 1`.
    pub update: usize,
    pub epoch: usize,
}

pub struct Trainer<'a> {
    pub config: TrainConfig,
    pub env: EnvSpec,
    data: &'a TrajectoryStore,
    lengths: WeightedIndex<usize>,
    pub policy: Policy,
    pub optimizer: AdamW,
    rng: ChaCha8Rng,
    pub update: usize,
    pub epoch: usize,
    pub metrics: MetricsLog,
    pub probes: Vec<GradProbe>,
}

impl TrainConfig {
    pub fn adam_hyper(&self) -> AdamHyper {
        AdamHyper {
            lr: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }
}

impl<'a> Trainer<'a> {
    /// Fresh run; all randomness derives from `config.seed`.
    pub fn new(config: TrainConfig, env: EnvSpec, data: &'a TrajectoryStore) -> Result<Self, TrainError> {
        let spec = policy_spec(&config, &env, data)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let policy = Policy::new(spec, &mut rng)?;
        let optimizer = AdamW::new(&policy.params, config.adam_hyper());
        Self::assemble(config, env, data, policy, optimizer, rng, 0, 0, MetricsLog::default())
    }

    /// Continues from a checkpoint; `metrics` holds the records logged so far.
    pub fn resume(
        config: TrainConfig,
        env: EnvSpec,
        data: &'a TrajectoryStore,
        state: TrainState,
        metrics: MetricsLog,
    ) -> Result<Self, TrainError> {
        let spec = policy_spec(&config, &env, data)?;
        if spec.dt3 != state.policy.spec.dt3 || spec.eps != state.policy.spec.eps {
            return Err(TrainError::Argument(
                "checkpoint architecture differs from the configuration".into(),
            ));
        }
        let mut optimizer = state.optimizer;
        optimizer.hyper = config.adam_hyper();
        Self::assemble(
            config,
            env,
            data,
            state.policy,
            optimizer,
            state.rng.restore(),
            state.update,
            state.epoch,
            metrics,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        config: TrainConfig,
        env: EnvSpec,
        data: &'a TrajectoryStore,
        policy: Policy,
        optimizer: AdamW,
        rng: ChaCha8Rng,
        update: usize,
        epoch: usize,
        metrics: MetricsLog,
    ) -> Result<Self, TrainError> {
        let lengths = WeightedIndex::new(data.trajectories().iter().map(|t| t.len()))
            .map_err(|e| TrainError::Argument(format!("trajectory weights: {e}")))?;
        Ok(Self {
            config,
            env,
            data,
            lengths,
            policy,
            optimizer,
            rng,
            update,
            epoch,
            metrics,
            probes: Vec::new(),
        })
    }

    pub fn state(&self) -> TrainState {
        TrainState {
            policy: self.policy.clone(),
            optimizer: self.optimizer.clone(),
            rng: RngState::capture(&self.rng),
            update: self.update,
            epoch: self.epoch,
        }
    }

    pub fn data(&self) -> &TrajectoryStore {
        self.data
    }

    pub fn sample_batch(&mut self) -> Result<Batch, TrainError> {
        sample_batch(
            &self.policy,
            self.data,
            &self.lengths,
            self.config.batch_size,
            &mut self.rng,
        )
    }

    /// One gradient update. On error the parameters are left untouched.
    pub fn step(&mut self) -> Result<UpdateRecord, TrainError> {
        let batch = self.sample_batch()?;
        let idx = self.update + 1;
        let mut tape = Tape::new();
        let p = tape.bind(&self.policy.params);
        let terms = compute_losses(&self.policy, &self.config, &mut tape, &p, &batch)?;
        let rec = UpdateRecord {
            update_idx: idx,
            l_diff: terms.l_diff.map_or(0.0, |v| tape.scalar(v)),
            l_dt3: tape.scalar(terms.l_dt3),
            l_total: tape.scalar(terms.total),
        };
        if ![rec.l_diff, rec.l_dt3, rec.l_total].iter().all(|v| v.is_finite()) {
            return Err(TrainError::NonFinite(format!(
                "loss at update {idx}: l_diff={} l_dt3={} l_total={}",
                rec.l_diff, rec.l_dt3, rec.l_total
            )));
        }
        tape.backward(terms.total)?;
        let params = &mut self.policy.params;
        params.zero_grad();
        params.accumulate_grads(&tape, &p);
        self.probes.push(GradProbe {
            update_idx: idx,
            dt3: params.grad_norm("dt3."),
            eps: params.grad_norm("eps."),
            dt3_action_head: params.grad_norm("dt3.action_head"),
        });
        clip_grad_norm(params, self.config.grad_clip);
        self.optimizer
            .step(params)
            .map_err(|e| match e {
                TrainError::NonFinite(m) => TrainError::NonFinite(format!("update {idx}: {m}")),
                other => other,
            })?;
        self.metrics.push_update(rec)?;
        self.update = idx;
        Ok(rec)
    }

    /// Evaluates the current parameters with a seed drawn from the run's generator.
    pub fn evaluate_epoch(&mut self) -> Result<EpochRecord, TrainError> {
        let cfg = self.config.eval_config(self.rng.next_u64());
        let summary = evaluate(&self.policy, &self.env, &cfg)?;
        let rec = EpochRecord {
            epoch: self.epoch,
            mean_return: summary.mean_return,
            success_rate: summary.success_rate,
            norm_score: summary.normalized_score,
        };
        self.metrics.push_epoch(rec)?;
        Ok(rec)
    }

    /// Trains the remaining epochs, evaluating after each and handing the
    /// trainer to `on_epoch` (for checkpointing).
    pub fn run<F>(&mut self, mut on_epoch: F) -> Result<(), TrainError>
    where
        F: FnMut(&Trainer<'a>, &EpochRecord) -> Result<(), TrainError>,
    {
        while self.epoch < self.config.epochs {
            for _ in 0..self.config.updates_per_epoch {
                self.step()?;
            }
            self.epoch += 1;
            let rec = self.evaluate_epoch()?;
            on_epoch(self, &rec)?;
        }
        Ok(())
    }
}

/// Outcome of [`train`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub metrics: MetricsLog,
}

/// Runs a full training job without checkpoint hooks.
pub fn train(
    config: &TrainConfig,
    env: &EnvSpec,
    data: &TrajectoryStore,
) -> Result<TrainOutcome, TrainError> {
    let mut trainer = Trainer::new(config.clone(), env.clone(), data)?;
    trainer.run(|_, _| Ok(()))?;
    Ok(TrainOutcome {
        state: trainer.state(),
        metrics: trainer.metrics,
    })
}
