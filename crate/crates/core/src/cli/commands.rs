use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::envdata::{
    evaluate, generate_dataset, load_store, normalized_score, save_store, DatasetTier, Env,
    EnvId, EnvSpec, EvalConfig, EvalMode,
};
use crate::numerics::OpKind;
use crate::training::{MetricsLog, TrainConfig, TrainError, Trainer};

use super::manifest::unix_now;
use super::{
    config_hash, parse_config, render_svg, parse_table, run_checks, CheckScope, CliError,
    PolicyBundle, RunManifest,
};

pub const EVAL_CSV_HEADER: &str = "episode,return,normalized_score,success,initial_rtg,length";

pub const CHECKPOINT_FILE: &str = "checkpoint.bundle";
pub const BUNDLE_FILE: &str = "policy.bundle";
pub const UPDATES_FILE: &str = "updates.csv";
pub const EPOCHS_FILE: &str = "epochs.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

fn say(out: &mut dyn Write, line: std::fmt::Arguments<'_>) -> Result<(), CliError> {
    writeln!(out, "{line}").map_err(|e| CliError::io(Path::new("<stdout>"), e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenDataArgs {
    pub env: EnvId,
    pub tier: DatasetTier,
    pub n_traj: usize,
    pub seed: u64,
    pub out: PathBuf,
}

/// Generates a dataset and prints its statistics. "best return" only counts
/// trajectories that begin where the environment's own episodes begin.
pub fn cmd_gen_data(args: &GenDataArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let store = generate_dataset(args.env, args.tier, args.n_traj, args.seed)?;
    save_store(&store, &args.out)?;
    let stats = store.stats();
    let best_from_start = store
        .trajectories()
        .iter()
        .filter(|t| Env::is_initial_state(store.env, t.state(0)))
        .map(|t| t.total_return())
        .fold(None, |acc: Option<f64>, r| Some(acc.map_or(r, |a| a.max(r))));
    say(out, format_args!("wrote {}", args.out.display()))?;
    say(out, format_args!("env: {}  tier: {}  seed: {}", args.env, args.tier, args.seed))?;
    say(out, format_args!("count: {}", stats.count))?;
    say(out, format_args!("steps: {}", store.num_steps()))?;
    say(out, format_args!("mean return: {}", stats.mean_return))?;
    match best_from_start {
        Some(b) => say(out, format_args!("best return: {b}"))?,
        None => say(out, format_args!("best return: none (no trajectory starts at a reset state)"))?,
    }
    say(out, format_args!("best return (any start): {}", stats.max_return))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainArgs {
    /// `None` trains with every default.
    pub config: Option<PathBuf>,
    pub data: PathBuf,
    pub out_dir: PathBuf,
    /// Overrides the config file's seed.
    pub seed: Option<u64>,
    /// Continue from `out_dir/checkpoint.bundle`.
    pub resume: bool,
}

pub fn load_config(path: Option<&Path>) -> Result<TrainConfig, CliError> {
    match path {
        None => Ok(TrainConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            parse_config(&text).map_err(|diagnostic| CliError::Config {
                path: p.to_path_buf(),
                diagnostic,
            })
        }
    }
}

/// Trains a policy, checkpointing after every epoch.
///
/// On a non-finite loss the run stops with [`CliError::Abort`]; the files in
/// `out_dir` are left as of the last completed epoch.
pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> Result<RunManifest, CliError> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let data = load_store(&args.data)?;
    let env = EnvSpec::for_env(data.env);
    let dir = &args.out_dir;
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let checkpoint = dir.join(CHECKPOINT_FILE);
    let bundle_path = dir.join(BUNDLE_FILE);
    let updates_csv = dir.join(UPDATES_FILE);
    let epochs_csv = dir.join(EPOCHS_FILE);
    let started = unix_now();

    let mut trainer = if args.resume {
        let bundle = PolicyBundle::load(&checkpoint)?;
        if bundle.env != data.env {
            return Err(CliError::Usage(format!(
                "checkpoint was trained on {}, dataset is for {}",
                bundle.env, data.env
            )));
        }
        let state = bundle
            .train_state()
            .ok_or_else(|| CliError::Usage(format!("{} has no resume state", checkpoint.display())))?;
        let metrics = MetricsLog::read_csvs(&updates_csv, &epochs_csv)?;
        if metrics.updates.last().map_or(0, |r| r.update_idx) != state.update {
            return Err(CliError::Format(format!(
                "{} does not end at the checkpoint's update {}",
                updates_csv.display(),
                state.update
            )));
        }
        say(out, format_args!("resuming at epoch {} update {}", state.epoch, state.update))?;
        Trainer::resume(config.clone(), env, &data, state, metrics)?
    } else {
        Trainer::new(config.clone(), env, &data)?
    };

    let env_id = data.env;
    let result = trainer.run(|t, rec| {
        PolicyBundle::from_state(env_id, &t.config, &t.state())
            .save(&checkpoint)
            .map_err(|e| TrainError::Io {
                path: checkpoint.display().to_string(),
                message: e.to_string(),
            })?;
        t.metrics.write_csvs(&updates_csv, &epochs_csv)?;
        let last = t.metrics.updates.last();
        let _ = writeln!(
            out,
            "epoch {:>3}  update {:>6}  l_total {:.5}  return {:.3}  success {:.2}  score {:.1}",
            rec.epoch,
            t.update,
            last.map_or(f64::NAN, |r| r.l_total),
            rec.mean_return,
            rec.success_rate,
            rec.norm_score
        );
        Ok(())
    });
    if let Err(e) = result {
        let e = CliError::from(e);
        if let CliError::Abort(m) = &e {
            let _ = if checkpoint.exists() {
                writeln!(out, "non-finite loss, stopping; last checkpoint kept at {}", checkpoint.display())
            } else {
                writeln!(out, "non-finite loss before the first checkpoint, stopping")
            };
            return Err(CliError::Abort(m.clone()));
        }
        return Err(e);
    }

    let mut final_bundle = PolicyBundle::from_state(env_id, &config, &trainer.state());
    final_bundle.resume = None;
    final_bundle.save(&bundle_path)?;
    PolicyBundle::from_state(env_id, &config, &trainer.state()).save(&checkpoint)?;
    trainer.metrics.write_csvs(&updates_csv, &epochs_csv)?;

    let manifest = RunManifest {
        run_id: RunManifest::run_id(&config, started),
        started_unix: started,
        finished_unix: unix_now(),
        config_hash: config_hash(&config),
        seed: config.seed,
        config_path: args.config.clone().unwrap_or_default(),
        dataset_path: args.data.clone(),
        bundle_path: bundle_path.clone(),
        checkpoint_path: checkpoint,
        updates_csv,
        epochs_csv,
        resumed_from: args.resume.then(|| dir.join(CHECKPOINT_FILE)),
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    fs::write(&manifest_path, json + "\n").map_err(|e| CliError::io(&manifest_path, e))?;
    say(out, format_args!("wrote {}", bundle_path.display()))?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalArgs {
    pub bundle: PathBuf,
    /// Defaults to the bundle's environment.
    pub env: Option<EnvId>,
    pub episodes: usize,
    pub eta: f64,
    pub seed: u64,
    pub mode: EvalMode,
    pub out_csv: Option<PathBuf>,
}

/// Evaluates a bundle; returns the per-episode CSV text.
pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> Result<String, CliError> {
    let bundle = PolicyBundle::load(&args.bundle)?;
    let env = EnvSpec::for_env(args.env.unwrap_or(bundle.env));
    let (ds, da) = (bundle.policy.state_dim(), bundle.policy.action_dim());
    if (ds, da) != (env.state_dim, env.action_dim) {
        return Err(CliError::Usage(format!(
            "bundle expects state dim {ds} and action dim {da}, environment {} has state dim {} and action dim {}",
            env.id, env.state_dim, env.action_dim
        )));
    }
    let cfg = EvalConfig {
        rtg_scale: args.eta,
        episodes: args.episodes,
        seed: args.seed,
        mode: args.mode,
    };
    let summary = evaluate(&bundle.policy, &env, &cfg)?;
    let mut csv = String::from(EVAL_CSV_HEADER);
    csv.push('\n');
    for (i, ep) in summary.episodes.iter().enumerate() {
        let norm = normalized_score(ep.total_return, &env)?;
        csv.push_str(&format!(
            "{i},{},{norm},{},{},{}\n",
            ep.total_return,
            u8::from(ep.success),
            ep.initial_rtg(),
            ep.len()
        ));
    }
    if let Some(p) = &args.out_csv {
        fs::write(p, &csv).map_err(|e| CliError::io(p, e))?;
    }
    say(out, format_args!("env: {}  mode: {}  episodes: {}  eta: {}  seed: {}", env.id, args.mode, args.episodes, args.eta, args.seed))?;
    say(out, format_args!("return: {:.4} ± {:.4}", summary.mean_return, summary.std_return))?;
    say(out, format_args!("success rate: {:.4}", summary.success_rate))?;
    say(out, format_args!("normalized score: {:.2}", summary.normalized_score))?;
    Ok(csv)
}

/// Parses `op` or `op:factor` (factor defaults to 1.5).
pub fn parse_fault(s: &str) -> Result<(OpKind, f64), CliError> {
    let (name, factor) = match s.split_once(':') {
        Some((n, f)) => (
            n,
            f.parse::<f64>()
                .map_err(|_| CliError::Usage(format!("bad fault factor {f:?}")))?,
        ),
        None => (s, 1.5),
    };
    let kind = OpKind::ALL
        .into_iter()
        .find(|k| k.name() == name)
        .ok_or_else(|| CliError::Usage(format!("unknown op {name:?}")))?;
    Ok((kind, factor))
}

pub fn cmd_check(
    scope: CheckScope,
    fault: Option<(OpKind, f64)>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let report = run_checks(scope, fault);
    for o in &report.outcomes {
        say(out, format_args!("{o}"))?;
    }
    let failed = report.failures().count();
    let worst = report
        .worst()
        .map(|w| format!("{}: {:.3e} (tol {:.0e}) {}", w.name, w.metric, w.tolerance, w.detail))
        .unwrap_or_default();
    say(out, format_args!("{} checks, {failed} failed; worst: {worst}", report.outcomes.len()))?;
    if failed > 0 {
        return Err(CliError::Check(worst));
    }
    Ok(())
}

/// Renders `csv` to `svg`. Nothing is written unless the CSV parses.
pub fn cmd_plot(csv: &Path, svg: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let text = fs::read_to_string(csv).map_err(|e| CliError::io(csv, e))?;
    let table = parse_table(&text).map_err(|e| match e {
        CliError::Format(m) => CliError::Format(format!("{}: {m}", csv.display())),
        other => other,
    })?;
    let title = csv
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    fs::write(svg, render_svg(&table, &title)).map_err(|e| CliError::io(svg, e))?;
    say(out, format_args!("wrote {} ({} rows)", svg.display(), table.rows.len()))
}
