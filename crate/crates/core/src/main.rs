use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use drdt3::cli::{
    cmd_check, cmd_eval, cmd_gen_data, cmd_plot, cmd_train, parse_fault, CheckScope, CliError,
    EvalArgs, GenDataArgs, TrainArgs,
};
use drdt3::envdata::{DatasetTier, EnvId, EvalMode};

#[derive(Parser)]
#[command(name = "drdt3", version, about = "Offline RL with a diffusion-refined decision TTT policy")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an offline dataset.
    GenData {
        #[arg(long, value_parser = parse_env)]
        env: EnvId,
        #[arg(long, value_parser = parse_tier)]
        tier: DatasetTier,
        #[arg(long, default_value_t = 200)]
        n_traj: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a policy on a dataset.
    Train {
        /// Flat `key = value` file; omitted keys take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Output directory for bundles, metrics and the manifest.
        #[arg(long)]
        out: PathBuf,
        /// Overrides `seed` from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Roll out a trained policy.
    Eval {
        #[arg(long)]
        bundle: PathBuf,
        /// Defaults to the environment the bundle was trained on.
        #[arg(long, value_parser = parse_env)]
        env: Option<EnvId>,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        /// Target-return scale applied to the best dataset return.
        #[arg(long, default_value_t = 1.0)]
        eta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "drdt3", value_parser = parse_mode)]
        mode: EvalMode,
        /// Per-episode CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run gradient and invariant checks.
    Check {
        #[arg(long, default_value = "all", value_parser = parse_scope)]
        scope: CheckScope,
        /// Scale one op's adjoint (`op[:factor]`); the checks should then fail.
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Plot a metrics CSV as an SVG learning curve.
    Plot {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_env(s: &str) -> Result<EnvId, String> {
    s.parse().map_err(|e: drdt3::envdata::EnvDataError| e.to_string())
}

fn parse_tier(s: &str) -> Result<DatasetTier, String> {
    s.parse().map_err(|e: drdt3::envdata::EnvDataError| e.to_string())
}

fn parse_mode(s: &str) -> Result<EvalMode, String> {
    s.parse().map_err(|e: drdt3::envdata::EnvDataError| e.to_string())
}

fn parse_scope(s: &str) -> Result<CheckScope, String> {
    s.parse()
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut out = io::stdout().lock();
    match cli.command {
        Command::GenData { env, tier, n_traj, seed, out: path } => cmd_gen_data(
            &GenDataArgs { env, tier, n_traj, seed, out: path },
            &mut out,
        ),
        Command::Train { config, data, out: out_dir, seed, resume } => cmd_train(
            &TrainArgs { config, data, out_dir, seed, resume },
            &mut out,
        )
        .map(|_| ()),
        Command::Eval { bundle, env, episodes, eta, seed, mode, out: out_csv } => cmd_eval(
            &EvalArgs { bundle, env, episodes, eta, seed, mode, out_csv },
            &mut out,
        )
        .map(|_| ()),
        Command::Check { scope, inject_fault } => {
            let fault = inject_fault.as_deref().map(parse_fault).transpose()?;
            cmd_check(scope, fault, &mut out)
        }
        Command::Plot { csv, out: svg } => cmd_plot(&csv, &svg, &mut out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.exit_code();
            let err = anyhow::Error::new(e).context("drdt3 failed");
            eprintln!("{err:#}");
            ExitCode::from(code as u8)
        }
    }
}
