use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use drdt3::cli::{
    cmd_train, PolicyBundle, TrainArgs, BUNDLE_FILE, CHECKPOINT_FILE, EPOCHS_FILE, UPDATES_FILE,
};

fn drdt3(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drdt3"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY: &str = "embed_dim = 8\nbatch_size = 4\nepochs = 2\nupdates_per_epoch = 4\n\
noise_hidden_dim = 8\nnoise_expansion = 2\ntime_embed_dim = 4\neval_episodes = 2\n";

fn gen(dir: &Path, env: &str) -> std::path::PathBuf {
    let data = dir.join(format!("{env}.bin"));
    let o = drdt3(&[
        "gen-data", "--env", env, "--tier", "medium", "--n-traj", "12", "--seed", "3", "--out",
        p(&data),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    data
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(drdt3(&["--help"]).status.code(), Some(0));
    assert_eq!(drdt3(&["--version"]).status.code(), Some(0));
    assert_eq!(drdt3(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn stitch_dataset_never_reaches_goal_from_start() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("s.bin");
    let o = drdt3(&[
        "gen-data", "--env", "stitch-chain", "--tier", "stitch", "--n-traj", "200", "--seed", "7",
        "--out", p(&data),
    ]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("best return: 0\n"), "{text}");
    assert!(text.contains("count: 200"));
}

#[test]
fn gen_data_rejects_zero_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let o = drdt3(&[
        "gen-data", "--env", "point-reach", "--tier", "medium", "--n-traj", "0", "--out",
        p(&dir.path().join("x.bin")),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn train_eval_plot_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "point-reach");
    let cfg = dir.path().join("tiny.cfg");
    fs::write(&cfg, TINY).unwrap();
    let run = dir.path().join("run");
    let o = drdt3(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&run)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in [BUNDLE_FILE, CHECKPOINT_FILE, UPDATES_FILE, EPOCHS_FILE, "manifest.json"] {
        assert!(run.join(f).exists(), "missing {f}");
    }

    let csv = dir.path().join("eval.csv");
    let o = drdt3(&[
        "eval", "--bundle", p(&run.join(BUNDLE_FILE)), "--episodes", "3", "--out", p(&csv),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("normalized score"));
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 4);

    let o = drdt3(&["eval", "--bundle", p(&run.join(BUNDLE_FILE)), "--env", "stitch-chain"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("state dim 4"), "{}", stderr(&o));

    let svg = dir.path().join("curve.svg");
    let o = drdt3(&["plot", "--csv", p(&run.join(UPDATES_FILE)), "--out", p(&svg)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(fs::read_to_string(&svg).unwrap().starts_with("<svg"));

    let empty = dir.path().join("empty.csv");
    fs::write(&empty, "x,y\n").unwrap();
    let bad_svg = dir.path().join("bad.svg");
    let o = drdt3(&["plot", "--csv", p(&empty), "--out", p(&bad_svg)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!bad_svg.exists());
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "point-reach");
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "zeta = 0.1\nmystery = 3\n").unwrap();
    let o = drdt3(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&dir.path().join("r"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("mystery"));
}

#[test]
fn non_finite_loss_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "point-reach");
    let cfg = dir.path().join("nan.cfg");
    fs::write(&cfg, format!("{TINY}learning_rate = 1e300\ngrad_clip = 1e300\n")).unwrap();
    let o = drdt3(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&dir.path().join("r"))]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn check_exit_codes() {
    assert_eq!(drdt3(&["check", "--scope", "numerics"]).status.code(), Some(0));
    let o = drdt3(&["check", "--scope", "numerics", "--inject-fault", "matmul:2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("grad matmul"));
    assert_eq!(drdt3(&["check", "--inject-fault", "nope"]).status.code(), Some(1));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "stitch-chain");
    let write_cfg = |name: &str, epochs: usize| {
        let path = dir.path().join(name);
        fs::write(&path, TINY.replace("epochs = 2", &format!("epochs = {epochs}"))).unwrap();
        path
    };
    let three = write_cfg("three.cfg", 3);
    let two = write_cfg("two.cfg", 2);
    let args = |cfg: &Path, out: &Path, resume| TrainArgs {
        config: Some(cfg.to_path_buf()),
        data: data.clone(),
        out_dir: out.to_path_buf(),
        seed: Some(9),
        resume,
    };
    let straight = dir.path().join("straight");
    let split = dir.path().join("split");
    cmd_train(&args(&three, &straight, false), &mut std::io::sink()).unwrap();
    cmd_train(&args(&two, &split, false), &mut std::io::sink()).unwrap();
    let mut log = Vec::new();
    cmd_train(&args(&three, &split, true), &mut log).unwrap();
    assert!(String::from_utf8(log).unwrap().starts_with("resuming at epoch 2"));

    for f in [UPDATES_FILE, EPOCHS_FILE, BUNDLE_FILE] {
        assert_eq!(fs::read(straight.join(f)).unwrap(), fs::read(split.join(f)).unwrap(), "{f} differs");
    }
    assert!(PolicyBundle::load(&split.join(BUNDLE_FILE)).unwrap().resume.is_none());
    assert!(PolicyBundle::load(&split.join(CHECKPOINT_FILE)).unwrap().resume.is_some());
}
