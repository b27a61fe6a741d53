use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sal_core::report::read_metrics;
use sal_core::train::Checkpoint;

const DATA_TOML: &str = "tasks = [\"pick-red\", \"place-blue-left\"]\n[sim]\nimage_size = 16\n";
const TRAIN_TOML: &str = "horizon = 4\nsteps = 12\nbatch = 4\n\
[encoder]\nimage_size = 16\npatch = 4\nchannels = 8\ndepth = 1\n\
[policy]\nhidden = 16\ninstr_dim = 4\n[invdyn]\ndec_dim = 8\nhidden = 16\n";

fn sal(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sal"))
        .args(args)
        .current_dir(dir)
        .env("SAL_DETERMINISTIC", "1")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = sal(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("data.toml"), DATA_TOML).unwrap();
    fs::write(dir.path().join("train.toml"), TRAIN_TOML).unwrap();
    ok(dir.path(), &["gen-data", "--n", "8", "--seed", "3", "--config", "data.toml", "--out", "d"]);
    dir
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = sal(Path::new("."), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(sal(Path::new("."), &["train", "--data", "x"]).status.code(), Some(2));
}

#[test]
fn failed_precondition_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = sal(dir.path(), &["train", "--data", "missing", "--out", "t"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing"));
}

#[test]
fn verify_passes_and_echoes_config() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("v.toml"),
        "ptr_samples = 200\ngrad_trials = 1\noracle_instances = 3\noracle_n = 30\npose_rollouts = 20\n",
    )
    .unwrap();
    let out = sal(dir.path(), &["verify", "--config", "v.toml", "--seed", "4", "--out", "v"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.lines().count() >= 9 && text.lines().all(|l| l.starts_with("PASS")), "{text}");
    let echo = fs::read_to_string(dir.path().join("v/config.toml")).unwrap();
    assert!(echo.contains("seed = 4") && echo.contains("ptr_samples = 200"));
    assert!(dir.path().join("v/VERSION").exists());
}

#[test]
fn zero_weight_aux_trains_the_same_policy_as_bc() {
    let dir = workspace();
    let p = dir.path();
    fs::write(p.join("zero.toml"), format!("lambda_inv = 0.0\n{TRAIN_TOML}")).unwrap();
    ok(p, &["train", "--data", "d", "--config", "zero.toml", "--variant", "bc", "--seed", "2", "--out", "bc"]);
    ok(p, &["train", "--data", "d", "--config", "zero.toml", "--variant", "aux", "--seed", "2", "--out", "aux"]);
    let bc = Checkpoint::load(&p.join("bc/checkpoint.sal")).unwrap();
    let aux = Checkpoint::load(&p.join("aux/checkpoint.sal")).unwrap();
    assert_eq!(bc.encoder, aux.encoder);
    assert_eq!(bc.policy, aux.policy);
    assert!(bc.invdyn.is_none() && aux.invdyn.is_some());
    assert!(!fs::read(p.join("bc/log.csv")).unwrap().is_empty());
}

#[test]
fn echoed_config_reproduces_outputs_bit_identically() {
    let dir = workspace();
    let p = dir.path();
    ok(p, &["train", "--data", "d", "--config", "train.toml", "--variant", "aux-ptr", "--seed", "7", "--out", "a"]);
    ok(p, &["train", "--data", "d", "--config", "a/config.toml", "--out", "b"]);
    for f in ["checkpoint.sal", "log.csv", "config.toml", "VERSION"] {
        assert_eq!(fs::read(p.join("a").join(f)).unwrap(), fs::read(p.join("b").join(f)).unwrap(), "{f}");
    }
    // and the data directory regenerates identically from its echo
    ok(p, &["gen-data", "--config", "d/config.toml", "--out", "d2"]);
    for f in fs::read_dir(p.join("d")).unwrap() {
        let name = f.unwrap().file_name();
        assert_eq!(fs::read(p.join("d").join(&name)).unwrap(), fs::read(p.join("d2").join(&name)).unwrap());
    }
}

#[test]
fn report_has_one_row_per_encoder_and_metric() {
    let dir = workspace();
    let p = dir.path();
    fs::write(
        p.join("bc.toml"),
        "steps = 20\neval_every = 10\nn_rollouts = 2\nepisode_cap = 10\n[probe]\nd_proj = 4\nd_hidden = 8\n",
    )
    .unwrap();
    ok(p, &["train", "--data", "d", "--config", "train.toml", "--variant", "bc", "--out", "bc"]);
    ok(p, &["train", "--data", "d", "--config", "train.toml", "--variant", "aux-ptr", "--out", "ptr"]);
    ok(p, &["probe-bc", "--ckpt", "bc", "--data", "d", "--config", "bc.toml", "--out", "pb"]);
    ok(p, &["probe-state", "--ckpt", "ptr/checkpoint.sal", "--data", "d", "--config", "bc.toml", "--out", "ps"]);
    ok(p, &["align", "--ckpt", "bc", "ptr", "--random", "--data", "d", "--out", "al"]);
    ok(p, &["report", "--in", "bc", "ptr", "pb", "ps", "al", "--out", "rep"]);

    let rows = read_metrics(fs::File::open(p.join("rep/metrics.csv")).unwrap()).unwrap();
    let mut keys: Vec<(String, String)> = rows.iter().map(|r| (r.encoder.clone(), r.metric.clone())).collect();
    let n = keys.len();
    keys.dedup();
    assert_eq!(keys.len(), n);
    for k in [
        ("bc", "success_rate"),
        ("bc", "bc_val_loss"),
        ("ptr", "state_val_loss"),
        ("random-init", "rho_partial/cosine"),
        ("ptr", "rho_partial/scale"),
    ] {
        assert!(keys.contains(&(k.0.into(), k.1.into())), "missing {k:?}");
    }
    for f in ["loss_curves.svg", "alignment.svg", "alignment.csv", "results.csv", "config.toml", "VERSION"] {
        assert!(p.join("rep").join(f).exists(), "{f}");
    }
    let out = sal(p, &["report", "--in", "d", "--out", "rep2"]);
    assert_eq!(out.status.code(), Some(1));
}
