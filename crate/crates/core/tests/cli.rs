use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_latentode");

fn run(out: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env("LATENTODE_OUT", out)
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = run(out, args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn code(out: &Path, args: &[&str]) -> i32 {
    run(out, args).status.code().expect("exit code")
}

fn labels(dir: &Path) -> Vec<String> {
    let meta = fs::read_to_string(dir.join("meta.csv")).unwrap();
    meta.lines().skip(2).map(|l| l.split(',').nth(1).unwrap().to_string()).collect()
}

fn log_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path).unwrap().lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn spiral_generation_is_balanced_and_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        ok(dir.path(), &["generate", "--kind", "spiral", "--n", "500", "--seed", "1"]);
    }
    let data = a.path().join("data/spiral");
    let l = labels(&data);
    assert_eq!(l.len(), 500);
    assert_eq!(l.iter().filter(|s| *s == "ccw").count(), 250);
    assert_eq!(l.iter().filter(|s| *s == "cw").count(), 250);
    for f in ["meta.csv", "times.csv", "values.csv", "manifest.toml"] {
        assert_eq!(fs::read(data.join(f)).unwrap(), fs::read(b.path().join("data/spiral").join(f)).unwrap(), "{f}");
    }
    let manifest = fs::read_to_string(data.join("manifest.toml")).unwrap();
    assert!(manifest.contains("seed = 1") && manifest.contains("generator = \"latentode "));
}

#[test]
fn spring_mix_has_three_labels() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["generate", "--kind", "spring", "--mix", "1,2,3", "--n", "5000"]);
    let mut l = labels(&dir.path().join("data/spring123"));
    assert_eq!(l.len(), 5000);
    l.sort();
    l.dedup();
    assert_eq!(l, ["spring1", "spring2", "spring3"]);
}

#[test]
fn train_resume_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(out, &["generate", "--kind", "spring", "--mix", "1", "--n", "20", "--seed", "2"]);
    ok(out, &["train", "--model", "node", "--data", "spring1", "--preset", "desk", "--epochs", "200", "--seed", "3"]);
    let node_log = out.join("runs/spring1/node/train_log.csv");
    let rows = log_rows(&node_log);
    assert_eq!(rows.len(), 200);
    assert!(rows.iter().enumerate().all(|(i, r)| r[0] == i.to_string()));

    ok(out, &["train", "--model", "baseline", "--data", "spring1", "--preset", "desk", "--epochs", "200", "--lr", "0.005"]);
    let base = log_rows(&out.join("runs/spring1/baseline/train_log.csv"));
    let loss: Vec<f64> = base.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(loss.iter().all(|&l| l > 0.0 && l < 2.0), "RMSE-scale losses");
    let head = loss[..20].iter().sum::<f64>() / 20.0;
    let tail = loss[180..].iter().sum::<f64>() / 20.0;
    assert!(tail < head, "{head} -> {tail}");

    ok(out, &["train", "--data", "spring1", "--resume", out.join("runs/spring1/node/checkpoint.lode").to_str().unwrap(), "--epochs", "205"]);
    let rows = log_rows(&node_log);
    assert_eq!(rows.len(), 205);
    assert!(rows.iter().enumerate().all(|(i, r)| r[0] == i.to_string()));

    ok(out, &["eval", "--rmse", "--experiments", "spring1"]);
    let table = fs::read_to_string(out.join("eval/rmse_table.csv")).unwrap();
    assert_eq!(table.lines().count(), 2);
    assert!(table.lines().nth(1).unwrap().starts_with("spring1,"));

    ok(out, &["eval", "--reconstruct", "--extrapolate", "-0.5,1.5", "--experiments", "spring1"]);
    let recon = fs::read_to_string(out.join("eval/recon_spring1_0.csv")).unwrap();
    assert!(recon.starts_with("t,truth_x,truth_y,recon_x,recon_y,region"));
    assert!(recon.contains(",observed") && recon.contains(",extrapolated"));

    ok(out, &["eval", "--timing"]);
    let timing = fs::read_to_string(out.join("eval/timing.csv")).unwrap();
    assert!(timing.starts_with("experiment,node,baseline\nspring1,"));
}

#[test]
fn latent_export_for_three_springs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(out, &["generate", "--kind", "spring", "--mix", "1,2,3", "--n", "30", "--subsample", "30"]);
    ok(out, &["train", "--model", "node", "--data", "spring123", "--preset", "desk", "--epochs", "1"]);
    ok(out, &["eval", "--latent", "--experiments", "spring123"]);
    let csv = fs::read_to_string(out.join("eval/latent_spring123.csv")).unwrap();
    assert!(csv.starts_with("# explained_variance="));
    let mut l: Vec<&str> = csv.lines().skip(2).map(|r| r.rsplit(',').next().unwrap()).collect();
    l.sort();
    l.dedup();
    assert_eq!(l, ["spring1", "spring2", "spring3"]);
}

#[test]
fn resolved_config_reproduces_the_run() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    ok(a.path(), &["generate", "--kind", "spring", "--mix", "1,3", "--n", "20", "--seed", "4", "--subsample", "40"]);
    ok(a.path(), &["train", "--model", "node", "--data", "spring13", "--preset", "desk", "--epochs", "3", "--seed", "9", "--batch-size", "5"]);
    let config = a.path().join("runs/spring13/node/config.toml");
    let cfg = config.to_str().unwrap();
    ok(b.path(), &["generate", "--config", cfg]);
    ok(b.path(), &["train", "--config", cfg]);
    for f in ["data/spring13/values.csv", "data/spring13/meta.csv", "runs/spring13/node/checkpoint.lode", "runs/spring13/node/config.toml"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let losses = |p: &Path| log_rows(&p.join("runs/spring13/node/train_log.csv")).into_iter().map(|r| r[..3].to_vec()).collect::<Vec<_>>();
    assert_eq!(losses(a.path()), losses(b.path()));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    assert_eq!(code(out, &["--help"]), 0);
    assert_eq!(code(out, &["frobnicate"]), 2);
    assert_eq!(code(out, &["generate"]), 2);
    assert_eq!(code(out, &["generate", "--kind", "spiral", "--n", "7"]), 2);
    assert_eq!(code(out, &["generate", "--kind", "spring", "--mix", "4"]), 2);
    assert_eq!(code(out, &["train", "--model", "node", "--data", "absent"]), 2);
    assert_eq!(code(out, &["generate", "--kind", "spring", "--mix", "2", "--n", "10", "--subsample", "20"]), 0);
    assert_eq!(code(out, &["eval", "--rmse", "--experiments", "spring2"]), 2);
    assert_eq!(code(out, &["train", "--model", "node", "--data", "spring2", "--preset", "huge"]), 2);
    assert_eq!(code(out, &["eval", "--extrapolate", "-0.5"]), 2);

    let bad = out.join("bad.toml");
    fs::write(&bad, "experiment = \"spring2\"\n[train]\nepochs = 1\nlearning_rate = 0.1\n").unwrap();
    assert_eq!(code(out, &["train", "--config", bad.to_str().unwrap(), "--model", "node"]), 2);
    fs::write(&bad, "experiment = \"spring2\"\n[model]\nkind = \"node\"\nhidden = 3\n").unwrap();
    assert_eq!(code(out, &["train", "--config", bad.to_str().unwrap()]), 2);

    assert_eq!(code(out, &["train", "--model", "node", "--data", "spring2", "--preset", "desk", "--epochs", "1"]), 0);
    let ckpt = out.join("runs/spring2/node/checkpoint.lode");
    let mut bytes = fs::read(&ckpt).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x55;
    let corrupt = out.join("corrupt.lode");
    fs::write(&corrupt, bytes).unwrap();
    let o = run(out, &["train", "--data", "spring2", "--resume", corrupt.to_str().unwrap(), "--epochs", "2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("checksum"));

    let blocked = out.join("blocked");
    fs::write(&blocked, "a file, not a directory").unwrap();
    assert_eq!(code(&blocked, &["generate", "--kind", "spring", "--mix", "1", "--n", "10"]), 1);
}

#[test]
fn out_flag_overrides_environment() {
    let env_dir = tempfile::tempdir().unwrap();
    let flag_dir = tempfile::tempdir().unwrap();
    ok(env_dir.path(), &["generate", "--kind", "solar", "--n", "10", "--out", flag_dir.path().to_str().unwrap()]);
    assert!(flag_dir.path().join("data/solar/values.csv").is_file());
    assert!(!env_dir.path().join("data").exists());
}
