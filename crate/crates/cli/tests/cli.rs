use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn repulse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_repulse"))
        .args(args)
        .env_remove("REPULSE_THREADS")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const REGRESSION: &str = r#"
task = "toy-regression"
seed = 4

[data]
generator = "regression-toy"
n = 20

[model]
mode = "multi-head"
widths = [1, 16, 16]
head = [16, 1]
particles = 6

[pretrain]
step_size = 1e-4
steps = 100
batch_size = 16
momentum = 0.9

[train]
step_size = 1e-4
steps = 60
batch_size = 16
repulsion_batch_size = 32

[repulsion]
source = "uniform-domain"
bounds = [[-6.0, 6.0]]

[metrics]
grid = { low = -6.0, high = 6.0, points = 50 }
"#;

const MOONS_ONE_PARTICLE: &str = r#"
task = "toy-classification"
seed = 1

[data]
generator = "two-moons"
n = 64
test_n = 50
far_box = { inner = 3.0, outer = 6.0, n = 30 }

[model]
mode = "full-ensemble"
widths = [2, 8, 2]
particles = 1

[train]
method = "plain"
step_size = 1e-3
steps = 10
batch_size = 32
"#;

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(repulse(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(repulse(&["info", "--checkpoint", "x", "--bogus"]).status.code(), Some(2));
    assert_eq!(repulse(&[]).status.code(), Some(2));
    assert_eq!(repulse(&["--help"]).status.code(), Some(0));
}

#[test]
fn config_errors_exit_3_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let typo = write_config(dir.path(), "typo.toml", &REGRESSION.replace("particles = 6", "particels = 6"));
    let o = repulse(&["toy-regression", "--config", &typo, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with("error[config]:"), "{err}");
    // nothing was computed
    assert!(!dir.path().join("bands.svg").exists());

    let missing = repulse(&["toy-regression", "--config", "/nonexistent/cfg.toml"]);
    assert_eq!(missing.status.code(), Some(3));

    let good = write_config(dir.path(), "good.toml", REGRESSION);
    let wrong_task = repulse(&["active-learn", "--config", &good]);
    assert_eq!(wrong_task.status.code(), Some(3));

    let ck = dir.path().join("bad.rpve");
    fs::write(&ck, b"RPVEgarbage").unwrap();
    let o = repulse(&["info", "--checkpoint", ck.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn numeric_failure_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let text = REGRESSION.replace("[pretrain]\nstep_size = 1e-4", "[pretrain]\nstep_size = 1e3");
    let cfg = write_config(dir.path(), "boom.toml", &text);
    let o = repulse(&["toy-regression", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).starts_with("error[runtime]:"));
}

#[test]
fn toy_regression_is_deterministic_and_info_reads_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "toy.toml", REGRESSION);
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let o = repulse(&["toy-regression", "--config", &cfg, "--out", out.to_str().unwrap(), "--threads", "2"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["bands.svg", "particles.csv", "trainlog.csv", "model.rpve"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, fs::read(dir.path().join("b").join(f)).unwrap(), "{f} differs");
    }
    let svg = fs::read_to_string(dir.path().join("a/bands.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 7);
    assert_eq!(svg.matches("<path").count(), 1);

    let ck = dir.path().join("a/model.rpve");
    let o = repulse(&["info", "--checkpoint", ck.to_str().unwrap()]);
    assert!(o.status.success());
    let line = String::from_utf8(o.stdout).unwrap();
    assert!(line.starts_with("mode=multi-head n=6 base=[1,16,16] head=[16,1]"), "{line}");
    assert!(line.contains("step=60"), "{line}");

    // a different seed changes the result
    let out = dir.path().join("c");
    let o = repulse(&["toy-regression", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "5"]);
    assert!(o.status.success());
    assert_ne!(
        fs::read(dir.path().join("a/particles.csv")).unwrap(),
        fs::read(out.join("particles.csv")).unwrap()
    );
}

#[test]
fn single_particle_ood_eval_gives_chance_epistemic_auroc() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "moons.toml", MOONS_ONE_PARTICLE);
    let ck = dir.path().join("one.rpve");
    let train_out = dir.path().join("train");
    let o = repulse(&[
        "toy-classification",
        "--config",
        &cfg,
        "--out",
        train_out.to_str().unwrap(),
        "--checkpoint",
        ck.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let eval_out = dir.path().join("eval");
    let o = repulse(&[
        "ood-eval",
        "--config",
        &cfg,
        "--checkpoint",
        ck.to_str().unwrap(),
        "--out",
        eval_out.to_str().unwrap(),
        "--percent",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(eval_out.join("ood_auroc.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "auroc_epistemic").unwrap();
    let rows: Vec<&str> = lines.collect();
    assert!(!rows.is_empty());
    for row in rows {
        assert_eq!(row.split(',').nth(col).unwrap().parse::<f64>().unwrap(), 0.5);
    }
}

#[test]
fn bad_thread_env_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "toy.toml", REGRESSION);
    let o = Command::new(env!("CARGO_BIN_EXE_repulse"))
        .args(["toy-regression", "--config", &cfg, "--out", dir.path().to_str().unwrap()])
        .env("REPULSE_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3));
}
