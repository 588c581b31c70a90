use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ratio-reject"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn gen_task(dir: &Path, seed: &str) -> String {
    let path = dir.join(format!("task{seed}.json"));
    let out = run(&[
        "gen",
        "--seed",
        seed,
        "--n-inputs",
        "6",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    path.to_str().unwrap().to_string()
}

#[test]
fn gen_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = fs::read_to_string(gen_task(dir.path(), "5")).unwrap();
    let b = run(&["gen", "--seed", "5", "--n-inputs", "6"]);
    assert_eq!(String::from_utf8(b.stdout).unwrap().trim_end(), a);
}

#[test]
fn sweep_writes_csv_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let task = gen_task(dir.path(), "1");
    let out = dir.path().join("sweep.csv");
    let status = run(&[
        "sweep",
        &task,
        "--loss",
        "zero-one",
        "--lambda",
        "2",
        "--rejector",
        "joint",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(status.status.success());
    let csv = fs::read_to_string(&out).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "tau,kappa,rejection_rate,selective_risk,n_rejected,mask_hash"
    );
    assert!(csv.lines().count() > 2);
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("sweep.meta.json")).unwrap())
            .unwrap();
    assert_eq!(meta["rejector"], "joint");
    assert_eq!(meta["loss"], "zero-one");

    let again = dir.path().join("again.csv");
    run(&[
        "sweep",
        &task,
        "--loss",
        "zero-one",
        "--lambda",
        "2",
        "--rejector",
        "joint",
        "--out",
        again.to_str().unwrap(),
    ]);
    assert_eq!(fs::read(&out).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn every_rejector_sweeps() {
    let dir = tempfile::tempdir().unwrap();
    let task = gen_task(dir.path(), "2");
    for rejector in ["chow", "marginal", "joint", "bhatta", "kl"] {
        let out = run(&["sweep", &task, "--lambda", "3", "--rejector", rejector]);
        assert!(
            out.status.success(),
            "{rejector}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}

#[test]
fn cost_selects_one_operating_point() {
    let dir = tempfile::tempdir().unwrap();
    let task = gen_task(dir.path(), "3");
    let out = run(&["sweep", &task, "--rejector", "chow", "--cost", "0.4"]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 2);
    let out = run(&["sweep", &task, "--rejector", "joint", "--cost", "0.4"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn curve_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    let task = gen_task(dir.path(), "4");
    let out = run(&["curve", &task, "--lambda", "2"]);
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout)
        .unwrap()
        .starts_with("tau,coverage,selective_risk,accepted_risk"));
    let out = run(&["compare", &task, "--lambda", "2", "--loss", "modified-log"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("tau,matched_tau,both,only_marginal,only_joint,neither"));
    for line in text.lines().skip(1) {
        assert_eq!(line.split(',').nth(4), Some("0"));
    }
}

#[test]
fn reject_emits_json() {
    let dir = tempfile::tempdir().unwrap();
    let task = gen_task(dir.path(), "6");
    let out = run(&["reject", &task, "--rejector", "marginal", "--tau", "1.0"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["kind"], "marginal");
    assert_eq!(v["mask"].as_array().unwrap().len(), 6);
    assert_eq!(run(&["reject", &task]).status.code(), Some(2));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let task = gen_task(dir.path(), "7");
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        "loss = \"log\"\nlambda = 0.5\nrejector = \"bhatta\"\n",
    )
    .unwrap();
    // bhatta needs lambda > 1, so the file alone is invalid
    assert_eq!(
        run(&["sweep", &task, "--config", cfg.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
    let out = run(&[
        "sweep",
        &task,
        "--config",
        cfg.to_str().unwrap(),
        "--lambda",
        "4",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    fs::write(&cfg, "bogus = 1\n").unwrap();
    assert_eq!(
        run(&["sweep", &task, "--config", cfg.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn tau_grid_file() {
    let dir = tempfile::tempdir().unwrap();
    let task = gen_task(dir.path(), "8");
    let grid = dir.path().join("grid.txt");
    fs::write(&grid, "0.0\n0.5, 1.0\n2.0\n").unwrap();
    let out = run(&["sweep", &task, "--tau-grid", grid.to_str().unwrap()]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.lines().nth(1).unwrap().starts_with("0.0,"));
    fs::write(&grid, "1.0 0.5\n").unwrap();
    assert_eq!(
        run(&["sweep", &task, "--tau-grid", grid.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn invalid_input_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let task = gen_task(dir.path(), "9");
    assert_eq!(
        run(&["sweep", &task, "--loss", "hinge"]).status.code(),
        Some(2)
    );
    assert_eq!(
        run(&["sweep", &task, "--rejector", "oracle"]).status.code(),
        Some(2)
    );
    assert_eq!(
        run(&["sweep", &task, "--lambda", "-1"]).status.code(),
        Some(2)
    );
    assert_eq!(
        run(&["sweep", "/nonexistent/task.json"]).status.code(),
        Some(2)
    );
    assert_eq!(run(&["gen", "--n-labels", "1"]).status.code(), Some(2));
}

#[test]
fn verify_exit_codes_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    assert!(run(&[
        "verify",
        "--seed",
        "3",
        "--trials",
        "4",
        "--out",
        a.to_str().unwrap()
    ])
    .status
    .success());
    assert!(run(&[
        "verify",
        "--seed",
        "3",
        "--trials",
        "4",
        "--out",
        b.to_str().unwrap()
    ])
    .status
    .success());
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let out = run(&["verify", "--trials", "0"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no trials"));
}
