use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_distillforge"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write_config(dir: &Path) -> String {
    let cfg = serde_json::json!({
        "data": { "source": "synthetic", "n": 240, "d": 4 },
        "seeds": [0, 1],
        "teachers": [{ "kind": "knn" }],
        "gbdt": { "n_trees": 15 },
        "bench": { "enabled": true, "warmup": 1, "runs": 3 },
        "out": dir.join("runs"),
    });
    let path = dir.join("config.json");
    fs::write(&path, cfg.to_string()).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn pipeline_writes_artifacts_and_prints_bench_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = run(&["pipeline", "--config", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("retention_pct"));
    assert!(stdout.contains("P99"));
    let runs = dir.path().join("runs");
    for f in ["folds.json", "softlabels.csv", "teacher.json", "model.json", "report.json"] {
        assert!(runs.join("seed-1").join(f).exists(), "{f}");
    }
    assert!(runs.join("aggregate.json").exists());
}

#[test]
fn stagewise_commands_match_pipeline_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let staged = dir.path().join("staged");
    let staged = staged.to_str().unwrap();
    for cmd in ["split", "teach", "distill", "evaluate"] {
        let out = run(&[cmd, "--config", &cfg, "--out", staged, "--seeds", "0"]);
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = run(&["bench", "--config", &cfg, "--out", staged, "--seeds", "0"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("seed 0"));

    let e2e = dir.path().join("e2e");
    let out = run(&["pipeline", "--config", &cfg, "--out", e2e.to_str().unwrap(), "--seeds", "0", "--no-bench"]);
    assert!(out.status.success());
    for f in ["folds.json", "softlabels.csv", "model.json", "report.json"] {
        let a = fs::read(Path::new(staged).join("seed-0").join(f)).unwrap();
        let b = fs::read(e2e.join("seed-0").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}

#[test]
fn missing_upstream_artifact_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = run(&["distill", "--config", &cfg, "--seeds", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("folds.json"));
}

#[test]
fn validation_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    assert_eq!(run(&["pipeline", "--config", &cfg, "--alpha", "1.5"]).status.code(), Some(2));
    assert_eq!(run(&["pipeline", "--config", &cfg, "--k-folds", "1"]).status.code(), Some(2));
    assert_eq!(run(&["pipeline", "--teacher", "oracle"]).status.code(), Some(2));
    assert_eq!(run(&["pipeline", "--student", "forest"]).status.code(), Some(2));
}

#[test]
fn leaky_soft_labels_are_refused_with_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    for cmd in ["split", "teach", "distill"] {
        assert!(run(&[cmd, "--config", &cfg, "--seeds", "0"]).status.success());
    }
    let own = dir.path().join("runs/seed-0/softlabels.csv");
    let text = fs::read_to_string(&own).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    // Relabel row 0 with another fold id, so its label came from a teacher that saw it.
    let mut cells: Vec<String> = lines[1].split(',').map(String::from).collect();
    let f: usize = cells[1].parse().unwrap();
    cells[1] = ((f + 1) % 5).to_string();
    lines[1] = cells.join(",");
    let leaky = dir.path().join("leaky.csv");
    fs::write(&leaky, lines.join("\n") + "\n").unwrap();

    let out = run(&["evaluate", "--config", &cfg, "--seeds", "0", "--soft-labels", leaky.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("leakage"));

    let out = run(&[
        "evaluate",
        "--config",
        &cfg,
        "--seeds",
        "0",
        "--soft-labels",
        leaky.to_str().unwrap(),
        "--allow-unaudited",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_writes_loadable_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("d.csv");
    let schema = dir.path().join("d.json");
    let out = run(&[
        "synth",
        "--n",
        "300",
        "--d",
        "3",
        "--csv",
        csv.to_str().unwrap(),
        "--schema",
        schema.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let cfg = serde_json::json!({
        "data": { "source": "csv", "path": csv, "schema": schema },
        "seeds": [0],
        "teachers": [{ "kind": "knn" }],
        "student": "logreg",
        "bench": { "enabled": false },
        "out": dir.path().join("runs"),
    });
    let path = dir.path().join("c.json");
    fs::write(&path, cfg.to_string()).unwrap();
    let out = run(&["pipeline", "--config", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
