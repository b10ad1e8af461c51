use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const OU_CONFIG: &str = r#"
out = "out"

[model]
name = "ou"
stiffness = [1.0, 2.0]

[simulation]
dt = 1e-3
n_steps = 20000
save_every = 10
burn_in = 100
x0 = [0.0, 0.0]
seeds = [0, 1, 2]

[estimator]
data = "trajectories"
mode = "reversible"
epsilons = [1e-4, 1e-2]
sizes = [1000, 2000]
n_ev = 3
n_clusters = 2

[[basis.modes]]
coordinate = 0
functions = [{ kind = "monomials", max_degree = 3 }]

[[basis.modes]]
coordinate = 1
functions = [{ kind = "monomials", max_degree = 3 }]
"#;

fn tgedmd(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tgedmd"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = tgedmd(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn workspace(config: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("config.toml");
    fs::write(&path, config).unwrap();
    (dir, path)
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Replaces floating-point leaves by a marker so the golden file pins the
/// layout and the integer fields only.
fn skeleton(v: &Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => Value::String("<float>".into()),
        Value::Array(items) => Value::Array(items.iter().map(skeleton).collect()),
        Value::Object(map) => Value::Object(map.iter().map(|(k, v)| (k.clone(), skeleton(v))).collect()),
        other => other.clone(),
    }
}

#[test]
fn report_matches_golden_layout() {
    let (dir, _) = workspace(OU_CONFIG);
    ok(dir.path(), &["simulate", "--config", "config.toml", "--seed", "0"]);
    ok(dir.path(), &["run", "--config", "config.toml", "--seed", "0"]);
    let report = skeleton(&read_json(&dir.path().join("out/run/report.json")));
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/ou_report_layout.json");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::write(&golden, serde_json::to_string_pretty(&report).unwrap() + "\n").unwrap();
    }
    assert_eq!(report, read_json(&golden));
}

#[test]
fn same_seed_gives_identical_files() {
    let (dir, _) = workspace(OU_CONFIG);
    for out in ["a", "b"] {
        ok(dir.path(), &["simulate", "--config", "config.toml", "--out", out]);
        ok(dir.path(), &["run", "--config", "config.toml", "--out", out, "--jobs", "2"]);
        ok(dir.path(), &["cost", "--config", "config.toml", "--out", out]);
    }
    for file in [
        "trajectories/seed_1.bin",
        "run/report.json",
        "run/timescales.csv",
        "run/points/eps_1e-4_m2000_seed2/eigenfunctions.csv",
        "cost/cost.csv",
    ] {
        let a = fs::read(dir.path().join("a").join(file)).unwrap();
        let b = fs::read(dir.path().join("b").join(file)).unwrap();
        assert!(a == b, "{file} differs between identical runs");
    }
}

fn numbers(v: &Value, out: &mut Vec<f64>) {
    match v {
        Value::Number(n) => out.push(n.as_f64().unwrap()),
        Value::Array(items) => items.iter().for_each(|x| numbers(x, out)),
        Value::Object(map) => map.values().for_each(|x| numbers(x, out)),
        _ => {}
    }
}

#[test]
fn job_count_does_not_change_results() {
    let (dir, _) = workspace(OU_CONFIG);
    ok(dir.path(), &["simulate", "--config", "config.toml", "--jobs", "3"]);
    let mut reports = Vec::new();
    for jobs in ["1", "3"] {
        let out = format!("jobs{jobs}");
        fs::create_dir_all(dir.path().join(&out)).unwrap();
        copy_dir(&dir.path().join("out/trajectories"), &dir.path().join(&out).join("trajectories"));
        ok(dir.path(), &["run", "--config", "config.toml", "--out", &out, "--jobs", jobs]);
        let mut values = Vec::new();
        numbers(&read_json(&dir.path().join(&out).join("run/report.json")), &mut values);
        reports.push(values);
    }
    assert_eq!(reports[0].len(), reports[1].len());
    for (a, b) in reports[0].iter().zip(&reports[1]) {
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
    }
}

fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for entry in fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        fs::copy(entry.path(), to.join(entry.file_name())).unwrap();
    }
}

#[test]
fn json_config_is_equivalent() {
    let (dir, path) = workspace(OU_CONFIG);
    let value: toml::Value = toml::from_str(OU_CONFIG).unwrap();
    fs::write(dir.path().join("config.json"), serde_json::to_string(&value).unwrap()).unwrap();
    ok(dir.path(), &["simulate", "--config", path.to_str().unwrap(), "--seed", "1", "--out", "t"]);
    ok(dir.path(), &["simulate", "--config", "config.json", "--seed", "1", "--out", "j"]);
    ok(dir.path(), &["run", "--config", "config.toml", "--seed", "1", "--out", "t"]);
    ok(dir.path(), &["run", "--config", "config.json", "--seed", "1", "--out", "j"]);
    let a = fs::read(dir.path().join("t/run/report.json")).unwrap();
    let b = fs::read(dir.path().join("j/run/report.json")).unwrap();
    assert!(a == b);
}

#[test]
fn zero_steps_write_a_single_state() {
    let (dir, _) = workspace(&OU_CONFIG.replace("n_steps = 20000", "n_steps = 0"));
    ok(dir.path(), &["simulate", "--config", "config.toml", "--seed", "4"]);
    let bytes = fs::read(dir.path().join("out/trajectories/seed_4.bin")).unwrap();
    let newline = bytes.iter().position(|&b| b == b'\n').unwrap();
    let header: Value = serde_json::from_slice(&bytes[..newline]).unwrap();
    assert_eq!(header["m"], 1);
    assert_eq!(header["d"], 2);
    assert_eq!(bytes.len(), newline + 1 + 16);
}

#[test]
fn single_sample_run_fails_cleanly() {
    let config = OU_CONFIG.replace("n_steps = 20000", "n_steps = 0").replace("sizes = [1000, 2000]\n", "");
    let (dir, _) = workspace(&config);
    ok(dir.path(), &["simulate", "--config", "config.toml", "--seed", "0"]);
    let out = tgedmd(dir.path(), &["run", "--config", "config.toml", "--seed", "0"]);
    assert_eq!(out.status.code(), Some(3));
    let message = String::from_utf8_lossy(&out.stderr);
    assert!(message.contains("m 1, seed 0") && message.contains("rank-1"), "{message}");
}

#[test]
fn exit_codes_follow_error_class() {
    let (dir, _) = workspace(OU_CONFIG);
    // no prior run
    assert_eq!(tgedmd(dir.path(), &["cost", "--config", "config.toml"]).status.code(), Some(2));
    // missing input data
    assert_eq!(tgedmd(dir.path(), &["run", "--config", "config.toml"]).status.code(), Some(2));
    // malformed configuration
    fs::write(dir.path().join("bad.toml"), OU_CONFIG.replace("epsilons = [1e-4, 1e-2]", "epsilons = []")).unwrap();
    assert_eq!(tgedmd(dir.path(), &["run", "--config", "bad.toml"]).status.code(), Some(2));
    // more eigenpairs than the model has
    fs::write(dir.path().join("big.toml"), OU_CONFIG.replace("n_ev = 3", "n_ev = 17")).unwrap();
    ok(dir.path(), &["simulate", "--config", "big.toml", "--seed", "0"]);
    assert_eq!(tgedmd(dir.path(), &["run", "--config", "big.toml", "--seed", "0"]).status.code(), Some(3));
    // corrupt data file
    fs::write(dir.path().join("out/trajectories/seed_0.bin"), b"{\"d\":2}\n").unwrap();
    assert_eq!(tgedmd(dir.path(), &["run", "--config", "config.toml", "--seed", "0"]).status.code(), Some(4));
}

#[test]
fn gedmd_and_cluster_write_their_tables() {
    let (dir, _) = workspace(OU_CONFIG);
    ok(dir.path(), &["simulate", "--config", "config.toml", "--seed", "0"]);
    ok(dir.path(), &["run", "--config", "config.toml", "--seed", "0"]);
    ok(dir.path(), &["gedmd", "--config", "config.toml", "--seed", "0"]);
    ok(dir.path(), &["cluster", "--config", "config.toml", "--seed", "0"]);
    let comparison = fs::read_to_string(dir.path().join("out/gedmd/comparison.csv")).unwrap();
    // header plus two thresholds, two sizes and two timescales
    assert_eq!(comparison.lines().count(), 1 + 2 * 2 * 2);
    let clusters = fs::read_to_string(dir.path().join("out/cluster/seed_0/clusters.csv")).unwrap();
    assert_eq!(clusters.lines().count(), 1 + 2000);
    assert!(clusters.lines().skip(1).all(|l| l.ends_with(",1") || l.ends_with(",2")));
}

#[test]
fn shipped_configs_load() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["lemon_slice_sde.toml", "lemon_slice_gmm.toml", "ou_reference.toml"] {
        let dir = tempfile::tempdir().unwrap();
        // cost without a prior run is a config error only after loading succeeds
        let out = tgedmd(dir.path(), &["cost", "--config", root.join(name).to_str().unwrap()]);
        let stderr = String::from_utf8_lossy(&out.stderr);
        assert!(stderr.contains("no prior run"), "{name}: {stderr}");
    }
}
