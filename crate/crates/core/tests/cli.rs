use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_celeris-sim"));
    c.env_remove("CELERIS_SIM_OUT");
    c
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str], out: &Path) -> Output {
    bin().arg("--out").arg(out).args(args).output().expect("binary runs")
}

fn stderr_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stderr).expect("structured error on stderr")
}

fn small_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("scenario.json");
    std::fs::write(&p, body).unwrap();
    p
}

const SMALL: &str = r#"{"transport":"IRN","topology":{"hosts":4,"leaf_count":2,"hosts_per_leaf":2,"spine_count":2},
    "collective":{"payload_bytes":4000000,"rounds":2}}"#;

#[test]
fn simulate_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = run(&["--quiet", "simulate", "--config", cfg.to_str().unwrap()], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stdout.is_empty());
    for f in ["steps.csv", "ports.csv", "timeout_trace.csv", "summary.json", "meta.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let meta: Value = serde_json::from_str(&std::fs::read_to_string(out.join("meta.json")).unwrap()).unwrap();
    assert_eq!(meta["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(meta["seed"], 1);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), SMALL);
    let o = run(&["--seed", "42", "simulate", "--config", cfg.to_str().unwrap()], &dir.path().join("o"));
    assert!(o.status.success());
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["summary"]["seed"], 42);
}

#[test]
fn output_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("from-env");
    let o = bin()
        .env("CELERIS_SIM_OUT", &out)
        .args(["--quiet", "tables"])
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(out.join("tables.csv").is_file());
}

#[test]
fn unknown_key_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), r#"{"transport":"IRN","collective":{"payload_bytes":1000,"roundz":2}}"#);
    let o = run(&["simulate", "--config", cfg.to_str().unwrap()], &dir.path().join("o"));
    assert_eq!(o.status.code(), Some(1));
    let e = stderr_json(&o);
    assert_eq!(e["error"]["kind"], "parse");
    assert_eq!(e["error"]["field"], "collective.roundz");
}

#[test]
fn invalid_value_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), r#"{"transport":"IRN","topology":{"hosts":5}}"#);
    let o = run(&["simulate", "--config", cfg.to_str().unwrap()], &dir.path().join("o"));
    assert_eq!(o.status.code(), Some(1));
    let e = stderr_json(&o);
    assert_eq!(e["error"]["kind"], "invalid_config");
    assert_eq!(e["error"]["field"], "topology.hosts");
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["simulate"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["error"]["kind"], "usage");
}

#[test]
fn sweep_rejects_unknown_axis_and_empty_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), SMALL);
    let c = cfg.to_str().unwrap();
    let o = run(&["sweep", "--config", c, "--axis", "topology.nope", "--values", "[1]"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_json(&o)["error"]["kind"], "unknown_axis");
    let o = run(&["sweep", "--config", c, "--axis", "seed", "--values", "[]"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_json(&o)["error"]["kind"], "empty_input");
}

#[test]
fn sweep_over_transports_merges_in_input_order() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), SMALL);
    let out = dir.path().join("sweep");
    let o = run(
        &[
            "--quiet", "sweep", "--config", cfg.to_str().unwrap(), "--axis", "transport",
            "--values", r#"["CELERIS","ROCE_GBN","SRNIC","IRN"]"#, "--seed-policy", "offset",
        ],
        &out,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut r = csv::Reader::from_path(out.join("sweep_summary.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    let h = r.headers().unwrap().clone();
    let col = |name: &str| h.iter().position(|c| c == name).unwrap();
    let kinds: Vec<&str> = rows.iter().map(|x| &x[col("transport")]).collect();
    assert_eq!(kinds, ["CELERIS", "ROCE_GBN", "SRNIC", "IRN"]);
    let seeds: Vec<&str> = rows.iter().map(|x| &x[col("seed")]).collect();
    assert_eq!(seeds, ["1", "2", "3", "4"]);
    assert!(out.join("sweep_steps.csv").is_file());
    assert!(out.join("point-003").join("steps.csv").is_file());
}

#[test]
fn ecdf_of_a_steps_file() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("steps.csv");
    std::fs::write(&input, "duration_ns\n3\n1\n2\n2\n").unwrap();
    let o = run(&["--quiet", "ecdf", "--input", input.to_str().unwrap()], dir.path());
    assert!(o.status.success());
    let text = std::fs::read_to_string(dir.path().join("ecdf.csv")).unwrap();
    assert_eq!(
        text,
        "duration_ns,cumulative_fraction\n1,0.25\n2,0.5\n2,0.75\n3,1.0\n"
    );
    std::fs::write(&input, "duration_ns\n").unwrap();
    let o = run(&["ecdf", "--input", input.to_str().unwrap()], dir.path());
    assert_eq!(stderr_json(&o)["error"]["kind"], "empty_input");
}

#[test]
fn tables_are_identical_across_invocations() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(run(&["--quiet", "tables"], &a).status.success());
    assert!(run(&["--quiet", "tables"], &b).status.success());
    let ta = std::fs::read(a.join("tables.csv")).unwrap();
    assert_eq!(ta, std::fs::read(b.join("tables.csv")).unwrap());
    let text = String::from_utf8(ta).unwrap();
    assert!(text.lines().any(|l| l.starts_with("CELERIS,52,")));
}

#[test]
fn ml_drop_and_coding_bench_run_from_configs() {
    let dir = tempfile::tempdir().unwrap();
    let ml = configs().join("ml_drop.json");
    let o = run(&["--quiet", "ml-drop", "--config", ml.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("ml_summary.csv").is_file());
    assert!(dir.path().join("ml_accuracy.csv").is_file());

    let bench = dir.path().join("bench.json");
    std::fs::write(&bench, r#"{"sizes":[1024],"iterations":2}"#).unwrap();
    let o = run(&["--quiet", "coding-bench", "--config", bench.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(dir.path().join("coding_bench.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 5);
}
