use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use soficlab::read_trace_csv;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_soficlab"));
    c.env_remove("SOFICLAB_SEED");
    c
}

fn example(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples").join(name)
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn report(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn goodness_example_passes() {
    let r = report(&bin().arg("run").arg(example("goodness_cyclic.json")).output().unwrap());
    assert_eq!(r["result"]["pass"], true);
    assert_eq!(r["op"], "goodness");
    assert_eq!(r["config_digest"].as_str().unwrap().len(), 64);
}

#[test]
fn entropy_example_counts_exactly() {
    let r = report(&bin().arg("run").arg(example("entropy_exact.json")).output().unwrap());
    assert_eq!(r["result"]["count"], 35750);
}

#[test]
fn invalid_json_exits_2_and_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "bad.json", r#"{"op":"goodness","model":{"kind":"cyclic","n":4},"kk":3}"#);
    let out = bin().arg("run").arg(&p).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("kk"));

    let p = write(dir.path(), "broken.json", "{\"op\": ");
    assert_eq!(bin().arg("run").arg(&p).output().unwrap().status.code(), Some(2));
    assert_eq!(bin().arg("run").arg(dir.path().join("absent.json")).output().unwrap().status.code(), Some(2));
}

#[test]
fn unsupported_combination_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "markov_free.json",
        r#"{"op":"search","model":{"kind":"free_random","rank":2,"n":10,"seed":1},
            "oracle":{"kind":"markov","transition":[[0.5,0.5],[0.5,0.5]]},"m":2,"epsilon":0.5,"seed":1}"#,
    );
    let out = bin().arg("validate").arg(&p).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unsupported"));
}

#[test]
fn oversized_exact_count_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "big.json",
        r#"{"op":"entropy","model":{"kind":"cyclic","n":40},"oracle":{"kind":"bernoulli","base":{"a":0.5,"b":0.5}},
            "m":1,"epsilon":0.6,"mode":"exact"}"#,
    );
    assert_eq!(bin().arg("run").arg(&p).output().unwrap().status.code(), Some(3));
}

#[test]
fn validate_reports_ok_warnings_and_missing_seed() {
    let out = bin().arg("validate").arg(example("goodness_cyclic.json")).output().unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "ok");

    let out = bin().arg("validate").arg(example("entropy_exact.json")).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unattainable"));

    let dir = tempfile::tempdir().unwrap();
    let text = r#"{"op":"search","model":{"kind":"cyclic","n":8},"oracle":{"kind":"bernoulli","base":{"a":0.5,"b":0.5}},"m":2,"epsilon":0.5}"#;
    let p = write(dir.path(), "seedless.json", text);
    let out = bin().arg("validate").arg(&p).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
    let out = bin().arg("validate").arg(&p).env("SOFICLAB_SEED", "9").output().unwrap();
    assert!(out.status.success());
}

#[test]
fn env_seed_is_overridden_by_config() {
    let dir = tempfile::tempdir().unwrap();
    let base = r#"{"op":"search","model":{"kind":"cyclic","n":32},"oracle":{"kind":"bernoulli","base":{"a":0.5,"b":0.5}},"m":2,"epsilon":0.0,"budget":50"#;
    let with_seed = write(dir.path(), "a.json", &format!("{base},\"seed\":5}}"));
    let without = write(dir.path(), "b.json", &format!("{base}}}"));
    let a = report(&bin().arg("run").arg(&with_seed).env("SOFICLAB_SEED", "6").output().unwrap());
    let b = report(&bin().arg("run").arg(&without).env("SOFICLAB_SEED", "5").output().unwrap());
    assert_eq!(a["result"], b["result"]);
    assert_eq!(a["result"]["seed"], 5);
}

fn strip_time(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("wall_time_ms");
    v
}

#[test]
fn jobs_flag_does_not_change_results() {
    for name in ["entropy_montecarlo.json", "dq_bernoulli.json", "trace_cyclic.json"] {
        let one = report(&bin().args(["run", "--jobs", "1"]).arg(example(name)).output().unwrap());
        let four = report(&bin().args(["run", "--jobs", "4"]).arg(example(name)).output().unwrap());
        assert_eq!(strip_time(one), strip_time(four), "{name}");
    }
}

#[test]
fn trace_csv_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("trace.csv");
    let out_json = dir.path().join("report.json");
    let out = bin()
        .arg("run")
        .arg(example("trace_cyclic.json"))
        .arg("--csv")
        .arg(&csv)
        .arg("--out")
        .arg(&out_json)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("index,n,fit_lower,fit_upper,pass\n"));
    assert_eq!(text.lines().count(), 5);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(&out_json).unwrap()).unwrap();
    let rows = read_trace_csv(text.as_bytes()).unwrap();
    let payload: Vec<soficlab_core::microstate::TraceRow> =
        serde_json::from_value(report["result"]["rows"].clone()).unwrap();
    assert_eq!(rows, payload);
}

#[test]
fn csv_flag_on_other_ops_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .arg("run")
        .arg(example("goodness_cyclic.json"))
        .arg("--csv")
        .arg(dir.path().join("x.csv"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn distance_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let l = write(dir.path(), "l.json", r#"{"m":1,"mass":{"a":0.5,"b":0.5}}"#);
    let r = write(dir.path(), "r.json", r#"{"m":1,"mass":{"a":1.0}}"#);
    let out = bin().arg("distance").arg(&l).arg(&r).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["value"], 0.5);
    assert_eq!(v["upper"], 1.0);
    assert_eq!(v["coupling_nnz"], 2);
}
