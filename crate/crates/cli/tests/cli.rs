use std::path::Path;
use std::process::{Command, Output};

use pamkit::envelope::strip_timing;
use pamkit_core::paths::{PathEnsemble, PathKind};

fn pamkit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pamkit"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn envelope(dir: &Path, file: &str) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join(file)).unwrap()).unwrap()
}

#[test]
fn malformed_config_exits_2_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), r#"{"experiment":"moment","moment":{"samples":"many"}}"#).unwrap();
    let out = pamkit(dir.path(), &["moment", "--config", "bad.json", "--out", "r.json", "--csv", "plots"]);
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["class"], "config");
    assert!(!dir.path().join("r.json").exists());
    assert!(!dir.path().join("plots").exists());
}

#[test]
fn config_for_another_experiment_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), r#"{"experiment":"chaos"}"#).unwrap();
    let out = pamkit(dir.path(), &["moment", "--config", "c.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn validate_reports_and_rejects() {
    let dir = tempfile::tempdir().unwrap();
    let out = pamkit(dir.path(), &["validate", "--ell", "2", "--alpha", "1.5", "--out", "v.json"]);
    assert!(out.status.success());
    let v = envelope(dir.path(), "v.json");
    assert_eq!(v["results"]["validate"]["h2"], true);
    assert_eq!(v["results"]["validate"]["condition_s"], true);
    assert_eq!(v["config"]["noise"]["family"]["alpha"], 1.5);
    let out = pamkit(dir.path(), &["validate", "--alpha", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("run.json"),
        r#"{"experiment":"moment","seed":5,"shards":4,
            "noise":{"ell":1,"alpha0":0.5,"family":{"kind":"riesz","alpha":0.5}},
            "moment":{"n":2,"t":0.5,"samples":2000,"eps_ladder":[0.5,0.25,0.125]}}"#,
    )
    .unwrap();
    let out = pamkit(dir.path(), &["moment", "--config", "run.json", "--samples", "1000", "--out", "m.json", "--csv", "plots"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = envelope(dir.path(), "m.json");
    assert_eq!(v["config"]["seed"], 5);
    assert_eq!(v["config"]["moment"]["samples"], 1000);
    assert_eq!(v["results"]["moment"]["samples"], 1000);
    let csv = std::fs::read_to_string(dir.path().join("plots/eps_ladder.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "eps,mean,stderr");
    assert_eq!(lines.len(), 4);
}

#[test]
fn indices_withhold_the_lower_bound_without_h2() {
    let dir = tempfile::tempdir().unwrap();
    let out = pamkit(dir.path(), &["indices", "--E", "2.0", "--beta", "1", "--out", "a.json"]);
    assert!(out.status.success());
    let a = envelope(dir.path(), "a.json");
    assert!(a["results"]["indices"]["report"]["lambda_lower"].is_number());
    let out = pamkit(
        dir.path(),
        &["indices", "--E", "2.0", "--family", "rough_fractional", "--hurst", "0.4", "--out", "b.json"],
    );
    assert!(out.status.success());
    let b = envelope(dir.path(), "b.json");
    assert!(b["results"]["indices"]["report"]["lambda_lower"].is_null());
    assert!(b["results"]["indices"]["report"]["lower_note"].is_string());
    let out = pamkit(dir.path(), &["indices"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn heavy_tail_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let out = pamkit(dir.path(), &["moment", "--family", "constant", "--c", "400", "--samples", "10", "--out", "h.json"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(!dir.path().join("h.json").exists());
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let run = |threads: &str, file: &str| {
        let out = Command::new(env!("CARGO_BIN_EXE_pamkit"))
            .args(["moment", "--samples", "3000", "--out", "same.json"])
            .env("PAMKIT_THREADS", threads)
            .current_dir(dir.path())
            .output()
            .unwrap();
        assert!(out.status.success());
        std::fs::rename(dir.path().join("same.json"), dir.path().join(file)).unwrap();
        strip_timing(&std::fs::read_to_string(dir.path().join(file)).unwrap()).unwrap()
    };
    assert_eq!(run("1", "one.json"), run("3", "three.json"));
    let out = Command::new(env!("CARGO_BIN_EXE_pamkit"))
        .args(["validate"])
        .env("PAMKIT_THREADS", "lots")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn path_dump_is_readable() {
    let dir = tempfile::tempdir().unwrap();
    let out = pamkit(
        dir.path(),
        &["moment", "--samples", "100", "--grid-m", "8", "--dump-paths", "p.bin", "--dump-count", "7", "--out", "m.json"],
    );
    assert!(out.status.success());
    let ens = PathEnsemble::read_dump(std::fs::File::open(dir.path().join("p.bin")).unwrap(), PathKind::Bridge).unwrap();
    assert_eq!(ens.paths.len(), 7);
    assert_eq!(ens.grid.m, 8);
    assert!(ens.paths.iter().all(|p| p.endpoint()[0].abs() < 1e-12));
}

#[test]
fn variational_and_chaos_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let out = pamkit(dir.path(), &["variational", "--mx", "32", "--starts", "1", "--slices", "4", "--csv", "v", "--out", "v.json"]);
    assert!(out.status.success());
    let trace = std::fs::read_to_string(dir.path().join("v/trace.csv")).unwrap();
    assert!(trace.starts_with("iteration,total,interaction,kinetic\n"));
    let argmax = std::fs::read_to_string(dir.path().join("v/argmax.csv")).unwrap();
    assert!(argmax.starts_with("slice,s,x1,value\n"));
    assert_eq!(argmax.lines().count(), 1 + 4 * 32);
    let out = pamkit(dir.path(), &["chaos", "--N", "2", "--samples", "2000", "--csv", "c", "--out", "c.json"]);
    assert!(out.status.success());
    let terms = std::fs::read_to_string(dir.path().join("c/chaos_terms.csv")).unwrap();
    assert_eq!(terms.lines().count(), 4);
    assert_eq!(std::fs::read_to_string(dir.path().join("c/chaos_bounds.csv")).unwrap(), "n,value,stderr,constant\n");
}

#[test]
fn selftest_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = pamkit(dir.path(), &["selftest", "--out", "s.json"]);
    assert!(out.status.success());
    let s = envelope(dir.path(), "s.json");
    assert_eq!(s["results"]["selftest"]["failed"], 0);
    assert!(s["build_id"].as_str().unwrap().starts_with("0.1.0+"));
}
