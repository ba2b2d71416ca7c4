use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn metachex(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_metachex"))
        .args(args)
        .env("RUST_LOG", "off")
        .env_remove("METACHEX_DATA_ROOT")
        .output()
        .unwrap()
}

fn error_record(out: &Output) -> Value {
    assert!(!out.status.success(), "expected failure, stdout: {}", String::from_utf8_lossy(&out.stdout));
    serde_json::from_slice(&out.stderr).expect("stderr is a JSON error record")
}

fn synth(dir: &Path) -> String {
    let out = metachex(&["synth", "--out", dir.to_str().unwrap(), "--patients", "20", "--shenzhen", "10", "10", "--montgomery", "4", "4"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    dir.join("config.toml").to_string_lossy().into_owned()
}

#[test]
fn missing_config_is_an_io_error() {
    let rec = error_record(&metachex(&["prepare", "--config", "/nonexistent/config.toml"]));
    assert_eq!(rec["status"], "error");
    assert_eq!(rec["command"], "prepare");
    assert_eq!(rec["kind"], "io");
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("c.toml");
    std::fs::write(&path, "seed = 1\nlearning_rate = 0.1\n").unwrap();
    let rec = error_record(&metachex(&["prepare", "--config", path.to_str().unwrap()]));
    assert_eq!(rec["kind"], "config");
    assert!(rec["message"].as_str().unwrap().contains("learning_rate"));
}

#[test]
fn overrides_change_the_config_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let config = synth(tmp.path());
    let hash = |extra: &[&str]| {
        let mut args = vec!["prepare", "--config", config.as_str()];
        args.extend_from_slice(extra);
        let out = metachex(&args);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let v: Value = serde_json::from_slice(&out.stdout).unwrap();
        v["config_hash"].as_str().unwrap().to_string()
    };
    let base = hash(&[]);
    assert_eq!(base, hash(&[]));
    assert_ne!(base, hash(&["--set", "seed=99"]));
    let rec = error_record(&metachex(&["prepare", "--config", &config, "--set", "no.such.key=1"]));
    assert_eq!(rec["kind"], "config");
}

#[test]
fn commands_before_prepare_point_at_prepare() {
    let tmp = tempfile::tempdir().unwrap();
    let config = synth(tmp.path());
    let rec = error_record(&metachex(&["train", "--config", &config, "--phase", "1", "--init", "random"]));
    assert!(rec["message"].as_str().unwrap().contains("prepare"), "{rec}");
}

#[test]
fn plots_are_svg_only() {
    let tmp = tempfile::tempdir().unwrap();
    let config = synth(tmp.path());
    let out = metachex(&["prepare", "--config", &config]);
    assert!(out.status.success());
    let rec = error_record(&metachex(&[
        "plot",
        "roc",
        "--config",
        &config,
        "--predictions",
        "whatever.csv",
        "--out",
        tmp.path().join("roc.png").to_str().unwrap(),
    ]));
    assert_eq!(rec["command"], "plot");
}

#[test]
fn prepare_writes_hash_stamped_manifests() {
    let tmp = tempfile::tempdir().unwrap();
    let config = synth(tmp.path());
    let out = metachex(&["prepare", "--config", &config]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let hash = v["config_hash"].as_str().unwrap();
    let splits = tmp.path().join("run/splits");
    let mut ids = Vec::new();
    for name in ["train.txt", "validation.txt", "test.txt"] {
        let text = std::fs::read_to_string(splits.join(name)).unwrap();
        assert!(text.starts_with(&format!("# config_hash: {hash}")));
        ids.extend(text.lines().filter(|l| !l.starts_with('#') && !l.is_empty()).map(str::to_string));
    }
    let n = ids.len();
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), n);
    let metadata = std::fs::read_to_string(tmp.path().join("chestxray14/metadata.csv")).unwrap();
    assert_eq!(metadata.lines().count() - 1, n);
}
