use std::path::{Path, PathBuf};
use std::process::Command;

use coorbit_cli::config::validate;
use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_coorbit"))
}

fn dir(name: &str) -> PathBuf {
    let d = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli").join(name);
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn small_gabor() -> Value {
    json!({
        "family": {"tag": "gabor", "params": {"window": {"type": "gaussian", "width": 1.0}}},
        "signal_grid": {"T": 6.0, "n": 128},
        "index_domain": {"bounds": [[-4.0, 4.0], [-8.0, 8.0]], "resolution": [[16, 16]]},
        "tasks": ["frame-info"],
        "seed": 5
    })
}

fn write(d: &Path, v: &Value) -> PathBuf {
    let p = d.join("config.json");
    std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn fields(p: &Path) -> Vec<String> {
    validate(p).into_iter().map(|d| d.field).collect()
}

#[test]
fn shipped_configs_validate() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for e in std::fs::read_dir(root).unwrap() {
        let p = e.unwrap().path();
        assert!(validate(&p).is_empty(), "{}: {:?}", p.display(), validate(&p));
        n += 1;
    }
    assert!(n >= 10);
}

#[test]
fn diagnostics_name_the_field() {
    let d = dir("diag");
    let mut v = small_gabor();
    v["family"] = json!({"tag": "sinc_rkhs", "params": {"bandlimit": 1000.0}});
    v["index_domain"] = json!({"bounds": [[-5.0, 5.0]], "resolution": [[64, 0]]});
    assert_eq!(fields(&write(&d, &v)), vec!["family.params.bandlimit"]);

    let mut v = small_gabor();
    v["family"]["tag"] = json!("shearlet");
    assert_eq!(fields(&write(&d, &v)), vec!["family.tag"]);

    let mut v = small_gabor();
    v["tasks"] = json!(["discretize"]);
    assert_eq!(fields(&write(&d, &v)), vec!["covering"]);

    let mut v = small_gabor();
    v["tasks"] = json!([]);
    assert_eq!(fields(&write(&d, &v)), vec!["tasks"]);

    let mut v = small_gabor();
    v["colour"] = json!(1);
    assert_eq!(fields(&write(&d, &v)), vec!["config"]);
}

#[test]
fn validate_subcommand_exit_codes() {
    let d = dir("validate");
    let ok = bin().args(["validate"]).arg(write(&d, &small_gabor())).output().unwrap();
    assert_eq!(ok.status.code(), Some(0));
    let mut v = small_gabor();
    v["family"]["tag"] = json!("shearlet");
    let bad = bin().args(["validate"]).arg(write(&d, &v)).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("family.tag"));
}

#[test]
fn malformed_config_writes_nothing() {
    let d = dir("malformed");
    let p = d.join("config.json");
    std::fs::write(&p, "{\"family\": ").unwrap();
    let out = d.join("out");
    let r = bin().args(["run"]).arg(&p).arg("--out").arg(&out).output().unwrap();
    assert_eq!(r.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn run_writes_report_and_seed_override() {
    let d = dir("run");
    let p = write(&d, &small_gabor());
    let out = d.join("out");
    let r = bin().args(["run"]).arg(&p).arg("--out").arg(&out).args(["--seed", "9", "--threads", "2"]).output().unwrap();
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    let rep: Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(rep["seed"], json!(9));
    assert_eq!(rep["config"], small_gabor());
    assert_eq!(rep["tasks"][0]["task"], json!("frame-info"));
    assert!(rep["tasks"][0]["result"]["frame_bounds"]["c2"].as_f64().unwrap() > 0.0);
    assert!(out.join("timings.json").exists());
}

#[test]
fn neumann_with_large_defect_exits_3() {
    let d = dir("neumann");
    let mut v = small_gabor();
    v["covering"] = json!({"cell_size": [[8.0, 16.0]]});
    v["tasks"] = json!(["discretize"]);
    v["discretize"] = json!({"method": "neumann"});
    let out = d.join("out");
    let r = bin().args(["run"]).arg(write(&d, &v)).arg("--out").arg(&out).output().unwrap();
    assert_eq!(r.status.code(), Some(3), "{}", String::from_utf8_lossy(&r.stderr));
    let rep: Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(rep["failure"]["exit_code"], json!(3));
    assert!(rep["tasks"].as_array().unwrap().is_empty());
}

#[test]
fn unreached_target_exits_3_with_trajectory() {
    let d = dir("target");
    let mut v = small_gabor();
    v["covering"] = json!({"cell_size": [[4.0, 8.0]], "z_per_axis": 2, "refine": {"target": "full", "max_levels": 2}});
    v["tasks"] = json!(["property-d"]);
    let out = d.join("out");
    let r = bin().args(["run"]).arg(write(&d, &v)).arg("--out").arg(&out).output().unwrap();
    assert_eq!(r.status.code(), Some(3), "{}", String::from_utf8_lossy(&r.stderr));
    let csv = std::fs::read_to_string(out.join("property_d_trajectory.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}
