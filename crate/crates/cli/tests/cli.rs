use std::path::Path;
use std::process::{Command, Output};

use mfg_core::experiments::{ExperimentConfig, FieldRecord, ResultBundle};

fn mfg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfg")).args(args).output().expect("run mfg")
}

fn small_config(dir: &Path) -> String {
    let mut cfg = ExperimentConfig::for_preset("stationary-1d-effective-hamiltonian");
    cfg.grid.n = Some(24);
    cfg.inner.solvers = Some(vec!["newton".parse().unwrap()]);
    cfg.outer.max_iter = 5;
    let path = dir.join("small.toml");
    std::fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn catalog_lists_every_preset() {
    let out = mfg(&["catalog"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for id in ["stationary-1d-effective-hamiltonian", "stationary-2d-nonlocal-solvers", "timedep-2d"] {
        assert!(text.contains(id), "{id} missing");
    }
    let json = mfg(&["catalog", "--json"]);
    assert!(json.status.success());
    let v: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 6);
}

#[test]
fn forward_writes_fields() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out_dir = dir.path().join("fwd");
    let out = mfg(&["forward", "--config", &cfg, "--solver", "hrf", "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = FieldRecord::read_csv("m", std::io::BufReader::new(std::fs::File::open(out_dir.join("m.csv")).unwrap())).unwrap();
    assert_eq!(m.values.len(), 24);
    let mass: f64 = m.values.iter().sum::<f64>() / 24.0;
    assert!((mass - 1.0).abs() < 1e-10);
    assert!(out_dir.join("trace.csv").exists());
}

#[test]
fn synthesize_then_invert_reuses_observations() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let obs = dir.path().join("obs");
    let out = mfg(&["synthesize", "--config", &cfg, "--out", obs.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(obs.join("m_obs.csv").exists() && obs.join("v_obs.csv").exists());

    let inv = dir.path().join("inv");
    let out = mfg(&["invert", "--config", &cfg, "--method", "gn", "--observations", obs.to_str().unwrap(), "--out", inv.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let b = ResultBundle::read(&inv).unwrap();
    assert_eq!(b.summary.runs.len(), 1);
    assert_eq!(b.compute_hash(), b.summary.content_hash);
    assert!(String::from_utf8(out.stdout).unwrap().contains(&b.summary.content_hash));

    // The same inversion from freshly synthesized data gives the same bundle.
    let inv2 = dir.path().join("inv2");
    let out = mfg(&["invert", "--config", &cfg, "--method", "gn", "--out", inv2.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(ResultBundle::read(&inv2).unwrap().summary.content_hash, b.summary.content_hash);
}

#[test]
fn bad_input_fails_with_a_stage_tag() {
    let out = mfg(&["forward", "--preset", "no-such-preset"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("config"));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "preset = \"timedep-1d\"\nunknown_key = 3\n").unwrap();
    let out = mfg(&["forward", "--config", bad.to_str().unwrap()]);
    assert!(!out.status.success());
}

#[test]
fn check_passes() {
    let out = mfg(&["check", "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
}
