use std::fs;
use std::path::Path;
use std::process::Command;

use serde_json::Value;

use ergolab::crystal::{build_crystal, canonical_correction, measure_scaling_point};
use ergolab::runner::{bundle::Manifest, run_experiment, ExperimentConfig, ExperimentKind, RunStatus, MANIFEST_FILE};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ergolab"));
    c.env("RUST_LOG", "error");
    c
}

fn small_config(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, r#"{"model": {"n": 120, "band": 40}, "realizations": 4}"#).unwrap();
    p
}

fn manifest(dir: &Path) -> Manifest {
    serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE)).unwrap()).unwrap()
}

#[test]
fn test_zero_coupling_gives_kronecker_delta() {
    let mut c = ExperimentConfig::for_kind(ExperimentKind::Envelope);
    c.model.n = 80;
    c.model.band = 20;
    c.realizations = 2;
    c.sweep.epsilon = Some(vec![0.0]);
    let b = run_experiment(&c).unwrap();
    for row in &b.tables["envelope.csv"].rows {
        let lag: i64 = row[1].render().parse().unwrap();
        let v: f64 = row[2].render().parse().unwrap();
        assert_eq!(v, if lag == 0 { 1.0 } else { 0.0 }, "lag {lag}");
    }
}

#[test]
fn test_quench_sweep_and_reproducibility() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let run = |name: &str, jobs: &str| {
        let out = tmp.path().join(name);
        let st = bin()
            .args(["quench", "--config"])
            .arg(&cfg)
            .args(["--epsilon", "0.5,1,1.5", "--seed", "9", "--jobs", jobs, "--out"])
            .arg(&out)
            .status()
            .unwrap();
        assert!(st.success());
        out
    };
    let a = run("a", "1");
    let b = run("b", "2");
    for f in ["quench.csv", "quench.json", "quench.dat"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let json: Value = serde_json::from_slice(&fs::read(a.join("quench.json")).unwrap()).unwrap();
    let points = json["points"].as_array().unwrap();
    assert_eq!(points.len(), 3);
    for p in points {
        let l = &p["levels"][0];
        assert!(l["measured"].is_f64() && l["predicted"].is_f64());
    }
    let m = manifest(&a);
    assert_eq!(m.status, RunStatus::Complete);
    assert_eq!(m.config.seed, 9);
    assert_eq!(m.realization_seeds.len(), 4);
    assert_eq!(m.tables, vec!["quench.csv"]);
}

#[test]
fn test_overwrite_refusal() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("t");
    let go = |extra: &[&str]| bin().arg("tailbound").arg("--out").arg(&out).args(extra).status().unwrap();
    assert!(go(&[]).success());
    assert_eq!(go(&[]).code(), Some(1));
    assert!(go(&["--overwrite", "--format", "csv-json"]).success());
    assert!(!out.join("tailbound.dat").exists());
}

#[test]
fn test_empty_sweep_writes_manifest_only() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("e");
    let st = bin().args(["envelope", "--epsilon"]).arg("--out").arg(&out).status().unwrap();
    assert!(st.success());
    let names: Vec<_> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names, vec![MANIFEST_FILE]);
    let m = manifest(&out);
    assert!(m.tables.is_empty());
    assert_eq!(m.warnings.len(), 1);
}

#[test]
fn test_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));
    assert_eq!(bin().arg("--version").output().unwrap().status.code(), Some(0));
    assert_eq!(bin().arg("nonsense").output().unwrap().status.code(), Some(1));
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"model": {"n": 10, "band": 50}}"#).unwrap();
    let st = bin().arg("envelope").arg("--config").arg(&bad).arg("--out").arg(tmp.path().join("x")).status().unwrap();
    assert_eq!(st.code(), Some(1));
    let missing = bin().arg("envelope").arg("--config").arg(tmp.path().join("nope.json")).status().unwrap();
    assert_eq!(missing.code(), Some(3));

    // numerical failure after the run started leaves an incomplete manifest
    let few = tmp.path().join("few.json");
    fs::write(&few, r#"{"crystal": {"dimension": 1, "sizes": [8, 16, 32], "samples": 10}}"#).unwrap();
    let out = tmp.path().join("c");
    let st = bin().arg("crystal").arg("--config").arg(&few).arg("--out").arg(&out).status().unwrap();
    assert_eq!(st.code(), Some(2));
    assert_eq!(manifest(&out).status, RunStatus::Incomplete);
}

#[test]
fn test_crystal_sampling_matches_corrected_canonical_value() {
    let point = measure_scaling_point(3, 8, 1.0, 400, 5).unwrap();
    let spec = build_crystal(3, 8, 1.0).unwrap();
    let corr = canonical_correction(&spec, point.energy).unwrap();
    let se = (point.variance / point.samples as f64).sqrt();
    let z = (point.mean_x2 - corr.corrected).abs() / se;
    assert!(z < 3.0, "sampled {} vs corrected {} (se {se}, z {z})", point.mean_x2, corr.corrected);
}
