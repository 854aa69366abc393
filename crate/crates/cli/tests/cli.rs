use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_platoon-lab"))
}

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn simulate_reference_asymmetric() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = scenarios().join("reference_asym_te01_d01.json");
    let out = run(&["simulate", "--scenario", p(&scenario), "--out", p(dir.path()), "--plots"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = json(&dir.path().join("summary.json"));
    assert_eq!(summary["status"], "completed");
    assert!(summary["metrics"]["max_sste"].as_f64().unwrap() < 1e-2);
    assert!(dir.path().join("trace.csv").exists());
    assert!(dir.path().join("speed.svg").exists());
    assert!(dir.path().join("time_gap.svg").exists());
}

#[test]
fn simulate_exit_code_follows_status() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = scenarios().join("reference_sym_te01_d02.json");
    let out = run(&["simulate", "--scenario", p(&scenario), "--out", p(dir.path())]);
    let status = json(&dir.path().join("summary.json"))["status"].as_str().unwrap().to_string();
    let expected = match status.as_str() {
        "completed" => 0,
        "collision" => 2,
        "diverged" => 3,
        other => panic!("unexpected status {other}"),
    };
    assert_eq!(out.status.code(), Some(expected));
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    let out = run(&["simulate", "--scenario", p(&bad), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));

    let text = std::fs::read_to_string(scenarios().join("reference_asym_te01_d01.json")).unwrap();
    let invalid = dir.path().join("invalid.json");
    std::fs::write(&invalid, text.replace("\"step\": 0.001", "\"step\": 0.003")).unwrap();
    let out = run(&["simulate", "--scenario", p(&invalid), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("powertrain.delay"), "{stderr}");
}

#[test]
fn stability_reference_gains() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["stability", "--te", "0.1", "--delta", "0.1", "--tg", "0.8", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(0));
    let summary = json(&dir.path().join("summary.json"));
    assert_eq!(summary["stable"], true);
    assert!((summary["dc_magnitude"].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-6);
    let csv = std::fs::read_to_string(dir.path().join("frequency.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2001);
    assert!(csv.starts_with("omega_rad_s,magnitude,x,y"));
    assert!(dir.path().join("local.json").exists());
}

#[test]
fn stability_accepts_off_grid_delay_and_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let out = run(&["stability", "--te", "0.1", "--delta", "0.1234567", "--tg", "0.8", "--out", p(d.path())]);
        assert_eq!(out.status.code(), Some(0));
    }
    for f in ["summary.json", "local.json", "frequency.csv"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
    }
}

#[test]
fn stability_rejects_bad_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["stability", "--te", "-0.1", "--delta", "0.1", "--tg", "0.8", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn sweep_single_cell() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "sweep", "--model", "asym", "--te", "0.1", "--delta", "0.1", "--grid", "0.7,0.8,0.9,1.0,1.1", "--out",
        p(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("T_e_s,delta_s,model,min_tg_s,max_sste_s2"));
    assert!(lines[1].starts_with("0.1,0.1,asym,"));
}

#[test]
fn sweep_rejects_unpaired_lists() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["sweep", "--te", "0.1", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn tune_writes_loadable_gains() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "tune", "--population", "3", "--generations", "1", "--seed", "5", "--out", p(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&dir.path().join("tuning.json"));
    assert_eq!(report["history"].as_array().unwrap().len(), 2);
    assert_eq!(report["gains"]["k_d1"], report["gains"]["k_d2"]);
    let gains = dir.path().join("tuning.json");
    let out = run(&[
        "stability", "--gains", p(&gains), "--te", "0.1", "--delta", "0.1", "--tg", "0.8", "--out",
        p(&dir.path().join("stab")),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn perturb_reports_peaks() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "perturb", "--te", "0.1", "--delta", "0.1", "--tg", "0.8", "--duration", "150", "--out", p(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = json(&dir.path().join("perturbation.json"));
    assert_eq!(r["follower_peaks"].as_array().unwrap().len(), 5);
    assert!((r["leader_peak"].as_f64().unwrap() - 3.0).abs() < 1e-9);
}
