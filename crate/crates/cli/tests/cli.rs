use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qsmooth"))
}

fn config(dir: &Path, name: &str, h: &str, tau: f64, n_traj: usize) -> PathBuf {
    let text = format!(
        r#"{{
  "system": {{"dim": 2, "H": {h}, "L": "pauli_z", "rho0": {{"ket": [[0.8, 0.0], [0.36, 0.48]]}}}},
  "experiment": {{"dt": 0.01, "t_final": 0.5, "tau": {tau}, "n_traj": {n_traj}, "seed": 42,
                  "observables": [{{"name": "sx", "op": "pauli_x"}}, {{"name": "sy", "op": "pauli_y"}},
                                  {{"name": "sz", "op": "pauli_z"}}]}}
}}"#
    );
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    assert!(!text.contains('\r'));
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}

#[test]
fn simulate_writes_trajectories_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "cfg.json", "\"zero\"", 0.2, 3);
    let out = dir.path().join("run");
    let stdout = run_ok(&["simulate", "--config", s(&cfg), "--out", s(&out)]).stdout;
    assert_eq!(String::from_utf8(stdout).unwrap().lines().count(), 4);
    for k in 0..3 {
        let (header, rows) = read_csv(&out.join(format!("traj_{k:04}.csv")));
        assert_eq!(
            header,
            ["t", "dy", "filter.sx.re", "filter.sx.im", "filter.sy.re", "filter.sy.im", "filter.sz.re", "filter.sz.im"]
        );
        assert_eq!(rows.len(), 51);
        assert_eq!(rows[0][1], "");
        assert_eq!(rows[0][0], "0");
        assert!(rows[1..].iter().all(|r| r[1].parse::<f64>().is_ok()));
        assert_eq!(rows[0][2].parse::<f64>().unwrap(), 2.0 * 0.8 * 0.36);
    }
    let manifest: Value = serde_json::from_str(&fs::read_to_string(out.join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 42);
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 3);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    assert!(manifest["tool_version"].as_str().unwrap().starts_with("qsmooth "));
    assert!(fs::read_dir(&out).unwrap().all(|e| !e.unwrap().file_name().to_string_lossy().ends_with(".tmp")));
}

#[test]
fn reruns_and_thread_counts_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "cfg.json", "\"zero\"", 0.2, 4);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run_ok(&["smooth", "--config", s(&cfg), "--out", s(&a), "--threads", "1"]);
    run_ok(&["smooth", "--config", s(&cfg), "--out", s(&b), "--threads", "4"]);
    for k in 0..4 {
        let name = format!("traj_{k:04}.csv");
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap());
    }
    assert_eq!(fs::read(a.join("run_manifest.json")).unwrap(), fs::read(b.join("run_manifest.json")).unwrap());
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "cfg.json", "\"zero\"", 0.0, 1);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run_ok(&["simulate", "--config", s(&cfg), "--out", s(&a)]);
    run_ok(&["simulate", "--config", s(&cfg), "--out", s(&b), "--seed", "7"]);
    assert_ne!(fs::read(a.join("traj_0000.csv")).unwrap(), fs::read(b.join("traj_0000.csv")).unwrap());
    let manifest: Value = serde_json::from_str(&fs::read_to_string(b.join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 7);
}

#[test]
fn missing_config_is_a_validation_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let out = run(&["simulate", "--config", s(&missing), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(s(&missing)));
}

#[test]
fn zero_trajectories_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "cfg.json", "\"zero\"", 0.0, 0);
    let out = run(&["simulate", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_traj"));
}

#[test]
fn smooth_populates_columns_from_tau() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "cfg.json", "\"zero\"", 0.2, 1);
    let out = dir.path().join("o");
    run_ok(&["smooth", "--config", s(&cfg), "--out", s(&out)]);
    let (header, rows) = read_csv(&out.join("traj_0000.csv"));
    assert_eq!(
        &header[8..],
        [
            "smooth.sx.plus",
            "smooth.sx.minus_im",
            "smooth.sy.plus",
            "smooth.sy.minus_im",
            "smooth.sz.plus",
            "smooth.sz.minus_im"
        ]
    );
    for (k, row) in rows.iter().enumerate() {
        let filled = row[8..].iter().all(|f| !f.is_empty());
        let empty = row[8..].iter().all(|f| f.is_empty());
        if k < 20 {
            assert!(empty, "row {k}");
        } else {
            assert!(filled, "row {k}");
        }
    }
    // At τ the symmetric part equals the filter and the skew part vanishes.
    let row = &rows[20];
    for j in 0..3 {
        assert_eq!(row[8 + 2 * j], row[2 + 2 * j]);
        assert_eq!(row[9 + 2 * j].parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn smoothing_at_final_time_fills_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "cfg.json", "\"zero\"", 0.5, 1);
    let out = dir.path().join("o");
    run_ok(&["smooth", "--config", s(&cfg), "--out", s(&out)]);
    let (_, rows) = read_csv(&out.join("traj_0000.csv"));
    assert_eq!(rows.iter().filter(|r| !r[8].is_empty()).count(), 1);
    assert!(!rows.last().unwrap()[8].is_empty());
}

#[test]
fn smooth_rejects_non_qnd_with_norms() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "cfg.json", "\"pauli_x\"", 0.0, 1);
    let out = run(&["smooth", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(3));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("|[H, L]| = 2.828e0") && msg.contains("|[L, L†]| = 0.000e0"), "{msg}");
    // Filtering alone does not need the condition.
    run_ok(&["simulate", "--config", s(&cfg), "--out", s(&dir.path().join("p"))]);
}

#[test]
fn smooth_from_existing_records_matches_on_the_fly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "cfg.json", "\"zero\"", 0.1, 2);
    let sim = dir.path().join("sim");
    let direct = dir.path().join("direct");
    let replay = dir.path().join("replay");
    run_ok(&["simulate", "--config", s(&cfg), "--out", s(&sim)]);
    run_ok(&["smooth", "--config", s(&cfg), "--out", s(&direct)]);
    run_ok(&["smooth", "--config", s(&cfg), "--out", s(&replay), "--records", s(&sim)]);
    for k in 0..2 {
        let name = format!("traj_{k:04}.csv");
        assert_eq!(fs::read(direct.join(&name)).unwrap(), fs::read(replay.join(&name)).unwrap());
    }
    let single = dir.path().join("single");
    run_ok(&["smooth", "--config", s(&cfg), "--out", s(&single), "--records", s(&sim.join("traj_0001.csv"))]);
    assert_eq!(fs::read(single.join("traj_0001.csv")).unwrap(), fs::read(direct.join("traj_0001.csv")).unwrap());
}

#[test]
fn records_off_grid_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "cfg.json", "\"zero\"", 0.0, 1);
    let bad = dir.path().join("traj_0000.csv");
    fs::write(&bad, "t,dy\n0,\n0.5,0.1\n").unwrap();
    let out = run(&["smooth", "--config", s(&cfg), "--out", s(&dir.path().join("o")), "--records", s(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("off the grid"));
    fs::write(&bad, "t,x\n0,\n").unwrap();
    let out = run(&["smooth", "--config", s(&cfg), "--out", s(&dir.path().join("o")), "--records", s(&bad)]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing column dy"));
}

#[test]
fn oracle_report_and_cap() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "cfg.json", "\"zero\"", 0.0, 1);
    let out = dir.path().join("o");
    run_ok(&["oracle", "--config", s(&cfg), "--out", s(&out), "--n-steps", "8"]);
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("oracle_report.json")).unwrap()).unwrap();
    let checks = &report["checks"];
    assert!((checks["total_probability"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!(checks["orthogonality_residual"].as_f64().unwrap() < 1e-10);
    assert!(checks["unbiasedness_residual"].as_f64().unwrap() < 1e-10);
    assert_eq!(checks["mse_non_increasing"], true);
    let mse = checks["mse_by_n"].as_array().unwrap();
    assert_eq!(mse.len(), 3 * 9);
    for obs in ["sx", "sy", "sz"] {
        let series: Vec<f64> =
            mse.iter().filter(|r| r["observable"] == obs).map(|r| r["mse_symmetric"].as_f64().unwrap()).collect();
        assert!(series.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{obs}: {series:?}");
    }
    assert_eq!(report["records"].as_array().unwrap().len(), 3 * 256);

    let over = run(&["oracle", "--config", s(&cfg), "--out", s(&out), "--n-steps", "12"]);
    assert_eq!(over.status.code(), Some(4));
    let tight = bin()
        .args(["oracle", "--config", s(&cfg), "--out", s(&out), "--n-steps", "4"])
        .env("QSMOOTH_MAX_JOINT_DIM", "16")
        .output()
        .unwrap();
    assert_eq!(tight.status.code(), Some(4));
    let bad = bin()
        .args(["oracle", "--config", s(&cfg), "--out", s(&out), "--n-steps", "4"])
        .env("QSMOOTH_MAX_JOINT_DIM", "lots")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn oracle_rejects_tau_beyond_steps() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "cfg.json", "\"zero\"", 0.1, 1);
    let out = run(&["oracle", "--config", s(&cfg), "--out", s(&dir.path().join("o")), "--n-steps", "5"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn compare_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "cfg.json", "\"zero\"", 0.0, 1);
    let read =
        |out: &Path| -> Value { serde_json::from_str(&fs::read_to_string(out.join("compare.json")).unwrap()).unwrap() };
    let one = dir.path().join("one");
    run_ok(&["compare", "--config", s(&cfg), "--out", s(&one), "--dts", "0.01", "--n-steps", "6"]);
    let t = read(&one);
    assert_eq!(t["rows"].as_array().unwrap().len(), 1);
    assert!(t["filter_order"].is_null() && t["smoother_order"].is_null());

    let rep = dir.path().join("rep");
    run_ok(&["compare", "--config", s(&cfg), "--out", s(&rep), "--dts", "0.01,0.01", "--n-steps", "6"]);
    let rows = read(&rep)["rows"].as_array().unwrap().clone();
    assert_eq!(rows[0], rows[1]);

    let three = dir.path().join("three");
    run_ok(&["compare", "--config", s(&cfg), "--out", s(&three), "--dts", "1e-2,1e-3,1e-4"]);
    let t = read(&three);
    let errs: Vec<f64> = t["rows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["smoother_plus_error"].as_f64().unwrap().max(r["smoother_minus_error"].as_f64().unwrap()))
        .collect();
    assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
    let ferrs: Vec<f64> = t["rows"].as_array().unwrap().iter().map(|r| r["filter_error"].as_f64().unwrap()).collect();
    assert!(ferrs.windows(2).all(|w| w[1] < w[0]), "{ferrs:?}");

    let bad = run(&["compare", "--config", s(&cfg), "--out", s(&three), "--dts", "0.01,-1"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn compare_without_qnd_reports_filter_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "cfg.json", "\"pauli_x\"", 0.0, 1);
    let out = dir.path().join("o");
    run_ok(&["compare", "--config", s(&cfg), "--out", s(&out), "--dts", "0.01,0.001", "--n-steps", "4"]);
    let t: Value = serde_json::from_str(&fs::read_to_string(out.join("compare.json")).unwrap()).unwrap();
    assert!(t["rows"][0]["smoother_plus_error"].is_null());
    assert!(t["filter_order"].as_f64().unwrap() > 1.0);
}

#[test]
fn usage_errors_exit_with_validation_code() {
    let out = run(&["simulate"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn shipped_configs_run() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let dir = tempfile::tempdir().unwrap();
    let qnd = root.join("qubit_qnd.json");
    let out = dir.path().join("qnd");
    run_ok(&["smooth", "--config", s(&qnd), "--out", s(&out), "--threads", "2"]);
    assert!(out.join("traj_0007.csv").exists());

    let driven = root.join("driven_qubit.json");
    run_ok(&["simulate", "--config", s(&driven), "--out", s(&dir.path().join("driven"))]);
    let refused = run(&["smooth", "--config", s(&driven), "--out", s(&dir.path().join("driven"))]);
    assert_eq!(refused.status.code(), Some(3));
}
