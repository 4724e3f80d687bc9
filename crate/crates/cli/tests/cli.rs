use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mdl_core::harness::{load_aggregate, load_trials, Regime, AGGREGATE_FILE, TRIALS_FILE};

fn mdl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mdl"))
        .args(args)
        .env_remove("MDL_OUT_DIR")
        .output()
        .expect("spawn mdl")
}

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn check_golden(name: &str, actual: &str) {
    let path = golden(name);
    if std::env::var_os("MDL_BLESS").is_some() {
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("{}: {e}; rerun with MDL_BLESS=1", path.display()));
    assert_eq!(actual, expected, "help text differs from {}", path.display());
}

#[test]
fn help_matches_golden() {
    for (args, name) in [
        (vec!["--help"], "help.txt"),
        (vec!["simulate", "--help"], "help_simulate.txt"),
        (vec!["sweep", "--help"], "help_sweep.txt"),
        (vec!["verify-qk", "--help"], "help_verify_qk.txt"),
        (vec!["phase-diagnostics", "--help"], "help_phase_diagnostics.txt"),
        (vec!["calibrate-coupon", "--help"], "help_calibrate_coupon.txt"),
    ] {
        let out = mdl(&args);
        assert!(out.status.success(), "{args:?}");
        check_golden(name, &String::from_utf8(out.stdout).unwrap());
    }
}

#[test]
fn config_echo_matches_flags() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out = mdl(&[
        "simulate",
        "--n", "40",
        "--p", "0.25",
        "--delta", "0.15",
        "--trials", "3",
        "--seed", "99",
        "--budget-factor", "7.5",
        "--workers", "1",
        "--trajectory-stride", "5",
        "--snapshot-times", "10,20",
        "--verify-fixed-point",
        "--require-connected",
        "--cushion", "3",
        "--out-dir", out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cfg = load_aggregate(&out_dir.join(AGGREGATE_FILE)).unwrap().config;
    assert_eq!(cfg.n, 40);
    assert_eq!(cfg.p, 0.25);
    assert_eq!(cfg.delta, 0.15);
    assert_eq!(cfg.trials, 3);
    assert_eq!(cfg.base_seed, 99);
    assert_eq!(cfg.budget_factor, 7.5);
    assert_eq!(cfg.workers, 1);
    assert_eq!(cfg.regime, None);
    assert!(!cfg.coupling_checks);
    assert_eq!(cfg.trajectory_stride, Some(5));
    assert_eq!(cfg.snapshot_times, vec![10, 20]);
    assert!(cfg.require_connected);
    assert!(cfg.verify_fixed_point);
    assert_eq!(cfg.cushion, 3.0);
    assert_eq!(cfg.out_dir.as_deref(), Some(out_dir.as_path()));
    assert_eq!(load_trials(&out_dir.join(TRIALS_FILE)).unwrap().len(), 3);
}

#[test]
fn regime_preset_when_p_absent() {
    let dir = tempfile::tempdir().unwrap();
    let out = mdl(&[
        "simulate", "--n", "50", "--regime", "very-sparse", "--trials", "1",
        "--out-dir", dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cfg = load_aggregate(&dir.path().join(AGGREGATE_FILE)).unwrap().config;
    assert_eq!(cfg.regime, Some(Regime::VerySparse));
    assert_eq!(cfg.p, Regime::VerySparse.preset_p(50));
}

#[test]
fn verify_qk_passes() {
    let out = mdl(&["verify-qk", "--k-max", "500", "--delta-max", "0.1"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("0 violations"));
}

#[test]
fn verify_qk_rejects_large_delta() {
    let out = mdl(&["verify-qk", "--k-max", "10", "--delta-max", "0.3"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn single_node_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = mdl(&[
        "simulate", "--n", "1", "--p", "0.5", "--delta", "0.1", "--trials", "1",
        "--out-dir", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = load_trials(&dir.path().join(TRIALS_FILE)).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].termination_time, 1);
}

#[test]
fn invalid_delta_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = mdl(&[
        "simulate", "--n", "10", "--p", "0.5", "--delta", "0.7", "--trials", "1",
        "--out-dir", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 1, "{stderr}");
    assert!(stderr.contains("delta"));
    assert!(!dir.path().join(TRIALS_FILE).exists());
}

#[test]
fn unknown_flag_exits_one() {
    let out = mdl(&["simulate", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(String::from_utf8(out.stderr).unwrap().lines().count(), 1);
}

#[test]
fn out_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("from-env");
    let out = Command::new(env!("CARGO_BIN_EXE_mdl"))
        .args(["simulate", "--n", "20", "--p", "0.3", "--trials", "2"])
        .env("MDL_OUT_DIR", &target)
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(target.join(TRIALS_FILE).exists());
    assert!(!dir.path().join("mdl-out").exists());
}

#[test]
fn sweep_writes_one_directory_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let out = mdl(&[
        "sweep", "--n-grid", "30,40", "--p-grid", "0.2,0.4", "--trials", "2",
        "--out-dir", dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for i in 0..4 {
        assert!(dir.path().join(format!("point_{i:03}")).join(TRIALS_FILE).exists());
    }
    assert!(dir.path().join("sweep.csv").exists());
}

#[test]
fn coupon_calibration_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = mdl(&[
        "calibrate-coupon", "--n", "200", "--trials", "300", "--seed", "1",
        "--out-dir", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("calibration.json").exists());
}

#[test]
fn phase_diagnostics_needs_a_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let out = mdl(&[
        "phase-diagnostics", "--n", "200", "--regime", "dense", "--trials", "1",
        "--out-dir", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
}
