use std::path::Path;

use mdl_core::harness::{
    aggregate, load_aggregate, load_trials, run_sweep, run_trials, Aggregator, ExperimentConfig,
    Regime, AGGREGATE_FILE, SWEEP_FILE, TRIALS_FILE,
};

const HEADER: &str = "trial_id,seed,n,p,delta,outcome,termination_time,t_hat,terminated_at_t_hat,y1_final,y0_final,phase1_pass,phase2_pass,phase3_pass";

fn small(dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(30, 0.2, 0.1, 5, 42);
    cfg.out_dir = Some(dir.to_path_buf());
    cfg
}

#[test]
fn trials_csv_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    run_trials(&small(dir.path())).unwrap();
    let body = std::fs::read_to_string(dir.path().join(TRIALS_FILE)).unwrap();
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/trials_small.csv");
    if std::env::var_os("MDL_BLESS").is_some() {
        std::fs::write(&golden, &body).unwrap();
    }
    assert_eq!(body, std::fs::read_to_string(golden).unwrap());
    assert_eq!(body.lines().next(), Some(HEADER));
}

#[test]
fn round_trip_recovers_outcome_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.trials = 40;
    cfg.n = 60;
    cfg.p = 0.5;
    let out = run_trials(&cfg).unwrap();
    let rows = load_trials(&dir.path().join(TRIALS_FILE)).unwrap();
    assert_eq!(rows.len(), 40);
    assert_eq!(rows, out.rows(&cfg));
    for outcome in [
        mdl_core::dynamics::Outcome::Consensus1,
        mdl_core::dynamics::Outcome::Consensus0,
        mdl_core::dynamics::Outcome::MixedStable,
        mdl_core::dynamics::Outcome::StepBudgetExhausted,
    ] {
        let k = rows.iter().filter(|r| r.outcome == outcome).count() as u64;
        assert_eq!(k, out.stats.outcome_counts.get(outcome));
    }
    let file = load_aggregate(&dir.path().join(AGGREGATE_FILE)).unwrap();
    assert_eq!(file.config, cfg);
    assert_eq!(file.stats, out.stats);
    // Only the final files remain; temporary files were renamed away.
    let names: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(names.len(), 2, "{names:?}");
}

#[test]
fn worker_count_does_not_change_results() {
    let mut cfg = ExperimentConfig::for_regime(Regime::Sparse, 400, 0.1, 24, 3);
    cfg.workers = 1;
    let serial = run_trials(&cfg).unwrap();
    for workers in [0, 2, 5] {
        cfg.workers = workers;
        let parallel = run_trials(&cfg).unwrap();
        assert_eq!(parallel.stats, serial.stats);
        assert_eq!(parallel.results, serial.results);
    }
}

#[test]
fn aggregation_ignores_trial_order() {
    let cfg = ExperimentConfig::new(80, 0.1, 0.1, 30, 8);
    let out = run_trials(&cfg).unwrap();
    let mut reversed = out.results.clone();
    reversed.reverse();
    assert_eq!(aggregate(&cfg, &reversed).unwrap(), out.stats);
    // Merging partial aggregates in either order gives the same statistics.
    let (a, b) = out.results.split_at(11);
    let part = |rs: &[mdl_core::harness::TrialResult]| {
        let mut agg = Aggregator::default();
        rs.iter().for_each(|r| agg.push(r));
        agg
    };
    let finish = |agg: Aggregator| {
        agg.finish(out.stats.cascade_bounds, out.stats.coupon_collector_mean, out.stats.phase_schedule)
            .unwrap()
    };
    assert_eq!(finish(part(a).merge(part(b))), out.stats);
    assert_eq!(finish(part(b).merge(part(a))), out.stats);
}

#[test]
fn trajectories_are_written_when_a_stride_is_set() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::new(2000, 1e-3, 0.1, 2, 4);
    cfg.coupling_checks = true;
    cfg.trajectory_stride = Some(100);
    cfg.out_dir = Some(dir.path().to_path_buf());
    run_trials(&cfg).unwrap();
    let text = std::fs::read_to_string(dir.path().join("trajectory_1.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,y_perp,y0,y1,z_qmark"));
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first, ["0", "2000", "0", "0", "0"]);
    // Rounds past T2 have no auxiliary process.
    let t2 = cfg.phase_schedule().unwrap().t2;
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let t: u64 = f[0].parse().unwrap();
        assert_eq!(f[4].is_empty(), t > t2, "{line}");
    }
}

#[test]
fn trajectories_leave_z_empty_without_coupling() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.trajectory_stride = Some(10);
    run_trials(&cfg).unwrap();
    let text = std::fs::read_to_string(dir.path().join("trajectory_0.csv")).unwrap();
    assert!(text.lines().skip(1).all(|l| l.ends_with(',')));
}

#[test]
fn sweep_writes_points_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let mut base = ExperimentConfig::new(50, 0.1, 0.2, 6, 1);
    base.out_dir = Some(dir.path().to_path_buf());
    let points = [(50, 0.1), (50, 0.3), (80, 0.3)];
    let out = run_sweep(&base, &points).unwrap();
    assert_eq!(out.len(), 3);
    let summary = std::fs::read_to_string(dir.path().join(SWEEP_FILE)).unwrap();
    assert_eq!(summary.lines().count(), 4);
    for k in 0..3 {
        let d = dir.path().join(format!("point_{k:03}"));
        assert!(d.join(TRIALS_FILE).exists() && d.join(AGGREGATE_FILE).exists());
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = ExperimentConfig::new(10, 0.5, 0.1, 1, 0);
    cfg.delta = 0.5;
    assert!(run_trials(&cfg).is_err());
    cfg.delta = 0.1;
    cfg.budget_factor = 0.0;
    assert!(run_trials(&cfg).is_err());
}
