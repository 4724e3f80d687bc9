//! `mdl`: simulate majority dynamics on G(n, p), sweep regimes, and check the exact bounds.
//!
//! Exit status: 0 on success, 1 on invalid input or a runtime error, 2 when a
//! requested check fails.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mdl_core::analysis::{delta_grid, verify_qk_bound};
use mdl_core::harness::{
    calibrate_coupon, run_sweep, run_trials, write_calibration, write_json, AggregateStats,
    ExperimentConfig, HarnessError, Regime,
};

#[derive(Debug, Parser)]
#[command(name = "mdl", version, about = "Asynchronous majority dynamics on binomial random graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run independent trials of one configuration.
    Simulate(RunArgs),
    /// Run one configuration over a grid of sizes and edge probabilities.
    Sweep(SweepArgs),
    /// Check q_k >= 1/2 + 51 delta / 100 by exact enumeration.
    VerifyQk(QkArgs),
    /// Run trials and report the per-phase predicates and coupling checks.
    PhaseDiagnostics(RunArgs),
    /// Compare sampled coupon-collector times with n H_n.
    CalibrateCoupon(CouponArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RegimeArg {
    Dense,
    Sparse,
    VerySparse,
}

impl From<RegimeArg> for Regime {
    fn from(r: RegimeArg) -> Self {
        match r {
            RegimeArg::Dense => Regime::Dense,
            RegimeArg::Sparse => Regime::Sparse,
            RegimeArg::VerySparse => Regime::VerySparse,
        }
    }
}

#[derive(Debug, Clone, Args)]
struct RunArgs {
    /// Number of nodes.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Edge probability [default: the regime preset].
    #[arg(long)]
    p: Option<f64>,
    /// Density regime; sets p from n unless --p is given, and validates an explicit --p
    /// [default: sparse when --p is absent].
    #[arg(long, value_enum)]
    regime: Option<RegimeArg>,
    /// Belief bias: each private belief is correct with probability 1/2 + delta.
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long, default_value_t = 100)]
    trials: u64,
    /// Base seed; trial i uses a seed derived from (seed, i).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Step budget as a multiple of n^2.
    #[arg(long, default_value_t = 20.0)]
    budget_factor: f64,
    /// Worker threads (0 = one per core).
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Output directory.
    #[arg(long, env = "MDL_OUT_DIR", default_value = "mdl-out")]
    out_dir: PathBuf,
    /// Run the auxiliary processes alongside each trial and check the coupling every round.
    #[arg(long)]
    coupling_checks: bool,
    /// Rounds between trajectory points; writes trajectory_<trial>.csv when given.
    #[arg(long)]
    trajectory_stride: Option<u64>,
    /// Extra rounds at which to snapshot the counts, comma separated.
    #[arg(long, value_delimiter = ',')]
    snapshot_times: Vec<u64>,
    /// Redraw each graph until it is connected.
    #[arg(long)]
    require_connected: bool,
    /// After termination, apply 10 n forced updates and count announcement changes.
    #[arg(long)]
    verify_fixed_point: bool,
    /// Multiplier on the 1/omega correction terms of the phase predicates.
    #[arg(long, default_value_t = 2.0)]
    cushion: f64,
}

impl RunArgs {
    fn config(&self) -> ExperimentConfig {
        let regime = match (self.regime, self.p) {
            (None, None) => Some(Regime::Sparse),
            (r, _) => r.map(Regime::from),
        };
        let p = self
            .p
            .unwrap_or_else(|| regime.unwrap_or(Regime::Sparse).preset_p(self.n));
        ExperimentConfig {
            regime,
            budget_factor: self.budget_factor,
            workers: self.workers,
            coupling_checks: self.coupling_checks,
            trajectory_stride: self.trajectory_stride,
            snapshot_times: self.snapshot_times.clone(),
            require_connected: self.require_connected,
            verify_fixed_point: self.verify_fixed_point,
            cushion: self.cushion,
            out_dir: Some(self.out_dir.clone()),
            ..ExperimentConfig::new(self.n, p, self.delta, self.trials, self.seed)
        }
    }
}

#[derive(Debug, Clone, Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Sizes to sweep, comma separated [default: --n].
    #[arg(long, value_delimiter = ',')]
    n_grid: Vec<usize>,
    /// Edge probabilities to sweep, comma separated [default: --p, or the regime preset per n].
    #[arg(long, value_delimiter = ',')]
    p_grid: Vec<f64>,
}

#[derive(Debug, Clone, Args)]
struct QkArgs {
    /// Largest k checked; every 2 <= k <= k-max is enumerated.
    #[arg(long, default_value_t = 500)]
    k_max: u64,
    /// Largest delta of the grid; at most 1/10.
    #[arg(long, default_value_t = 0.1)]
    delta_max: f64,
    /// Grid spacing in delta.
    #[arg(long, default_value_t = 0.01)]
    delta_step: f64,
    /// Also write the report as JSON to this file.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
struct CouponArgs {
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 1000)]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (0 = one per core).
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Largest accepted relative error of the mean.
    #[arg(long, default_value_t = 0.03)]
    tolerance: f64,
    /// Output directory.
    #[arg(long, env = "MDL_OUT_DIR", default_value = "mdl-out")]
    out_dir: PathBuf,
}

enum Failure {
    Invalid(String),
    CheckFailed(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        Failure::Invalid(e.to_string())
    }
}

fn summarize(cfg: &ExperimentConfig, s: &AggregateStats) {
    let c = s.outcome_counts;
    println!(
        "n = {}, p = {}, delta = {}, trials = {}: consensus_1 {}, consensus_0 {}, mixed_stable {}, budget_exhausted {}",
        cfg.n, cfg.p, cfg.delta, s.trials, c.consensus_1, c.consensus_0, c.mixed_stable, c.budget_exhausted
    );
    let w = s.probabilities.consensus_1.wilson_95;
    println!(
        "  P(consensus_1) = {:.4} [{:.4}, {:.4}], terminated at T-hat {:.4}",
        s.probabilities.consensus_1.estimate, w.0, w.1, s.terminated_at_t_hat.estimate
    );
    if let Some(t) = &s.termination_time {
        println!("  termination time: mean {:.1}, median {}, max {}", t.mean, t.median, t.max);
    }
}

fn fixed_point_ok(s: &AggregateStats) -> bool {
    s.fixed_point.is_none_or(|f| f.total_changes == 0)
}

fn simulate(args: &RunArgs) -> Result<(), Failure> {
    let cfg = args.config();
    let out = run_trials(&cfg)?;
    summarize(&cfg, &out.stats);
    println!("  wrote {}", args.out_dir.display());
    if !fixed_point_ok(&out.stats) {
        return Err(Failure::CheckFailed("forced updates changed a terminal configuration".into()));
    }
    Ok(())
}

fn sweep(args: &SweepArgs) -> Result<(), Failure> {
    let base = args.run.config();
    let ns = if args.n_grid.is_empty() { vec![args.run.n] } else { args.n_grid.clone() };
    let mut points = Vec::new();
    for &n in &ns {
        if args.p_grid.is_empty() {
            let p = args
                .run
                .p
                .unwrap_or_else(|| base.regime.unwrap_or(Regime::Sparse).preset_p(n));
            points.push((n, p));
        } else {
            points.extend(args.p_grid.iter().map(|&p| (n, p)));
        }
    }
    let results = run_sweep(&base, &points)?;
    for (cfg, stats) in &results {
        summarize(cfg, stats);
    }
    println!("  wrote {}", args.run.out_dir.display());
    if !results.iter().all(|(_, s)| fixed_point_ok(s)) {
        return Err(Failure::CheckFailed("forced updates changed a terminal configuration".into()));
    }
    Ok(())
}

fn verify_qk(args: &QkArgs) -> Result<(), Failure> {
    if !(args.delta_step > 0.0 && args.delta_step <= args.delta_max) {
        return Err(Failure::Invalid(format!(
            "delta step must lie in (0, delta-max], got {}",
            args.delta_step
        )));
    }
    let grid = delta_grid(args.delta_max, args.delta_step);
    let report = verify_qk_bound(args.k_max, &grid).map_err(|e| Failure::Invalid(e.to_string()))?;
    println!(
        "checked {} (k, delta) pairs for 2 <= k <= {}: {} violations, min slack {:.3e} at k = {}, delta = {}",
        report.checked,
        args.k_max,
        report.violations.len(),
        report.min_slack,
        report.argmin.0,
        report.argmin.1
    );
    if let Some(path) = &args.json {
        write_json(path, &report)?;
    }
    if !report.passed() {
        let v = &report.violations[0];
        return Err(Failure::CheckFailed(format!(
            "q_{} = {} below {} at delta = {}",
            v.k, v.q, v.bound, v.delta
        )));
    }
    Ok(())
}

fn phase_diagnostics(args: &RunArgs) -> Result<(), Failure> {
    let cfg = args.config();
    let Some(schedule) = cfg.phase_schedule() else {
        return Err(Failure::Invalid(format!(
            "no valid phase schedule for n = {}, p = {}, delta = {}",
            cfg.n, cfg.p, cfg.delta
        )));
    };
    let out = run_trials(&cfg)?;
    let s = &out.stats;
    summarize(&cfg, s);
    println!(
        "  schedule: omega = {:.4}, T1 = {}, T2 = {}, T3 = {}, s = {}, {:?}",
        schedule.omega, schedule.t1, schedule.t2, schedule.t3, schedule.s, schedule.pipeline
    );
    for (name, r) in &s.predicate_pass_rates {
        match r.rate {
            Some(rate) => println!("  {name}: {}/{} ({rate:.4})", r.passed, r.evaluated),
            None => println!("  {name}: not evaluated"),
        }
    }
    if let Some(b) = &s.batch_shrink {
        println!("  batch shrinkage: {}/{}", b.passed, b.evaluated);
    }
    let per_trial: Vec<_> = out
        .results
        .iter()
        .map(|r| (r.trial_id, &r.predicates, &r.batch_shrink, &r.coupling))
        .collect();
    write_json(&args.out_dir.join("phase_report.json"), &per_trial)?;
    if let Some(c) = &s.coupling {
        println!(
            "  coupling: {}/{} trials clean over {} rounds",
            c.clean_trials, c.trials, c.rounds_checked
        );
        if c.clean_trials != c.trials {
            return Err(Failure::CheckFailed(format!(
                "coupling violated in {} trials",
                c.trials - c.clean_trials
            )));
        }
    }
    if !fixed_point_ok(s) {
        return Err(Failure::CheckFailed("forced updates changed a terminal configuration".into()));
    }
    Ok(())
}

fn calibrate(args: &CouponArgs) -> Result<(), Failure> {
    let cal = calibrate_coupon(args.n, args.trials, args.seed, args.workers)?;
    write_calibration(&args.out_dir, &cal)?;
    println!(
        "mean T-hat {:.1} vs n H_n = {:.1} ({:.2}% off); P(T-hat < n ln n - 3n) = {:.4} (bound {:.4})",
        cal.mean,
        cal.expected_mean,
        100.0 * cal.relative_error,
        cal.lower_tail.estimate,
        cal.lower_tail_bound
    );
    if cal.relative_error > args.tolerance {
        return Err(Failure::CheckFailed(format!(
            "relative error {:.4} exceeds {}",
            cal.relative_error, args.tolerance
        )));
    }
    if cal.lower_tail.estimate > 0.10 {
        return Err(Failure::CheckFailed(format!(
            "lower-tail frequency {:.4} exceeds 0.10",
            cal.lower_tail.estimate
        )));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.render().to_string();
            eprintln!("{}", text.lines().next().unwrap_or("invalid arguments"));
            return ExitCode::from(1);
        }
    };
    let result = match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Sweep(a) => sweep(a),
        Command::VerifyQk(a) => verify_qk(a),
        Command::PhaseDiagnostics(a) => phase_diagnostics(a),
        Command::CalibrateCoupon(a) => calibrate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::CheckFailed(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(2)
        }
    }
}
