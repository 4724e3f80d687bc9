//! Monte Carlo driver: configuration, trial execution, aggregation and persistence.

mod io;
mod stats;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{
    load_aggregate, load_trials, trajectory_path, write_csv, write_json, write_results,
    write_trajectory, AggregateFile, TrialRow, AGGREGATE_FILE, TRIALS_FILE,
};
pub use stats::{
    wilson_interval, AggregateStats, Aggregator, CouplingSummary, FixedPointSummary,
    OutcomeCounts, OutcomeProbabilities, PassRate, PhasePassRates, Proportion, TimeStats,
};

use crate::analysis::{
    batch_shrink_check, cascade_bounds, coupon_collector_mean, phase_predicates, AnalysisError,
    BatchShrinkReport, PhaseReport,
};
use crate::coupling::{CoupledTrial, CouplingError, CouplingReport, PhaseConfig, Pipeline};
use crate::dynamics::{
    check_delta, coupon_collector_time, forced_update_changes, Beliefs, DynamicsError,
    DynamicsRun, OpinionState, Probes, RunRecord, Selector, StopPolicy,
};
use crate::graph::{
    degree_threshold, generate_gnp, is_connected, DeferredGraph, DegreeClassification, Graph,
    GraphError,
};
use crate::rng::{derive_trial_seed, substream, Substream};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Coupling(#[from] CouplingError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("no connected graph after {attempts} draws")]
    Connectivity { attempts: u32 },
    #[error("worker pool: {0}")]
    WorkerPool(String),
}

/// Edge-density regime. Each has a preset `p(n)` and its own admissible range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Constant `p`; preset 1/2.
    Dense,
    /// `ln n << pn << n`; preset `p = (ln n)^2 / n`.
    Sparse,
    /// `pn = ln n + O(ln n)` above the connectivity threshold; preset `p = (ln n + 5) / n`.
    VerySparse,
}

impl Regime {
    pub fn preset_p(self, n: usize) -> f64 {
        let nf = n.max(2) as f64;
        let ln_n = nf.ln();
        let p = match self {
            Regime::Dense => 0.5,
            Regime::Sparse => ln_n * ln_n / nf,
            Regime::VerySparse => (ln_n + 5.0) / nf,
        };
        p.min(1.0)
    }

    /// Rejects `(n, p)` pairs outside the regime's hypotheses.
    pub fn validate(self, n: usize, p: f64) -> Result<(), String> {
        let nf = n as f64;
        let pn = p * nf;
        match self {
            Regime::Dense if p > 0.0 && p <= 1.0 => Ok(()),
            Regime::Dense => Err(format!("dense regime needs p in (0, 1], got {p}")),
            Regime::Sparse | Regime::VerySparse if n < 3 => {
                Err(format!("{self:?} regime needs n >= 3, got {n}"))
            }
            Regime::Sparse | Regime::VerySparse if !(pn > nf.ln() && p < 1.0) => Err(format!(
                "{self:?} regime needs ln n < pn and p < 1, got pn = {pn:.3} with ln n = {:.3}",
                nf.ln()
            )),
            _ => Ok(()),
        }
    }

    /// Best-matching regime for an explicit `(n, p)`.
    pub fn classify(n: usize, p: f64) -> Regime {
        let ln_n = (n.max(2) as f64).ln();
        if p >= 0.1 {
            Regime::Dense
        } else if p * n as f64 <= ln_n.powf(1.5) {
            Regime::VerySparse
        } else {
            Regime::Sparse
        }
    }

    pub fn pipeline(self) -> Pipeline {
        match self {
            Regime::VerySparse => Pipeline::VerySparse,
            Regime::Sparse | Regime::Dense => Pipeline::NotVerySparse,
        }
    }
}

impl std::str::FromStr for Regime {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dense" => Ok(Regime::Dense),
            "sparse" => Ok(Regime::Sparse),
            "very-sparse" | "very_sparse" => Ok(Regime::VerySparse),
            _ => Err(format!("unknown regime {s:?}")),
        }
    }
}

/// Everything needed to reproduce one batch of trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub n: usize,
    pub p: f64,
    pub regime: Option<Regime>,
    pub delta: f64,
    pub trials: u64,
    pub base_seed: u64,
    /// Step budget as a multiple of `n^2`.
    pub budget_factor: f64,
    /// Worker threads; 0 lets the pool decide.
    pub workers: usize,
    pub coupling_checks: bool,
    /// Rounds between trajectory points; when set, trajectories are written out.
    pub trajectory_stride: Option<u64>,
    pub snapshot_times: Vec<u64>,
    /// Redraw the graph (from fresh edge substreams) until it is connected.
    pub require_connected: bool,
    /// Apply `10 n` forced updates after termination and count changes.
    pub verify_fixed_point: bool,
    /// Multiplier on the `1/omega` correction terms of the phase predicates.
    pub cushion: f64,
    pub out_dir: Option<PathBuf>,
}

/// Draw limit when conditioning on connectivity.
pub const MAX_GRAPH_DRAWS: u32 = 10_000;

impl ExperimentConfig {
    pub fn new(n: usize, p: f64, delta: f64, trials: u64, base_seed: u64) -> Self {
        ExperimentConfig {
            n,
            p,
            regime: None,
            delta,
            trials,
            base_seed,
            budget_factor: 20.0,
            workers: 0,
            coupling_checks: false,
            trajectory_stride: None,
            snapshot_times: Vec::new(),
            require_connected: false,
            verify_fixed_point: false,
            cushion: 2.0,
            out_dir: None,
        }
    }

    /// Configuration whose `p` comes from the regime preset.
    pub fn for_regime(regime: Regime, n: usize, delta: f64, trials: u64, base_seed: u64) -> Self {
        ExperimentConfig {
            regime: Some(regime),
            ..Self::new(n, regime.preset_p(n), delta, trials, base_seed)
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::InvalidConfig(m));
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        if self.n > u32::MAX as usize {
            return bad(format!("n = {} exceeds the node id range", self.n));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return bad(format!("p must lie in [0, 1], got {}", self.p));
        }
        check_delta(self.delta)?;
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if !(self.budget_factor.is_finite() && self.budget_factor > 0.0) {
            return bad(format!("budget factor must be positive, got {}", self.budget_factor));
        }
        if !(self.cushion.is_finite() && self.cushion >= 0.0) {
            return bad(format!("cushion must be nonnegative, got {}", self.cushion));
        }
        if self.trajectory_stride == Some(0) {
            return bad("trajectory stride must be at least 1".into());
        }
        if let Some(regime) = self.regime {
            regime.validate(self.n, self.p).map_err(HarnessError::InvalidConfig)?;
        }
        if self.coupling_checks {
            if self.require_connected {
                return bad("coupling checks cannot be combined with conditioning on connectivity".into());
            }
            if let Err(e) = self.phase_schedule_result() {
                return bad(format!("coupling checks need a valid phase schedule: {e}"));
            }
        }
        Ok(())
    }

    pub fn step_budget(&self) -> u64 {
        let n = self.n as f64;
        (self.budget_factor * n * n).ceil().max(1.0) as u64
    }

    pub fn effective_regime(&self) -> Regime {
        self.regime.unwrap_or_else(|| Regime::classify(self.n, self.p))
    }

    fn phase_schedule_result(&self) -> Result<PhaseConfig, CouplingError> {
        PhaseConfig::new(self.n, self.p, self.delta, self.effective_regime().pipeline())
    }

    /// The phase boundaries, when `(n, p, delta)` admits a valid schedule.
    pub fn phase_schedule(&self) -> Option<PhaseConfig> {
        self.phase_schedule_result().ok()
    }

    pub fn stop_policy(&self) -> StopPolicy {
        let n = self.n as u64;
        let stride = self.trajectory_stride.unwrap_or(match self.effective_regime() {
            Regime::Dense => n,
            _ => (n / 100).max(1),
        });
        StopPolicy {
            step_budget: self.step_budget(),
            check_cadence: n.max(1),
            trajectory_stride: stride.max(1),
        }
    }
}

/// Results of one trial beyond its CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial_id: u64,
    pub seed: u64,
    pub record: RunRecord,
    /// Graphs drawn, including those rejected as disconnected.
    pub graph_draws: u32,
    pub predicates: Option<PhaseReport>,
    pub batch_shrink: Option<BatchShrinkReport>,
    pub coupling: Option<CouplingReport>,
    /// Announcement changes under `10 n` forced updates after termination.
    pub fixed_point_changes: Option<usize>,
}

struct TrialPlan {
    policy: StopPolicy,
    phases: Option<PhaseConfig>,
    snapshot_times: Vec<u64>,
    threshold: Option<f64>,
}

impl TrialPlan {
    fn new(cfg: &ExperimentConfig) -> Self {
        let phases = cfg.phase_schedule();
        let mut snapshot_times = cfg.snapshot_times.clone();
        if let Some(ph) = &phases {
            snapshot_times.extend([ph.t1, ph.t2, ph.t3]);
        }
        snapshot_times.sort_unstable();
        snapshot_times.dedup();
        let threshold = match phases {
            Some(ph) if ph.pipeline == Pipeline::VerySparse => degree_threshold(cfg.n).ok(),
            _ => None,
        };
        TrialPlan {
            policy: cfg.stop_policy(),
            phases,
            snapshot_times,
            threshold,
        }
    }

    fn probes(&self, large_mask: Option<Vec<bool>>) -> Probes {
        let mut probes = Probes {
            snapshot_times: self.snapshot_times.clone(),
            ..Probes::default()
        };
        if let Some(ph) = &self.phases {
            match ph.pipeline {
                Pipeline::NotVerySparse => probes.fresh_zero_window = Some((ph.t2, ph.t3)),
                Pipeline::VerySparse => {
                    if large_mask.is_some() {
                        probes.batches = Some((ph.t3, ph.t3));
                    }
                }
            }
        }
        probes.large_mask = large_mask;
        probes
    }
}

fn draw_graph(cfg: &ExperimentConfig, seed: u64) -> Result<(Graph, u32), HarnessError> {
    for attempt in 0..MAX_GRAPH_DRAWS {
        let mut rng = substream(seed, Substream::Edges { attempt });
        let g = generate_gnp(cfg.n, cfg.p, &mut rng)?;
        if !cfg.require_connected || is_connected(&g) {
            return Ok((g, attempt + 1));
        }
    }
    Err(HarnessError::Connectivity {
        attempts: MAX_GRAPH_DRAWS,
    })
}

/// Runs trial `index` of `cfg` to completion.
pub fn run_trial(cfg: &ExperimentConfig, index: u64) -> Result<TrialResult, HarnessError> {
    run_planned_trial(cfg, &TrialPlan::new(cfg), index)
}

fn run_planned_trial(
    cfg: &ExperimentConfig,
    plan: &TrialPlan,
    index: u64,
) -> Result<TrialResult, HarnessError> {
    let seed = derive_trial_seed(cfg.base_seed, index);
    let n = cfg.n;
    let beliefs = Beliefs::lazy(n, cfg.delta, substream(seed, Substream::Beliefs))?;
    let mut state = OpinionState::new(beliefs)?;
    let mut selector = Selector::new(n, substream(seed, Substream::Selection));

    let (mut record, graph_draws, coupling, large_mask_used, fixed_point_changes) =
        if cfg.coupling_checks {
            let phases = plan
                .phases
                .ok_or_else(|| HarnessError::InvalidConfig("missing phase schedule".into()))?;
            let mut graph = DeferredGraph::new(n, cfg.p, substream(seed, Substream::Edges { attempt: 0 }))?;
            let mut run = DynamicsRun::new(plan.policy, plan.probes(None), &state);
            let (_, report) = CoupledTrial {
                graph: &mut graph,
                state: &mut state,
                run: &mut run,
                selector: &mut selector,
                phases,
                checks: true,
            }
            .run_phases(phases.t2)?;
            let record = run.run(&mut graph, &mut state, &mut selector, seed)?;
            let changes = (cfg.verify_fixed_point && record.outcome.terminated())
                .then(|| forced_update_changes(&state, &graph, 10 * n));
            (record, 1, Some(report), false, changes)
        } else {
            let (mut graph, draws) = draw_graph(cfg, seed)?;
            let mask = plan
                .threshold
                .map(|k| DegreeClassification::new(&graph, k).large_mask(n));
            let has_mask = mask.is_some();
            let run = DynamicsRun::new(plan.policy, plan.probes(mask), &state);
            let record = run.run(&mut graph, &mut state, &mut selector, seed)?;
            let changes = (cfg.verify_fixed_point && record.outcome.terminated())
                .then(|| forced_update_changes(&state, &graph, 10 * n));
            (record, draws, None, has_mask, changes)
        };

    let (predicates, batch_shrink) = match &plan.phases {
        Some(ph) => {
            let report = phase_predicates(&record, coupling.as_ref(), ph, cfg.cushion);
            record.phase_flags.phase1 = report.phase_pass(1);
            record.phase_flags.phase2 = report.phase_pass(2);
            record.phase_flags.phase3 = report.phase_pass(3);
            let shrink = large_mask_used.then(|| batch_shrink_check(&record, ph));
            (Some(report), shrink)
        }
        None => (None, None),
    };
    if cfg.trajectory_stride.is_none() {
        record.trajectory = Vec::new();
    }
    Ok(TrialResult {
        trial_id: index,
        seed,
        record,
        graph_draws,
        predicates,
        batch_shrink,
        coupling,
        fixed_point_changes,
    })
}

/// Maps `f` over `0..count`, on a pool of `workers` threads when available.
/// Output order always follows the index.
pub fn map_indexed<T, F>(count: u64, workers: usize, f: F) -> Result<Vec<T>, HarnessError>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if workers != 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| HarnessError::WorkerPool(e.to_string()))?;
        return Ok(pool.install(|| (0..count).into_par_iter().map(&f).collect()));
    }
    let _ = workers;
    Ok((0..count).map(f).collect())
}

/// Per-trial results and their aggregate.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub stats: AggregateStats,
    pub results: Vec<TrialResult>,
}

impl ExperimentOutput {
    pub fn rows(&self, cfg: &ExperimentConfig) -> Vec<TrialRow> {
        self.results.iter().map(|r| TrialRow::new(cfg, r)).collect()
    }
}

pub fn aggregate(cfg: &ExperimentConfig, results: &[TrialResult]) -> Result<AggregateStats, HarnessError> {
    let mut agg = Aggregator::default();
    for r in results {
        agg.push(r);
    }
    let bounds = if cfg.p > 0.0 {
        Some(cascade_bounds(cfg.p, cfg.delta)?.into())
    } else {
        None
    };
    agg.finish(bounds, coupon_collector_mean(cfg.n as u64), cfg.phase_schedule())
}

/// Runs every trial of `cfg`, aggregates, and writes the results when `out_dir` is set.
pub fn run_trials(cfg: &ExperimentConfig) -> Result<ExperimentOutput, HarnessError> {
    cfg.validate()?;
    let plan = TrialPlan::new(cfg);
    let results = map_indexed(cfg.trials, cfg.workers, |i| run_planned_trial(cfg, &plan, i))?
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let stats = aggregate(cfg, &results)?;
    if let Some(dir) = &cfg.out_dir {
        write_results(dir, cfg, &stats, &results)?;
    }
    Ok(ExperimentOutput { stats, results })
}

/// One row of `sweep.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub p: f64,
    pub delta: f64,
    pub trials: u64,
    pub consensus_1: u64,
    pub consensus_0: u64,
    pub mixed_stable: u64,
    pub budget_exhausted: u64,
    pub p_correct: f64,
    pub p_correct_lo: f64,
    pub p_correct_hi: f64,
    pub p_incorrect: f64,
    pub p_incorrect_lo: f64,
    pub p_incorrect_hi: f64,
    pub p0_bound: Option<f64>,
    pub p1_bound: Option<f64>,
    pub mean_termination_time: Option<f64>,
    pub mean_t_hat: Option<f64>,
    pub n_ln_n: f64,
    pub dir: String,
}

pub const SWEEP_FILE: &str = "sweep.csv";

/// Runs `base` at every `(n, p)` point. Point `k` writes into `out_dir/point_<k>`
/// and a summary row goes to `out_dir/sweep.csv`.
pub fn run_sweep(
    base: &ExperimentConfig,
    points: &[(usize, f64)],
) -> Result<Vec<(ExperimentConfig, AggregateStats)>, HarnessError> {
    if points.is_empty() {
        return Err(HarnessError::InvalidConfig("sweep needs at least one point".into()));
    }
    let mut out = Vec::with_capacity(points.len());
    let mut rows = Vec::with_capacity(points.len());
    for (k, &(n, p)) in points.iter().enumerate() {
        let name = format!("point_{k:03}");
        let cfg = ExperimentConfig {
            n,
            p,
            out_dir: base.out_dir.as_ref().map(|d| d.join(&name)),
            ..base.clone()
        };
        let stats = run_trials(&cfg)?.stats;
        let pr = &stats.probabilities;
        let nf = n as f64;
        rows.push(SweepRow {
            n,
            p,
            delta: cfg.delta,
            trials: cfg.trials,
            consensus_1: stats.outcome_counts.consensus_1,
            consensus_0: stats.outcome_counts.consensus_0,
            mixed_stable: stats.outcome_counts.mixed_stable,
            budget_exhausted: stats.outcome_counts.budget_exhausted,
            p_correct: pr.consensus_1.estimate,
            p_correct_lo: pr.consensus_1.wilson_95.0,
            p_correct_hi: pr.consensus_1.wilson_95.1,
            p_incorrect: pr.consensus_0.estimate,
            p_incorrect_lo: pr.consensus_0.wilson_95.0,
            p_incorrect_hi: pr.consensus_0.wilson_95.1,
            p0_bound: stats.cascade_bounds.map(|b| b.p0),
            p1_bound: stats.cascade_bounds.map(|b| b.p1),
            mean_termination_time: stats.termination_time.as_ref().map(|t| t.mean),
            mean_t_hat: stats.t_hat.as_ref().map(|t| t.mean),
            n_ln_n: nf * nf.ln(),
            dir: name,
        });
        out.push((cfg, stats));
    }
    if let Some(dir) = &base.out_dir {
        write_csv(&dir.join(SWEEP_FILE), &rows)?;
    }
    Ok(out)
}

/// Coupon-collector times of the selection process against `n H_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouponCalibration {
    pub n: usize,
    pub trials: u64,
    pub base_seed: u64,
    pub expected_mean: f64,
    pub mean: f64,
    pub relative_error: f64,
    /// `n ln n - 3 n`.
    pub lower_tail_threshold: f64,
    pub lower_tail: Proportion,
    /// `e^{-3}`.
    pub lower_tail_bound: f64,
    pub t_hat: TimeStats,
}

/// Samples `T-hat` from the selection substream of each trial seed.
pub fn calibrate_coupon(
    n: usize,
    trials: u64,
    base_seed: u64,
    workers: usize,
) -> Result<CouponCalibration, HarnessError> {
    if n == 0 || trials == 0 {
        return Err(HarnessError::InvalidConfig("n and trials must be positive".into()));
    }
    let mut times = map_indexed(trials, workers, |i| {
        let seed = derive_trial_seed(base_seed, i);
        coupon_collector_time(&mut Selector::new(n, substream(seed, Substream::Selection)))
    })?;
    times.sort_unstable();
    let nf = n as f64;
    let threshold = nf * nf.ln() - 3.0 * nf;
    let below = times.iter().filter(|&&t| (t as f64) < threshold).count() as u64;
    let stats = stats::time_stats(&times).expect("trials >= 1");
    let expected = coupon_collector_mean(n as u64);
    Ok(CouponCalibration {
        n,
        trials,
        base_seed,
        expected_mean: expected,
        mean: stats.mean,
        relative_error: (stats.mean - expected).abs() / expected,
        lower_tail_threshold: threshold,
        lower_tail: Proportion::new(below, trials)?,
        lower_tail_bound: (-3.0f64).exp(),
        t_hat: stats,
    })
}

/// Writes `calibration.json` into `dir`.
pub fn write_calibration(dir: &Path, cal: &CouponCalibration) -> Result<(), HarnessError> {
    write_json(&dir.join("calibration.json"), cal)
}
