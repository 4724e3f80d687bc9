//! Exact quantities and the per-phase statistical predicates.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::coupling::{CouplingReport, PhaseConfig, Pipeline};
use crate::dynamics::{RunRecord, Snapshot};

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("delta must lie in (0, 1/2), got {0}")]
    InvalidDelta(f64),
    #[error("the q_k bound covers delta in (0, 1/10], got {0}")]
    DeltaOutsideRange(f64),
    #[error("k_max must be at least 2, got {0}")]
    KMaxTooSmall(u64),
    #[error("edge probability must lie in (0, 1], got {0}")]
    InvalidProbability(f64),
}

/// Neumaier-compensated sum of the values in ascending order.
fn compensated_sum(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let mut sum = 0.0;
    let mut carry = 0.0;
    for &x in values.iter() {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            carry += (sum - t) + x;
        } else {
            carry += (x - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

/// `q_k` together with the total mass of the binomial terms it enumerated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QkEvaluation {
    pub q: f64,
    pub total_mass: f64,
}

/// Probability that a node whose `k` announced neighbours are independently 1
/// with probability `1/2 + delta/2` ends up announcing 1, ties going to a
/// belief that is 1 with probability `1/2 + delta`.
pub fn q_value(k: u64, delta: f64) -> Result<f64, AnalysisError> {
    q_value_detailed(k, delta).map(|e| e.q)
}

pub fn q_value_detailed(k: u64, delta: f64) -> Result<QkEvaluation, AnalysisError> {
    if !(delta > 0.0 && delta < 0.5) {
        return Err(AnalysisError::InvalidDelta(delta));
    }
    let success = 0.5 + delta / 2.0;
    let ln_odds = (success / (1.0 - success)).ln();
    let kf = k as f64;
    let mode = (((kf + 1.0) * success).floor() as u64).min(k);
    // Log of each binomial term relative to the mode, by the ratio recurrence.
    let mut ln_rel = vec![0.0; k as usize + 1];
    for i in mode + 1..=k {
        let step = ((kf - i as f64 + 1.0) / i as f64).ln() + ln_odds;
        ln_rel[i as usize] = ln_rel[i as usize - 1] + step;
    }
    for i in (0..mode).rev() {
        let step = ((i as f64 + 1.0) / (kf - i as f64)).ln() - ln_odds;
        ln_rel[i as usize] = ln_rel[i as usize + 1] + step;
    }
    let mut mass = Vec::with_capacity(k as usize + 1);
    let mut favourable = Vec::with_capacity(k as usize / 2 + 2);
    for (i, &l) in ln_rel.iter().enumerate() {
        let term = l.exp();
        mass.push(term);
        // Integer comparison of i against k/2.
        match (2 * i as u64).cmp(&k) {
            std::cmp::Ordering::Greater => favourable.push(term),
            std::cmp::Ordering::Equal => favourable.push(term * (0.5 + delta)),
            std::cmp::Ordering::Less => {}
        }
    }
    let relative_mass = compensated_sum(&mut mass);
    let q = (compensated_sum(&mut favourable) / relative_mass).min(1.0);
    let m = mode as f64;
    let ln_mode_term = ln_gamma(kf + 1.0) - ln_gamma(m + 1.0) - ln_gamma(kf - m + 1.0)
        + m * success.ln()
        + (kf - m) * (1.0 - success).ln();
    let total_mass = relative_mass * ln_mode_term.exp();
    // The absolute error of the log-gamma normalization grows like k ln k ulps.
    let tolerance = 1e-12_f64.max(64.0 * f64::EPSILON * (kf + 1.0) * (kf + 2.0).ln());
    debug_assert!((total_mass - 1.0).abs() < tolerance, "mass {total_mass} at k = {k}");
    Ok(QkEvaluation { q, total_mass })
}

/// Lower bound `1/2 + 51 delta / 100` valid for `k >= 2`.
pub fn qk_lower_bound(delta: f64) -> f64 {
    0.5 + 0.51 * delta
}

/// Tolerance below the bound still counted as satisfying it.
pub const QK_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QkViolation {
    pub k: u64,
    pub delta: f64,
    pub q: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QkBoundReport {
    pub k_max: u64,
    pub deltas: Vec<f64>,
    pub checked: usize,
    /// Smallest `q_k - bound` over the grid and where it occurs.
    pub min_slack: f64,
    pub argmin: (u64, f64),
    pub violations: Vec<QkViolation>,
}

impl QkBoundReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks `q_k >= 1/2 + 51 delta / 100` for every `2 <= k <= k_max` and every grid delta.
pub fn verify_qk_bound(k_max: u64, deltas: &[f64]) -> Result<QkBoundReport, AnalysisError> {
    if k_max < 2 {
        return Err(AnalysisError::KMaxTooSmall(k_max));
    }
    if let Some(&bad) = deltas.iter().find(|&&d| !(d > 0.0 && d <= 0.1)) {
        return Err(AnalysisError::DeltaOutsideRange(bad));
    }
    let mut report = QkBoundReport {
        k_max,
        deltas: deltas.to_vec(),
        checked: 0,
        min_slack: f64::INFINITY,
        argmin: (0, 0.0),
        violations: Vec::new(),
    };
    for &delta in deltas {
        let bound = qk_lower_bound(delta);
        for k in 2..=k_max {
            let q = q_value(k, delta)?;
            let slack = q - bound;
            report.checked += 1;
            if slack < report.min_slack {
                report.min_slack = slack;
                report.argmin = (k, delta);
            }
            if slack < -QK_TOLERANCE {
                report.violations.push(QkViolation { k, delta, q, bound });
            }
        }
    }
    Ok(report)
}

/// Evenly spaced grid `step, 2 step, ...` up to `max` (inclusive within rounding).
pub fn delta_grid(max: f64, step: f64) -> Vec<f64> {
    let count = (max / step + 1e-9).floor() as u64;
    (1..=count).map(|j| j as f64 * step).collect()
}

/// Lower bounds `(p0, p1) = ((1/2 - delta) p^{1/p}, (1/2 + delta) p^{1/p})` on
/// the probabilities of all-0 and all-1 consensus on dense graphs.
pub fn cascade_bounds(p: f64, delta: f64) -> Result<(f64, f64), AnalysisError> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(AnalysisError::InvalidProbability(p));
    }
    if !(delta > 0.0 && delta < 0.5) {
        return Err(AnalysisError::InvalidDelta(delta));
    }
    let base = p.powf(1.0 / p);
    Ok(((0.5 - delta) * base, (0.5 + delta) * base))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CascadeBounds {
    pub p0: f64,
    pub p1: f64,
}

impl From<(f64, f64)> for CascadeBounds {
    fn from((p0, p1): (f64, f64)) -> Self {
        CascadeBounds { p0, p1 }
    }
}

/// Expected coupon-collector time `n H_n`.
pub fn coupon_collector_mean(n: u64) -> f64 {
    let mut terms: Vec<f64> = (1..=n).map(|i| 1.0 / i as f64).collect();
    n as f64 * compensated_sum(&mut terms)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    AtLeast,
    AtMost,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Passed,
    Failed,
    NotEvaluated,
}

/// One inequality of a phase proposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredicateCheck {
    pub phase: u8,
    pub name: String,
    pub measured: Option<f64>,
    pub bound: f64,
    pub direction: Direction,
    pub verdict: Verdict,
}

impl PredicateCheck {
    fn new(phase: u8, name: &str, measured: Option<f64>, bound: f64, direction: Direction) -> Self {
        let verdict = match measured {
            None => Verdict::NotEvaluated,
            Some(m) => {
                let holds = match direction {
                    Direction::AtLeast => m >= bound,
                    Direction::AtMost => m <= bound,
                };
                if holds {
                    Verdict::Passed
                } else {
                    Verdict::Failed
                }
            }
        };
        PredicateCheck {
            phase,
            name: name.to_string(),
            measured,
            bound,
            direction,
            verdict,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub checks: Vec<PredicateCheck>,
}

impl PhaseReport {
    pub fn check(&self, name: &str) -> Option<&PredicateCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// `None` when the phase's leading inequality could not be evaluated;
    /// otherwise whether every evaluated inequality of the phase holds.
    pub fn phase_pass(&self, phase: u8) -> Option<bool> {
        let mut checks = self.checks.iter().filter(|c| c.phase == phase).peekable();
        if checks.peek()?.verdict == Verdict::NotEvaluated {
            return None;
        }
        Some(checks.all(|c| c.verdict != Verdict::Failed))
    }
}

fn snapshot_at(record: &RunRecord, t: u64) -> Option<&Snapshot> {
    record.probes.snapshots.iter().find(|s| s.t == t)
}

/// Evaluates the end-of-phase inequalities on a recorded run.
///
/// `cushion` multiplies the `1/omega` correction terms only; the leading
/// constants are never relaxed. Values are read from the recorded snapshots and
/// coupling report; absent observations yield `NotEvaluated`.
pub fn phase_predicates(
    record: &RunRecord,
    coupling: Option<&CouplingReport>,
    cfg: &PhaseConfig,
    cushion: f64,
) -> PhaseReport {
    let delta = cfg.delta;
    let correction = cushion / cfg.omega;
    let (t1, t2, t3) = (cfg.t1 as f64, cfg.t2 as f64, cfg.t3 as f64);
    let s1 = snapshot_at(record, cfg.t1);
    let s2 = snapshot_at(record, cfg.t2);
    let s3 = snapshot_at(record, cfg.t3);
    let z1 = coupling.and_then(|c| c.z_at_t1);
    let z2 = coupling.and_then(|c| c.z_at_t2);
    let f = |x: usize| x as f64;
    use Direction::{AtLeast, AtMost};
    let mut checks = vec![
        PredicateCheck::new(1, "y1_at_t1", s1.map(|s| f(s.y1)), (0.5 + 0.6 * delta) * t1, AtLeast),
        PredicateCheck::new(1, "y0_at_t1", s1.map(|s| f(s.y0)), (0.5 - 0.6 * delta) * t1, AtMost),
        PredicateCheck::new(
            1,
            "announced_at_t1",
            s1.map(|s| f(s.y0 + s.y1)),
            t1 * (1.0 - correction),
            AtLeast,
        ),
        PredicateCheck::new(
            1,
            "z_unknown_at_t1",
            z1.map(|z| f(z.unknown)),
            delta * t1 / 4.0 * (1.0 + correction),
            AtMost,
        ),
        PredicateCheck::new(1, "z1_at_t1", z1.map(|z| f(z.one)), (0.5 + 0.6 * delta) * t1, AtLeast),
        PredicateCheck::new(2, "y1_at_t2", s2.map(|s| f(s.y1)), (0.5 + 0.5 * delta) * t2, AtLeast),
        PredicateCheck::new(2, "y0_at_t2", s2.map(|s| f(s.y0)), (0.5 - 0.5 * delta) * t2, AtMost),
        PredicateCheck::new(
            2,
            "announced_at_t2",
            s2.map(|s| f(s.y0 + s.y1)),
            t2 * (1.0 - correction),
            AtLeast,
        ),
        PredicateCheck::new(
            2,
            "z_unknown_at_t2",
            z2.map(|z| f(z.unknown)),
            2.0 * t2 / cfg.omega,
            AtMost,
        ),
        PredicateCheck::new(2, "z1_at_t2", z2.map(|z| f(z.one)), (0.5 + 0.5 * delta) * t2, AtLeast),
    ];
    match cfg.pipeline {
        Pipeline::VerySparse => {
            checks.push(PredicateCheck::new(
                3,
                "unannounced_at_t3",
                s3.map(|s| f(s.y_perp)),
                0.0,
                AtMost,
            ));
            checks.push(PredicateCheck::new(3, "y0_at_t3", s3.map(|s| f(s.y0)), cfg.s as f64, AtMost));
        }
        Pipeline::NotVerySparse => {
            checks.push(PredicateCheck::new(
                3,
                "fresh_zero_between_t2_t3",
                record.probes.fresh_zero_in_window.map(|c| c as f64),
                0.0,
                AtMost,
            ));
            let _ = t3;
        }
    }
    PhaseReport { checks }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchVerdict {
    pub start: u64,
    pub end: u64,
    pub large_zero_at_start: usize,
    pub large_zero_at_end: usize,
    /// `at_start / at_end`; `None` when the count was already 0 or reached 0.
    pub achieved_factor: Option<f64>,
    pub shrink_ok: bool,
    pub all_selected: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchShrinkReport {
    /// Required per-batch factor `(ln ln n)^{1/4}`.
    pub required_factor: f64,
    pub batches: Vec<BatchVerdict>,
}

impl BatchShrinkReport {
    /// `None` when no batch was recorded.
    pub fn all_shrink(&self) -> Option<bool> {
        if self.batches.is_empty() {
            None
        } else {
            Some(self.batches.iter().all(|b| b.shrink_ok))
        }
    }
}

/// Per-batch shrinkage of the number of large-degree nodes announcing 0.
pub fn batch_shrink_check(record: &RunRecord, cfg: &PhaseConfig) -> BatchShrinkReport {
    let ln_n = (cfg.n as f64).ln();
    let required_factor = ln_n.ln().max(0.0).powf(0.25);
    let batches = record
        .probes
        .batches
        .iter()
        .map(|b| {
            let (start, end) = (b.large_zero_at_start, b.large_zero_at_end);
            let shrink_ok = start == 0 || end == 0 || end as f64 * required_factor <= start as f64;
            BatchVerdict {
                start: b.start,
                end: b.end,
                large_zero_at_start: start,
                large_zero_at_end: end,
                achieved_factor: (start > 0 && end > 0).then(|| start as f64 / end as f64),
                shrink_ok,
                all_selected: b.all_selected,
            }
        })
        .collect();
    BatchShrinkReport {
        required_factor,
        batches,
    }
}
