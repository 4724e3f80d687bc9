//! Confidence intervals and the order-independent trial aggregator.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{HarnessError, TrialResult};
use crate::analysis::{CascadeBounds, Verdict};
use crate::coupling::PhaseConfig;
use crate::dynamics::Outcome;

/// Wilson score interval for `successes` out of `trials` at normal quantile `z`.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> Result<(f64, f64), HarnessError> {
    if trials == 0 {
        return Err(HarnessError::InvalidConfig("wilson interval needs trials >= 1".into()));
    }
    if successes > trials {
        return Err(HarnessError::InvalidConfig(format!(
            "successes {successes} exceed trials {trials}"
        )));
    }
    let n = trials as f64;
    let phat = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (phat + z2 / (2.0 * n)) / denom;
    let half = z * (phat * (1.0 - phat) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if successes == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if successes == trials { 1.0 } else { (centre + half).min(1.0) };
    Ok((lo, hi))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub successes: u64,
    pub trials: u64,
    pub estimate: f64,
    pub wilson_95: (f64, f64),
    pub wilson_z3: (f64, f64),
}

impl Proportion {
    pub fn new(successes: u64, trials: u64) -> Result<Self, HarnessError> {
        Ok(Proportion {
            successes,
            trials,
            estimate: successes as f64 / trials as f64,
            wilson_95: wilson_interval(successes, trials, 1.96)?,
            wilson_z3: wilson_interval(successes, trials, 3.0)?,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub consensus_1: u64,
    pub consensus_0: u64,
    pub mixed_stable: u64,
    pub budget_exhausted: u64,
}

impl OutcomeCounts {
    pub fn total(&self) -> u64 {
        self.consensus_1 + self.consensus_0 + self.mixed_stable + self.budget_exhausted
    }

    pub fn get(&self, outcome: Outcome) -> u64 {
        match outcome {
            Outcome::Consensus1 => self.consensus_1,
            Outcome::Consensus0 => self.consensus_0,
            Outcome::MixedStable => self.mixed_stable,
            Outcome::StepBudgetExhausted => self.budget_exhausted,
        }
    }

    fn bump(&mut self, outcome: Outcome) {
        *match outcome {
            Outcome::Consensus1 => &mut self.consensus_1,
            Outcome::Consensus0 => &mut self.consensus_0,
            Outcome::MixedStable => &mut self.mixed_stable,
            Outcome::StepBudgetExhausted => &mut self.budget_exhausted,
        } += 1;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeProbabilities {
    pub consensus_1: Proportion,
    pub consensus_0: Proportion,
    pub mixed_stable: Proportion,
    pub budget_exhausted: Proportion,
}

/// Summary of a sample of round counts. Quantiles use the nearest-rank rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeStats {
    pub count: u64,
    pub mean: f64,
    pub min: u64,
    pub q10: u64,
    pub median: u64,
    pub q90: u64,
    pub max: u64,
}

impl TimeStats {
    fn from_sorted(sorted: &[u64]) -> Option<Self> {
        if sorted.is_empty() {
            return None;
        }
        let len = sorted.len();
        let rank = |q: f64| sorted[((q * len as f64).ceil() as usize).clamp(1, len) - 1];
        let sum: u128 = sorted.iter().map(|&t| u128::from(t)).sum();
        Some(TimeStats {
            count: len as u64,
            mean: sum as f64 / len as f64,
            min: sorted[0],
            q10: rank(0.1),
            median: rank(0.5),
            q90: rank(0.9),
            max: sorted[len - 1],
        })
    }
}

pub(super) fn time_stats(sorted: &[u64]) -> Option<TimeStats> {
    TimeStats::from_sorted(sorted)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PassRate {
    pub evaluated: u64,
    pub passed: u64,
    pub rate: Option<f64>,
}

impl PassRate {
    fn record(&mut self, pass: Option<bool>) {
        if let Some(pass) = pass {
            self.evaluated += 1;
            self.passed += u64::from(pass);
        }
    }

    fn merge(&mut self, other: &PassRate) {
        self.evaluated += other.evaluated;
        self.passed += other.passed;
    }

    fn finalize(mut self) -> Self {
        self.rate = (self.evaluated > 0).then(|| self.passed as f64 / self.evaluated as f64);
        self
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhasePassRates {
    pub phase1: PassRate,
    pub phase2: PassRate,
    pub phase3: PassRate,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CouplingSummary {
    pub trials: u64,
    pub clean_trials: u64,
    pub rounds_checked: u64,
    pub violating_rounds: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedPointSummary {
    pub checked: u64,
    pub trials_with_changes: u64,
    pub total_changes: u64,
}

/// Everything reported about one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateStats {
    pub trials: u64,
    pub outcome_counts: OutcomeCounts,
    pub probabilities: OutcomeProbabilities,
    /// Over trials that stabilized within the budget.
    pub termination_time: Option<TimeStats>,
    pub t_hat: Option<TimeStats>,
    pub terminated_at_t_hat: Proportion,
    pub phase_pass_rates: PhasePassRates,
    pub predicate_pass_rates: BTreeMap<String, PassRate>,
    pub batch_shrink: Option<PassRate>,
    pub coupling: Option<CouplingSummary>,
    pub fixed_point: Option<FixedPointSummary>,
    pub graph_draws: u64,
    pub cascade_bounds: Option<CascadeBounds>,
    pub coupon_collector_mean: f64,
    pub phase_schedule: Option<PhaseConfig>,
}

/// Commutative, associative accumulator over trial results.
#[derive(Debug, Clone, Default)]
pub struct Aggregator {
    counts: OutcomeCounts,
    termination_times: Vec<u64>,
    t_hats: Vec<u64>,
    at_t_hat: u64,
    phases: PhasePassRates,
    predicates: BTreeMap<String, PassRate>,
    batch_shrink: Option<PassRate>,
    coupling: Option<CouplingSummary>,
    fixed_point: Option<FixedPointSummary>,
    graph_draws: u64,
}

impl Aggregator {
    pub fn push(&mut self, result: &TrialResult) {
        let rec = &result.record;
        self.counts.bump(rec.outcome);
        if rec.outcome.terminated() {
            self.termination_times.push(rec.termination_time);
        }
        if let Some(t) = rec.t_hat {
            self.t_hats.push(t);
        }
        self.at_t_hat += u64::from(rec.terminated_at_t_hat);
        self.phases.phase1.record(rec.phase_flags.phase1);
        self.phases.phase2.record(rec.phase_flags.phase2);
        self.phases.phase3.record(rec.phase_flags.phase3);
        if let Some(report) = &result.predicates {
            for check in &report.checks {
                let pass = match check.verdict {
                    Verdict::Passed => Some(true),
                    Verdict::Failed => Some(false),
                    Verdict::NotEvaluated => None,
                };
                self.predicates.entry(check.name.clone()).or_default().record(pass);
            }
        }
        if let Some(shrink) = &result.batch_shrink {
            self.batch_shrink.get_or_insert_with(PassRate::default).record(shrink.all_shrink());
        }
        if let Some(c) = &result.coupling {
            let s = self.coupling.get_or_insert_with(CouplingSummary::default);
            s.trials += 1;
            s.clean_trials += u64::from(c.clean());
            s.rounds_checked += c.rounds_checked;
            s.violating_rounds += (c.phase1_violations.len()
                + c.phase2_violations.len()
                + c.exposure_violations.len()
                + c.aux_count_violations.len()) as u64;
        }
        if let Some(changes) = result.fixed_point_changes {
            let s = self.fixed_point.get_or_insert_with(FixedPointSummary::default);
            s.checked += 1;
            s.trials_with_changes += u64::from(changes > 0);
            s.total_changes += changes as u64;
        }
        self.graph_draws += u64::from(result.graph_draws);
    }

    pub fn merge(mut self, other: Aggregator) -> Aggregator {
        let c = &mut self.counts;
        c.consensus_1 += other.counts.consensus_1;
        c.consensus_0 += other.counts.consensus_0;
        c.mixed_stable += other.counts.mixed_stable;
        c.budget_exhausted += other.counts.budget_exhausted;
        self.termination_times.extend(other.termination_times);
        self.t_hats.extend(other.t_hats);
        self.at_t_hat += other.at_t_hat;
        self.phases.phase1.merge(&other.phases.phase1);
        self.phases.phase2.merge(&other.phases.phase2);
        self.phases.phase3.merge(&other.phases.phase3);
        for (name, rate) in other.predicates {
            self.predicates.entry(name).or_default().merge(&rate);
        }
        if let Some(b) = other.batch_shrink {
            self.batch_shrink.get_or_insert_with(PassRate::default).merge(&b);
        }
        if let Some(o) = other.coupling {
            let s = self.coupling.get_or_insert_with(CouplingSummary::default);
            s.trials += o.trials;
            s.clean_trials += o.clean_trials;
            s.rounds_checked += o.rounds_checked;
            s.violating_rounds += o.violating_rounds;
        }
        if let Some(o) = other.fixed_point {
            let s = self.fixed_point.get_or_insert_with(FixedPointSummary::default);
            s.checked += o.checked;
            s.trials_with_changes += o.trials_with_changes;
            s.total_changes += o.total_changes;
        }
        self.graph_draws += other.graph_draws;
        self
    }

    pub fn finish(
        mut self,
        cascade_bounds: Option<CascadeBounds>,
        coupon_collector_mean: f64,
        phase_schedule: Option<PhaseConfig>,
    ) -> Result<AggregateStats, HarnessError> {
        let trials = self.counts.total();
        if trials == 0 {
            return Err(HarnessError::InvalidConfig("no trials to aggregate".into()));
        }
        self.termination_times.sort_unstable();
        self.t_hats.sort_unstable();
        let c = self.counts;
        Ok(AggregateStats {
            trials,
            outcome_counts: c,
            probabilities: OutcomeProbabilities {
                consensus_1: Proportion::new(c.consensus_1, trials)?,
                consensus_0: Proportion::new(c.consensus_0, trials)?,
                mixed_stable: Proportion::new(c.mixed_stable, trials)?,
                budget_exhausted: Proportion::new(c.budget_exhausted, trials)?,
            },
            termination_time: TimeStats::from_sorted(&self.termination_times),
            t_hat: TimeStats::from_sorted(&self.t_hats),
            terminated_at_t_hat: Proportion::new(self.at_t_hat, trials)?,
            phase_pass_rates: PhasePassRates {
                phase1: self.phases.phase1.finalize(),
                phase2: self.phases.phase2.finalize(),
                phase3: self.phases.phase3.finalize(),
            },
            predicate_pass_rates: self
                .predicates
                .into_iter()
                .map(|(k, v)| (k, v.finalize()))
                .collect(),
            batch_shrink: self.batch_shrink.map(PassRate::finalize),
            coupling: self.coupling,
            fixed_point: self.fixed_point,
            graph_draws: self.graph_draws,
            cascade_bounds,
            coupon_collector_mean,
            phase_schedule,
        })
    }
}
