//! Asynchronous majority dynamics.
//!
//! One node per round, chosen uniformly at random, sets its public announcement
//! to the majority of its neighbours' announcements. Ties, including the case
//! where no neighbour has announced, fall back to the node's private belief.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{GraphError, NodeId, Topology};

#[derive(Debug, Error, PartialEq)]
pub enum DynamicsError {
    #[error("delta must lie in the open interval (0, 1/2), got {0}")]
    InvalidDelta(f64),
    #[error("node count must be positive")]
    EmptyState,
    #[error("graph has {graph} nodes but the opinion state has {state}")]
    SizeMismatch { graph: usize, state: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

pub(crate) fn check_delta(delta: f64) -> Result<(), DynamicsError> {
    if delta > 0.0 && delta < 0.5 {
        Ok(())
    } else {
        Err(DynamicsError::InvalidDelta(delta))
    }
}

/// Public announcement of a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Announcement {
    Unannounced,
    Zero,
    One,
}

impl Announcement {
    pub fn from_bit(bit: bool) -> Self {
        if bit {
            Announcement::One
        } else {
            Announcement::Zero
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Private signals, either drawn up front or on first use.
///
/// A lazy belief of node `v` is read at a fixed position of its stream (the
/// slot `v` would occupy in an eager draw), so the realized values do not
/// depend on the order in which nodes are consulted and match [`init_beliefs`]
/// on the same stream. The draw counter records which signals were ever looked at.
#[derive(Debug, Clone)]
pub struct Beliefs {
    values: Vec<Option<bool>>,
    lazy: Option<LazySource>,
    draws: usize,
}

/// ChaCha words consumed by one Bernoulli draw (one `u64`).
const BELIEF_WORDS: u128 = 2;

#[derive(Debug, Clone)]
struct LazySource {
    rng: ChaCha8Rng,
    p_one: f64,
}

impl Beliefs {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        Beliefs {
            values: bits.into_iter().map(Some).collect(),
            lazy: None,
            draws: 0,
        }
    }

    pub fn lazy(n: usize, delta: f64, rng: ChaCha8Rng) -> Result<Self, DynamicsError> {
        check_delta(delta)?;
        if n == 0 {
            return Err(DynamicsError::EmptyState);
        }
        Ok(Beliefs {
            values: vec![None; n],
            lazy: Some(LazySource {
                rng,
                p_one: 0.5 + delta,
            }),
            draws: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Belief of `v`, drawing it now if it is still hidden.
    pub fn get(&mut self, v: NodeId) -> bool {
        let slot = &mut self.values[v as usize];
        match slot {
            Some(bit) => *bit,
            None => {
                let source = self
                    .lazy
                    .as_mut()
                    .expect("hidden beliefs only exist in lazy mode");
                source.rng.set_word_pos(BELIEF_WORDS * u128::from(v));
                let bit = source.rng.random_bool(source.p_one);
                *slot = Some(bit);
                self.draws += 1;
                bit
            }
        }
    }

    pub fn peek(&self, v: NodeId) -> Option<bool> {
        self.values[v as usize]
    }

    /// Number of lazy draws so far.
    pub fn draws(&self) -> usize {
        self.draws
    }
}

/// Draws i.i.d. Bernoulli(1/2 + delta) private beliefs.
pub fn init_beliefs(n: usize, delta: f64, rng: &mut ChaCha8Rng) -> Result<Beliefs, DynamicsError> {
    check_delta(delta)?;
    if n == 0 {
        return Err(DynamicsError::EmptyState);
    }
    let p_one = 0.5 + delta;
    Ok(Beliefs::from_bits(
        (0..n).map(|_| rng.random_bool(p_one)).collect(),
    ))
}

/// Announcements, their counts and the selection bookkeeping of one trial.
#[derive(Debug, Clone)]
pub struct OpinionState {
    beliefs: Beliefs,
    announcements: Vec<Announcement>,
    counts: [usize; 3],
    announced: Vec<NodeId>,
    t: u64,
    t_hat: Option<u64>,
}

/// What one round did to the selected node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpdateOutcome {
    pub node: NodeId,
    pub previous: Announcement,
    pub current: Announcement,
    /// The neighbour tallies were equal and the private belief decided.
    pub tie: bool,
}

impl UpdateOutcome {
    pub fn changed(&self) -> bool {
        self.previous != self.current
    }

    pub fn first_selection(&self) -> bool {
        self.previous == Announcement::Unannounced
    }
}

impl OpinionState {
    pub fn new(beliefs: Beliefs) -> Result<Self, DynamicsError> {
        let n = beliefs.len();
        if n == 0 {
            return Err(DynamicsError::EmptyState);
        }
        Ok(OpinionState {
            beliefs,
            announcements: vec![Announcement::Unannounced; n],
            counts: [n, 0, 0],
            announced: Vec::new(),
            t: 0,
            t_hat: None,
        })
    }

    pub fn n(&self) -> usize {
        self.announcements.len()
    }

    pub fn round(&self) -> u64 {
        self.t
    }

    /// First round by which every node had been selected.
    pub fn t_hat(&self) -> Option<u64> {
        self.t_hat
    }

    pub fn announcement(&self, v: NodeId) -> Announcement {
        self.announcements[v as usize]
    }

    pub fn announcements(&self) -> &[Announcement] {
        &self.announcements
    }

    pub fn count(&self, a: Announcement) -> usize {
        self.counts[a.index()]
    }

    pub fn y_unannounced(&self) -> usize {
        self.counts[0]
    }

    pub fn y0(&self) -> usize {
        self.counts[1]
    }

    pub fn y1(&self) -> usize {
        self.counts[2]
    }

    pub fn selected_once(&self, v: NodeId) -> bool {
        self.announcements[v as usize] != Announcement::Unannounced
    }

    /// Nodes that have announced, in order of first announcement.
    pub fn announced_nodes(&self) -> &[NodeId] {
        &self.announced
    }

    pub fn beliefs(&self) -> &Beliefs {
        &self.beliefs
    }

    pub fn beliefs_mut(&mut self) -> &mut Beliefs {
        &mut self.beliefs
    }

    /// Recounts announcements and compares with the maintained tallies.
    pub fn counts_consistent(&self) -> bool {
        let mut recount = [0usize; 3];
        for a in &self.announcements {
            recount[a.index()] += 1;
        }
        recount == self.counts
            && recount.iter().sum::<usize>() == self.n()
            && self.announced.len() == self.n() - self.counts[0]
    }

    /// Overwrites an announcement without advancing time. Test scaffolding for
    /// building specific configurations; `v` must already be announced unless
    /// `a` is a first announcement.
    pub fn set_announcement(&mut self, v: NodeId, a: Announcement) {
        self.commit(v, a);
    }

    fn commit(&mut self, v: NodeId, a: Announcement) -> Announcement {
        let previous = self.announcements[v as usize];
        assert!(
            a != Announcement::Unannounced || previous == Announcement::Unannounced,
            "announcements never return to unannounced"
        );
        if previous != a {
            self.counts[previous.index()] -= 1;
            self.counts[a.index()] += 1;
            self.announcements[v as usize] = a;
        }
        if previous == Announcement::Unannounced && a != Announcement::Unannounced {
            self.announced.push(v);
        }
        previous
    }
}

/// Counts (zero, one) announcements among `neighbours`.
fn tally(announcements: &[Announcement], neighbours: &[NodeId]) -> (usize, usize) {
    let mut zero = 0;
    let mut one = 0;
    for &u in neighbours {
        match announcements[u as usize] {
            Announcement::Zero => zero += 1,
            Announcement::One => one += 1,
            Announcement::Unannounced => {}
        }
    }
    (zero, one)
}

/// The majority rule applied to `v` against the current announcements.
pub fn evaluate_update<G: Topology + ?Sized>(
    state: &mut OpinionState,
    graph: &G,
    v: NodeId,
) -> (Announcement, bool) {
    let (zero, one) = tally(&state.announcements, graph.neighbours(v));
    match one.cmp(&zero) {
        std::cmp::Ordering::Greater => (Announcement::One, false),
        std::cmp::Ordering::Less => (Announcement::Zero, false),
        std::cmp::Ordering::Equal => (Announcement::from_bit(state.beliefs.get(v)), true),
    }
}

/// Runs round `t + 1` with `v` as the selected node and returns what changed.
///
/// The graph is asked to expose `v`'s pairs first, so deferred graphs can be
/// used directly.
pub fn apply_update<G: Topology + ?Sized>(
    state: &mut OpinionState,
    graph: &mut G,
    v: NodeId,
) -> Result<UpdateOutcome, DynamicsError> {
    let first = !state.selected_once(v);
    graph.expose(v, &state.announced, first)?;
    let (current, tie) = evaluate_update(state, graph, v);
    let previous = state.commit(v, current);
    state.t += 1;
    if state.t_hat.is_none() && state.counts[0] == 0 {
        state.t_hat = Some(state.t);
    }
    Ok(UpdateOutcome {
        node: v,
        previous,
        current,
        tie,
    })
}

/// True iff every node has announced and none would change if selected now.
pub fn is_stabilized<G: Topology + ?Sized>(state: &mut OpinionState, graph: &G) -> bool {
    if state.y_unannounced() != 0 {
        return false;
    }
    (0..state.n() as NodeId).all(|v| evaluate_update(state, graph, v).0 == state.announcement(v))
}

/// Applies `evaluations` forced updates to a copy of `state`, visiting nodes
/// cyclically, and returns how many of them changed an announcement.
pub fn forced_update_changes<G: Topology + ?Sized>(
    state: &OpinionState,
    graph: &G,
    evaluations: usize,
) -> usize {
    let mut probe = state.clone();
    let n = probe.n();
    let mut changes = 0;
    for i in 0..evaluations {
        let v = (i % n) as NodeId;
        let (current, _) = evaluate_update(&mut probe, graph, v);
        if probe.commit(v, current) != current {
            changes += 1;
        }
    }
    changes
}

/// Uniform node selection, one draw per round.
#[derive(Debug, Clone)]
pub struct Selector {
    rng: ChaCha8Rng,
    n: u32,
}

impl Selector {
    pub fn new(n: usize, rng: ChaCha8Rng) -> Self {
        Selector { rng, n: n as u32 }
    }

    pub fn next_node(&mut self) -> NodeId {
        self.rng.random_range(0..self.n)
    }
}

/// Rounds until every one of `n` nodes has been drawn at least once.
pub fn coupon_collector_time(selector: &mut Selector) -> u64 {
    let n = selector.n as usize;
    let mut seen = vec![false; n];
    let mut missing = n;
    let mut t = 0;
    while missing > 0 {
        t += 1;
        let v = selector.next_node() as usize;
        if !seen[v] {
            seen[v] = true;
            missing -= 1;
        }
    }
    t
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    #[serde(rename = "consensus_1")]
    Consensus1,
    #[serde(rename = "consensus_0")]
    Consensus0,
    MixedStable,
    StepBudgetExhausted,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Consensus1 => "consensus_1",
            Outcome::Consensus0 => "consensus_0",
            Outcome::MixedStable => "mixed_stable",
            Outcome::StepBudgetExhausted => "step_budget_exhausted",
        }
    }

    pub fn terminated(self) -> bool {
        self != Outcome::StepBudgetExhausted
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopPolicy {
    /// Hard cap on the total number of rounds.
    pub step_budget: u64,
    /// Quiet rounds (no announcement changed) before a full stability check.
    pub check_cadence: u64,
    pub trajectory_stride: u64,
}

impl StopPolicy {
    pub fn for_size(n: usize) -> Self {
        let n = n as u64;
        StopPolicy {
            step_budget: 20 * n * n,
            check_cadence: n.max(1),
            trajectory_stride: (n / 100).max(1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t: u64,
    pub y_perp: usize,
    pub y0: usize,
    pub y1: usize,
    pub z_qmark: Option<usize>,
}

/// Counts observed at a requested round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: u64,
    pub y_perp: usize,
    pub y0: usize,
    pub y1: usize,
    /// Large-degree nodes announcing 0, when a degree classification is attached.
    pub large_zero: Option<usize>,
    /// The run had already stabilized before `t`; the values are those of the final state.
    pub extrapolated: bool,
}

/// One batch of rounds `(start, end]` in the large-degree shrinkage diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub start: u64,
    pub end: u64,
    pub large_zero_at_start: usize,
    pub large_zero_at_end: usize,
    /// Every node was selected at least once inside the batch. `None` when the
    /// batch lies after stabilization and was not simulated.
    pub all_selected: Option<bool>,
}

/// Extra observations requested from a run.
#[derive(Debug, Clone, Default)]
pub struct Probes {
    /// Rounds at which to snapshot the counts.
    pub snapshot_times: Vec<u64>,
    /// Large-degree membership mask; enables `large_zero` tracking.
    pub large_mask: Option<Vec<bool>>,
    /// First batch start and batch length.
    pub batches: Option<(u64, u64)>,
    /// Window `(from, to]` in which first announcements of 0 are counted.
    pub fresh_zero_window: Option<(u64, u64)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub snapshots: Vec<Snapshot>,
    pub batches: Vec<BatchRecord>,
    /// First announcements of 0 inside the window; `None` if the window was not fully observed.
    pub fresh_zero_in_window: Option<u64>,
}

#[derive(Debug, Clone)]
struct ProbeState {
    probes: Probes,
    next_snapshot: usize,
    large_zero: usize,
    batch_seen: Vec<u64>,
    batch_index: u64,
    batch_distinct: usize,
    batch_start_large_zero: usize,
    fresh_zero: u64,
    record: ProbeRecord,
}

impl ProbeState {
    fn new(mut probes: Probes, state: &OpinionState) -> Self {
        probes.snapshot_times.sort_unstable();
        probes.snapshot_times.dedup();
        let large_zero = probes.large_mask.as_ref().map_or(0, |mask| {
            (0..state.n())
                .filter(|&v| mask[v] && state.announcements[v] == Announcement::Zero)
                .count()
        });
        let mut next_snapshot = 0;
        while next_snapshot < probes.snapshot_times.len()
            && probes.snapshot_times[next_snapshot] < state.t
        {
            next_snapshot += 1;
        }
        let n = state.n();
        let mut probe = ProbeState {
            probes,
            next_snapshot,
            large_zero,
            batch_seen: vec![u64::MAX; n],
            batch_index: 0,
            batch_distinct: 0,
            batch_start_large_zero: 0,
            fresh_zero: 0,
            record: ProbeRecord::default(),
        };
        probe.take_snapshots(state, false);
        probe
    }

    fn snapshot(&self, state: &OpinionState, t: u64, extrapolated: bool) -> Snapshot {
        Snapshot {
            t,
            y_perp: state.y_unannounced(),
            y0: state.y0(),
            y1: state.y1(),
            large_zero: self.probes.large_mask.as_ref().map(|_| self.large_zero),
            extrapolated,
        }
    }

    fn take_snapshots(&mut self, state: &OpinionState, extrapolate: bool) {
        while let Some(&t) = self.probes.snapshot_times.get(self.next_snapshot) {
            if t == state.t || (extrapolate && t > state.t) {
                let snap = self.snapshot(state, t, t > state.t);
                self.record.snapshots.push(snap);
                self.next_snapshot += 1;
            } else {
                break;
            }
        }
    }

    fn observe(&mut self, state: &OpinionState, update: &UpdateOutcome) {
        let t = state.t;
        if let Some(mask) = &self.probes.large_mask {
            if mask[update.node as usize] {
                if update.previous == Announcement::Zero {
                    self.large_zero -= 1;
                }
                if update.current == Announcement::Zero {
                    self.large_zero += 1;
                }
            }
        }
        if let Some((from, to)) = self.probes.fresh_zero_window {
            if t > from
                && t <= to
                && update.first_selection()
                && update.current == Announcement::Zero
            {
                self.fresh_zero += 1;
            }
        }
        if let Some((start, len)) = self.probes.batches {
            if t == start {
                self.batch_start_large_zero = self.large_zero;
            }
            if t > start {
                let index = (t - start - 1) / len;
                if index != self.batch_index {
                    self.batch_index = index;
                    self.batch_distinct = 0;
                }
                let seen = &mut self.batch_seen[update.node as usize];
                if *seen != index {
                    *seen = index;
                    self.batch_distinct += 1;
                }
                if (t - start) % len == 0 {
                    self.record.batches.push(BatchRecord {
                        start: t - len,
                        end: t,
                        large_zero_at_start: self.batch_start_large_zero,
                        large_zero_at_end: self.large_zero,
                        all_selected: Some(self.batch_distinct == state.n()),
                    });
                    self.batch_start_large_zero = self.large_zero;
                }
            }
        }
        self.take_snapshots(state, false);
    }

    fn finish(mut self, state: &OpinionState, stabilized: bool) -> ProbeRecord {
        if stabilized {
            self.take_snapshots(state, true);
            if let Some((start, len)) = self.probes.batches {
                // Past stabilization nothing changes; one extrapolated batch
                // records the terminal count.
                let end = if state.t < start {
                    start + len
                } else {
                    start + len * ((state.t - start) / len + 1)
                };
                let at_start = if state.t < start {
                    self.large_zero
                } else {
                    self.batch_start_large_zero
                };
                self.record.batches.push(BatchRecord {
                    start: end - len,
                    end,
                    large_zero_at_start: at_start,
                    large_zero_at_end: self.large_zero,
                    all_selected: None,
                });
            }
        }
        if let Some((_, to)) = self.probes.fresh_zero_window {
            if stabilized || state.t >= to {
                self.record.fresh_zero_in_window = Some(self.fresh_zero);
            }
        }
        self.record
    }
}

/// Outcome of one trial of the dynamics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub outcome: Outcome,
    /// Last round at which some announcement changed.
    pub termination_time: u64,
    /// Rounds actually simulated, including the quiet rounds before the final stability check.
    pub rounds_executed: u64,
    pub t_hat: Option<u64>,
    pub terminated_at_t_hat: bool,
    pub y0_final: usize,
    pub y1_final: usize,
    pub y_perp_final: usize,
    pub trajectory: Vec<TrajectoryPoint>,
    pub probes: ProbeRecord,
    pub phase_flags: PhaseFlags,
    pub seed: u64,
}

/// Pass/fail of the per-phase predicates; `None` means not evaluated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseFlags {
    pub phase1: Option<bool>,
    pub phase2: Option<bool>,
    pub phase3: Option<bool>,
}

/// Drives one trial round by round, tracking termination and observations.
#[derive(Debug, Clone)]
pub struct DynamicsRun {
    policy: StopPolicy,
    last_change: u64,
    quiet_rounds: u64,
    trajectory: Vec<TrajectoryPoint>,
    probes: ProbeState,
}

impl DynamicsRun {
    pub fn new(policy: StopPolicy, probes: Probes, state: &OpinionState) -> Self {
        let mut run = DynamicsRun {
            policy,
            last_change: state.t,
            quiet_rounds: 0,
            trajectory: Vec::new(),
            probes: ProbeState::new(probes, state),
        };
        run.push_point(state);
        run
    }

    fn push_point(&mut self, state: &OpinionState) {
        self.trajectory.push(TrajectoryPoint {
            t: state.t,
            y_perp: state.y_unannounced(),
            y0: state.y0(),
            y1: state.y1(),
            z_qmark: None,
        });
    }

    /// The most recent trajectory point, if it was taken at round `t`.
    pub fn trajectory_point_mut(&mut self, t: u64) -> Option<&mut TrajectoryPoint> {
        self.trajectory.last_mut().filter(|p| p.t == t)
    }

    /// One round with a preselected node.
    pub fn step_node<G: Topology + ?Sized>(
        &mut self,
        graph: &mut G,
        state: &mut OpinionState,
        v: NodeId,
    ) -> Result<UpdateOutcome, DynamicsError> {
        let update = apply_update(state, graph, v)?;
        if update.changed() {
            self.last_change = state.t;
            self.quiet_rounds = 0;
        } else {
            self.quiet_rounds += 1;
        }
        if state.t % self.policy.trajectory_stride == 0 {
            self.push_point(state);
        }
        self.probes.observe(state, &update);
        Ok(update)
    }

    /// Selects and updates nodes until the state is stable or the budget runs out.
    pub fn run<G: Topology + ?Sized>(
        mut self,
        graph: &mut G,
        state: &mut OpinionState,
        selector: &mut Selector,
        seed: u64,
    ) -> Result<RunRecord, DynamicsError> {
        if graph.node_count() != state.n() {
            return Err(DynamicsError::SizeMismatch {
                graph: graph.node_count(),
                state: state.n(),
            });
        }
        let stabilized = loop {
            if state.y_unannounced() == 0
                && self.quiet_rounds >= self.policy.check_cadence
                && state.t > 0
            {
                if is_stabilized(state, graph) {
                    break true;
                }
                self.quiet_rounds = 0;
            }
            if state.t >= self.policy.step_budget {
                // The budget may coincide with a stable state that was not yet checked.
                break is_stabilized(state, graph);
            }
            let v = selector.next_node();
            self.step_node(graph, state, v)?;
        };
        Ok(self.finish(state, stabilized, seed))
    }

    pub fn finish(mut self, state: &OpinionState, stabilized: bool, seed: u64) -> RunRecord {
        if self.trajectory.last().map(|p| p.t) != Some(state.t) {
            self.push_point(state);
        }
        let n = state.n();
        let outcome = if !stabilized {
            Outcome::StepBudgetExhausted
        } else if state.y1() == n {
            Outcome::Consensus1
        } else if state.y0() == n {
            Outcome::Consensus0
        } else {
            Outcome::MixedStable
        };
        let probes = self.probes.finish(state, stabilized);
        RunRecord {
            outcome,
            termination_time: self.last_change,
            rounds_executed: state.t,
            t_hat: state.t_hat,
            terminated_at_t_hat: stabilized && state.t_hat == Some(self.last_change),
            y0_final: state.y0(),
            y1_final: state.y1(),
            y_perp_final: state.y_unannounced(),
            trajectory: self.trajectory,
            probes,
            phase_flags: PhaseFlags::default(),
            seed,
        }
    }
}

/// Runs the dynamics from the empty configuration with default probes.
pub fn run_dynamics<G: Topology + ?Sized>(
    graph: &mut G,
    beliefs: Beliefs,
    selector: &mut Selector,
    policy: StopPolicy,
) -> Result<RunRecord, DynamicsError> {
    let mut state = OpinionState::new(beliefs)?;
    DynamicsRun::new(policy, Probes::default(), &state).run(graph, &mut state, selector, 0)
}
