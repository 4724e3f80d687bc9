//! Auxiliary dynamics run in lockstep with the true process.
//!
//! The auxiliary process tracks a relabelled copy of the announcements in which
//! problematic nodes carry the extra symbol `?` (`AuxOpinion::Unknown`). During
//! the first phase a first-time node keeps its private belief only if it has no
//! announced neighbour; during the second phase `?` neighbours are counted as if
//! they had announced 0. Both processes consume the same selection draws, the
//! same edge indicators and the same beliefs, so the relations between them can
//! be checked round by round.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{Announcement, Beliefs, DynamicsError, DynamicsRun, OpinionState, Selector};
use crate::graph::{DeferredGraph, NodeId, Topology};

#[derive(Debug, Error, PartialEq)]
pub enum CouplingError {
    #[error("invalid phase schedule: {0}")]
    InvalidSchedule(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// Auxiliary announcement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum AuxOpinion {
    Unannounced,
    Unknown,
    Zero,
    One,
}

impl AuxOpinion {
    fn from_bit(bit: bool) -> Self {
        if bit {
            AuxOpinion::One
        } else {
            AuxOpinion::Zero
        }
    }

    fn from_announcement(a: Announcement) -> Self {
        match a {
            Announcement::Unannounced => AuxOpinion::Unannounced,
            Announcement::Zero => AuxOpinion::Zero,
            Announcement::One => AuxOpinion::One,
        }
    }
}

/// Counts of the four auxiliary symbols.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuxCounts {
    pub unannounced: usize,
    pub unknown: usize,
    pub zero: usize,
    pub one: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    One,
    Two,
}

#[derive(Debug, Clone)]
pub struct AuxState {
    aux: Vec<AuxOpinion>,
    counts: [usize; 4],
    active: Vec<NodeId>,
    phase: Phase,
    t: u64,
}

impl AuxState {
    /// All nodes unannounced, phase one, round 0.
    pub fn new(n: usize) -> Self {
        AuxState {
            aux: vec![AuxOpinion::Unannounced; n],
            counts: [n, 0, 0, 0],
            active: Vec::new(),
            phase: Phase::One,
            t: 0,
        }
    }

    /// Second-phase entry: the auxiliary labels are reset to the true announcements.
    pub fn enter_phase_two(&mut self, state: &OpinionState) {
        let n = state.n();
        self.aux.clear();
        self.aux
            .extend(state.announcements().iter().map(|&a| AuxOpinion::from_announcement(a)));
        self.counts = [state.y_unannounced(), 0, state.y0(), state.y1()];
        debug_assert_eq!(self.counts.iter().sum::<usize>(), n);
        self.active = state.announced_nodes().to_vec();
        self.phase = Phase::Two;
        self.t = state.round();
    }

    pub fn n(&self) -> usize {
        self.aux.len()
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn round(&self) -> u64 {
        self.t
    }

    pub fn get(&self, v: NodeId) -> AuxOpinion {
        self.aux[v as usize]
    }

    pub fn labels(&self) -> &[AuxOpinion] {
        &self.aux
    }

    /// Nodes whose auxiliary label is no longer unannounced.
    pub fn active_nodes(&self) -> &[NodeId] {
        &self.active
    }

    pub fn counts(&self) -> AuxCounts {
        AuxCounts {
            unannounced: self.counts[0],
            unknown: self.counts[1],
            zero: self.counts[2],
            one: self.counts[3],
        }
    }

    pub fn counts_consistent(&self) -> bool {
        let mut recount = [0usize; 4];
        for &d in &self.aux {
            recount[d as usize] += 1;
        }
        recount == self.counts && self.active.len() == self.n() - self.counts[0]
    }

    /// Overwrites a label without advancing time (test scaffolding).
    pub fn set(&mut self, v: NodeId, d: AuxOpinion) {
        self.assign(v, d);
    }

    fn assign(&mut self, v: NodeId, d: AuxOpinion) {
        let previous = self.aux[v as usize];
        self.counts[previous as usize] -= 1;
        self.counts[d as usize] += 1;
        self.aux[v as usize] = d;
        if previous == AuxOpinion::Unannounced && d != AuxOpinion::Unannounced {
            self.active.push(v);
        }
    }
}

/// How a first-time node obtained its auxiliary label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuxStep {
    pub label: AuxOpinion,
    /// The private belief was consulted.
    pub read_belief: bool,
}

/// First-phase auxiliary update of the selected node `v`.
///
/// A node selected before becomes `?`. A first-time node exposes its pairs to
/// the nodes with a label; any present edge makes it `?`, otherwise it takes
/// its private belief.
pub fn phase1_aux_step<G: Topology + ?Sized>(
    aux: &mut AuxState,
    graph: &mut G,
    v: NodeId,
    beliefs: &mut Beliefs,
) -> Result<AuxStep, CouplingError> {
    debug_assert_eq!(aux.phase, Phase::One);
    aux.t += 1;
    if aux.get(v) != AuxOpinion::Unannounced {
        aux.assign(v, AuxOpinion::Unknown);
        return Ok(AuxStep {
            label: AuxOpinion::Unknown,
            read_belief: false,
        });
    }
    graph
        .expose(v, &aux.active, true)
        .map_err(DynamicsError::from)?;
    let touches_labelled = graph
        .neighbours(v)
        .iter()
        .any(|&u| aux.get(u) != AuxOpinion::Unannounced);
    let step = if touches_labelled {
        AuxStep {
            label: AuxOpinion::Unknown,
            read_belief: false,
        }
    } else {
        AuxStep {
            label: AuxOpinion::from_bit(beliefs.get(v)),
            read_belief: true,
        }
    };
    aux.assign(v, step.label);
    Ok(step)
}

/// Second-phase auxiliary update of `v`: `?` neighbours count against opinion 1.
pub fn phase2_aux_step<G: Topology + ?Sized>(
    aux: &mut AuxState,
    graph: &mut G,
    v: NodeId,
    beliefs: &mut Beliefs,
) -> Result<AuxStep, CouplingError> {
    debug_assert_eq!(aux.phase, Phase::Two);
    aux.t += 1;
    if aux.get(v) != AuxOpinion::Unannounced {
        aux.assign(v, AuxOpinion::Unknown);
        return Ok(AuxStep {
            label: AuxOpinion::Unknown,
            read_belief: false,
        });
    }
    graph
        .expose(v, &aux.active, true)
        .map_err(DynamicsError::from)?;
    let mut one = 0usize;
    let mut against = 0usize;
    for &u in graph.neighbours(v) {
        match aux.get(u) {
            AuxOpinion::One => one += 1,
            AuxOpinion::Zero | AuxOpinion::Unknown => against += 1,
            AuxOpinion::Unannounced => {}
        }
    }
    let step = match one.cmp(&against) {
        std::cmp::Ordering::Greater => AuxStep {
            label: AuxOpinion::One,
            read_belief: false,
        },
        std::cmp::Ordering::Less => AuxStep {
            label: AuxOpinion::Zero,
            read_belief: false,
        },
        std::cmp::Ordering::Equal => AuxStep {
            label: AuxOpinion::from_bit(beliefs.get(v)),
            read_belief: true,
        },
    };
    aux.assign(v, step.label);
    Ok(step)
}

fn announced(a: Announcement) -> bool {
    a != Announcement::Unannounced
}

/// First-phase relation: labels ⊥, 0, 1 equal the announcement, `?` means
/// announced, and `Z_i <= Y_i <= Z_i + Z_?` for both opinions.
pub fn check_coupling_phase1(state: &OpinionState, aux: &AuxState) -> bool {
    if state.n() != aux.n() {
        return false;
    }
    let pointwise = state
        .announcements()
        .iter()
        .zip(aux.labels())
        .all(|(&c, &d)| match d {
            AuxOpinion::Unknown => announced(c),
            other => other == AuxOpinion::from_announcement(c),
        });
    let z = aux.counts();
    pointwise
        && z.zero <= state.y0()
        && state.y0() <= z.zero + z.unknown
        && z.one <= state.y1()
        && state.y1() <= z.one + z.unknown
}

/// Second-phase relation: labels ⊥ and 1 equal the announcement, labels 0 and
/// `?` mean announced, and `Y_1 >= Z_1`.
pub fn check_coupling_phase2(state: &OpinionState, aux: &AuxState) -> bool {
    if state.n() != aux.n() {
        return false;
    }
    let pointwise = state
        .announcements()
        .iter()
        .zip(aux.labels())
        .all(|(&c, &d)| match d {
            AuxOpinion::Unannounced => c == Announcement::Unannounced,
            AuxOpinion::One => c == Announcement::One,
            AuxOpinion::Zero | AuxOpinion::Unknown => announced(c),
        });
    pointwise && state.y1() >= aux.counts().one
}

/// Every revealed pair has both endpoints labelled.
///
/// Checked per node: an unlabelled node must not be an endpoint of any revealed pair.
pub fn audit_exposure(graph: &DeferredGraph, aux: &AuxState) -> bool {
    graph.n() == aux.n()
        && (0..aux.n() as NodeId)
            .all(|v| aux.get(v) != AuxOpinion::Unannounced || graph.revealed_at(v) == 0)
}

/// Pair-by-pair form of [`audit_exposure`]; linear in the number of revealed pairs.
pub fn audit_exposure_pairs(graph: &DeferredGraph, aux: &AuxState) -> bool {
    graph.revealed_pairs().all(|(u, v, _)| {
        aux.get(u) != AuxOpinion::Unannounced && aux.get(v) != AuxOpinion::Unannounced
    })
}

/// Ones of `lower` are ones of `upper`, and both have announced the same nodes.
///
/// This is the relation preserved when `lower` runs with pointwise smaller
/// beliefs on the same graph and selection sequence.
pub fn announcements_dominated(lower: &[Announcement], upper: &[Announcement]) -> bool {
    lower.len() == upper.len()
        && lower.iter().zip(upper).all(|(&l, &u)| {
            announced(l) == announced(u) && (l != Announcement::One || u == Announcement::One)
        })
}

/// Which regime the third-phase diagnostics follow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    /// Average degree well above `ln n`: `T3 = n / sqrt(omega)`.
    NotVerySparse,
    /// Average degree of order `ln n`: `T3 = 2 n ln n`, then batches of that length.
    VerySparse,
}

/// Concrete phase boundaries for one `(n, p, delta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseConfig {
    pub n: usize,
    pub p: f64,
    pub delta: f64,
    pub omega: f64,
    pub t1: u64,
    pub t2: u64,
    pub t3: u64,
    pub s: u64,
    pub pipeline: Pipeline,
}

impl PhaseConfig {
    /// Default slowly growing function: the geometric mean of 1 and the
    /// smaller of `p n` and `p^{-1/2}`.
    pub fn default_omega(n: usize, p: f64) -> f64 {
        (p * n as f64).min(p.powf(-0.5)).sqrt()
    }

    pub fn new(n: usize, p: f64, delta: f64, pipeline: Pipeline) -> Result<Self, CouplingError> {
        Self::with_omega(n, p, delta, pipeline, Self::default_omega(n, p), None)
    }

    /// Builds and validates a schedule; `t2` defaults to `n / omega`.
    pub fn with_omega(
        n: usize,
        p: f64,
        delta: f64,
        pipeline: Pipeline,
        omega: f64,
        t2: Option<u64>,
    ) -> Result<Self, CouplingError> {
        crate::dynamics::check_delta(delta)?;
        let invalid = |msg: String| Err(CouplingError::InvalidSchedule(msg));
        if !(p > 0.0 && p <= 1.0) {
            return invalid(format!("p = {p} must lie in (0, 1]"));
        }
        if n < 3 {
            return invalid(format!("n = {n} is too small"));
        }
        let nf = n as f64;
        let window = (p * nf).min(p.powf(-0.5));
        if !(omega.is_finite() && omega > 0.0 && omega <= window) {
            return invalid(format!(
                "omega = {omega} must lie in (0, min(pn, p^-1/2)] = (0, {window}]"
            ));
        }
        let t1 = (delta / (2.0 * p)).floor() as u64;
        let t2 = t2.unwrap_or((nf / omega).floor() as u64);
        let (t2_lo, t2_hi) = (omega / p, nf / omega);
        if (t2 as f64) < t2_lo.floor() || (t2 as f64) > t2_hi {
            return invalid(format!("T2 = {t2} outside [{t2_lo:.1}, {t2_hi:.1}]"));
        }
        let t3 = match pipeline {
            Pipeline::NotVerySparse => (nf / omega.sqrt()).floor() as u64,
            Pipeline::VerySparse => (2.0 * nf * nf.ln()).floor() as u64,
        };
        if !(1 <= t1 && t1 < t2 && t2 < t3) {
            return invalid(format!("need 1 <= T1 < T2 < T3, got {t1}, {t2}, {t3}"));
        }
        let s = (nf * omega / nf.ln()).floor() as u64;
        Ok(PhaseConfig {
            n,
            p,
            delta,
            omega,
            t1,
            t2,
            t3,
            s,
            pipeline,
        })
    }
}

/// Round-by-round results of a coupled run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CouplingReport {
    pub rounds_checked: u64,
    /// Rounds at which the first-phase relation failed.
    pub phase1_violations: Vec<u64>,
    pub phase2_violations: Vec<u64>,
    pub exposure_violations: Vec<u64>,
    pub aux_count_violations: Vec<u64>,
    /// Auxiliary counts at the end of each phase that was reached.
    pub z_at_t1: Option<AuxCounts>,
    pub z_at_t2: Option<AuxCounts>,
    /// At the end of phase one: the auxiliary process read beliefs only for
    /// nodes it labelled 0/1, every such node also tie-broke in the true
    /// dynamics, and the lazy draw count equals the union of both sets.
    pub belief_reads_consistent: Option<bool>,
}

impl CouplingReport {
    pub fn clean(&self) -> bool {
        self.phase1_violations.is_empty()
            && self.phase2_violations.is_empty()
            && self.exposure_violations.is_empty()
            && self.aux_count_violations.is_empty()
            && self.belief_reads_consistent != Some(false)
    }
}

/// A true trial paired with its auxiliary process on a deferred graph.
///
/// The auxiliary process only observes: it never feeds back into the true run.
pub struct CoupledTrial<'a> {
    pub graph: &'a mut DeferredGraph,
    pub state: &'a mut OpinionState,
    pub run: &'a mut DynamicsRun,
    pub selector: &'a mut Selector,
    pub phases: PhaseConfig,
    /// Evaluate the coupling relations and the exposure audit every round.
    pub checks: bool,
}

impl CoupledTrial<'_> {
    /// Advances both processes through round `min(horizon, T2)` and returns what was observed.
    pub fn run_phases(self, horizon: u64) -> Result<(AuxState, CouplingReport), CouplingError> {
        let CoupledTrial {
            graph,
            state,
            run,
            selector,
            phases,
            checks,
        } = self;
        let n = state.n();
        if state.round() != 0 || graph.revealed_count() != 0 {
            return Err(CouplingError::InvalidSchedule(
                "a coupled run must start from round 0".into(),
            ));
        }
        let mut aux = AuxState::new(n);
        let mut report = CouplingReport::default();
        let mut tied = vec![false; n];
        let mut aux_read = vec![false; n];
        let end = horizon.min(phases.t2);
        if let Some(point) = run.trajectory_point_mut(0) {
            point.z_qmark = Some(0);
        }
        if checks {
            if !check_coupling_phase1(state, &aux) {
                report.phase1_violations.push(0);
            }
            if !audit_exposure(graph, &aux) {
                report.exposure_violations.push(0);
            }
        }
        while state.round() < end {
            let v = selector.next_node();
            let step = match aux.phase() {
                Phase::One => phase1_aux_step(&mut aux, &mut *graph, v, state.beliefs_mut())?,
                Phase::Two => phase2_aux_step(&mut aux, &mut *graph, v, state.beliefs_mut())?,
            };
            if aux.phase() == Phase::One && step.read_belief {
                aux_read[v as usize] = true;
            }
            let update = run.step_node(&mut *graph, state, v)?;
            if update.tie && aux.phase() == Phase::One {
                tied[v as usize] = true;
            }
            let t = state.round();
            if let Some(point) = run.trajectory_point_mut(t) {
                point.z_qmark = Some(aux.counts().unknown);
            }
            if checks {
                report.rounds_checked += 1;
                let ok = match aux.phase() {
                    Phase::One => check_coupling_phase1(state, &aux),
                    Phase::Two => check_coupling_phase2(state, &aux),
                };
                if !ok {
                    match aux.phase() {
                        Phase::One => report.phase1_violations.push(t),
                        Phase::Two => report.phase2_violations.push(t),
                    }
                }
                if !audit_exposure(graph, &aux) {
                    report.exposure_violations.push(t);
                }
                if !aux.counts_consistent() {
                    report.aux_count_violations.push(t);
                }
            }
            if t == phases.t1 {
                report.z_at_t1 = Some(aux.counts());
                let subset = (0..n).all(|v| !aux_read[v] || tied[v]);
                let union = (0..n).filter(|&v| aux_read[v] || tied[v]).count();
                report.belief_reads_consistent =
                    Some(subset && union == state.beliefs().draws());
                aux.enter_phase_two(state);
                if checks && !check_coupling_phase2(state, &aux) {
                    report.phase2_violations.push(t);
                }
            }
            if t == phases.t2 {
                report.z_at_t2 = Some(aux.counts());
            }
        }
        Ok((aux, report))
    }
}
