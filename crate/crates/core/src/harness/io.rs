//! On-disk schema: `trials.csv`, `aggregate.json` and per-trial trajectories.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tempfile::NamedTempFile;

use super::{AggregateStats, ExperimentConfig, HarnessError, TrialResult};
use crate::dynamics::{Outcome, TrajectoryPoint};

pub const TRIALS_FILE: &str = "trials.csv";
pub const AGGREGATE_FILE: &str = "aggregate.json";

/// One line of `trials.csv`. Field order is the column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub trial_id: u64,
    pub seed: u64,
    pub n: usize,
    pub p: f64,
    pub delta: f64,
    pub outcome: Outcome,
    pub termination_time: u64,
    pub t_hat: Option<u64>,
    pub terminated_at_t_hat: bool,
    pub y1_final: usize,
    pub y0_final: usize,
    pub phase1_pass: Option<bool>,
    pub phase2_pass: Option<bool>,
    pub phase3_pass: Option<bool>,
}

impl TrialRow {
    pub fn new(cfg: &ExperimentConfig, result: &TrialResult) -> Self {
        let r = &result.record;
        TrialRow {
            trial_id: result.trial_id,
            seed: result.seed,
            n: cfg.n,
            p: cfg.p,
            delta: cfg.delta,
            outcome: r.outcome,
            termination_time: r.termination_time,
            t_hat: r.t_hat,
            terminated_at_t_hat: r.terminated_at_t_hat,
            y1_final: r.y1_final,
            y0_final: r.y0_final,
            phase1_pass: r.phase_flags.phase1,
            phase2_pass: r.phase_flags.phase2,
            phase3_pass: r.phase_flags.phase3,
        }
    }
}

/// `aggregate.json`: the configuration echo followed by the statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateFile {
    pub config: ExperimentConfig,
    #[serde(flatten)]
    pub stats: AggregateStats,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `path` through a temporary file in the same directory and a rename.
pub fn write_atomic(
    path: &Path,
    fill: impl FnOnce(&mut dyn Write) -> Result<(), HarnessError>,
) -> Result<(), HarnessError> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut tmp = NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    {
        let mut buf = std::io::BufWriter::new(tmp.as_file_mut());
        fill(&mut buf)?;
        buf.flush().map_err(io_err(path))?;
    }
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| io_err(path)(e.error))?;
    Ok(())
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    write_atomic(path, |w| {
        let mut csv = csv::Writer::from_writer(w);
        for row in rows {
            csv.serialize(row)?;
        }
        csv.flush().map_err(io_err(path))?;
        Ok(())
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n").map_err(io_err(path))?;
        Ok(())
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrajectoryRow {
    t: u64,
    y_perp: usize,
    y0: usize,
    y1: usize,
    z_qmark: Option<usize>,
}

pub fn trajectory_path(dir: &Path, trial_id: u64) -> PathBuf {
    dir.join(format!("trajectory_{trial_id}.csv"))
}

pub fn write_trajectory(path: &Path, points: &[TrajectoryPoint]) -> Result<(), HarnessError> {
    let rows: Vec<TrajectoryRow> = points
        .iter()
        .map(|p| TrajectoryRow {
            t: p.t,
            y_perp: p.y_perp,
            y0: p.y0,
            y1: p.y1,
            z_qmark: p.z_qmark,
        })
        .collect();
    if rows.is_empty() {
        // Keep the header even for an empty dump.
        return write_atomic(path, |w| {
            w.write_all(b"t,y_perp,y0,y1,z_qmark\n").map_err(io_err(path))
        });
    }
    write_csv(path, &rows)
}

/// Writes `trials.csv`, `aggregate.json` and any retained trajectories into `dir`.
pub fn write_results(
    dir: &Path,
    cfg: &ExperimentConfig,
    stats: &AggregateStats,
    results: &[TrialResult],
) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let rows: Vec<TrialRow> = results.iter().map(|r| TrialRow::new(cfg, r)).collect();
    write_csv(&dir.join(TRIALS_FILE), &rows)?;
    for r in results.iter().filter(|r| !r.record.trajectory.is_empty()) {
        write_trajectory(&trajectory_path(dir, r.trial_id), &r.record.trajectory)?;
    }
    let file = AggregateFile {
        config: cfg.clone(),
        stats: stats.clone(),
    };
    write_json(&dir.join(AGGREGATE_FILE), &file)
}

pub fn load_trials(path: &Path) -> Result<Vec<TrialRow>, HarnessError> {
    let mut reader = csv::Reader::from_path(path)?;
    reader
        .deserialize()
        .collect::<Result<Vec<TrialRow>, _>>()
        .map_err(HarnessError::from)
}

pub fn load_aggregate(path: &Path) -> Result<AggregateFile, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&text)?)
}
