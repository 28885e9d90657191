use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::config::PlannerKind;

/// Per-device outcome of one round.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeviceRecord {
    pub device_id: usize,
    pub depth: usize,
    pub rank_sum: usize,
    /// Depth the planner asked for before budgets were applied.
    pub target_depth: usize,
    pub budget_feasible: bool,
    pub completion_time: f64,
    pub mu: f64,
    pub beta: f64,
    pub up_bytes: u64,
    pub down_bytes: u64,
    pub local_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoundReport {
    pub round: usize,
    pub devices: Vec<DeviceRecord>,
    pub depth_gap: usize,
    pub round_time: f64,
    pub avg_wait: f64,
    pub wait_violation: bool,
    pub round_bytes: u64,
    pub cum_time: f64,
    pub cum_bytes: u64,
    pub eval_loss: f64,
    pub eval_acc: f64,
    pub train_acc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentLog {
    pub planner: PlannerKind,
    pub rounds: Vec<RoundReport>,
    /// Bytes seen by the transfer-site counter, independent of the reports.
    pub counted_bytes: u64,
    pub backbone_checksum_before: [u8; 32],
    pub backbone_checksum_after: [u8; 32],
}

impl ExperimentLog {
    pub fn label(&self) -> &'static str {
        self.planner.label()
    }

    pub fn total_time(&self) -> f64 {
        self.rounds.last().map_or(0.0, |r| r.cum_time)
    }

    pub fn total_bytes(&self) -> u64 {
        self.rounds.last().map_or(0, |r| r.cum_bytes)
    }

    pub fn mean_avg_wait(&self) -> f64 {
        if self.rounds.is_empty() {
            return 0.0;
        }
        self.rounds.iter().map(|r| r.avg_wait).sum::<f64>() / self.rounds.len() as f64
    }

    pub fn final_round(&self) -> Option<&RoundReport> {
        self.rounds.last()
    }
}

pub const CSV_COLUMNS: [&str; 14] = [
    "round",
    "device_id",
    "depth",
    "rank_sum",
    "t_i",
    "t_round",
    "avg_wait",
    "wait_violation",
    "up_bytes",
    "down_bytes",
    "cum_time",
    "cum_bytes",
    "eval_loss",
    "eval_acc",
];

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// One row per device per round.
pub fn write_device_csv(log: &ExperimentLog, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(CSV_COLUMNS).map_err(csv_err)?;
    for r in &log.rounds {
        let t_round = r.round_time.to_string();
        let wait = r.avg_wait.to_string();
        let violation = r.wait_violation.to_string();
        let cum_time = r.cum_time.to_string();
        let cum_bytes = r.cum_bytes.to_string();
        for d in &r.devices {
            w.write_record([
                r.round.to_string(),
                d.device_id.to_string(),
                d.depth.to_string(),
                d.rank_sum.to_string(),
                d.completion_time.to_string(),
                t_round.clone(),
                wait.clone(),
                violation.clone(),
                d.up_bytes.to_string(),
                d.down_bytes.to_string(),
                cum_time.clone(),
                cum_bytes.clone(),
                r.eval_loss.to_string(),
                r.eval_acc.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One row per round with `device_id = "-"`; per-device columns hold the
/// round totals (max depth, summed ranks and bytes, slowest completion).
pub fn write_summary_csv(log: &ExperimentLog, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(CSV_COLUMNS).map_err(csv_err)?;
    for r in &log.rounds {
        let depth = r.devices.iter().map(|d| d.depth).max().unwrap_or(0);
        let rank_sum: usize = r.devices.iter().map(|d| d.rank_sum).sum();
        let up: u64 = r.devices.iter().map(|d| d.up_bytes).sum();
        let down: u64 = r.devices.iter().map(|d| d.down_bytes).sum();
        w.write_record([
            r.round.to_string(),
            "-".to_string(),
            depth.to_string(),
            rank_sum.to_string(),
            r.round_time.to_string(),
            r.round_time.to_string(),
            r.avg_wait.to_string(),
            r.wait_violation.to_string(),
            up.to_string(),
            down.to_string(),
            r.cum_time.to_string(),
            r.cum_bytes.to_string(),
            r.eval_loss.to_string(),
            r.eval_acc.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
