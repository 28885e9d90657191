use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;

use crate::capacity::CapacityEstimate;
use crate::error::{Error, Result};
use crate::planner::{self, DeviceBudget, Plan, PlannerParams, PlanningInput};

/// One row of a device profile CSV.
#[derive(Clone, Copy, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileRow {
    pub device_id: usize,
    pub mu: f64,
    pub beta: f64,
    pub forward_time: f64,
    pub compute_budget: f64,
    pub comm_budget: f64,
}

pub const PROFILE_HEADER: &str = "device_id,mu,beta,forward_time,compute_budget,comm_budget";

/// Parses a profile CSV with header [`PROFILE_HEADER`]. Budgets accept
/// `inf`. Row numbers in errors are 1-based data rows.
pub fn parse_profile(text: &str) -> Result<Vec<ProfileRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, record) in reader.deserialize::<ProfileRow>().enumerate() {
        let row = record.map_err(|e| Error::MalformedProfile {
            row: i + 1,
            message: e.to_string(),
        })?;
        for (field, value) in [("mu", row.mu), ("beta", row.beta), ("forward_time", row.forward_time)] {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(Error::MalformedProfile {
                    row: i + 1,
                    message: format!("{field} must be finite and non-negative, got {value}"),
                });
            }
        }
        if row.compute_budget.is_nan() || row.comm_budget.is_nan() {
            return Err(Error::MalformedProfile {
                row: i + 1,
                message: "budgets must be numbers or inf".into(),
            });
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::MalformedProfile {
            row: 0,
            message: "no device rows".into(),
        });
    }
    Ok(rows)
}

/// One-shot plan for measured devices.
pub fn plan_profile(rows: &[ProfileRow], params: &PlannerParams) -> Result<Plan> {
    let inputs: Vec<PlanningInput> = rows
        .iter()
        .map(|r| PlanningInput {
            device_id: r.device_id,
            estimate: Some(CapacityEstimate {
                device_id: r.device_id,
                round: 0,
                mu: r.mu,
                beta: r.beta,
                forward_time: r.forward_time,
                rho: crate::capacity::DEFAULT_SMOOTHING,
            }),
            budget: DeviceBudget {
                compute: r.compute_budget,
                comm: r.comm_budget,
            },
            previous: None,
        })
        .collect();
    planner::configure(&inputs, params)
}

/// Plan table: comment lines for the global quantities, then one CSV row
/// per device.
pub fn format_plan(plan: &Plan) -> String {
    let mut out = String::new();
    let ranks = |r: &[usize]| r.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
    let _ = writeln!(out, "# depth_gap={}", plan.depth_gap);
    let _ = writeln!(out, "# distribution={}", ranks(&plan.distribution));
    let _ = writeln!(
        out,
        "device_id,target_depth,depth,ranks,rank_sum,budget_feasible,predicted_t"
    );
    for d in &plan.devices {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            d.device_id,
            d.target_depth,
            d.config.depth(),
            ranks(d.config.ranks()),
            d.config.rank_sum(),
            d.budget_feasible,
            d.predicted_time.unwrap_or(f64::NAN)
        );
    }
    let _ = writeln!(
        out,
        "# round_time={} avg_wait={} wait_violation={}",
        plan.predicted_round_time.unwrap_or(f64::NAN),
        plan.predicted_avg_wait.unwrap_or(f64::NAN),
        plan.wait_violation
    );
    out
}

/// Reads a profile file and renders its plan.
pub fn cmd_plan(profile: &Path, params: &PlannerParams) -> Result<String> {
    let text = std::fs::read_to_string(profile).map_err(|e| Error::Io(format!("{}: {e}", profile.display())))?;
    let rows = parse_profile(&text)?;
    params.validate()?;
    planner::global_rank_distribution(params.layers, params.psi, params.lambda)?;
    Ok(format_plan(&plan_profile(&rows, params)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    const THREE: &str = "device_id,mu,beta,forward_time,compute_budget,comm_budget\n\
        0,0,0,100,inf,inf\n1,0,0,60,inf,inf\n2,0,0,30,inf,inf\n";

    #[test]
    fn three_device_example() {
        let rows = parse_profile(THREE).unwrap();
        let plan = plan_profile(&rows, &PlannerParams::default()).unwrap();
        let depths: Vec<usize> = plan.devices.iter().map(|d| d.config.depth()).collect();
        assert_eq!(depths, vec![3, 9, 12]);
        assert_eq!(plan.depth_gap, 9);
        let table = format_plan(&plan);
        assert!(table.contains("0,3,3,11 12 13,36,true,100"), "{table}");
    }

    #[test]
    fn single_device_full_depth() {
        let rows = parse_profile(&format!("{PROFILE_HEADER}\n4,1.5,0.1,2,inf,inf\n")).unwrap();
        let plan = plan_profile(&rows, &PlannerParams::default()).unwrap();
        assert_eq!(plan.devices[0].config.depth(), 12);
    }

    #[test]
    fn malformed_rows() {
        let bad = format!("{PROFILE_HEADER}\n0,1,1,1,inf,inf\n1,x,1,1,inf,inf\n");
        assert!(matches!(
            parse_profile(&bad),
            Err(Error::MalformedProfile { row: 2, .. })
        ));
        let short = format!("{PROFILE_HEADER}\n0,1,1\n");
        assert!(parse_profile(&short).is_err());
        let negative = format!("{PROFILE_HEADER}\n0,-1,1,1,inf,inf\n");
        assert!(parse_profile(&negative).is_err());
        assert!(parse_profile(PROFILE_HEADER).is_err());
    }
}
