//! Adapter depth and rank planning for heterogeneous devices.
//!
//! Timing model: a device with per-layer backprop time `mu`, per-unit-rank
//! upload time `beta` and forward time `t_fwd` finishes a round with config
//! `R_i` in `t_fwd + depth * mu + sum(R_i) * beta` seconds. The round lasts
//! as long as the slowest device, and the average waiting time is the mean
//! gap to that device.
//!
//! Planning steps:
//! 1. depth gap `k = ceil(L * (t_max - t_min) / t_max)`, clamped to `L - 1`;
//! 2. each device gets depth `(L - k) + ceil(k * gap_i)` where `gap_i` is
//!    its normalized distance from the slowest device;
//! 3. one global arithmetic rank sequence `r_l = r_0 + lambda * l` under the
//!    total budget `psi`;
//! 4. depths are greedily lowered until the deepest slice of that sequence
//!    fits the device's compute and communication budgets;
//! 5. each device receives the deepest `depth` ranks of the sequence.

use serde::{Deserialize, Serialize};

use crate::capacity::CapacityEstimate;
use crate::error::{Error, Result};
use crate::lora::LoraConfig;

/// How a device's distance from the slowest device becomes extra depth.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthRule {
    /// `(t_max - t_i) / (t_max - t_min)`: the fastest device reaches depth `L`.
    #[default]
    EndpointNormalized,
    /// `(t_max - t_i) / t_max`: the fastest device stops short of `L`
    /// unless it is infinitely fast.
    SlowestNormalized,
}

/// Which completion times feed the depth rule.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeBasis {
    /// Predicted time of the full-depth configuration: a pure capability
    /// measure that does not depend on last round's assignment.
    #[default]
    FullDepth,
    /// Predicted time of the configuration each device ran last round.
    PreviousConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannerParams {
    pub layers: usize,
    /// Total rank budget `psi`.
    pub psi: usize,
    /// Rank step between adjacent layers.
    pub lambda: usize,
    /// Average-waiting threshold; reported, not used for planning.
    pub epsilon: f64,
    /// Compute cost per unit rank per layer.
    pub compute_per_rank: f64,
    /// Fixed forward compute cost.
    pub forward_compute: f64,
    /// Communication cost per unit rank per layer.
    pub comm_per_rank: f64,
    pub depth_rule: DepthRule,
    pub time_basis: TimeBasis,
}

impl Default for PlannerParams {
    fn default() -> Self {
        PlannerParams {
            layers: 12,
            psi: 96,
            lambda: 1,
            epsilon: f64::INFINITY,
            compute_per_rank: 1.0,
            forward_compute: 0.0,
            comm_per_rank: 1.0,
            depth_rule: DepthRule::default(),
            time_basis: TimeBasis::default(),
        }
    }
}

impl PlannerParams {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::config("planner.layers", "must be at least 1"));
        }
        if self.psi < self.layers {
            return Err(Error::config(
                "planner.psi",
                format!("psi={} must be at least the layer count {}", self.psi, self.layers),
            ));
        }
        if !(self.compute_per_rank > 0.0 && self.compute_per_rank.is_finite()) {
            return Err(Error::config("planner.compute_per_rank", "must be positive"));
        }
        if !(self.comm_per_rank > 0.0 && self.comm_per_rank.is_finite()) {
            return Err(Error::config("planner.comm_per_rank", "must be positive"));
        }
        if !(self.forward_compute >= 0.0 && self.forward_compute.is_finite()) {
            return Err(Error::config("planner.forward_compute", "must be non-negative"));
        }
        if self.epsilon.is_nan() || self.epsilon < 0.0 {
            return Err(Error::config("planner.epsilon", "must be non-negative"));
        }
        Ok(())
    }
}

/// Per-round resource budgets of one device.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceBudget {
    pub compute: f64,
    pub comm: f64,
}

impl DeviceBudget {
    pub fn unlimited() -> Self {
        DeviceBudget {
            compute: f64::INFINITY,
            comm: f64::INFINITY,
        }
    }
}

/// Completion time `t_fwd + depth * mu + rank_sum * beta`.
pub fn predict_completion(estimate: &CapacityEstimate, forward_time: f64, config: &LoraConfig) -> f64 {
    forward_time + config.depth() as f64 * estimate.mu + config.rank_sum() as f64 * estimate.beta
}

/// Mean of `max(times) - t_i`; zero for an empty slice.
pub fn avg_waiting(times: &[f64]) -> f64 {
    if times.is_empty() {
        return 0.0;
    }
    let slowest = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    times.iter().map(|t| slowest - t).sum::<f64>() / times.len() as f64
}

/// Ceiling that ignores floating noise just above an integer.
fn ceil_robust(x: f64) -> usize {
    let c = (x - 1e-9).ceil();
    if c <= 0.0 {
        0
    } else {
        c as usize
    }
}

fn check_times(times: &[f64]) -> Result<(f64, f64)> {
    if times.is_empty() {
        return Err(Error::EmptyInput("completion times"));
    }
    let mut max = f64::NEG_INFINITY;
    let mut min = f64::INFINITY;
    for &t in times {
        if !(t.is_finite() && t > 0.0) {
            return Err(Error::NonPositiveTime(t));
        }
        max = max.max(t);
        min = min.min(t);
    }
    Ok((max, min))
}

/// Spread between the deepest and shallowest depth this round, clamped to
/// `layers - 1` so the slowest device keeps at least one adapted layer.
pub fn depth_gap(times: &[f64], layers: usize) -> Result<usize> {
    let (max, min) = check_times(times)?;
    let raw = ceil_robust(layers as f64 * (max - min) / max);
    Ok(raw.min(layers.saturating_sub(1)))
}

/// Depth per device, in the order of `times`, clamped to `[1, layers]`.
pub fn device_depths(times: &[f64], layers: usize, gap: usize, rule: DepthRule) -> Result<Vec<usize>> {
    let (max, min) = check_times(times)?;
    let gap = gap.min(layers.saturating_sub(1));
    let floor = layers - gap;
    Ok(times
        .iter()
        .map(|&t| {
            let fraction = match rule {
                DepthRule::EndpointNormalized if max > min => (max - t) / (max - min),
                DepthRule::EndpointNormalized => 0.0,
                DepthRule::SlowestNormalized => (max - t) / max,
            };
            let extra = ceil_robust(gap as f64 * fraction);
            (floor + extra).clamp(1, layers)
        })
        .collect())
}

/// Smallest `psi` for which `global_rank_distribution` succeeds.
pub fn min_feasible_psi(layers: usize, lambda: usize) -> usize {
    layers + lambda * layers * layers.saturating_sub(1) / 2
}

/// `r_l = r_0 + lambda * l` with `r_0 = floor((psi - lambda * L(L-1)/2) / L)`.
/// Any remainder of `psi` stays unallocated.
pub fn global_rank_distribution(layers: usize, psi: usize, lambda: usize) -> Result<Vec<usize>> {
    if layers == 0 {
        return Err(Error::EmptyInput("layers"));
    }
    let ramp = lambda * layers * (layers - 1) / 2;
    let base = psi.checked_sub(ramp).map(|rest| rest / layers).unwrap_or(0);
    if base < 1 {
        return Err(Error::InfeasibleRankBudget {
            psi,
            layers,
            step: lambda,
            min_psi: min_feasible_psi(layers, lambda),
        });
    }
    Ok((0..layers).map(|l| base + lambda * l).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetOutcome {
    pub depth: usize,
    /// False when even depth 1 breaks a budget; the device still runs depth 1.
    pub feasible: bool,
}

fn fits(slice_sum: usize, params: &PlannerParams, budget: &DeviceBudget) -> bool {
    let sum = slice_sum as f64;
    params.forward_compute + sum * params.compute_per_rank <= budget.compute
        && sum * params.comm_per_rank <= budget.comm
}

/// Largest depth `<= depth` whose deepest slice of `distribution` meets
/// both budgets, found by decrementing from `depth`.
pub fn enforce_budgets(
    distribution: &[usize],
    depth: usize,
    params: &PlannerParams,
    budget: &DeviceBudget,
) -> BudgetOutcome {
    let depth = depth.clamp(1, distribution.len().max(1));
    let slice_sum = |k: usize| distribution[distribution.len() - k..].iter().sum::<usize>();
    let mut k = depth;
    while k > 1 && !fits(slice_sum(k), params, budget) {
        k -= 1;
    }
    BudgetOutcome {
        depth: k,
        feasible: fits(slice_sum(k), params, budget),
    }
}

/// Everything the planner knows about one device.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanningInput {
    pub device_id: usize,
    pub estimate: Option<CapacityEstimate>,
    pub budget: DeviceBudget,
    pub previous: Option<LoraConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DevicePlan {
    pub device_id: usize,
    pub config: LoraConfig,
    /// Depth chosen by the depth rule before budget enforcement.
    pub target_depth: usize,
    pub budget_feasible: bool,
    /// Completion time that drove the depth rule, if estimates existed.
    pub basis_time: Option<f64>,
    /// Predicted completion time under `config`, if estimates existed.
    pub predicted_time: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub devices: Vec<DevicePlan>,
    pub distribution: Vec<usize>,
    pub depth_gap: usize,
    pub predicted_round_time: Option<f64>,
    pub predicted_avg_wait: Option<f64>,
    /// Predicted average waiting exceeds epsilon.
    pub wait_violation: bool,
}

impl Plan {
    pub fn config_of(&self, device_id: usize) -> Option<&LoraConfig> {
        self.devices
            .iter()
            .find(|d| d.device_id == device_id)
            .map(|d| &d.config)
    }
}

/// Plans from explicit completion times, one per `(id, budget)` entry.
pub fn plan_from_times(devices: &[(usize, DeviceBudget)], times: &[f64], params: &PlannerParams) -> Result<Plan> {
    params.validate()?;
    if devices.len() != times.len() {
        return Err(Error::shape("plan_from_times", (devices.len(), 1), (times.len(), 1)));
    }
    let distribution = global_rank_distribution(params.layers, params.psi, params.lambda)?;
    let gap = depth_gap(times, params.layers)?;
    let targets = device_depths(times, params.layers, gap, params.depth_rule)?;
    let devices = devices
        .iter()
        .zip(&targets)
        .zip(times)
        .map(|(((id, budget), &target), &t)| {
            let outcome = enforce_budgets(&distribution, target, params, budget);
            Ok(DevicePlan {
                device_id: *id,
                config: LoraConfig::suffix_of(&distribution, outcome.depth)?,
                target_depth: target,
                budget_feasible: outcome.feasible,
                basis_time: Some(t),
                predicted_time: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Plan {
        devices,
        distribution,
        depth_gap: gap,
        predicted_round_time: None,
        predicted_avg_wait: None,
        wait_violation: false,
    })
}

/// Full planning step for one round.
///
/// Without an estimate for every device (cold start) all devices get the
/// full-depth configuration, still subject to their budgets.
pub fn configure(inputs: &[PlanningInput], params: &PlannerParams) -> Result<Plan> {
    params.validate()?;
    if inputs.is_empty() {
        return Err(Error::EmptyInput("devices"));
    }
    let distribution = global_rank_distribution(params.layers, params.psi, params.lambda)?;
    let full = LoraConfig::suffix_of(&distribution, params.layers)?;

    let estimates: Option<Vec<&CapacityEstimate>> = inputs.iter().map(|d| d.estimate.as_ref()).collect();
    let Some(estimates) = estimates else {
        let devices = inputs
            .iter()
            .map(|d| {
                let outcome = enforce_budgets(&distribution, params.layers, params, &d.budget);
                Ok(DevicePlan {
                    device_id: d.device_id,
                    config: LoraConfig::suffix_of(&distribution, outcome.depth)?,
                    target_depth: params.layers,
                    budget_feasible: outcome.feasible,
                    basis_time: None,
                    predicted_time: None,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        return Ok(Plan {
            devices,
            distribution,
            depth_gap: 0,
            predicted_round_time: None,
            predicted_avg_wait: None,
            wait_violation: false,
        });
    };

    let times: Vec<f64> = inputs
        .iter()
        .zip(&estimates)
        .map(|(d, est)| {
            let basis = match params.time_basis {
                TimeBasis::FullDepth => &full,
                TimeBasis::PreviousConfig => d.previous.as_ref().unwrap_or(&full),
            };
            predict_completion(est, est.forward_time, basis)
        })
        .collect();
    let budgets: Vec<(usize, DeviceBudget)> = inputs.iter().map(|d| (d.device_id, d.budget)).collect();
    let mut plan = plan_from_times(&budgets, &times, params)?;

    let predicted: Vec<f64> = plan
        .devices
        .iter_mut()
        .zip(&estimates)
        .map(|(dp, est)| {
            let t = predict_completion(est, est.forward_time, &dp.config);
            dp.predicted_time = Some(t);
            t
        })
        .collect();
    let wait = avg_waiting(&predicted);
    plan.predicted_round_time = predicted.iter().copied().reduce(f64::max);
    plan.predicted_avg_wait = Some(wait);
    plan.wait_violation = wait > params.epsilon;
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn estimate(mu: f64, beta: f64) -> CapacityEstimate {
        CapacityEstimate {
            device_id: 0,
            round: 0,
            mu,
            beta,
            forward_time: 0.0,
            rho: 0.8,
        }
    }

    #[test]
    fn completion_examples() {
        let c = LoraConfig::new(vec![1, 2, 3]).unwrap();
        assert_eq!(predict_completion(&estimate(2.0, 0.5), 1.0, &c), 10.0);
        assert_eq!(predict_completion(&estimate(2.0, 0.5), 1.0, &LoraConfig::empty()), 1.0);
        let wide = LoraConfig::new(vec![7, 9, 30]).unwrap();
        assert_eq!(
            predict_completion(&estimate(2.0, 0.0), 1.0, &c),
            predict_completion(&estimate(2.0, 0.0), 1.0, &wide)
        );
    }

    #[test]
    fn waiting_examples() {
        assert_eq!(avg_waiting(&[4.0, 4.0, 4.0]), 0.0);
        assert_eq!(avg_waiting(&[5.0, 10.0, 15.0]), 5.0);
        assert_eq!(avg_waiting(&[9.0]), 0.0);
    }

    #[test]
    fn gap_examples() {
        assert_eq!(depth_gap(&[7.0, 7.0, 7.0], 12).unwrap(), 0);
        assert_eq!(depth_gap(&[100.0, 60.0, 30.0], 12).unwrap(), 9);
        assert_eq!(depth_gap(&[100.0, 1.0], 12).unwrap(), 11);
        assert_eq!(depth_gap(&[100.0, 50.0], 12).unwrap(), 6);
        assert_eq!(depth_gap(&[1.0, 0.0], 12).unwrap_err(), Error::NonPositiveTime(0.0));
    }

    #[test]
    fn depth_examples() {
        let times = [100.0, 60.0, 30.0];
        let d = device_depths(&times, 12, 9, DepthRule::EndpointNormalized).unwrap();
        assert_eq!(d, vec![3, 9, 12]);
        let lit = device_depths(&times, 12, 9, DepthRule::SlowestNormalized).unwrap();
        // 3 + ceil(9 * 0.4) = 7, 3 + ceil(9 * 0.7) = 10
        assert_eq!(lit, vec![3, 7, 10]);
        let same = device_depths(&[5.0, 5.0], 12, 0, DepthRule::EndpointNormalized).unwrap();
        assert_eq!(same, vec![12, 12]);
    }

    #[test]
    fn distribution_examples() {
        assert_eq!(global_rank_distribution(12, 12, 0).unwrap(), vec![1; 12]);
        let r = global_rank_distribution(12, 96, 1).unwrap();
        assert_eq!(r, (2..=13).collect::<Vec<_>>());
        assert_eq!(r.iter().sum::<usize>(), 90);
        assert_eq!(
            global_rank_distribution(12, 66, 1).unwrap_err(),
            Error::InfeasibleRankBudget {
                psi: 66,
                layers: 12,
                step: 1,
                min_psi: 78
            }
        );
        assert!(global_rank_distribution(12, 78, 1).is_ok());
    }

    #[test]
    fn budget_examples() {
        let r: Vec<usize> = (2..=13).collect();
        let params = PlannerParams {
            forward_compute: 10.0,
            ..PlannerParams::default()
        };
        let unlimited = enforce_budgets(&r, 9, &params, &DeviceBudget::unlimited());
        assert_eq!(
            unlimited,
            BudgetOutcome {
                depth: 9,
                feasible: true
            }
        );
        let tight = DeviceBudget {
            compute: 60.0,
            comm: f64::INFINITY,
        };
        assert_eq!(enforce_budgets(&r, 12, &params, &tight).depth, 4);
        let hopeless = DeviceBudget {
            compute: 10.0 + 13.0 - 0.5,
            comm: f64::INFINITY,
        };
        assert_eq!(
            enforce_budgets(&r, 12, &params, &hopeless),
            BudgetOutcome {
                depth: 1,
                feasible: false
            }
        );
        let comm = DeviceBudget {
            compute: f64::INFINITY,
            comm: 25.0,
        };
        assert_eq!(enforce_budgets(&r, 12, &params, &comm).depth, 2);
    }

    #[test]
    fn three_device_plan() {
        let devices: Vec<_> = (0..3).map(|i| (i, DeviceBudget::unlimited())).collect();
        let plan = plan_from_times(&devices, &[100.0, 60.0, 30.0], &PlannerParams::default()).unwrap();
        assert_eq!(plan.depth_gap, 9);
        let depths: Vec<_> = plan.devices.iter().map(|d| d.config.depth()).collect();
        assert_eq!(depths, vec![3, 9, 12]);
        assert_eq!(plan.devices[0].config.ranks(), &[11, 12, 13]);
        assert_eq!(plan.devices[2].config.ranks(), (2..=13).collect::<Vec<_>>().as_slice());
    }

    #[test]
    fn cold_start_is_full_depth() {
        let inputs: Vec<_> = (0..4)
            .map(|i| PlanningInput {
                device_id: i,
                estimate: None,
                budget: DeviceBudget::unlimited(),
                previous: None,
            })
            .collect();
        let plan = configure(&inputs, &PlannerParams::default()).unwrap();
        assert!(plan.devices.iter().all(|d| d.config.depth() == 12));
        assert_eq!(plan.predicted_avg_wait, None);
    }

    #[test]
    fn homogeneous_devices_identical_configs() {
        let inputs: Vec<_> = (0..5)
            .map(|i| PlanningInput {
                device_id: i,
                estimate: Some(CapacityEstimate {
                    device_id: i,
                    forward_time: 2.0,
                    ..estimate(1.5, 0.1)
                }),
                budget: DeviceBudget::unlimited(),
                previous: None,
            })
            .collect();
        let plan = configure(&inputs, &PlannerParams::default()).unwrap();
        assert_eq!(plan.depth_gap, 0);
        assert!(plan.devices.iter().all(|d| d.config == plan.devices[0].config));
        assert_eq!(plan.devices[0].config.depth(), 12);
        assert_eq!(plan.predicted_avg_wait, Some(0.0));
    }

    #[test]
    fn epsilon_flags_violation() {
        // Full-depth times 13 and 58 give depths 12 and 2, leaving 13 vs 18.
        let inputs: Vec<_> = [(1.0, 1.0), (4.0, 10.0)]
            .iter()
            .enumerate()
            .map(|(i, &(mu, fwd))| PlanningInput {
                device_id: i,
                estimate: Some(CapacityEstimate {
                    forward_time: fwd,
                    ..estimate(mu, 0.0)
                }),
                budget: DeviceBudget::unlimited(),
                previous: None,
            })
            .collect();
        let strict = PlannerParams {
            epsilon: 0.0,
            ..PlannerParams::default()
        };
        let plan = configure(&inputs, &strict).unwrap();
        assert_eq!(plan.predicted_avg_wait, Some(2.5));
        assert!(plan.wait_violation);
        assert!(!configure(&inputs, &PlannerParams::default()).unwrap().wait_violation);
    }

    #[test]
    fn params_validation() {
        let bad = PlannerParams {
            psi: 5,
            ..PlannerParams::default()
        };
        assert!(bad.validate().is_err());
        let bad = PlannerParams {
            comm_per_rank: 0.0,
            ..PlannerParams::default()
        };
        assert!(bad.validate().is_err());
    }
}
