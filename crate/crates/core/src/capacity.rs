//! Server-side smoothing of device status reports.
//!
//! Per-layer backprop time `mu` and per-unit-rank upload time `beta` are
//! tracked as exponential moving averages:
//! `est <- rho * est + (1 - rho) * observed`. The first report seeds the
//! estimate directly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SMOOTHING: f64 = 0.8;

/// What a device reports after a round.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceStatus {
    pub device_id: usize,
    pub round: usize,
    /// Observed backprop seconds per adapted layer.
    pub mu_hat: f64,
    /// Observed upload seconds per unit of rank.
    pub beta_hat: f64,
    /// Observed forward seconds for the round.
    pub forward_time: f64,
}

impl DeviceStatus {
    fn validate(&self) -> Result<()> {
        for (field, value) in [
            ("mu_hat", self.mu_hat),
            ("beta_hat", self.beta_hat),
            ("forward_time", self.forward_time),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::NegativeObservation {
                    device: self.device_id,
                    field,
                    value,
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacityEstimate {
    pub device_id: usize,
    /// Round of the latest folded (or carried) observation.
    pub round: usize,
    pub mu: f64,
    pub beta: f64,
    /// Latest reported forward time (not smoothed).
    pub forward_time: f64,
    pub rho: f64,
}

impl CapacityEstimate {
    /// Seeds an estimate from the first observation.
    pub fn initial(obs: &DeviceStatus, rho: f64) -> Result<Self> {
        obs.validate()?;
        check_rho(rho)?;
        Ok(CapacityEstimate {
            device_id: obs.device_id,
            round: obs.round,
            mu: obs.mu_hat,
            beta: obs.beta_hat,
            forward_time: obs.forward_time,
            rho,
        })
    }

    /// Folds the next round's observation into the moving average.
    pub fn update(&self, obs: &DeviceStatus) -> Result<Self> {
        obs.validate()?;
        if obs.round != self.round + 1 {
            return Err(Error::OutOfOrderObservation {
                device: obs.device_id,
                expected: self.round + 1,
                got: obs.round,
            });
        }
        let rho = self.rho;
        Ok(CapacityEstimate {
            device_id: self.device_id,
            round: obs.round,
            mu: rho * self.mu + (1.0 - rho) * obs.mu_hat,
            beta: rho * self.beta + (1.0 - rho) * obs.beta_hat,
            forward_time: obs.forward_time,
            rho,
        })
    }

    /// A round passed without a report: keep the estimate, advance the round.
    pub fn carry_forward(&self) -> Self {
        CapacityEstimate {
            round: self.round + 1,
            ..*self
        }
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if (0.0..=1.0).contains(&rho) {
        Ok(())
    } else {
        Err(Error::config("capacity.rho", format!("must lie in [0, 1], got {rho}")))
    }
}

/// `update_estimate` with the first-round seeding rule.
pub fn update_estimate(prev: Option<&CapacityEstimate>, obs: &DeviceStatus, rho: f64) -> Result<CapacityEstimate> {
    match prev {
        Some(prev) => prev.update(obs),
        None => CapacityEstimate::initial(obs, rho),
    }
}

/// Folds each device's ordered history. Every id in `devices` must have at
/// least one observation.
pub fn estimate_all(
    histories: &BTreeMap<usize, Vec<DeviceStatus>>,
    devices: &[usize],
    rho: f64,
) -> Result<BTreeMap<usize, CapacityEstimate>> {
    devices
        .iter()
        .map(|&id| {
            let history = histories
                .get(&id)
                .filter(|h| !h.is_empty())
                .ok_or(Error::MissingHistory(id))?;
            let mut estimate = CapacityEstimate::initial(&history[0], rho)?;
            for obs in &history[1..] {
                estimate = estimate.update(obs)?;
            }
            Ok((id, estimate))
        })
        .collect()
}

/// Running per-device estimates held by the server.
#[derive(Clone, Debug, Default)]
pub struct CapacityTracker {
    rho: f64,
    estimates: BTreeMap<usize, CapacityEstimate>,
}

impl CapacityTracker {
    pub fn new(rho: f64) -> Result<Self> {
        check_rho(rho)?;
        Ok(CapacityTracker {
            rho,
            estimates: BTreeMap::new(),
        })
    }

    pub fn observe(&mut self, obs: &DeviceStatus) -> Result<()> {
        let next = update_estimate(self.estimates.get(&obs.device_id), obs, self.rho)?;
        self.estimates.insert(obs.device_id, next);
        Ok(())
    }

    pub fn skip(&mut self, device: usize) {
        if let Some(e) = self.estimates.get_mut(&device) {
            *e = e.carry_forward();
        }
    }

    pub fn get(&self, device: usize) -> Option<&CapacityEstimate> {
        self.estimates.get(&device)
    }

    pub fn estimates(&self) -> &BTreeMap<usize, CapacityEstimate> {
        &self.estimates
    }

    pub fn is_empty(&self) -> bool {
        self.estimates.is_empty()
    }
}
