//! Comparison planners: uniform-rank FedLoRA and a simplified,
//! capacity-proportional HetLoRA ("hetlora-simplified"). Both adapt every
//! layer on every device.

use serde::{Deserialize, Serialize};

use crate::capacity::CapacityEstimate;
use crate::error::{Error, Result};
use crate::lora::LoraConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Fedlora,
    Hetlora,
}

impl BaselineKind {
    /// Label used in outputs.
    pub fn label(self) -> &'static str {
        match self {
            BaselineKind::Fedlora => "fedlora",
            BaselineKind::Hetlora => "hetlora-simplified",
        }
    }
}

/// Depth `layers`, every rank `rank`.
pub fn fedlora_config(layers: usize, rank: usize) -> Result<LoraConfig> {
    if rank == 0 {
        return Err(Error::RankOutOfRange { rank, max: usize::MAX });
    }
    LoraConfig::new(vec![rank; layers])
}

/// Relative capability `1 / (mu + beta * layers)`.
pub fn capability(estimate: &CapacityEstimate, layers: usize) -> f64 {
    1.0 / (estimate.mu + estimate.beta * layers as f64)
}

/// Full depth for all; device rank interpolates linearly in capability
/// between `rank_min` (weakest) and `rank_max` (strongest). Identical
/// capabilities map every device to `rank_max`.
pub fn hetlora_config(
    estimates: &[CapacityEstimate],
    layers: usize,
    rank_min: usize,
    rank_max: usize,
) -> Result<Vec<LoraConfig>> {
    if rank_min == 0 || rank_min > rank_max {
        return Err(Error::config(
            "baseline.hetlora_rank_min",
            format!("need 1 <= rank_min <= rank_max, got {rank_min} and {rank_max}"),
        ));
    }
    let caps: Vec<f64> = estimates.iter().map(|e| capability(e, layers)).collect();
    let lo = caps.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = caps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (rank_max - rank_min) as f64;
    caps.iter()
        .map(|&cap| {
            let rank = if hi > lo && hi.is_finite() {
                rank_min + (span * (cap - lo) / (hi - lo)).round() as usize
            } else {
                rank_max
            };
            LoraConfig::new(vec![rank; layers])
        })
        .collect()
}
