use crate::harness::config::DeviceProfile;
use crate::numerics::SeededRng;

/// Knobs shared by every device's condition process.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConditionParams {
    pub jitter: f64,
    pub bandwidth_step: f64,
    pub rank_unit_bytes: f64,
}

/// What a device actually experiences in one round.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoundConditions {
    pub multiplier: f64,
    pub bandwidth_mbps: f64,
    /// Backprop seconds per adapted layer.
    pub mu: f64,
    /// Upload seconds per unit of rank.
    pub beta: f64,
}

/// Hidden per-device state evolving across rounds.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DeviceConditions {
    multiplier: f64,
    bandwidth_mbps: f64,
    started: bool,
}

impl DeviceConditions {
    /// Advances to `round`. The compute mode is redrawn whenever `round` is
    /// a multiple of the profile's mode period; bandwidth random-walks
    /// inside the profile range; `mu` gets multiplicative jitter.
    pub fn advance(
        &mut self,
        profile: &DeviceProfile,
        params: &ConditionParams,
        rng: &mut SeededRng,
        round: usize,
    ) -> RoundConditions {
        let [lo, hi] = profile.bandwidth_mbps;
        if !self.started || round.is_multiple_of(profile.mode_period.max(1)) {
            self.multiplier = profile.modes[rng.index(profile.modes.len())];
        }
        if self.started {
            let step = params.bandwidth_step * (hi - lo);
            let moved = self.bandwidth_mbps + rng.uniform_in(-step, step);
            self.bandwidth_mbps = moved.clamp(lo, hi);
        } else {
            self.bandwidth_mbps = rng.uniform_in(lo, hi);
        }
        self.started = true;
        let u = rng.uniform_in(-params.jitter, params.jitter);
        RoundConditions {
            multiplier: self.multiplier,
            bandwidth_mbps: self.bandwidth_mbps,
            mu: profile.mu * self.multiplier * (1.0 + u),
            beta: params.rank_unit_bytes * 8.0 / (self.bandwidth_mbps * 1e6),
        }
    }
}
