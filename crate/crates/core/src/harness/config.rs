//! Experiment configuration: a sectioned TOML file where every key is
//! optional. Unknown keys are rejected; the resolved form (defaults filled,
//! device table expanded) is what gets echoed next to the outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::planner::{self, DepthRule, PlannerParams, TimeBasis};
use crate::trainer::{AdamWParams, OptimizerKind, TaskShape};

/// Which server-side planner drives the run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlannerKind {
    #[default]
    Legend,
    Fedlora,
    Hetlora,
}

impl PlannerKind {
    pub fn label(self) -> &'static str {
        match self {
            PlannerKind::Legend => "legend",
            PlannerKind::Fedlora => "fedlora",
            PlannerKind::Hetlora => "hetlora-simplified",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    pub rounds: usize,
    pub planner: PlannerKind,
    pub output_dir: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: 1,
            rounds: 100,
            planner: PlannerKind::Legend,
            output_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub layers: usize,
    /// Input and hidden width; every block is `width x width`.
    pub width: usize,
    pub classes: usize,
    pub adapter_init_std: f64,
    pub head_init_std: f64,
    /// Linear layers per block counted in traffic accounting.
    pub adapted_linears_per_block: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            layers: 12,
            width: 16,
            classes: 2,
            adapter_init_std: crate::lora::DEFAULT_ADAPTER_INIT_STD,
            head_init_std: 0.1,
            adapted_linears_per_block: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoraSection {
    pub psi: usize,
    pub lambda: usize,
    pub epsilon: f64,
    pub depth_rule: DepthRule,
    pub time_basis: TimeBasis,
    pub compute_per_rank: f64,
    pub forward_compute: f64,
    pub comm_per_rank: f64,
    /// Uniform rank for the fedlora baseline; defaults to `psi / layers`.
    pub fedlora_rank: Option<usize>,
    pub hetlora_rank_min: usize,
    /// Defaults to `psi / layers`.
    pub hetlora_rank_max: Option<usize>,
}

impl Default for LoraSection {
    fn default() -> Self {
        LoraSection {
            psi: 96,
            lambda: 1,
            epsilon: f64::INFINITY,
            depth_rule: DepthRule::default(),
            time_basis: TimeBasis::default(),
            compute_per_rank: 1.0,
            forward_compute: 0.0,
            comm_per_rank: 1.0,
            fedlora_rank: None,
            hetlora_rank_min: 1,
            hetlora_rank_max: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CapacitySection {
    pub rho: f64,
}

impl Default for CapacitySection {
    fn default() -> Self {
        CapacitySection {
            rho: crate::capacity::DEFAULT_SMOOTHING,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub batch_size: usize,
    /// Fresh optimizer state at the start of every round.
    pub reset_optimizer: bool,
    pub adamw: AdamWParams,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            optimizer: OptimizerKind::Adamw,
            lr: 0.002,
            batch_size: 4,
            reset_optimizer: true,
            adamw: AdamWParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub samples: usize,
    pub eval_samples: usize,
    pub alpha: f64,
    pub mean_std: f64,
    pub noise_std: f64,
    pub margin: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            samples: 1000,
            eval_samples: 500,
            alpha: 10.0,
            mean_std: 1.0,
            noise_std: 1.0,
            margin: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    /// Relative compute jitter `u ~ U(-jitter, jitter)` on each round's `mu`.
    pub jitter: f64,
    /// Largest bandwidth change per round as a fraction of the device range.
    pub bandwidth_step: f64,
    /// Emulated upload bytes per unit of rank per layer, used for `beta`.
    pub rank_unit_bytes: f64,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            jitter: 0.05,
            bandwidth_step: 0.2,
            // 768-wide blocks with six adapted linears, 32-bit floats.
            rank_unit_bytes: (768.0 + 768.0) * 6.0 * 4.0,
        }
    }
}

/// Ground truth for one simulated device.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceProfile {
    pub device_id: usize,
    /// Base backprop seconds per adapted layer.
    pub mu: f64,
    /// Forward seconds per round.
    pub forward_time: f64,
    /// Compute multipliers; one is drawn every `mode_period` rounds.
    pub modes: Vec<f64>,
    pub mode_period: usize,
    /// Upload bandwidth range `[lo, hi]` in Mb/s.
    pub bandwidth_mbps: [f64; 2],
    pub compute_budget: f64,
    pub comm_budget: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DevicesSection {
    /// Defaults to the explicit table length, or 10.
    pub count: Option<usize>,
    /// Generator: base `mu` of the fastest device.
    pub mu_min: f64,
    /// Generator: slowest / fastest base `mu` ratio (linear spacing).
    pub mu_spread: f64,
    pub forward_time: f64,
    pub modes: Vec<f64>,
    pub mode_period: usize,
    pub bandwidth_mbps: [f64; 2],
    pub compute_budget: f64,
    pub comm_budget: f64,
    /// Explicit per-device table; replaces the generator when nonempty.
    pub profile: Vec<DeviceProfile>,
}

impl Default for DevicesSection {
    fn default() -> Self {
        DevicesSection {
            count: None,
            mu_min: 1.0,
            mu_spread: 10.0,
            forward_time: 2.0,
            modes: vec![0.5, 1.0, 2.0],
            mode_period: 20,
            bandwidth_mbps: [1.0, 30.0],
            compute_budget: f64::INFINITY,
            comm_budget: f64::INFINITY,
            profile: Vec::new(),
        }
    }
}

pub const DEFAULT_DEVICE_COUNT: usize = 10;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub run: RunSection,
    pub model: ModelSection,
    pub lora: LoraSection,
    pub capacity: CapacitySection,
    pub train: TrainSection,
    pub data: DataSection,
    pub sim: SimSection,
    pub devices: DevicesSection,
}

impl ExperimentConfig {
    /// Parses TOML text, applies defaults, expands the device table and
    /// validates. Errors carry the offending key path.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text)
            .map_err(|e| Error::config("<document>", e.to_string().trim().to_string()))?;
        let raw: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().to_string().trim().to_string())
        })?;
        raw.resolve()
    }

    /// Defaults-only config, resolved.
    pub fn resolved_default() -> Self {
        ExperimentConfig::default().resolve().expect("defaults are valid")
    }

    /// Fills derived fields and validates.
    pub fn resolve(mut self) -> Result<Self> {
        if self.devices.profile.is_empty() {
            let count = self.devices.count.unwrap_or(DEFAULT_DEVICE_COUNT);
            self.devices.profile = generate_profiles(&self.devices, count);
        } else if let Some(count) = self.devices.count {
            if count != self.devices.profile.len() {
                return Err(Error::config(
                    "devices.count",
                    format!(
                        "count {count} disagrees with {} profile entries",
                        self.devices.profile.len()
                    ),
                ));
            }
        }
        self.devices.count = Some(self.devices.profile.len());
        let uniform = self.lora.psi / self.model.layers.max(1);
        self.lora.fedlora_rank.get_or_insert(uniform.max(1));
        self.lora.hetlora_rank_max.get_or_insert(uniform.max(1));
        self.validate()?;
        Ok(self)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn device_count(&self) -> usize {
        self.devices.profile.len()
    }

    pub fn planner_params(&self) -> PlannerParams {
        PlannerParams {
            layers: self.model.layers,
            psi: self.lora.psi,
            lambda: self.lora.lambda,
            epsilon: self.lora.epsilon,
            compute_per_rank: self.lora.compute_per_rank,
            forward_compute: self.lora.forward_compute,
            comm_per_rank: self.lora.comm_per_rank,
            depth_rule: self.lora.depth_rule,
            time_basis: self.lora.time_basis,
        }
    }

    pub fn task_shape(&self) -> TaskShape {
        TaskShape {
            dim: self.model.width,
            classes: self.model.classes,
            mean_std: self.data.mean_std,
            noise_std: self.data.noise_std,
            margin: self.data.margin,
        }
    }

    pub fn fedlora_rank(&self) -> usize {
        self.lora.fedlora_rank.unwrap_or(1)
    }

    pub fn hetlora_rank_max(&self) -> usize {
        self.lora.hetlora_rank_max.unwrap_or(1)
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        positive("model.layers", m.layers)?;
        positive("model.width", m.width)?;
        positive("model.classes", m.classes)?;
        positive("model.adapted_linears_per_block", m.adapted_linears_per_block)?;
        non_negative("model.adapter_init_std", m.adapter_init_std)?;
        non_negative("model.head_init_std", m.head_init_std)?;

        let l = &self.lora;
        let params = self.planner_params();
        params.validate().map_err(|e| match e {
            Error::Config { path, message } => Error::config(path.replacen("planner.", "lora.", 1), message),
            other => other,
        })?;
        let distribution = planner::global_rank_distribution(m.layers, l.psi, l.lambda)
            .map_err(|e| Error::config("lora.psi", e.to_string()))?;
        let widest = *distribution.last().expect("layers >= 1");
        if widest > m.width {
            return Err(Error::config(
                "lora.psi",
                format!("deepest rank {widest} exceeds model width {}", m.width),
            ));
        }
        for (path, rank) in [
            ("lora.fedlora_rank", self.fedlora_rank()),
            ("lora.hetlora_rank_max", self.hetlora_rank_max()),
            ("lora.hetlora_rank_min", l.hetlora_rank_min),
        ] {
            if rank == 0 || rank > m.width {
                return Err(Error::config(path, format!("rank {rank} outside [1, {}]", m.width)));
            }
        }
        if l.hetlora_rank_min > self.hetlora_rank_max() {
            return Err(Error::config("lora.hetlora_rank_min", "exceeds hetlora_rank_max"));
        }

        if !(0.0..=1.0).contains(&self.capacity.rho) {
            return Err(Error::config("capacity.rho", "must lie in [0, 1]"));
        }

        let t = &self.train;
        non_negative("train.lr", t.lr)?;
        positive("train.batch_size", t.batch_size)?;
        let a = &t.adamw;
        if !(0.0..1.0).contains(&a.beta1) {
            return Err(Error::config("train.adamw.beta1", "must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&a.beta2) {
            return Err(Error::config("train.adamw.beta2", "must lie in [0, 1)"));
        }
        if !(a.eps > 0.0 && a.eps.is_finite()) {
            return Err(Error::config("train.adamw.eps", "must be positive"));
        }
        non_negative("train.adamw.weight_decay", a.weight_decay)?;

        let d = &self.data;
        if !(d.alpha > 0.0 && d.alpha.is_finite()) {
            return Err(Error::config("data.alpha", "must be positive"));
        }
        positive("data.eval_samples", d.eval_samples)?;
        non_negative("data.mean_std", d.mean_std)?;
        non_negative("data.noise_std", d.noise_std)?;
        non_negative("data.margin", d.margin)?;
        if d.samples < self.device_count() {
            return Err(Error::config(
                "data.samples",
                format!("{} samples cannot cover {} devices", d.samples, self.device_count()),
            ));
        }

        let s = &self.sim;
        if !(0.0..1.0).contains(&s.jitter) {
            return Err(Error::config("sim.jitter", "must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&s.bandwidth_step) {
            return Err(Error::config("sim.bandwidth_step", "must lie in [0, 1]"));
        }
        if !(s.rank_unit_bytes > 0.0 && s.rank_unit_bytes.is_finite()) {
            return Err(Error::config("sim.rank_unit_bytes", "must be positive"));
        }

        positive("devices.count", self.device_count())?;
        let mut ids: Vec<usize> = self.devices.profile.iter().map(|p| p.device_id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("devices.profile", "duplicate device_id"));
        }
        for (i, p) in self.devices.profile.iter().enumerate() {
            let at = |k: &str| format!("devices.profile[{i}].{k}");
            if !(p.mu > 0.0 && p.mu.is_finite()) {
                return Err(Error::config(at("mu"), "must be positive"));
            }
            non_negative(&at("forward_time"), p.forward_time)?;
            if p.modes.is_empty() || p.modes.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(Error::config(at("modes"), "need at least one positive multiplier"));
            }
            positive(&at("mode_period"), p.mode_period)?;
            let [lo, hi] = p.bandwidth_mbps;
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::config(at("bandwidth_mbps"), "need 0 < lo <= hi"));
            }
            if p.compute_budget.is_nan() || p.comm_budget.is_nan() {
                return Err(Error::config(at("compute_budget"), "budgets must be numbers"));
            }
        }
        Ok(())
    }
}

fn positive(path: &str, v: usize) -> Result<()> {
    if v == 0 {
        Err(Error::config(path, "must be at least 1"))
    } else {
        Ok(())
    }
}

fn non_negative(path: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(path, format!("must be finite and non-negative, got {v}")))
    }
}

/// Linearly spaced base `mu` from `mu_min` to `mu_min * mu_spread`.
fn generate_profiles(section: &DevicesSection, count: usize) -> Vec<DeviceProfile> {
    (0..count)
        .map(|i| {
            let frac = if count > 1 { i as f64 / (count - 1) as f64 } else { 0.0 };
            DeviceProfile {
                device_id: i,
                mu: section.mu_min * (1.0 + frac * (section.mu_spread - 1.0)),
                forward_time: section.forward_time,
                modes: section.modes.clone(),
                mode_period: section.mode_period,
                bandwidth_mbps: section.bandwidth_mbps,
                compute_budget: section.compute_budget,
                comm_budget: section.comm_budget,
            }
        })
        .collect()
}

/// Reads and resolves a config file.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(path.display().to_string(), format!("cannot read config: {e}")))?;
    ExperimentConfig::from_toml_str(&text)
}

/// Writes the resolved config as `config.resolved.toml` inside `dir`.
pub fn echo_config(config: &ExperimentConfig, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join("config.resolved.toml");
    std::fs::write(&path, config.to_toml_string())?;
    Ok(path)
}
