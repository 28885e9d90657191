//! Round-by-round federated simulation with emulated device timing.
//!
//! Each round: plan configs, send global adapters, train locally on every
//! device in parallel, time each device from its hidden conditions, fold
//! the status reports into the capacity estimates, aggregate, evaluate.
//! Wall-clock time never influences results; all randomness comes from
//! fixed per-purpose streams.

mod conditions;
mod report;
mod traffic;

use std::path::{Path, PathBuf};

use rayon::prelude::*;

pub use conditions::{ConditionParams, DeviceConditions, RoundConditions};
pub use report::{write_device_csv, write_summary_csv, DeviceRecord, ExperimentLog, RoundReport, CSV_COLUMNS};
pub use traffic::{matrix_bytes, payload_bytes, TrafficCounter, BYTES_PER_ELEMENT};

use crate::aggregator::{
    assign, assign_truncated, hetlora_pad_aggregate, layerwise_aggregate, DeviceUpdate, GlobalLoraState,
};
use crate::baselines::{fedlora_config, hetlora_config};
use crate::capacity::{CapacityTracker, DeviceStatus};
use crate::error::{Error, Result};
use crate::harness::config::{DeviceProfile, ExperimentConfig, PlannerKind};
use crate::lora::{Activation, LayerStack, LoraAdapter, LoraConfig};
use crate::numerics::{streams, Matrix, SeededRng};
use crate::planner::{self, avg_waiting, DeviceBudget, PlanningInput};
use crate::trainer::{
    cosine_lr, dirichlet_partition, evaluate, local_finetune, LocalSchedule, OptimizerState, SyntheticDataset,
    SyntheticTask,
};

struct DeviceRuntime {
    profile: DeviceProfile,
    shard: SyntheticDataset,
    train_rng: SeededRng,
    conditions_rng: SeededRng,
    conditions: DeviceConditions,
    optimizer: OptimizerState,
    previous: Option<LoraConfig>,
}

/// Per-device assignment for one round.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundAssignment {
    pub device_id: usize,
    pub config: LoraConfig,
    pub target_depth: usize,
    pub budget_feasible: bool,
}

/// Full simulator state between rounds.
pub struct Simulation {
    config: ExperimentConfig,
    base: LayerStack,
    global: GlobalLoraState,
    tracker: CapacityTracker,
    devices: Vec<DeviceRuntime>,
    train_set: SyntheticDataset,
    eval_set: SyntheticDataset,
    traffic: TrafficCounter,
    checksum_before: [u8; 32],
    round: usize,
    cum_time: f64,
    cum_bytes: u64,
}

impl Simulation {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let seed = config.run.seed;
        let width = config.model.width;
        let layers = config.model.layers;

        let mut data_rng = SeededRng::new(seed, streams::DATA);
        let task = SyntheticTask::new(&mut data_rng, config.task_shape());
        let train_set = task.sample(&mut data_rng, config.data.samples);
        let eval_set = task.sample(&mut data_rng, config.data.eval_samples);
        let shards = dirichlet_partition(&mut data_rng, &train_set, config.device_count(), config.data.alpha)?;

        let mut server_rng = SeededRng::new(seed, streams::SERVER);
        let dims = vec![width; layers + 1];
        let base = LayerStack::random(
            &mut server_rng,
            &dims,
            config.model.classes,
            Activation::Tanh,
            config.model.head_init_std,
        )?;
        let global_ranks = match config.run.planner {
            PlannerKind::Legend => planner::global_rank_distribution(layers, config.lora.psi, config.lora.lambda)?,
            PlannerKind::Fedlora => vec![config.fedlora_rank(); layers],
            PlannerKind::Hetlora => vec![config.hetlora_rank_max(); layers],
        };
        let global = GlobalLoraState::init(&base, &global_ranks, &mut server_rng, config.model.adapter_init_std)?;

        let devices = config
            .devices
            .profile
            .iter()
            .zip(shards)
            .map(|(profile, shard)| DeviceRuntime {
                train_rng: SeededRng::new(seed, streams::device_training(profile.device_id)),
                conditions_rng: SeededRng::new(seed, streams::device_conditions(profile.device_id)),
                conditions: DeviceConditions::default(),
                optimizer: OptimizerState::new(config.train.optimizer, config.train.adamw),
                previous: None,
                profile: profile.clone(),
                shard,
            })
            .collect();

        Ok(Simulation {
            tracker: CapacityTracker::new(config.capacity.rho)?,
            traffic: TrafficCounter::new(config.model.adapted_linears_per_block),
            checksum_before: base.backbone_checksum(),
            config,
            base,
            global,
            devices,
            train_set,
            eval_set,
            round: 0,
            cum_time: 0.0,
            cum_bytes: 0,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn global(&self) -> &GlobalLoraState {
        &self.global
    }

    pub fn tracker(&self) -> &CapacityTracker {
        &self.tracker
    }

    pub fn traffic(&self) -> &TrafficCounter {
        &self.traffic
    }

    pub fn shards(&self) -> Vec<&SyntheticDataset> {
        self.devices.iter().map(|d| &d.shard).collect()
    }

    pub fn backbone_checksum(&self) -> [u8; 32] {
        self.base.backbone_checksum()
    }

    /// The aggregated model: frozen backbone with every global adapter.
    pub fn global_model(&self) -> Result<LayerStack> {
        let mut stack = self.base.clone().install_adapters(self.global.adapters().to_vec())?;
        stack.set_head(self.global.head().clone())?;
        Ok(stack)
    }

    /// Configs the selected planner would hand out this round.
    pub fn plan_round(&self) -> Result<Vec<RoundAssignment>> {
        let layers = self.config.model.layers;
        match self.config.run.planner {
            PlannerKind::Legend => {
                let inputs: Vec<PlanningInput> = self
                    .devices
                    .iter()
                    .map(|d| PlanningInput {
                        device_id: d.profile.device_id,
                        estimate: self.tracker.get(d.profile.device_id).copied(),
                        budget: DeviceBudget {
                            compute: d.profile.compute_budget,
                            comm: d.profile.comm_budget,
                        },
                        previous: d.previous.clone(),
                    })
                    .collect();
                let plan = planner::configure(&inputs, &self.config.planner_params())?;
                Ok(plan
                    .devices
                    .into_iter()
                    .map(|p| RoundAssignment {
                        device_id: p.device_id,
                        config: p.config,
                        target_depth: p.target_depth,
                        budget_feasible: p.budget_feasible,
                    })
                    .collect())
            }
            PlannerKind::Fedlora => {
                let config = fedlora_config(layers, self.config.fedlora_rank())?;
                Ok(self.uniform_assignments(|_| config.clone()))
            }
            PlannerKind::Hetlora => {
                let estimates: Option<Vec<_>> = self
                    .devices
                    .iter()
                    .map(|d| self.tracker.get(d.profile.device_id).copied())
                    .collect();
                let max = self.config.hetlora_rank_max();
                let configs = match estimates {
                    Some(est) => hetlora_config(&est, layers, self.config.lora.hetlora_rank_min, max)?,
                    None => vec![fedlora_config(layers, max)?; self.devices.len()],
                };
                Ok(self.uniform_assignments(|i| configs[i].clone()))
            }
        }
    }

    fn uniform_assignments(&self, config_for: impl Fn(usize) -> LoraConfig) -> Vec<RoundAssignment> {
        self.devices
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let config = config_for(i);
                RoundAssignment {
                    device_id: d.profile.device_id,
                    target_depth: config.depth(),
                    config,
                    budget_feasible: true,
                }
            })
            .collect()
    }

    /// Runs one full round and advances the simulator.
    pub fn step(&mut self) -> Result<RoundReport> {
        let round = self.round;
        let assignments = self.plan_round()?;
        let lr = cosine_lr(self.config.train.lr, round, self.config.run.rounds);
        let truncate = self.config.run.planner == PlannerKind::Hetlora;

        let mut downloads = Vec::with_capacity(assignments.len());
        let mut down_bytes = Vec::with_capacity(assignments.len());
        for a in &assignments {
            let adapters = if truncate {
                assign_truncated(&self.global, &a.config)?
            } else {
                assign(&self.global, &a.config)?
            };
            let head = self.global.head().clone();
            down_bytes.push(self.traffic.download(&adapters, &head));
            downloads.push((adapters, head));
        }

        let reset = self.config.train.reset_optimizer;
        let schedule = LocalSchedule::epoch(self.config.train.batch_size);
        let base = &self.base;
        let trained: Vec<(Vec<LoraAdapter>, Matrix, f64)> = self
            .devices
            .par_iter_mut()
            .zip(downloads.into_par_iter())
            .zip(assignments.par_iter())
            .map(|((device, (adapters, head)), assignment)| {
                if reset || device.previous.as_ref() != Some(&assignment.config) {
                    device.optimizer.reset();
                }
                let mut stack = base.clone().install_adapters(adapters)?;
                stack.set_head(head)?;
                let (mut stack, loss) = local_finetune(
                    stack,
                    &device.shard,
                    &mut device.optimizer,
                    &mut device.train_rng,
                    schedule,
                    lr,
                )?;
                let adapters = stack.take_adapters();
                Ok((adapters, stack.head().clone(), loss))
            })
            .collect::<Result<_>>()?;

        let params = ConditionParams {
            jitter: self.config.sim.jitter,
            bandwidth_step: self.config.sim.bandwidth_step,
            rank_unit_bytes: self.config.sim.rank_unit_bytes,
        };
        let mut updates = Vec::with_capacity(trained.len());
        let mut records = Vec::with_capacity(trained.len());
        for (((device, assignment), (adapters, head, loss)), down) in
            self.devices.iter_mut().zip(&assignments).zip(trained).zip(down_bytes)
        {
            let up = self.traffic.upload(&adapters, &head);
            let cond = device
                .conditions
                .advance(&device.profile, &params, &mut device.conditions_rng, round);
            let config = &assignment.config;
            let completion = completion_time(device.profile.forward_time, config, &cond);
            self.tracker.observe(&DeviceStatus {
                device_id: device.profile.device_id,
                round,
                mu_hat: cond.mu,
                beta_hat: cond.beta,
                forward_time: device.profile.forward_time,
            })?;
            device.previous = Some(config.clone());
            records.push(DeviceRecord {
                device_id: device.profile.device_id,
                depth: config.depth(),
                rank_sum: config.rank_sum(),
                target_depth: assignment.target_depth,
                budget_feasible: assignment.budget_feasible,
                completion_time: completion,
                mu: cond.mu,
                beta: cond.beta,
                up_bytes: up,
                down_bytes: down,
                local_loss: loss,
            });
            updates.push(DeviceUpdate {
                device_id: device.profile.device_id,
                adapters,
                head,
            });
        }

        self.global = if truncate {
            hetlora_pad_aggregate(&self.global, &updates)?
        } else {
            layerwise_aggregate(&self.global, &updates)?
        };

        let model = self.global_model()?;
        let eval = evaluate(&model, &self.eval_set)?;
        let train = evaluate(&model, &self.train_set)?;

        let times: Vec<f64> = records.iter().map(|r| r.completion_time).collect();
        let round_time = times.iter().copied().fold(0.0, f64::max);
        let avg_wait = avg_waiting(&times);
        let round_bytes: u64 = records.iter().map(|r| r.up_bytes + r.down_bytes).sum();
        self.cum_time += round_time;
        self.cum_bytes += round_bytes;
        self.round += 1;

        let depths: Vec<usize> = records.iter().map(|r| r.depth).collect();
        let depth_gap = depths.iter().max().unwrap_or(&0) - depths.iter().min().unwrap_or(&0);
        Ok(RoundReport {
            round,
            devices: records,
            depth_gap,
            round_time,
            avg_wait,
            wait_violation: avg_wait > self.config.lora.epsilon,
            round_bytes,
            cum_time: self.cum_time,
            cum_bytes: self.cum_bytes,
            eval_loss: eval.loss,
            eval_acc: eval.accuracy,
            train_acc: train.accuracy,
        })
    }

    /// Runs the configured number of rounds.
    pub fn run(mut self) -> Result<ExperimentLog> {
        let rounds = (0..self.config.run.rounds)
            .map(|_| self.step())
            .collect::<Result<Vec<_>>>()?;
        Ok(ExperimentLog {
            planner: self.config.run.planner,
            rounds,
            counted_bytes: self.traffic.total(),
            backbone_checksum_before: self.checksum_before,
            backbone_checksum_after: self.base.backbone_checksum(),
        })
    }
}

/// Wall-clock seconds for one round: forward pass, backprop over the
/// adapted depth, then upload of the adapter ranks.
pub fn completion_time(forward_time: f64, config: &LoraConfig, cond: &RoundConditions) -> f64 {
    forward_time + config.depth() as f64 * cond.mu + config.rank_sum() as f64 * cond.beta
}

/// Builds a simulation from `config` and runs it to completion.
pub fn run_experiment(config: ExperimentConfig) -> Result<ExperimentLog> {
    Simulation::new(config)?.run()
}

/// File names written by [`write_outputs`].
pub const DEVICE_CSV: &str = "rounds.csv";
pub const SUMMARY_CSV: &str = "summary.csv";

/// Writes both CSVs into `dir`, creating it if needed.
pub fn write_outputs(log: &ExperimentLog, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    let devices = dir.join(DEVICE_CSV);
    let summary = dir.join(SUMMARY_CSV);
    write_device_csv(log, &devices)?;
    write_summary_csv(log, &summary)?;
    Ok((devices, summary))
}
