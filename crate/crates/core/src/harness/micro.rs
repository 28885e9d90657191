//! Toy-scale single-learner studies of where adapters go, how deep they
//! reach and how rank is spread across layers. Results are qualitative.
//!
//! The backbone is first pre-trained on a fine-grained source labeling of
//! the synthetic clusters (full-rank adapters on every block, then merged
//! into the frozen weights). Variants are then fine-tuned on a coarse
//! target labeling of the same clusters, `target = source % classes`.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::lora::{Activation, LayerStack};
use crate::numerics::{gaussian, streams, SeededRng};
use crate::planner;
use crate::trainer::{
    evaluate, local_finetune, LocalSchedule, OptimizerState, Sample, SyntheticDataset, SyntheticTask, TaskShape,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MicroStudy {
    Position,
    Depth,
    RankDist,
}

impl FromStr for MicroStudy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "position" => Ok(MicroStudy::Position),
            "depth" => Ok(MicroStudy::Depth),
            "rankdist" => Ok(MicroStudy::RankDist),
            other => Err(Error::config(
                "study",
                format!("unknown study {other:?}; expected position, depth or rankdist"),
            )),
        }
    }
}

impl MicroStudy {
    pub fn name(self) -> &'static str {
        match self {
            MicroStudy::Position => "position",
            MicroStudy::Depth => "depth",
            MicroStudy::RankDist => "rankdist",
        }
    }
}

/// Shared setup of every micro-study.
#[derive(Clone, Debug, PartialEq)]
pub struct MicroConfig {
    pub seed: u64,
    pub layers: usize,
    pub width: usize,
    /// Target classes.
    pub classes: usize,
    /// Source classes used for pre-training; a multiple of `classes`.
    pub source_classes: usize,
    /// Pre-training steps; zero keeps the random backbone.
    pub pretrain_steps: usize,
    pub pretrain_lr: f64,
    pub samples: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Per-layer rank in the position study.
    pub rank: usize,
    /// Layers per slice in the position study.
    pub window: usize,
    /// Total rank budget in the depth and rankdist studies.
    pub psi: usize,
    /// Emulated per-batch forward latency.
    pub forward_ms: f64,
    /// Emulated backprop latency per traversed layer.
    pub backprop_ms_per_layer: f64,
}

impl Default for MicroConfig {
    fn default() -> Self {
        MicroConfig {
            seed: 1,
            layers: 12,
            width: 16,
            classes: 4,
            source_classes: 8,
            pretrain_steps: 600,
            pretrain_lr: 0.01,
            samples: 512,
            steps: 300,
            batch_size: 16,
            lr: 0.01,
            rank: 8,
            window: 4,
            psi: 96,
            forward_ms: 20.0,
            backprop_ms_per_layer: 5.0,
        }
    }
}

impl MicroConfig {
    pub fn with_seed(seed: u64) -> Self {
        MicroConfig {
            seed,
            ..MicroConfig::default()
        }
    }

    /// Backprop has to reach the shallowest adapted layer `first`.
    pub fn latency_ms(&self, first: usize) -> f64 {
        self.forward_ms + (self.layers - first) as f64 * self.backprop_ms_per_layer
    }
}

/// One trained variant.
#[derive(Clone, Debug, PartialEq)]
pub struct MicroRow {
    pub variant: String,
    pub first_layer: usize,
    pub ranks: Vec<usize>,
    pub final_loss: f64,
    pub final_acc: f64,
    pub latency_ms: f64,
}

impl MicroRow {
    pub fn rank_sum(&self) -> usize {
        self.ranks.iter().sum()
    }
}

struct Bench {
    base: LayerStack,
    data: SyntheticDataset,
}

fn bench(cfg: &MicroConfig) -> Result<Bench> {
    if cfg.classes == 0 || !cfg.source_classes.is_multiple_of(cfg.classes) {
        return Err(Error::config(
            "source_classes",
            format!(
                "{} source classes do not group into {} targets",
                cfg.source_classes, cfg.classes
            ),
        ));
    }
    let mut data_rng = SeededRng::new(cfg.seed, streams::DATA);
    let task = SyntheticTask::new(&mut data_rng, TaskShape::new(cfg.width, cfg.source_classes));
    let source = task.sample(&mut data_rng, cfg.samples);
    let coarse = source
        .samples()
        .iter()
        .map(|s| Sample {
            features: s.features.clone(),
            label: s.label % cfg.classes,
        })
        .collect();
    let data = SyntheticDataset::new(coarse, cfg.classes, cfg.width)?;

    let mut server = SeededRng::new(cfg.seed, streams::SERVER);
    let dims = vec![cfg.width; cfg.layers + 1];
    let random = LayerStack::random(&mut server, &dims, cfg.source_classes, Activation::Tanh, 0.1)?;
    let pretrained = if cfg.pretrain_steps > 0 {
        let full = vec![cfg.width; cfg.layers];
        let stack = random.inject_window(0, &full, &mut server, crate::lora::DEFAULT_ADAPTER_INIT_STD)?;
        let mut opt = OptimizerState::adamw(Default::default());
        let schedule = LocalSchedule {
            batch_size: cfg.batch_size,
            steps: Some(cfg.pretrain_steps),
        };
        let (trained, _) = local_finetune(stack, &source, &mut opt, &mut server, schedule, cfg.pretrain_lr)?;
        trained.merge()
    } else {
        random
    };
    let layers = (0..cfg.layers).map(|l| pretrained.layer(l).clone()).collect();
    let head = gaussian(&mut server, cfg.classes, cfg.width, 0.1);
    let base = LayerStack::new(layers, head)?;
    Ok(Bench { base, data })
}

/// Trains adapters on layers `first..first + ranks.len()` plus the head.
/// Every variant starts from the same backbone, head and adapter stream.
fn train_variant(cfg: &MicroConfig, bench: &Bench, variant: &str, first: usize, ranks: &[usize]) -> Result<MicroRow> {
    let mut init_rng = SeededRng::new(cfg.seed, streams::device_conditions(0));
    let stack = bench
        .base
        .clone()
        .inject_window(first, ranks, &mut init_rng, crate::lora::DEFAULT_ADAPTER_INIT_STD)?;
    let mut train_rng = SeededRng::new(cfg.seed, streams::device_training(0));
    let mut opt = OptimizerState::adamw(Default::default());
    let schedule = LocalSchedule {
        batch_size: cfg.batch_size,
        steps: Some(cfg.steps),
    };
    let (trained, _) = local_finetune(stack, &bench.data, &mut opt, &mut train_rng, schedule, cfg.lr)?;
    let eval = evaluate(&trained, &bench.data)?;
    Ok(MicroRow {
        variant: variant.to_string(),
        first_layer: first,
        ranks: ranks.to_vec(),
        final_loss: eval.loss,
        final_acc: eval.accuracy,
        latency_ms: cfg.latency_ms(first),
    })
}

/// Shallow, middle and deep windows of `window` layers, then all layers.
pub fn position_study(cfg: &MicroConfig) -> Result<Vec<MicroRow>> {
    let w = cfg.window.clamp(1, cfg.layers);
    let bench = bench(cfg)?;
    let middle = (cfg.layers - w) / 2;
    [
        ("S", 0, w),
        ("M", middle, w),
        ("D", cfg.layers - w, w),
        ("A", 0, cfg.layers),
    ]
    .iter()
    .map(|&(name, first, len)| train_variant(cfg, &bench, name, first, &vec![cfg.rank; len]))
    .collect()
}

/// Suffix configs of the arithmetic rank sequence at depths `1..=L`.
pub fn depth_study(cfg: &MicroConfig) -> Result<Vec<MicroRow>> {
    let bench = bench(cfg)?;
    let distribution = planner::global_rank_distribution(cfg.layers, cfg.psi, 1)?;
    (1..=cfg.layers)
        .map(|k| {
            let first = cfg.layers - k;
            train_variant(cfg, &bench, &format!("k{k}"), first, &distribution[first..])
        })
        .collect()
}

/// Increasing, decreasing, uniform and random distributions of the same
/// total budget over all layers.
pub fn rank_distributions(cfg: &MicroConfig) -> Result<Vec<(&'static str, Vec<usize>)>> {
    let l = cfg.layers;
    let mut inc = planner::global_rank_distribution(l, cfg.psi, 1)?;
    let remainder = cfg.psi - inc.iter().sum::<usize>();
    for slot in 0..remainder {
        inc[l - 1 - slot % l] += 1;
    }
    let dec: Vec<usize> = inc.iter().rev().copied().collect();
    let mut avg = vec![cfg.psi / l; l];
    for slot in 0..cfg.psi % l {
        avg[l - 1 - slot] += 1;
    }
    let cap = cfg.width;
    if cfg.psi > cap * l {
        return Err(Error::config(
            "psi",
            format!("budget {} exceeds {l} layers of rank {cap}", cfg.psi),
        ));
    }
    let mut rng = SeededRng::new(cfg.seed, streams::SERVER);
    let mut rand = vec![1; l];
    for _ in l..cfg.psi {
        loop {
            let slot = rng.index(l);
            if rand[slot] < cap {
                rand[slot] += 1;
                break;
            }
        }
    }
    for (name, ranks) in [("Inc", &inc), ("Dec", &dec)] {
        if ranks.iter().any(|&r| r > cap) {
            return Err(Error::config("psi", format!("{name} distribution exceeds width {cap}")));
        }
    }
    Ok(vec![("Inc", inc), ("Dec", dec), ("Avg", avg), ("Rand", rand)])
}

pub fn rankdist_study(cfg: &MicroConfig) -> Result<Vec<MicroRow>> {
    let bench = bench(cfg)?;
    rank_distributions(cfg)?
        .into_iter()
        .map(|(name, ranks)| train_variant(cfg, &bench, name, 0, &ranks))
        .collect()
}

pub fn run_study(study: MicroStudy, cfg: &MicroConfig) -> Result<Vec<MicroRow>> {
    match study {
        MicroStudy::Position => position_study(cfg),
        MicroStudy::Depth => depth_study(cfg),
        MicroStudy::RankDist => rankdist_study(cfg),
    }
}

/// CSV text with a leading `#` line marking the study as qualitative.
pub fn format_rows(study: MicroStudy, cfg: &MicroConfig, rows: &[MicroRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# qualitative toy-scale study: {} (seed {}, {} layers, width {})",
        study.name(),
        cfg.seed,
        cfg.layers,
        cfg.width
    );
    let _ = writeln!(
        out,
        "variant,first_layer,depth,ranks,rank_sum,final_loss,final_acc,latency_ms"
    );
    for r in rows {
        let ranks: Vec<String> = r.ranks.iter().map(usize::to_string).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.variant,
            r.first_layer,
            cfg.layers - r.first_layer,
            ranks.join(" "),
            r.rank_sum(),
            r.final_loss,
            r.final_acc,
            r.latency_ms
        );
    }
    out
}
