//! Layer-wise aggregation of heterogeneous-depth adapter updates and
//! assignment of global layers back to devices.
//!
//! Each global layer is the plain mean over exactly the devices that
//! trained it; `B` and `A` are averaged separately, so the aggregate delta
//! is `mean(B) * mean(A)`, not `mean(B * A)`. Updates are folded in
//! ascending device id with an incremental mean, which makes the result
//! bit-reproducible and exact when all contributions are identical.

use crate::error::{Error, Result};
use crate::lora::{init_adapter, LayerStack, LoraAdapter, LoraConfig};
use crate::numerics::{Matrix, SeededRng};

/// Server copy of every layer's adapter plus the shared head.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalLoraState {
    adapters: Vec<LoraAdapter>,
    counts: Vec<usize>,
    head: Matrix,
}

/// Adapters and head returned by one device.
#[derive(Clone, Debug, PartialEq)]
pub struct DeviceUpdate {
    pub device_id: usize,
    pub adapters: Vec<LoraAdapter>,
    pub head: Matrix,
}

impl GlobalLoraState {
    /// Fresh adapters (`B = 0`) on every layer of `stack` at `ranks`, and
    /// the stack's head.
    pub fn init(stack: &LayerStack, ranks: &[usize], rng: &mut SeededRng, std: f64) -> Result<Self> {
        if ranks.len() != stack.num_layers() {
            return Err(Error::StackMismatch(format!(
                "{} ranks for {} layers",
                ranks.len(),
                stack.num_layers()
            )));
        }
        let adapters = ranks
            .iter()
            .enumerate()
            .map(|(l, &r)| {
                let host = stack.layer(l);
                init_adapter(rng, l, r, host.out_dim(), host.in_dim(), std)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GlobalLoraState {
            counts: vec![0; adapters.len()],
            adapters,
            head: stack.head().clone(),
        })
    }

    pub fn from_parts(adapters: Vec<LoraAdapter>, head: Matrix) -> Result<Self> {
        for (l, a) in adapters.iter().enumerate() {
            if a.layer() != l {
                return Err(Error::StackMismatch(format!(
                    "global slot {l} holds adapter for layer {}",
                    a.layer()
                )));
            }
        }
        Ok(GlobalLoraState {
            counts: vec![0; adapters.len()],
            adapters,
            head,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.adapters.len()
    }

    pub fn adapter(&self, l: usize) -> &LoraAdapter {
        &self.adapters[l]
    }

    pub fn adapters(&self) -> &[LoraAdapter] {
        &self.adapters
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.adapters.iter().map(LoraAdapter::rank).collect()
    }

    /// Contributing devices per layer in the last aggregation.
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn head(&self) -> &Matrix {
        &self.head
    }
}

/// Incremental mean `m_k = m_{k-1} + (x_k - m_{k-1}) / k` in iteration order.
fn incremental_mean<'a>(mut items: impl Iterator<Item = &'a Matrix>) -> Result<Option<Matrix>> {
    let Some(first) = items.next() else {
        return Ok(None);
    };
    let mut mean = first.clone();
    for (i, x) in items.enumerate() {
        if x.shape() != mean.shape() {
            return Err(Error::shape("aggregate", mean.shape(), x.shape()));
        }
        let k = (i + 2) as f64;
        let m = mean.as_mut_slice();
        for (mv, xv) in m.iter_mut().zip(x.as_slice()) {
            *mv += (xv - *mv) / k;
        }
    }
    Ok(Some(mean))
}

fn sorted(updates: &[DeviceUpdate]) -> Vec<&DeviceUpdate> {
    let mut refs: Vec<&DeviceUpdate> = updates.iter().collect();
    refs.sort_by_key(|u| u.device_id);
    refs
}

fn check_layer(update: &DeviceUpdate, adapter: &LoraAdapter, layers: usize) -> Result<()> {
    if adapter.layer() >= layers {
        return Err(Error::StackMismatch(format!(
            "device {} sent layer {} of {layers}",
            update.device_id,
            adapter.layer()
        )));
    }
    Ok(())
}

/// Per-layer mean over the devices that trained each layer. Layers nobody
/// trained keep their previous global value; the head is averaged over all
/// devices.
pub fn layerwise_aggregate(prev: &GlobalLoraState, updates: &[DeviceUpdate]) -> Result<GlobalLoraState> {
    let updates = sorted(updates);
    let layers = prev.num_layers();
    let mut per_layer: Vec<Vec<&LoraAdapter>> = vec![Vec::new(); layers];
    for u in &updates {
        for a in &u.adapters {
            check_layer(u, a, layers)?;
            let expected = prev.adapters[a.layer()].rank();
            if a.rank() != expected {
                return Err(Error::RankMismatch {
                    layer: a.layer(),
                    expected,
                    got: a.rank(),
                });
            }
            per_layer[a.layer()].push(a);
        }
    }

    let mut adapters = Vec::with_capacity(layers);
    let mut counts = Vec::with_capacity(layers);
    for (l, contributions) in per_layer.iter().enumerate() {
        counts.push(contributions.len());
        let b = incremental_mean(contributions.iter().map(|a| a.b()))?;
        let a = incremental_mean(contributions.iter().map(|a| a.a()))?;
        match (b, a) {
            (Some(b), Some(a)) => adapters.push(LoraAdapter::new(l, b, a)?),
            _ => adapters.push(prev.adapters[l].clone()),
        }
    }
    let head = incremental_mean(updates.iter().map(|u| &u.head))?.unwrap_or_else(|| prev.head.clone());
    Ok(GlobalLoraState { adapters, counts, head })
}

/// Mean over devices with differing ranks: each `B` is zero-padded to the
/// global rank (extra columns) and each `A` likewise (extra rows) before
/// averaging.
pub fn hetlora_pad_aggregate(prev: &GlobalLoraState, updates: &[DeviceUpdate]) -> Result<GlobalLoraState> {
    let updates = sorted(updates);
    let layers = prev.num_layers();
    let mut padded: Vec<Vec<(Matrix, Matrix)>> = vec![Vec::new(); layers];
    for u in &updates {
        for a in &u.adapters {
            check_layer(u, a, layers)?;
            let global = &prev.adapters[a.layer()];
            if a.rank() > global.rank() {
                return Err(Error::RankMismatch {
                    layer: a.layer(),
                    expected: global.rank(),
                    got: a.rank(),
                });
            }
            let b = a.b().zero_padded(global.b().rows(), global.rank())?;
            let pa = a.a().zero_padded(global.rank(), global.a().cols())?;
            padded[a.layer()].push((b, pa));
        }
    }
    let mut adapters = Vec::with_capacity(layers);
    let mut counts = Vec::with_capacity(layers);
    for (l, contributions) in padded.iter().enumerate() {
        counts.push(contributions.len());
        let b = incremental_mean(contributions.iter().map(|(b, _)| b))?;
        let a = incremental_mean(contributions.iter().map(|(_, a)| a))?;
        match (b, a) {
            (Some(b), Some(a)) => adapters.push(LoraAdapter::new(l, b, a)?),
            _ => adapters.push(prev.adapters[l].clone()),
        }
    }
    let head = incremental_mean(updates.iter().map(|u| &u.head))?.unwrap_or_else(|| prev.head.clone());
    Ok(GlobalLoraState { adapters, counts, head })
}

/// Copies of the global adapters on the config's suffix. Ranks must match.
pub fn assign(global: &GlobalLoraState, config: &LoraConfig) -> Result<Vec<LoraAdapter>> {
    check_depth(global, config)?;
    config
        .layer_ranks(global.num_layers())
        .map(|(l, r)| {
            let a = &global.adapters[l];
            if a.rank() != r {
                return Err(Error::RankMismatch {
                    layer: l,
                    expected: a.rank(),
                    got: r,
                });
            }
            Ok(a.clone())
        })
        .collect()
}

/// Like [`assign`], but crops each global adapter down to the requested
/// rank (leading columns of `B`, leading rows of `A`).
pub fn assign_truncated(global: &GlobalLoraState, config: &LoraConfig) -> Result<Vec<LoraAdapter>> {
    check_depth(global, config)?;
    config
        .layer_ranks(global.num_layers())
        .map(|(l, r)| {
            let a = &global.adapters[l];
            if r > a.rank() {
                return Err(Error::RankMismatch {
                    layer: l,
                    expected: a.rank(),
                    got: r,
                });
            }
            LoraAdapter::new(l, a.b().top_left(a.b().rows(), r)?, a.a().top_left(r, a.a().cols())?)
        })
        .collect()
}

fn check_depth(global: &GlobalLoraState, config: &LoraConfig) -> Result<()> {
    if config.depth() > global.num_layers() {
        return Err(Error::StackMismatch(format!(
            "config depth {} exceeds {} global layers",
            config.depth(),
            global.num_layers()
        )));
    }
    Ok(())
}
