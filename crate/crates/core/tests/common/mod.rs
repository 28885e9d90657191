//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use legend_core::aggregator::{DeviceUpdate, GlobalLoraState};
use legend_core::lora::{init_adapter, Activation, BackboneLayer, LayerStack, LoraAdapter, ParamId};
use legend_core::numerics::{gaussian, Matrix, SeededRng};
use legend_core::planner::{DeviceBudget, Plan, PlannerParams};
use legend_core::trainer::{cross_entropy, Batch};

/// Mean cross-entropy of `stack` on `batch`, forward pass only.
pub fn loss_of(stack: &LayerStack, batch: &Batch) -> f64 {
    let (logits, _) = stack.forward(&batch.x).unwrap();
    cross_entropy(&logits, &batch.labels).unwrap().0
}

fn with_param(stack: &LayerStack, id: ParamId, idx: usize, delta: f64) -> LayerStack {
    let mut s = stack.clone();
    for (pid, m) in s.trainable_mut() {
        if pid == id {
            let (r, c) = (idx / m.cols(), idx % m.cols());
            let v = m.get(r, c);
            m.set(r, c, v + delta).unwrap();
        }
    }
    s
}

/// Central finite differences with step `h` for every trainable entry.
pub fn numeric_grads(stack: &LayerStack, batch: &Batch, h: f64) -> BTreeMap<ParamId, Matrix> {
    let mut probe = stack.clone();
    let shapes: Vec<(ParamId, (usize, usize))> = probe
        .trainable_mut()
        .into_iter()
        .map(|(id, m)| (id, m.shape()))
        .collect();
    shapes
        .into_iter()
        .map(|(id, (rows, cols))| {
            let data = (0..rows * cols)
                .map(|idx| {
                    let up = loss_of(&with_param(stack, id, idx, h), batch);
                    let down = loss_of(&with_param(stack, id, idx, -h), batch);
                    (up - down) / (2.0 * h)
                })
                .collect();
            (id, Matrix::from_vec(rows, cols, data).unwrap())
        })
        .collect()
}

/// `||a - n|| / max(||a||, ||n||)`; zero when both vanish.
pub fn relative_error(analytic: &Matrix, numeric: &Matrix) -> f64 {
    let diff = analytic.sub(numeric).unwrap().frobenius();
    let scale = analytic.frobenius().max(numeric.frobenius());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Stack with blocks `dims[l] -> dims[l+1]` and random nonzero adapters on
/// the window `[first, first + ranks.len())`.
pub fn random_stack(rng: &mut SeededRng, dims: &[usize], classes: usize, first: usize, ranks: &[usize]) -> LayerStack {
    let layers: Vec<BackboneLayer> = dims
        .windows(2)
        .map(|w| BackboneLayer::new(gaussian(rng, w[1], w[0], 1.0 / (w[0] as f64).sqrt()), Activation::Tanh))
        .collect();
    let head = gaussian(rng, classes, *dims.last().unwrap(), 0.5);
    let base = LayerStack::new(layers, head).unwrap();
    let mut stack = base.inject_window(first, ranks, rng, 0.3).unwrap();
    for (id, m) in stack.trainable_mut() {
        if let ParamId::LoraB(_) = id {
            *m = gaussian(rng, m.rows(), m.cols(), 0.3);
        }
    }
    stack
}

pub fn random_batch(rng: &mut SeededRng, dim: usize, classes: usize, n: usize) -> Batch {
    Batch {
        x: gaussian(rng, dim, n, 1.0),
        labels: (0..n).map(|_| rng.index(classes)).collect(),
    }
}

/// `devices` updates with shuffled ids and random suffix depths.
pub fn random_updates(
    rng: &mut SeededRng,
    layers: usize,
    width: usize,
    ranks: &[usize],
    devices: usize,
) -> Vec<DeviceUpdate> {
    let mut ids: Vec<usize> = (0..devices).map(|i| i * 3 + 1).collect();
    rng.shuffle(&mut ids);
    ids.into_iter()
        .map(|id| {
            let depth = 1 + rng.index(layers);
            let adapters = (layers - depth..layers)
                .map(|l| {
                    LoraAdapter::new(
                        l,
                        gaussian(rng, width, ranks[l], 1.0),
                        gaussian(rng, ranks[l], width, 1.0),
                    )
                    .unwrap()
                })
                .collect();
            DeviceUpdate {
                device_id: id,
                adapters,
                head: gaussian(rng, 2, width, 1.0),
            }
        })
        .collect()
}

pub fn random_global(rng: &mut SeededRng, layers: usize, width: usize, ranks: &[usize]) -> GlobalLoraState {
    let adapters = (0..layers)
        .map(|l| init_adapter(rng, l, ranks[l], width, width, 0.02).unwrap())
        .collect();
    GlobalLoraState::from_parts(adapters, gaussian(rng, 2, width, 1.0)).unwrap()
}

/// Aggregation written out element by element: for each layer gather the
/// contributors in ascending device id and fold a running mean.
pub fn brute_force_aggregate(prev: &GlobalLoraState, updates: &[DeviceUpdate]) -> (Vec<(Matrix, Matrix)>, Matrix) {
    let mut order: Vec<usize> = (0..updates.len()).collect();
    order.sort_by_key(|&i| updates[i].device_id);
    let running = |items: Vec<&Matrix>| -> Matrix {
        let (rows, cols) = items[0].shape();
        let out = (0..rows * cols)
            .map(|e| {
                let mut mean = items[0].as_slice()[e];
                for (j, m) in items.iter().enumerate().skip(1) {
                    mean += (m.as_slice()[e] - mean) / (j + 1) as f64;
                }
                mean
            })
            .collect();
        Matrix::from_vec(rows, cols, out).unwrap()
    };
    let layers = (0..prev.num_layers())
        .map(|l| {
            let contributors: Vec<&LoraAdapter> = order
                .iter()
                .flat_map(|&i| updates[i].adapters.iter())
                .filter(|a| a.layer() == l)
                .collect();
            if contributors.is_empty() {
                let a = prev.adapter(l);
                (a.b().clone(), a.a().clone())
            } else {
                (
                    running(contributors.iter().map(|a| a.b()).collect()),
                    running(contributors.iter().map(|a| a.a()).collect()),
                )
            }
        })
        .collect();
    let head = if updates.is_empty() {
        prev.head().clone()
    } else {
        running(order.iter().map(|&i| &updates[i].head).collect())
    };
    (layers, head)
}

/// Plain `sum / n` mean, for a tolerance cross-check of the running mean.
pub fn sum_mean(items: &[&Matrix]) -> Matrix {
    let mut acc = Matrix::zeros(items[0].rows(), items[0].cols());
    for m in items {
        acc = acc.add(m).unwrap();
    }
    acc.scale(1.0 / items.len() as f64).unwrap()
}

/// EMA recursion written independently of the crate.
pub fn ema_recursion(values: &[f64], rho: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut est = values[0];
    out.push(est);
    for &v in &values[1..] {
        est = rho * est + (1.0 - rho) * v;
        out.push(est);
    }
    out
}

/// Closed form `rho^h x_0 + (1 - rho) sum_j rho^(h-j) x_j`.
pub fn ema_closed_form(values: &[f64], rho: f64, h: usize) -> f64 {
    let mut total = rho.powi(h as i32) * values[0];
    for (j, &v) in values.iter().enumerate().take(h + 1).skip(1) {
        total += (1.0 - rho) * rho.powi((h - j) as i32) * v;
    }
    total
}

/// Checks every constraint a plan must satisfy; returns a description of
/// the first violation.
pub fn check_plan(plan: &Plan, times: &[f64], budgets: &[DeviceBudget], params: &PlannerParams) -> Result<(), String> {
    let l = params.layers;
    let dist = &plan.distribution;
    if dist.iter().sum::<usize>() > params.psi {
        return Err(format!("distribution {dist:?} exceeds psi {}", params.psi));
    }
    if dist.windows(2).any(|w| w[1] != w[0] + params.lambda) {
        return Err(format!(
            "distribution {dist:?} is not arithmetic with step {}",
            params.lambda
        ));
    }
    for (i, d) in plan.devices.iter().enumerate() {
        let ranks = d.config.ranks();
        let k = ranks.len();
        if k == 0 || k > l {
            return Err(format!("device {i}: depth {k} outside [1, {l}]"));
        }
        if ranks.windows(2).any(|w| w[0] > w[1]) {
            return Err(format!("device {i}: ranks {ranks:?} decrease"));
        }
        if ranks.iter().sum::<usize>() > params.psi {
            return Err(format!("device {i}: rank sum exceeds psi"));
        }
        if ranks != &dist[l - k..] {
            return Err(format!("device {i}: ranks {ranks:?} are not the deepest slice"));
        }
        if d.config.depth() > d.target_depth {
            return Err(format!("device {i}: depth above target"));
        }
        let sum = ranks.iter().sum::<usize>() as f64;
        let fits = params.forward_compute + sum * params.compute_per_rank <= budgets[i].compute
            && sum * params.comm_per_rank <= budgets[i].comm;
        if d.budget_feasible != fits {
            return Err(format!(
                "device {i}: feasibility flag {} but fits={fits}",
                d.budget_feasible
            ));
        }
        if !fits && k != 1 {
            return Err(format!("device {i}: infeasible device not at depth 1"));
        }
        if fits && k < d.target_depth {
            let deeper: usize = dist[l - k - 1..].iter().sum();
            let deeper = deeper as f64;
            let deeper_fits = params.forward_compute + deeper * params.compute_per_rank <= budgets[i].compute
                && deeper * params.comm_per_rank <= budgets[i].comm;
            if deeper_fits {
                return Err(format!("device {i}: budget cut deeper than needed"));
            }
        }
    }
    for i in 0..times.len() {
        for j in 0..times.len() {
            if times[i] < times[j] && plan.devices[i].target_depth < plan.devices[j].target_depth {
                return Err(format!("target depth not monotone between devices {i} and {j}"));
            }
        }
    }
    Ok(())
}
