use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lora::{AdapterGrads, LayerStack, ParamId};
use crate::numerics::Matrix;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adamw,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWParams {
    fn default() -> Self {
        AdamWParams {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Plain SGD or AdamW with decoupled weight decay and bias-corrected moments.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    kind: OptimizerKind,
    params: AdamWParams,
    step_count: u64,
    moments: BTreeMap<ParamId, (Matrix, Matrix)>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, params: AdamWParams) -> Self {
        OptimizerState {
            kind,
            params,
            step_count: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn sgd() -> Self {
        OptimizerState::new(OptimizerKind::Sgd, AdamWParams::default())
    }

    pub fn adamw(params: AdamWParams) -> Self {
        OptimizerState::new(OptimizerKind::Adamw, params)
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Drops all moment state and the step counter.
    pub fn reset(&mut self) {
        self.step_count = 0;
        self.moments.clear();
    }

    /// One optimizer step over a set of `(id, param, grad)` triples.
    pub fn step<'a, I>(&mut self, updates: I, lr: f64) -> Result<()>
    where
        I: IntoIterator<Item = (ParamId, &'a mut Matrix, &'a Matrix)>,
    {
        self.step_count += 1;
        for (id, param, grad) in updates {
            if param.shape() != grad.shape() {
                return Err(Error::shape("optimizer step", param.shape(), grad.shape()));
            }
            match self.kind {
                OptimizerKind::Sgd => sgd_update(param, grad, lr)?,
                OptimizerKind::Adamw => self.adamw_update(id, param, grad, lr)?,
            }
        }
        Ok(())
    }

    fn adamw_update(&mut self, id: ParamId, param: &mut Matrix, grad: &Matrix, lr: f64) -> Result<()> {
        let AdamWParams {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.params;
        let (m, v) = self.moments.entry(id).or_insert_with(|| {
            (
                Matrix::zeros(grad.rows(), grad.cols()),
                Matrix::zeros(grad.rows(), grad.cols()),
            )
        });
        if m.shape() != grad.shape() {
            // Parameter was re-shaped (new rank); restart its moments.
            *m = Matrix::zeros(grad.rows(), grad.cols());
            *v = Matrix::zeros(grad.rows(), grad.cols());
        }
        let t = self.step_count as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);
        let p = param.as_mut_slice();
        let ms = m.as_mut_slice();
        let vs = v.as_mut_slice();
        for (i, g) in grad.as_slice().iter().enumerate() {
            ms[i] = beta1 * ms[i] + (1.0 - beta1) * g;
            vs[i] = beta2 * vs[i] + (1.0 - beta2) * g * g;
            let m_hat = ms[i] / bias1;
            let v_hat = vs[i] / bias2;
            p[i] -= lr * weight_decay * p[i];
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            if !p[i].is_finite() {
                return Err(Error::NonFinite { op: "adamw" });
            }
        }
        Ok(())
    }
}

fn sgd_update(param: &mut Matrix, grad: &Matrix, lr: f64) -> Result<()> {
    *param = Matrix::axpy(-lr, grad, param)?;
    Ok(())
}

/// Applies `grads` to every trainable matrix in `stack`.
pub fn apply_grads(opt: &mut OptimizerState, stack: &mut LayerStack, grads: &AdapterGrads, lr: f64) -> Result<()> {
    let mut updates = Vec::new();
    for (id, param) in stack.trainable_mut() {
        let grad = grads
            .get(id)
            .ok_or_else(|| Error::StackMismatch(format!("no gradient for {id:?}")))?;
        updates.push((id, param, grad));
    }
    opt.step(updates, lr)
}

/// `base_lr * 0.5 * (1 + cos(pi * round / total))`; `base_lr` when `total == 0`.
pub fn cosine_lr(base_lr: f64, round: usize, total: usize) -> f64 {
    if total == 0 {
        return base_lr;
    }
    let progress = round.min(total) as f64 / total as f64;
    base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Matrix {
        Matrix::from_rows(&[&[v]])
    }

    #[test]
    fn sgd_zero_lr_is_noop() {
        let mut opt = OptimizerState::sgd();
        let mut p = scalar(1.5);
        let g = scalar(2.0);
        opt.step([(ParamId::Head, &mut p, &g)], 0.0).unwrap();
        assert_eq!(p, scalar(1.5));
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn sgd_hand_step() {
        let mut opt = OptimizerState::sgd();
        let mut p = scalar(1.0);
        let g = scalar(2.0);
        opt.step([(ParamId::Head, &mut p, &g)], 0.5).unwrap();
        assert_eq!(p, scalar(0.0));
    }

    #[test]
    fn adamw_first_step_closed_form() {
        let params = AdamWParams {
            weight_decay: 0.0,
            ..AdamWParams::default()
        };
        let mut opt = OptimizerState::adamw(params);
        let mut p = scalar(0.25);
        let g = scalar(1.0);
        let lr = 0.002;
        opt.step([(ParamId::LoraA(3), &mut p, &g)], lr).unwrap();
        // m_hat = 1, v_hat = 1 after bias correction.
        let expected = 0.25 - lr * 1.0 / (1.0 + 1e-8);
        assert!((p.get(0, 0) - expected).abs() < 1e-9);
        assert!((p.get(0, 0) - (0.25 - lr)).abs() < 1e-9);
    }

    #[test]
    fn adamw_weight_decay_is_decoupled() {
        let mut opt = OptimizerState::adamw(AdamWParams::default());
        let mut p = scalar(2.0);
        let g = scalar(0.0);
        opt.step([(ParamId::Head, &mut p, &g)], 0.1).unwrap();
        // Zero gradient: only the decay term moves the parameter.
        assert!((p.get(0, 0) - (2.0 - 0.1 * 0.01 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch() {
        let mut opt = OptimizerState::sgd();
        let mut p = Matrix::zeros(2, 2);
        let g = Matrix::zeros(2, 1);
        assert!(opt.step([(ParamId::Head, &mut p, &g)], 0.1).is_err());
    }

    #[test]
    fn cosine_schedule_points() {
        assert_eq!(cosine_lr(0.002, 0, 100), 0.002);
        assert!(cosine_lr(0.002, 100, 100).abs() < 1e-18);
        assert!((cosine_lr(0.002, 50, 100) - 0.001).abs() < 1e-15);
        assert_eq!(cosine_lr(0.3, 0, 0), 0.3);
    }
}
