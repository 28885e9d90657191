use crate::error::{Error, Result};
use crate::lora::{ForwardCache, LayerStack};
use crate::numerics::Matrix;
use crate::trainer::Batch;

/// Mean softmax cross-entropy over the columns of `logits` (`classes x s`)
/// and its gradient `(softmax - onehot) / s`.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let (classes, s) = logits.shape();
    if s == 0 || labels.is_empty() {
        return Err(Error::EmptyInput("batch"));
    }
    if labels.len() != s {
        return Err(Error::shape("cross_entropy", logits.shape(), (labels.len(), 1)));
    }
    let mut grad = Matrix::zeros(classes, s);
    let mut total = 0.0;
    for (col, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        let column = logits.col_to_vec(col);
        let max = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = column.iter().map(|z| (z - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        total += sum.ln() + max - column[label];
        for (c, e) in exps.iter().enumerate() {
            let onehot = if c == label { 1.0 } else { 0.0 };
            grad.set(c, col, (e / sum - onehot) / s as f64)?;
        }
    }
    Ok((total / s as f64, grad))
}

/// Forward pass plus loss and logit gradient for one batch.
pub fn loss_and_grad(stack: &LayerStack, batch: &Batch) -> Result<(f64, Matrix, ForwardCache)> {
    let (logits, cache) = stack.forward(&batch.x)?;
    let (loss, grad) = cross_entropy(&logits, &batch.labels)?;
    Ok((loss, grad, cache))
}
