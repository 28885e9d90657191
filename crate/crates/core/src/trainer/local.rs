use crate::error::{Error, Result};
use crate::lora::LayerStack;
use crate::numerics::SeededRng;
use crate::trainer::{apply_grads, cross_entropy, loss_and_grad, OptimizerState, SyntheticDataset};

/// How much local work a device does in one round.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LocalSchedule {
    pub batch_size: usize,
    /// `None` runs one full epoch; `Some(n)` runs exactly `n` steps,
    /// reshuffling whenever the epoch is exhausted.
    pub steps: Option<usize>,
}

impl LocalSchedule {
    pub fn epoch(batch_size: usize) -> Self {
        LocalSchedule {
            batch_size,
            steps: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

/// Mean loss and accuracy of `stack` over all of `data`.
pub fn evaluate(stack: &LayerStack, data: &SyntheticDataset) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::EmptyInput("evaluation data"));
    }
    const CHUNK: usize = 512;
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(CHUNK) {
        let batch = data.batch(chunk)?;
        let (logits, _) = stack.forward(&batch.x)?;
        let (loss, _) = cross_entropy(&logits, &batch.labels)?;
        loss_sum += loss * chunk.len() as f64;
        for (col, &label) in batch.labels.iter().enumerate() {
            let column = logits.col_to_vec(col);
            let predicted = column
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(c, _)| c)
                .unwrap_or(0);
            correct += usize::from(predicted == label);
        }
    }
    Ok(Evaluation {
        loss: loss_sum / data.len() as f64,
        accuracy: correct as f64 / data.len() as f64,
    })
}

/// Runs local minibatch training on `shard`, updating only the adapters and
/// the head. Batch order is shuffled from `rng` at the start of each pass.
/// Returns the trained stack and the mean pre-update batch loss; with zero
/// steps the stack is returned untouched with its loss over the whole shard.
pub fn local_finetune(
    mut stack: LayerStack,
    shard: &SyntheticDataset,
    opt: &mut OptimizerState,
    rng: &mut SeededRng,
    schedule: LocalSchedule,
    lr: f64,
) -> Result<(LayerStack, f64)> {
    if shard.is_empty() {
        return Err(Error::EmptyInput("shard"));
    }
    if schedule.batch_size == 0 {
        return Err(Error::EmptyInput("batch size"));
    }
    let per_epoch = shard.len().div_ceil(schedule.batch_size);
    let steps = schedule.steps.unwrap_or(per_epoch);
    if steps == 0 {
        let eval = evaluate(&stack, shard)?;
        return Ok((stack, eval.loss));
    }

    let mut order: Vec<usize> = (0..shard.len()).collect();
    let mut loss_sum = 0.0;
    for step in 0..steps {
        let slot = step % per_epoch;
        if slot == 0 {
            rng.shuffle(&mut order);
        }
        let start = slot * schedule.batch_size;
        let end = (start + schedule.batch_size).min(order.len());
        let batch = shard.batch(&order[start..end])?;
        let (loss, grad_logits, cache) = loss_and_grad(&stack, &batch)?;
        let grads = stack.backward(&cache, &grad_logits)?;
        apply_grads(opt, &mut stack, &grads, lr)?;
        loss_sum += loss;
    }
    Ok((stack, loss_sum / steps as f64))
}
