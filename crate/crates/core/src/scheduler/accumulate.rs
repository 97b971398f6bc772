//! Heterogeneous gradient accumulation: one simulated worker per
//! sub-batch, scaled losses, unweighted gradient averaging.

use crate::error::{Error, Result};
use crate::gradient::Gradient;
use crate::losses::{LossValue, R3FConfig};
use crate::model::{ForwardCtx, Model};
use crate::pipeline::record_loss;
use crate::rng::mix_seed;
use crate::scheduler::batching::HeterogeneousBatch;
use crate::scheduler::reduce::reduce_deterministic;
use crate::tape::Tape;
use crate::taskdata::TaskStore;

/// Knobs for one accumulation step.
#[derive(Debug, Clone)]
pub struct AccumulateCfg {
    pub dropout: f64,
    pub label_smoothing: f64,
    pub r3f: Option<R3FConfig>,
    /// Weight each sub-batch by its example count instead of averaging
    /// workers uniformly. Off by default: gradients from each worker are
    /// averaged as-is.
    pub weight_by_examples: bool,
}

impl Default for AccumulateCfg {
    fn default() -> Self {
        AccumulateCfg {
            dropout: 0.0,
            label_smoothing: 0.1,
            r3f: None,
            weight_by_examples: false,
        }
    }
}

/// Result of one accumulation: the averaged gradient and one LossValue
/// per record, grouped in sub-batch order.
#[derive(Debug, Clone)]
pub struct AccumulateOutcome {
    pub gradient: Gradient,
    pub losses: Vec<LossValue>,
    /// Mean scaled training objective per sub-batch (includes the
    /// consistency penalty when enabled).
    pub sub_batch_objectives: Vec<f64>,
}

/// Compute one sub-batch's gradient in an isolated pass: fresh tape, own
/// dropout/noise stream, objective = mean over records of the scaled loss
/// (plus weighted consistency penalty).
fn sub_batch_gradient(
    model: &Model,
    store: &TaskStore,
    slot: usize,
    task_id: &str,
    record_indices: &[usize],
    cfg: &AccumulateCfg,
    step_seed: u64,
) -> Result<(Gradient, Vec<LossValue>, f64)> {
    let task = store.get(task_id)?;
    if record_indices.is_empty() {
        return Err(Error::invalid(format!("empty sub-batch for task '{task_id}'")));
    }
    let mut tape = Tape::new();
    let ctx = ForwardCtx::seeded(cfg.dropout, mix_seed(step_seed, &format!("worker:{slot}")));
    let mut pass = model.pass(&mut tape, ctx);

    let mut objectives = Vec::with_capacity(record_indices.len());
    let mut losses = Vec::with_capacity(record_indices.len());
    for &idx in record_indices {
        let record = task.train.records.get(idx).ok_or_else(|| {
            Error::invalid(format!(
                "record index {idx} out of range for task '{task_id}' ({} records)",
                task.train.len()
            ))
        })?;
        let built =
            record_loss(&mut pass, record, task_id, cfg.label_smoothing, cfg.r3f.as_ref())
                .map_err(|e| match e {
                    Error::NonFinite { context } => Error::NonFinite {
                        context: format!("task '{task_id}' record {idx}: {context}"),
                    },
                    other => other,
                })?;
        let value = built.loss.value(pass.tape, task_id).map_err(|e| match e {
            Error::NonFinite { context } => {
                Error::NonFinite { context: format!("record {idx}: {context}") }
            }
            other => other,
        })?;
        losses.push(value);
        objectives.push(built.objective);
    }

    let stacked = pass.tape.concat_cols(&objectives)?;
    let objective = pass.tape.reduce_mean(stacked);
    let objective_value = tape.value(objective).item();
    if !objective_value.is_finite() {
        return Err(Error::NonFinite {
            context: format!("sub-batch objective for task '{task_id}'"),
        });
    }
    let gradient = tape.backward(objective)?;
    Ok((gradient, losses, objective_value))
}

/// Forward/backward every sub-batch and average the per-worker gradients
/// of the scaled losses. Parameters a sub-batch never touches (other
/// tasks' heads) contribute zero from that sub-batch while still being
/// divided by the full worker count.
pub fn accumulate_heterogeneous(
    model: &Model,
    store: &TaskStore,
    batch: &HeterogeneousBatch,
    cfg: &AccumulateCfg,
    step_seed: u64,
) -> Result<AccumulateOutcome> {
    if batch.sub_batches.is_empty() {
        return Err(Error::invalid("batch has no sub-batches"));
    }
    let k = batch.sub_batches.len();
    let mut slot_gradients = Vec::with_capacity(k);
    let mut losses = Vec::new();
    let mut objectives = Vec::with_capacity(k);

    for (slot, sub) in batch.sub_batches.iter().enumerate() {
        let (mut gradient, sub_losses, objective) = sub_batch_gradient(
            model,
            store,
            slot,
            &sub.task_id,
            &sub.record_indices,
            cfg,
            step_seed,
        )?;
        if cfg.weight_by_examples {
            gradient.scale(sub.record_indices.len() as f64);
        }
        slot_gradients.push(gradient);
        losses.extend(sub_losses);
        objectives.push(objective);
    }

    let mut gradient = reduce_deterministic(&slot_gradients)?;
    let denom = if cfg.weight_by_examples {
        batch.sub_batches.iter().map(|s| s.record_indices.len()).sum::<usize>() as f64
    } else {
        k as f64
    };
    gradient.scale(1.0 / denom);
    Ok(AccumulateOutcome { gradient, losses, sub_batch_objectives: objectives })
}
