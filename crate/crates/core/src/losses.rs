//! The four task-family losses, the log-normalized loss scaling rule,
//! and the perturbation-consistency (R3F) penalty.
//!
//! Scaling divides a data point's loss by ln n(i), where n(i) is the
//! number of predictions the loss operates over. A uniform prediction
//! then scores exactly 1.0 in every family, which is what keeps wildly
//! different output spaces comparable inside one heterogeneous batch.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// One evaluated loss: raw nats, the scaled value, and the n(i) used.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub raw: f64,
    pub scaled: f64,
    pub task_id: String,
    pub n_predictions: usize,
}

impl LossValue {
    pub fn new(raw: f64, n_predictions: usize) -> Result<Self> {
        let scaled = scale_loss(raw, n_predictions)?;
        Ok(LossValue { raw, scaled, task_id: String::new(), n_predictions })
    }

    pub fn with_task(mut self, task_id: impl Into<String>) -> Self {
        self.task_id = task_id.into();
        self
    }
}

/// Loss nodes on a tape: the raw loss and its scaled counterpart.
/// Backward from `scaled` trains with the scaling rule applied.
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub raw: NodeId,
    pub scaled: NodeId,
    pub n_predictions: usize,
}

impl LossNodes {
    fn build(tape: &mut Tape, raw: NodeId, n_predictions: usize) -> Result<Self> {
        check_n(n_predictions)?;
        let scaled = tape.mul_scalar(raw, 1.0 / (n_predictions as f64).ln());
        Ok(LossNodes { raw, scaled, n_predictions })
    }

    pub fn value(&self, tape: &Tape, task_id: &str) -> Result<LossValue> {
        let raw = tape.value(self.raw).item();
        if !raw.is_finite() {
            return Err(Error::NonFinite { context: format!("loss for task '{task_id}'") });
        }
        Ok(LossValue::new(raw, self.n_predictions)?.with_task(task_id))
    }
}

fn check_n(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::invalid(format!(
            "loss scaling needs n_predictions >= 2 (ln 1 = 0), got {n}"
        )));
    }
    Ok(())
}

/// Eq-style static scaling: `raw / ln(n_predictions)`.
pub fn scale_loss(raw: f64, n_predictions: usize) -> Result<f64> {
    check_n(n_predictions)?;
    if !raw.is_finite() {
        return Err(Error::NonFinite { context: "raw loss".to_string() });
    }
    Ok(raw / (n_predictions as f64).ln())
}

/// Cross-entropy of a 1-D logits vector against a gold index, as a graph
/// node. Shared by classification, span prediction, and sentence ranking.
fn ce_node(tape: &mut Tape, logits: NodeId, gold: usize, what: &str) -> Result<NodeId> {
    let t = tape.value(logits);
    if t.shape().len() != 1 {
        return Err(Error::shape("cross_entropy", format!("{what} logits must be 1-D, got {:?}", t.shape())));
    }
    let count = t.numel();
    if count < 2 {
        return Err(Error::invalid(format!("{what} needs >= 2 outcomes, got {count}")));
    }
    if gold >= count {
        return Err(Error::invalid(format!("{what} gold index {gold} out of 0..{count}")));
    }
    let mut onehot = vec![0.0; count];
    onehot[gold] = 1.0;
    let target = tape.leaf(Tensor::vector(onehot));
    let lsm = tape.log_softmax(logits);
    let picked = tape.mul(lsm, target)?;
    let summed = tape.reduce_sum(picked);
    Ok(tape.mul_scalar(summed, -1.0))
}

/// Classification: CE over class logits; n(i) is the class count.
pub fn classification_ce(tape: &mut Tape, logits: NodeId, gold: usize) -> Result<LossNodes> {
    let n = tape.value(logits).numel();
    let raw = ce_node(tape, logits, gold, "classification")?;
    LossNodes::build(tape, raw, n)
}

/// Summarization: label-smoothed CE averaged across target tokens, with
/// mass `epsilon` spread uniformly over the vocabulary; n(i) is the
/// vocabulary size.
pub fn label_smoothed_ce(
    tape: &mut Tape,
    per_token_logits: NodeId,
    gold_tokens: &[usize],
    epsilon: f64,
) -> Result<LossNodes> {
    let t = tape.value(per_token_logits);
    if t.shape().len() != 2 {
        return Err(Error::shape(
            "label_smoothed_ce",
            format!("expected [tokens, vocab] logits, got {:?}", t.shape()),
        ));
    }
    let (rows, vocab) = (t.shape()[0], t.shape()[1]);
    if gold_tokens.is_empty() {
        return Err(Error::invalid("label_smoothed_ce: empty target"));
    }
    if gold_tokens.len() != rows {
        return Err(Error::shape(
            "label_smoothed_ce",
            format!("{rows} logit rows vs {} gold tokens", gold_tokens.len()),
        ));
    }
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::invalid(format!("epsilon {epsilon} outside [0, 1)")));
    }
    if let Some(&bad) = gold_tokens.iter().find(|&&g| g >= vocab) {
        return Err(Error::OutOfVocab { id: bad, vocab });
    }

    let unif = epsilon / vocab as f64;
    let mut target = vec![unif; rows * vocab];
    for (r, &g) in gold_tokens.iter().enumerate() {
        target[r * vocab + g] += 1.0 - epsilon;
    }
    let target = tape.leaf(Tensor::new(vec![rows, vocab], target)?);
    let lsm = tape.log_softmax(per_token_logits);
    let weighted = tape.mul(lsm, target)?;
    let summed = tape.reduce_sum(weighted);
    let raw = tape.mul_scalar(summed, -1.0 / rows as f64);
    LossNodes::build(tape, raw, vocab)
}

/// MRC: mean of start and end CE over passage positions; n(i) is the
/// passage length.
pub fn span_prediction_loss(
    tape: &mut Tape,
    start_logits: NodeId,
    end_logits: NodeId,
    gold_start: usize,
    gold_end: usize,
) -> Result<LossNodes> {
    let len = tape.value(start_logits).numel();
    if tape.value(end_logits).numel() != len {
        return Err(Error::shape(
            "span_prediction",
            format!(
                "start logits length {len} vs end logits length {}",
                tape.value(end_logits).numel()
            ),
        ));
    }
    if gold_start > gold_end || gold_end >= len {
        return Err(Error::invalid(format!(
            "gold span ({gold_start}, {gold_end}) outside passage of length {len}"
        )));
    }
    let ce_start = ce_node(tape, start_logits, gold_start, "span start")?;
    let ce_end = ce_node(tape, end_logits, gold_end, "span end")?;
    let both = tape.add(ce_start, ce_end)?;
    let raw = tape.mul_scalar(both, 0.5);
    LossNodes::build(tape, raw, len)
}

/// Commonsense: CE over per-candidate scores; n(i) is the candidate count.
pub fn sentence_ranking_loss(
    tape: &mut Tape,
    candidate_scores: NodeId,
    gold_index: usize,
) -> Result<LossNodes> {
    let n = tape.value(candidate_scores).numel();
    if n < 2 {
        return Err(Error::invalid(format!("sentence ranking needs >= 2 candidates, got {n}")));
    }
    let raw = ce_node(tape, candidate_scores, gold_index, "sentence ranking")?;
    LossNodes::build(tape, raw, n)
}

// ── R3F ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Uniform,
    Normal,
}

/// Perturbation-consistency settings: noise drawn at the embedding layer
/// (never on token ids) and a symmetric-KL penalty weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct R3FConfig {
    pub noise_kind: NoiseKind,
    pub noise_scale: f64,
    pub penalty_weight: f64,
}

impl Default for R3FConfig {
    fn default() -> Self {
        R3FConfig { noise_kind: NoiseKind::Uniform, noise_scale: 1e-5, penalty_weight: 1.0 }
    }
}

impl R3FConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_scale > 0.0) {
            return Err(Error::invalid(format!("noise_scale must be > 0, got {}", self.noise_scale)));
        }
        if self.penalty_weight < 0.0 {
            return Err(Error::invalid(format!(
                "penalty_weight must be >= 0, got {}",
                self.penalty_weight
            )));
        }
        Ok(())
    }

    pub fn draw_noise(&self, shape: Vec<usize>, rng: &mut impl Rng) -> Tensor {
        let numel: usize = shape.iter().product();
        let values = (0..numel)
            .map(|_| match self.noise_kind {
                NoiseKind::Uniform => (rng.gen::<f64>() * 2.0 - 1.0) * self.noise_scale,
                NoiseKind::Normal => crate::rng::normal(rng, self.noise_scale),
            })
            .collect();
        Tensor::new(shape, values).expect("shape matches")
    }
}

/// Symmetric KL between the row-wise softmax distributions of two logit
/// tensors, averaged over rows: mean_r Σ_v (p−q)(log p − log q).
/// Symmetric in its arguments by construction and non-negative.
pub fn symmetric_kl(tape: &mut Tape, logits_a: NodeId, logits_b: NodeId) -> Result<NodeId> {
    let (sa, sb) = (tape.value(logits_a).shape().to_vec(), tape.value(logits_b).shape().to_vec());
    if sa != sb {
        return Err(Error::shape("symmetric_kl", format!("{sa:?} vs {sb:?}")));
    }
    let rows = tape.value(logits_a).row_count();
    let p = tape.softmax(logits_a);
    let q = tape.softmax(logits_b);
    let lp = tape.log_softmax(logits_a);
    let lq = tape.log_softmax(logits_b);
    let dp = tape.sub(p, q)?;
    let dl = tape.sub(lp, lq)?;
    let prod = tape.mul(dp, dl)?;
    let total = tape.reduce_sum(prod);
    Ok(tape.mul_scalar(total, 1.0 / rows as f64))
}
