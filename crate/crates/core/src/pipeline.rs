//! Per-record pipelines: building the loss graph for training and
//! computing eval metrics.
//!
//! Input layouts:
//!   classification  [BOS] text
//!   mrc             [BOS] passage [SEP] question   (passage states at rows 1..)
//!   commonsense     [BOS] context [SEP] candidate  (one encoding per candidate)
//!   summarization   encoder [BOS] source; decoder [BOS] target → target [EOS]

use crate::error::{Error, Result};
use crate::heads::HeadKey;
use crate::losses::{
    classification_ce, label_smoothed_ce, sentence_ranking_loss, span_prediction_loss,
    symmetric_kl, LossNodes, R3FConfig,
};
use crate::model::{ForwardCtx, HeadOutput, Model, ModelPass};
use crate::tape::{NodeId, Tape};
use crate::taskdata::{TaskFamily, TokenizedRecord, BOS, EOS, SEP};

/// Metric names used in records and CSV exports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Accuracy,
    F1,
    RougeProxy,
    Loss,
}

impl Metric {
    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::F1 => "f1",
            Metric::RougeProxy => "rouge-proxy",
            Metric::Loss => "loss",
        }
    }

    /// The headline metric reported per family in ablation tables.
    pub fn primary_for(family: TaskFamily) -> Metric {
        match family {
            TaskFamily::Summarization => Metric::RougeProxy,
            _ => Metric::Accuracy,
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Loss graph for one record: the scaled training objective (plus the
/// weighted consistency penalty when enabled) and its components.
pub struct RecordLoss {
    /// Node to run backward from.
    pub objective: NodeId,
    pub loss: LossNodes,
    pub r3f_penalty: Option<NodeId>,
}

/// Task outputs for one record, before any loss.
enum TaskLogits {
    Classes(NodeId),
    Span { start: NodeId, end: NodeId },
    Scores(NodeId),
    Tokens { logits: NodeId, labels: Vec<usize> },
}

fn cls_sequence(tokens: &[usize]) -> Vec<usize> {
    let mut seq = Vec::with_capacity(tokens.len() + 1);
    seq.push(BOS);
    seq.extend_from_slice(tokens);
    seq
}

fn mrc_sequence(passage: &[usize], question: &[usize]) -> Vec<usize> {
    let mut seq = Vec::with_capacity(passage.len() + question.len() + 2);
    seq.push(BOS);
    seq.extend_from_slice(passage);
    seq.push(SEP);
    seq.extend_from_slice(question);
    seq
}

fn candidate_sequences(context: &[usize], candidates: &[Vec<usize>]) -> Vec<Vec<usize>> {
    candidates
        .iter()
        .map(|cand| {
            let mut seq = Vec::with_capacity(context.len() + cand.len() + 2);
            seq.push(BOS);
            seq.extend_from_slice(context);
            seq.push(SEP);
            seq.extend_from_slice(cand);
            seq
        })
        .collect()
}

fn decoder_io(target: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut input = Vec::with_capacity(target.len() + 1);
    input.push(BOS);
    input.extend_from_slice(target);
    let mut labels = Vec::with_capacity(target.len() + 1);
    labels.extend_from_slice(target);
    labels.push(EOS);
    (input, labels)
}

fn head_key(pass: &ModelPass, family: TaskFamily, task_id: &str) -> Result<Option<HeadKey>> {
    pass.model().heads.key_for(family, task_id)
}

/// Run the model on one record and return its task outputs. `noise`
/// perturbs the encoder embeddings (the R3F branch).
fn task_logits(
    pass: &mut ModelPass,
    record: &TokenizedRecord,
    task_id: &str,
    noise: Option<&R3FConfig>,
) -> Result<TaskLogits> {
    match record {
        TokenizedRecord::Classification { tokens, n_classes, .. } => {
            let key = head_key(pass, TaskFamily::Classification, task_id)?.expect("cls head");
            let seq = cls_sequence(tokens);
            let states = match noise {
                Some(cfg) => pass.encode_noised(&seq, cfg)?,
                None => pass.encode(&seq)?,
            };
            match pass.apply_head(&key, states)? {
                HeadOutput::Classification(logits) => {
                    let emitted = pass.tape.value(logits).numel();
                    if emitted != *n_classes {
                        return Err(Error::invalid(format!(
                            "task '{task_id}': record has {n_classes} classes but head emits {emitted}"
                        )));
                    }
                    Ok(TaskLogits::Classes(logits))
                }
                _ => unreachable!("classification key yields class logits"),
            }
        }
        TokenizedRecord::Mrc { passage, question, .. } => {
            let key = head_key(pass, TaskFamily::Mrc, task_id)?.expect("mrc head");
            let seq = mrc_sequence(passage, question);
            let states = match noise {
                Some(cfg) => pass.encode_noised(&seq, cfg)?,
                None => pass.encode(&seq)?,
            };
            // Positions 1..=len hold the passage (BOS sits at 0).
            let passage_states = pass.tape.slice_rows(states, 1, passage.len())?;
            match pass.apply_head(&key, passage_states)? {
                HeadOutput::Span { start, end } => Ok(TaskLogits::Span { start, end }),
                _ => unreachable!("mrc key yields span logits"),
            }
        }
        TokenizedRecord::Commonsense { context, candidates, .. } => {
            head_key(pass, TaskFamily::Commonsense, task_id)?;
            let seqs = candidate_sequences(context, candidates);
            let scores = pass.score_candidates(&seqs, noise)?;
            Ok(TaskLogits::Scores(scores))
        }
        TokenizedRecord::Summarization { source, target } => {
            let src = cls_sequence(source);
            let (dec_input, labels) = decoder_io(target);
            let enc = match noise {
                Some(cfg) => pass.encode_noised(&src, cfg)?,
                None => pass.encode(&src)?,
            };
            let logits = pass.decode(enc, &dec_input)?;
            Ok(TaskLogits::Tokens { logits, labels })
        }
    }
}

fn loss_from_logits(
    tape: &mut Tape,
    outputs: &TaskLogits,
    record: &TokenizedRecord,
    label_smoothing: f64,
) -> Result<LossNodes> {
    match (outputs, record) {
        (TaskLogits::Classes(logits), TokenizedRecord::Classification { label, .. }) => {
            classification_ce(tape, *logits, *label)
        }
        (TaskLogits::Span { start, end }, TokenizedRecord::Mrc { start: gs, end: ge, .. }) => {
            span_prediction_loss(tape, *start, *end, *gs, *ge)
        }
        (TaskLogits::Scores(scores), TokenizedRecord::Commonsense { gold, .. }) => {
            sentence_ranking_loss(tape, *scores, *gold)
        }
        (TaskLogits::Tokens { logits, labels }, TokenizedRecord::Summarization { .. }) => {
            label_smoothed_ce(tape, *logits, labels, label_smoothing)
        }
        _ => unreachable!("outputs built from the same record"),
    }
}

/// Symmetric KL between clean and noised task outputs; for MRC the start
/// and end distributions are averaged.
fn consistency_penalty(tape: &mut Tape, clean: &TaskLogits, noised: &TaskLogits) -> Result<NodeId> {
    match (clean, noised) {
        (TaskLogits::Classes(a), TaskLogits::Classes(b)) => symmetric_kl(tape, *a, *b),
        (TaskLogits::Scores(a), TaskLogits::Scores(b)) => symmetric_kl(tape, *a, *b),
        (
            TaskLogits::Span { start: sa, end: ea },
            TaskLogits::Span { start: sb, end: eb },
        ) => {
            let kl_s = symmetric_kl(tape, *sa, *sb)?;
            let kl_e = symmetric_kl(tape, *ea, *eb)?;
            let sum = tape.add(kl_s, kl_e)?;
            Ok(tape.mul_scalar(sum, 0.5))
        }
        (TaskLogits::Tokens { logits: a, .. }, TaskLogits::Tokens { logits: b, .. }) => {
            symmetric_kl(tape, *a, *b)
        }
        _ => unreachable!("clean and noised branches share a family"),
    }
}

/// Build the loss graph for one record on an existing pass. When `r3f` is
/// given with a positive weight, a second forward runs on noise-perturbed
/// embeddings and the symmetric KL between the two output distributions,
/// weighted by lambda, is added to the scaled loss.
pub fn record_loss(
    pass: &mut ModelPass,
    record: &TokenizedRecord,
    task_id: &str,
    label_smoothing: f64,
    r3f: Option<&R3FConfig>,
) -> Result<RecordLoss> {
    let r3f = r3f.filter(|cfg| cfg.penalty_weight > 0.0);
    let clean = task_logits(pass, record, task_id, None)?;
    let loss = loss_from_logits(pass.tape, &clean, record, label_smoothing)?;

    let penalty = match r3f {
        Some(cfg) => {
            cfg.validate()?;
            let noised = task_logits(pass, record, task_id, Some(cfg))?;
            Some(consistency_penalty(pass.tape, &clean, &noised)?)
        }
        None => None,
    };

    let objective = match (penalty, r3f) {
        (Some(kl), Some(cfg)) => {
            if !pass.tape.value(kl).item().is_finite() {
                return Err(Error::NonFinite {
                    context: format!("consistency penalty for task '{task_id}'"),
                });
            }
            let weighted = pass.tape.mul_scalar(kl, cfg.penalty_weight);
            pass.tape.add(loss.scaled, weighted)?
        }
        _ => loss.scaled,
    };
    Ok(RecordLoss { objective, loss, r3f_penalty: penalty })
}

// ── evaluation ──────────────────────────────────────────────────────

/// Metrics for one record under the current parameters (deterministic:
/// no dropout, no noise). Always includes the scaled loss.
pub fn eval_record(
    model: &Model,
    record: &TokenizedRecord,
    task_id: &str,
    label_smoothing: f64,
) -> Result<Vec<(Metric, f64)>> {
    let mut tape = Tape::new();
    let mut pass = model.pass(&mut tape, ForwardCtx::clean());
    let outputs = task_logits(&mut pass, record, task_id, None)?;
    let loss = loss_from_logits(pass.tape, &outputs, record, label_smoothing)?;
    let scaled = pass.tape.value(loss.scaled).item();
    if !scaled.is_finite() {
        return Err(Error::NonFinite { context: format!("eval loss for task '{task_id}'") });
    }

    let mut metrics = Vec::with_capacity(3);
    match (&outputs, record) {
        (TaskLogits::Classes(logits), TokenizedRecord::Classification { label, .. }) => {
            let predicted = argmax(pass.tape.value(*logits).values());
            metrics.push((Metric::Accuracy, f64::from(u8::from(predicted == *label))));
        }
        (TaskLogits::Span { start, end }, TokenizedRecord::Mrc { start: gs, end: ge, .. }) => {
            let ps = argmax(pass.tape.value(*start).values());
            let pe = argmax(pass.tape.value(*end).values()).max(ps);
            metrics.push((Metric::Accuracy, f64::from(u8::from(ps == *gs && pe == *ge))));
            metrics.push((Metric::F1, span_f1(ps, pe, *gs, *ge)));
        }
        (TaskLogits::Scores(scores), TokenizedRecord::Commonsense { gold, .. }) => {
            let predicted = argmax(pass.tape.value(*scores).values());
            metrics.push((Metric::Accuracy, f64::from(u8::from(predicted == *gold))));
        }
        (TaskLogits::Tokens { .. }, TokenizedRecord::Summarization { source, target }) => {
            let decoded = model.greedy_decode(&cls_sequence(source), target.len() + 2)?;
            metrics.push((Metric::RougeProxy, token_overlap_f1(&decoded, target)));
        }
        _ => unreachable!(),
    }
    metrics.push((Metric::Loss, scaled));
    Ok(metrics)
}

/// Mean metrics over a slice of records.
pub fn eval_records(
    model: &Model,
    records: &[TokenizedRecord],
    task_id: &str,
    label_smoothing: f64,
) -> Result<Vec<(Metric, f64)>> {
    if records.is_empty() {
        return Err(Error::invalid(format!("eval on task '{task_id}' got no records")));
    }
    let mut sums: Vec<(Metric, f64)> = Vec::new();
    for record in records {
        for (metric, value) in eval_record(model, record, task_id, label_smoothing)? {
            match sums.iter_mut().find(|(m, _)| *m == metric) {
                Some((_, s)) => *s += value,
                None => sums.push((metric, value)),
            }
        }
    }
    let n = records.len() as f64;
    Ok(sums.into_iter().map(|(m, s)| (m, s / n)).collect())
}

fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite values"))
        .map(|(i, _)| i)
        .expect("non-empty")
}

/// Position-overlap F1 between two inclusive spans.
fn span_f1(ps: usize, pe: usize, gs: usize, ge: usize) -> f64 {
    let inter_lo = ps.max(gs);
    let inter_hi = pe.min(ge);
    if inter_hi < inter_lo {
        return 0.0;
    }
    let overlap = (inter_hi - inter_lo + 1) as f64;
    let p = overlap / (pe - ps + 1) as f64;
    let r = overlap / (ge - gs + 1) as f64;
    2.0 * p * r / (p + r)
}

/// Multiset token-overlap F1 between a decoded sequence and the target;
/// the ROUGE stand-in at desk scale.
fn token_overlap_f1(decoded: &[usize], target: &[usize]) -> f64 {
    if decoded.is_empty() || target.is_empty() {
        return 0.0;
    }
    let mut counts = std::collections::BTreeMap::new();
    for &t in target {
        *counts.entry(t).or_insert(0usize) += 1;
    }
    let mut overlap = 0usize;
    for &d in decoded {
        if let Some(c) = counts.get_mut(&d) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / decoded.len() as f64;
    let r = overlap as f64 / target.len() as f64;
    2.0 * p * r / (p + r)
}
