//! Gradient-check battery: every primitive and all four loss families
//! against the central-difference oracle.
//!
//! Shared by the CLI `grad-check` subcommand and the acceptance suite.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::gradcheck::{grad_check, GradCheckReport};
use crate::losses::R3FConfig;
use crate::model::{Architecture, ForwardCtx, Model, ModelConfig};
use crate::params::ParamSet;
use crate::pipeline::record_loss;
use crate::rng::stream_rng;
use crate::taskdata::{TaskFamily, TokenizedRecord};
use crate::tensor::Tensor;

pub struct BatteryEntry {
    pub name: &'static str,
    pub report: GradCheckReport,
}

fn rand_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
    let numel: usize = shape.iter().product();
    let values = (0..numel).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
    Tensor::new(shape, values).expect("shape matches")
}

/// Values bounded away from zero (for relu kinks and log domains).
fn rand_tensor_away_from_zero(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
    let numel: usize = shape.iter().product();
    let values = (0..numel)
        .map(|_| {
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            sign * (0.2 + rng.gen::<f64>())
        })
        .collect();
    Tensor::new(shape, values).expect("shape matches")
}

fn rand_positive(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
    let numel: usize = shape.iter().product();
    let values = (0..numel).map(|_| 0.5 + 1.5 * rng.gen::<f64>()).collect();
    Tensor::new(shape, values).expect("shape matches")
}

/// Check one primitive: the scalar under test is `sum(weights ⊙ op(..))`
/// so every output coordinate's gradient is exercised.
fn check_primitive<F>(
    name: &'static str,
    params: ParamSet,
    out_shape: Vec<usize>,
    eps: f64,
    rng: &mut ChaCha8Rng,
    apply: F,
) -> Result<BatteryEntry>
where
    F: Fn(&mut crate::tape::Tape, &[crate::tape::NodeId]) -> Result<crate::tape::NodeId>,
{
    let weights = rand_tensor(out_shape, rng);
    let names: Vec<String> = params.names().cloned().collect();
    let report = grad_check(
        move |tape, p| {
            let inputs: Vec<_> = names
                .iter()
                .map(|n| tape.param(n.clone(), p.get(n).expect("registered").clone()))
                .collect();
            let out = apply(tape, &inputs)?;
            let w = tape.leaf(weights.clone());
            let weighted = tape.mul(out, w)?;
            Ok(tape.reduce_sum(weighted))
        },
        &params,
        eps,
    )?;
    Ok(BatteryEntry { name, report })
}

/// Gradient checks for every tape primitive on random tensors with
/// dimensions <= 8.
pub fn primitive_battery(eps: f64, seed: u64) -> Result<Vec<BatteryEntry>> {
    let mut rng = stream_rng(seed, "primitive_battery");
    let mut entries = Vec::new();
    let p = |pairs: Vec<(&str, Tensor)>| {
        let mut set = ParamSet::new();
        for (n, t) in pairs {
            set.insert(n, t).expect("unique names");
        }
        set
    };

    let a43 = rand_tensor(vec![4, 3], &mut rng);
    let b35 = rand_tensor(vec![3, 5], &mut rng);
    entries.push(check_primitive(
        "matmul",
        p(vec![("a", a43.clone()), ("b", b35)]),
        vec![4, 5],
        eps,
        &mut rng,
        |tape, xs| tape.matmul(xs[0], xs[1]),
    )?);

    let x43 = rand_tensor(vec![4, 3], &mut rng);
    let y43 = rand_tensor(vec![4, 3], &mut rng);
    entries.push(check_primitive(
        "add",
        p(vec![("a", x43.clone()), ("b", y43.clone())]),
        vec![4, 3],
        eps,
        &mut rng,
        |tape, xs| tape.add(xs[0], xs[1]),
    )?);
    let bias = rand_tensor(vec![3], &mut rng);
    entries.push(check_primitive(
        "add_broadcast",
        p(vec![("a", x43.clone()), ("b", bias.clone())]),
        vec![4, 3],
        eps,
        &mut rng,
        |tape, xs| tape.add(xs[0], xs[1]),
    )?);
    entries.push(check_primitive(
        "sub",
        p(vec![("a", x43.clone()), ("b", y43.clone())]),
        vec![4, 3],
        eps,
        &mut rng,
        |tape, xs| tape.sub(xs[0], xs[1]),
    )?);
    entries.push(check_primitive(
        "mul",
        p(vec![("a", x43.clone()), ("b", y43)]),
        vec![4, 3],
        eps,
        &mut rng,
        |tape, xs| tape.mul(xs[0], xs[1]),
    )?);
    entries.push(check_primitive(
        "mul_broadcast",
        p(vec![("a", x43.clone()), ("b", bias)]),
        vec![4, 3],
        eps,
        &mut rng,
        |tape, xs| tape.mul(xs[0], xs[1]),
    )?);
    entries.push(check_primitive(
        "mul_scalar",
        p(vec![("a", x43.clone())]),
        vec![4, 3],
        eps,
        &mut rng,
        |tape, xs| Ok(tape.mul_scalar(xs[0], -1.7)),
    )?);

    let kinked = rand_tensor_away_from_zero(vec![4, 3], &mut rng);
    entries.push(check_primitive(
        "relu",
        p(vec![("a", kinked)]),
        vec![4, 3],
        eps,
        &mut rng,
        |tape, xs| Ok(tape.relu(xs[0])),
    )?);
    entries.push(check_primitive(
        "gelu",
        p(vec![("a", rand_tensor(vec![4, 3], &mut rng))]),
        vec![4, 3],
        eps,
        &mut rng,
        |tape, xs| Ok(tape.gelu(xs[0])),
    )?);
    entries.push(check_primitive(
        "softmax",
        p(vec![("a", rand_tensor(vec![3, 6], &mut rng))]),
        vec![3, 6],
        eps,
        &mut rng,
        |tape, xs| Ok(tape.softmax(xs[0])),
    )?);
    entries.push(check_primitive(
        "log_softmax",
        p(vec![("a", rand_tensor(vec![3, 6], &mut rng))]),
        vec![3, 6],
        eps,
        &mut rng,
        |tape, xs| Ok(tape.log_softmax(xs[0])),
    )?);
    entries.push(check_primitive(
        "log",
        p(vec![("a", rand_positive(vec![4, 3], &mut rng))]),
        vec![4, 3],
        eps,
        &mut rng,
        |tape, xs| Ok(tape.log(xs[0])),
    )?);
    entries.push(check_primitive(
        "layer_norm",
        p(vec![("a", rand_tensor(vec![4, 6], &mut rng))]),
        vec![4, 6],
        eps,
        &mut rng,
        |tape, xs| Ok(tape.layer_norm(xs[0], 1e-5)),
    )?);
    entries.push(check_primitive(
        "embedding",
        p(vec![("table", rand_tensor(vec![7, 4], &mut rng))]),
        vec![5, 4],
        eps,
        &mut rng,
        |tape, xs| tape.embedding(xs[0], &[2, 0, 6, 2, 3]),
    )?);
    entries.push(check_primitive(
        "reshape",
        p(vec![("a", rand_tensor(vec![4, 3], &mut rng))]),
        vec![6, 2],
        eps,
        &mut rng,
        |tape, xs| tape.reshape(xs[0], vec![6, 2]),
    )?);
    entries.push(check_primitive(
        "reduce_mean",
        p(vec![("a", rand_tensor(vec![4, 3], &mut rng))]),
        vec![1],
        eps,
        &mut rng,
        |tape, xs| Ok(tape.reduce_mean(xs[0])),
    )?);
    entries.push(check_primitive(
        "reduce_sum",
        p(vec![("a", rand_tensor(vec![4, 3], &mut rng))]),
        vec![1],
        eps,
        &mut rng,
        |tape, xs| Ok(tape.reduce_sum(xs[0])),
    )?);
    entries.push(check_primitive(
        "transpose",
        p(vec![("a", rand_tensor(vec![4, 3], &mut rng))]),
        vec![3, 4],
        eps,
        &mut rng,
        |tape, xs| tape.transpose(xs[0]),
    )?);
    entries.push(check_primitive(
        "slice_rows",
        p(vec![("a", rand_tensor(vec![6, 3], &mut rng))]),
        vec![2, 3],
        eps,
        &mut rng,
        |tape, xs| tape.slice_rows(xs[0], 2, 2),
    )?);
    entries.push(check_primitive(
        "slice_cols",
        p(vec![("a", rand_tensor(vec![4, 6], &mut rng))]),
        vec![4, 2],
        eps,
        &mut rng,
        |tape, xs| tape.slice_cols(xs[0], 1, 2),
    )?);
    entries.push(check_primitive(
        "concat_cols",
        p(vec![
            ("a", rand_tensor(vec![4, 2], &mut rng)),
            ("b", rand_tensor(vec![4, 3], &mut rng)),
        ]),
        vec![4, 5],
        eps,
        &mut rng,
        |tape, xs| tape.concat_cols(xs),
    )?);
    Ok(entries)
}

fn battery_config(architecture: Architecture) -> ModelConfig {
    ModelConfig {
        vocab_size: 16,
        max_positions: 12,
        d_model: 8,
        n_heads: 2,
        n_layers: 1,
        ffn_dim: 8,
        architecture,
        dropout: 0.0,
        label_smoothing_epsilon: 0.1,
    }
}

fn check_family(
    name: &'static str,
    family: TaskFamily,
    record: TokenizedRecord,
    r3f: Option<R3FConfig>,
    eps: f64,
    seed: u64,
) -> Result<BatteryEntry> {
    let arch = match family {
        TaskFamily::Summarization => Architecture::EncoderDecoder,
        _ => Architecture::EncoderOnly,
    };
    let mut model = Model::new(battery_config(arch), seed)?;
    let n_classes = match &record {
        TokenizedRecord::Classification { n_classes, .. } => *n_classes,
        _ => 0,
    };
    model.register_task_head(family, "probe", n_classes, seed)?;
    let config = model.config.clone();
    let heads = model.heads.clone();

    let report = grad_check(
        move |tape, p| {
            let view = Model { config: config.clone(), params: p.clone(), heads: heads.clone() };
            let mut pass = view.pass(tape, ForwardCtx::seeded(0.0, 777));
            let built = record_loss(&mut pass, &record, "probe", 0.1, r3f.as_ref())?;
            Ok(built.objective)
        },
        &model.params,
        eps,
    )?;
    Ok(BatteryEntry { name, report })
}

/// Gradient checks for the full toy model under each family loss (and
/// once with the consistency penalty active).
pub fn loss_family_battery(eps: f64, seed: u64) -> Result<Vec<BatteryEntry>> {
    let mut entries = Vec::new();
    entries.push(check_family(
        "classification_ce",
        TaskFamily::Classification,
        TokenizedRecord::Classification { tokens: vec![5, 9, 11, 6], label: 1, n_classes: 3 },
        None,
        eps,
        seed,
    )?);
    entries.push(check_family(
        "label_smoothed_ce",
        TaskFamily::Summarization,
        TokenizedRecord::Summarization { source: vec![5, 9, 11, 6], target: vec![5, 9] },
        None,
        eps,
        seed,
    )?);
    entries.push(check_family(
        "span_prediction",
        TaskFamily::Mrc,
        TokenizedRecord::Mrc { passage: vec![5, 9, 11, 6, 7], question: vec![11], start: 2, end: 2 },
        None,
        eps,
        seed,
    )?);
    entries.push(check_family(
        "sentence_ranking",
        TaskFamily::Commonsense,
        TokenizedRecord::Commonsense {
            context: vec![5, 9, 11],
            candidates: vec![vec![11], vec![7], vec![14]],
            gold: 0,
        },
        None,
        eps,
        seed,
    )?);
    // Consistency penalty active: gradient flows through both branches.
    entries.push(check_family(
        "classification_ce_r3f",
        TaskFamily::Classification,
        TokenizedRecord::Classification { tokens: vec![5, 9, 11, 6], label: 1, n_classes: 3 },
        Some(R3FConfig { noise_scale: 1e-3, ..Default::default() }),
        eps,
        seed,
    )?);
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primitives_pass_at_1e4() {
        for entry in primitive_battery(1e-4, 1234).unwrap() {
            assert!(
                entry.report.max_rel_error < 1e-4,
                "{}: max rel error {} at {}[{}]",
                entry.name,
                entry.report.max_rel_error,
                entry.report.worst_param,
                entry.report.worst_index
            );
        }
    }

    #[test]
    fn loss_families_pass_at_1e4() {
        for entry in loss_family_battery(1e-4, 99).unwrap() {
            assert!(
                entry.report.max_rel_error < 1e-4,
                "{}: max rel error {} at {}[{}]",
                entry.name,
                entry.report.max_rel_error,
                entry.report.worst_param,
                entry.report.worst_index
            );
        }
    }
}
