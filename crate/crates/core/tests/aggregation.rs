//! Heterogeneous accumulation against the isolated-pass oracle, plus the
//! loss-scaling aggregation witness.

use polytask_core::gradient::Gradient;
use polytask_core::losses::R3FConfig;
use polytask_core::model::{Architecture, ForwardCtx, Model, ModelConfig};
use polytask_core::pipeline::record_loss;
use polytask_core::rng::mix_seed;
use polytask_core::scheduler::{
    accumulate_heterogeneous, reduce_deterministic, AccumulateCfg, BatchStream, BatchingStrategy,
    HeterogeneousBatch, SubBatch,
};
use polytask_core::taskdata::{
    synth_classification, synth_generate, tokenize_with_classes, TaskData, TaskFamily, TaskSpec,
    TaskStore, Tokenizer,
};
use polytask_core::Tape;

fn fixture_config() -> ModelConfig {
    ModelConfig {
        vocab_size: 512,
        max_positions: 32,
        d_model: 16,
        n_heads: 2,
        n_layers: 1,
        ffn_dim: 24,
        architecture: Architecture::EncoderDecoder,
        dropout: 0.1,
        label_smoothing_epsilon: 0.1,
    }
}

/// Two classification tasks (n=2), one MRC, one summarization (n=512).
fn fixture() -> (Model, TaskStore) {
    let tok = Tokenizer::new(512).unwrap();
    let mut model = Model::new(fixture_config(), 42).unwrap();
    let mut store = TaskStore::new();

    let mut add = |family: TaskFamily, id: &str, n_classes: usize, seed: u64| {
        let train_size = 24;
        let raw = match family {
            TaskFamily::Classification => synth_classification(train_size, seed, n_classes).unwrap(),
            _ => synth_generate(family, train_size, seed).unwrap(),
        };
        let eval_raw = match family {
            TaskFamily::Classification => {
                synth_classification(8, seed | (9 << 32), n_classes).unwrap()
            }
            _ => synth_generate(family, 8, seed | (9 << 32)).unwrap(),
        };
        let forced = (family == TaskFamily::Classification).then_some(n_classes);
        let train = tokenize_with_classes(&raw, &tok, forced).unwrap();
        let eval = tokenize_with_classes(&eval_raw, &tok, forced).unwrap();
        let n_predictions = match family {
            TaskFamily::Classification => n_classes,
            TaskFamily::Summarization => 512,
            TaskFamily::Mrc => 10,
            TaskFamily::Commonsense => 4,
        };
        model.register_task_head(family, id, n_classes, 42).unwrap();
        store
            .insert(TaskData {
                spec: TaskSpec {
                    task_id: id.to_string(),
                    family,
                    dataset_ref: format!("synth:{family}:{seed}"),
                    n_predictions,
                    train_size,
                    eval_size: 8,
                },
                train,
                eval,
            })
            .unwrap();
    };

    add(TaskFamily::Classification, "cls-a", 2, 7);
    add(TaskFamily::Classification, "cls-b", 3, 7 | (1 << 32));
    add(TaskFamily::Mrc, "mrc-a", 0, 7 | (2 << 32));
    add(TaskFamily::Summarization, "sum-a", 0, 7 | (3 << 32));
    (model, store)
}

fn accumulate_cfg() -> AccumulateCfg {
    AccumulateCfg {
        dropout: 0.1,
        label_smoothing: 0.1,
        r3f: Some(R3FConfig::default()),
        weight_by_examples: false,
    }
}

/// Independent oracle: each sub-batch's scaled gradient in a fresh
/// isolated pass (same per-slot seed derivation), then a plain average.
fn isolated_gradient(
    model: &Model,
    store: &TaskStore,
    sub: &SubBatch,
    slot: usize,
    cfg: &AccumulateCfg,
    step_seed: u64,
) -> Gradient {
    let task = store.get(&sub.task_id).unwrap();
    let mut tape = Tape::new();
    let ctx = ForwardCtx::seeded(cfg.dropout, mix_seed(step_seed, &format!("worker:{slot}")));
    let mut pass = model.pass(&mut tape, ctx);
    let mut objectives = Vec::new();
    for &idx in &sub.record_indices {
        let built = record_loss(
            &mut pass,
            &task.train.records[idx],
            &sub.task_id,
            cfg.label_smoothing,
            cfg.r3f.as_ref(),
        )
        .unwrap();
        objectives.push(built.objective);
    }
    let stacked = pass.tape.concat_cols(&objectives).unwrap();
    let mean = pass.tape.reduce_mean(stacked);
    tape.backward(mean).unwrap()
}

fn oracle_average(
    model: &Model,
    store: &TaskStore,
    batch: &HeterogeneousBatch,
    cfg: &AccumulateCfg,
    step_seed: u64,
) -> Gradient {
    let grads: Vec<Gradient> = batch
        .sub_batches
        .iter()
        .enumerate()
        .map(|(slot, sub)| isolated_gradient(model, store, sub, slot, cfg, step_seed))
        .collect();
    let mut out = reduce_deterministic(&grads).unwrap();
    out.scale(1.0 / batch.sub_batches.len() as f64);
    out
}

#[test]
fn accumulate_matches_isolated_oracle_for_k_1_2_8() {
    let (model, store) = fixture();
    let registry = store.registry();
    let cfg = accumulate_cfg();
    for k in [1usize, 2, 8] {
        let mut stream =
            BatchStream::new(BatchingStrategy::BatchHeterogeneous, &registry, 4, k, 100 + k as u64)
                .unwrap();
        for step in 0..3u64 {
            let batch = stream.next_batch();
            let step_seed = mix_seed(555, &format!("step:{step}"));
            let outcome =
                accumulate_heterogeneous(&model, &store, &batch, &cfg, step_seed).unwrap();
            let oracle = oracle_average(&model, &store, &batch, &cfg, step_seed);
            let diff = outcome.gradient.max_abs_diff(&oracle);
            assert!(diff <= 1e-12, "K={k} step={step}: max coordinate diff {diff}");
        }
    }
}

#[test]
fn k_equals_two_is_exact_mean() {
    let (model, store) = fixture();
    let cfg = accumulate_cfg();
    let batch = HeterogeneousBatch {
        sub_batches: vec![
            SubBatch { task_id: "cls-a".into(), record_indices: vec![0, 1, 2] },
            SubBatch { task_id: "mrc-a".into(), record_indices: vec![3, 4] },
        ],
    };
    let outcome = accumulate_heterogeneous(&model, &store, &batch, &cfg, 9).unwrap();
    let g1 = isolated_gradient(&model, &store, &batch.sub_batches[0], 0, &cfg, 9);
    let g2 = isolated_gradient(&model, &store, &batch.sub_batches[1], 1, &cfg, 9);
    let mut manual = reduce_deterministic(&[g1, g2]).unwrap();
    manual.scale(0.5);
    assert_eq!(outcome.gradient.max_abs_diff(&manual), 0.0, "(g1+g2)/2 must be exact");
}

#[test]
fn k_equals_one_degenerates_to_single_task_gradient() {
    let (model, store) = fixture();
    let cfg = accumulate_cfg();
    let batch = HeterogeneousBatch {
        sub_batches: vec![SubBatch { task_id: "sum-a".into(), record_indices: vec![0, 5] }],
    };
    let outcome = accumulate_heterogeneous(&model, &store, &batch, &cfg, 4).unwrap();
    let single = isolated_gradient(&model, &store, &batch.sub_batches[0], 0, &cfg, 4);
    assert_eq!(outcome.gradient.max_abs_diff(&single), 0.0);
}

#[test]
fn untouched_heads_receive_zero_not_exclusion() {
    let (model, store) = fixture();
    let cfg = AccumulateCfg { dropout: 0.0, r3f: None, ..accumulate_cfg() };
    // Both workers hit cls-a; cls-b's head is untouched.
    let batch = HeterogeneousBatch {
        sub_batches: vec![
            SubBatch { task_id: "cls-a".into(), record_indices: vec![0, 1] },
            SubBatch { task_id: "cls-b".into(), record_indices: vec![0, 1] },
        ],
    };
    let outcome = accumulate_heterogeneous(&model, &store, &batch, &cfg, 2).unwrap();
    // cls-a's head was touched by worker 0 only: its averaged gradient is
    // exactly half the isolated one (zero contribution from worker 1).
    let iso = isolated_gradient(&model, &store, &batch.sub_batches[0], 0, &cfg, 2);
    let got = outcome.gradient.get("head.cls.cls-a.w").unwrap().values();
    let want = iso.get("head.cls.cls-a.w").unwrap().values();
    for (g, w) in got.iter().zip(want) {
        assert_eq!(g.to_bits(), (w * 0.5).to_bits());
    }
}

#[test]
fn completion_order_permutation_is_bitwise_invariant() {
    let (model, store) = fixture();
    let cfg = accumulate_cfg();
    let batch = HeterogeneousBatch {
        sub_batches: vec![
            SubBatch { task_id: "cls-a".into(), record_indices: vec![0, 1] },
            SubBatch { task_id: "sum-a".into(), record_indices: vec![2] },
            SubBatch { task_id: "mrc-a".into(), record_indices: vec![4, 5] },
            SubBatch { task_id: "cls-b".into(), record_indices: vec![6] },
        ],
    };
    let reference = accumulate_heterogeneous(&model, &store, &batch, &cfg, 77).unwrap();
    // Workers finishing in any order: gradients land in their slots before
    // the reduction, so the result cannot depend on completion order.
    for order in [[3usize, 1, 0, 2], [2, 3, 1, 0], [1, 0, 3, 2]] {
        let mut slots: Vec<Option<Gradient>> = vec![None; 4];
        for &slot in &order {
            slots[slot] =
                Some(isolated_gradient(&model, &store, &batch.sub_batches[slot], slot, &cfg, 77));
        }
        let grads: Vec<Gradient> = slots.into_iter().map(Option::unwrap).collect();
        let mut reduced = reduce_deterministic(&grads).unwrap();
        reduced.scale(1.0 / 4.0);
        assert_eq!(reference.gradient.max_abs_diff(&reduced), 0.0, "order {order:?}");
    }
}

/// Loss-scaling effect: replacing scaled with raw losses changes the
/// averaged gradient when sub-batches differ in n(i) (n=2 vs n=512).
#[test]
fn scaling_changes_aggregate_when_n_differs() {
    let (model, store) = fixture();
    let batch = HeterogeneousBatch {
        sub_batches: vec![
            SubBatch { task_id: "cls-a".into(), record_indices: vec![0, 1] }, // n = 2
            SubBatch { task_id: "sum-a".into(), record_indices: vec![0, 1] }, // n = 512
        ],
    };
    let cfg = AccumulateCfg { dropout: 0.0, r3f: None, ..accumulate_cfg() };
    let scaled = accumulate_heterogeneous(&model, &store, &batch, &cfg, 3).unwrap();

    // Raw-loss oracle: same passes, backward from the raw loss node.
    let raw_gradient = |sub: &SubBatch, slot: usize| -> Gradient {
        let task = store.get(&sub.task_id).unwrap();
        let mut tape = Tape::new();
        let ctx = ForwardCtx::seeded(0.0, mix_seed(3, &format!("worker:{slot}")));
        let mut pass = model.pass(&mut tape, ctx);
        let mut raws = Vec::new();
        for &idx in &sub.record_indices {
            let built =
                record_loss(&mut pass, &task.train.records[idx], &sub.task_id, 0.1, None).unwrap();
            raws.push(built.loss.raw);
        }
        let stacked = pass.tape.concat_cols(&raws).unwrap();
        let mean = pass.tape.reduce_mean(stacked);
        tape.backward(mean).unwrap()
    };
    let g0 = raw_gradient(&batch.sub_batches[0], 0);
    let g1 = raw_gradient(&batch.sub_batches[1], 1);
    let mut raw_avg = reduce_deterministic(&[g0, g1]).unwrap();
    raw_avg.scale(0.5);

    let diff = scaled.gradient.max_abs_diff(&raw_avg);
    assert!(
        diff > 1e-6,
        "raw vs scaled aggregation should differ on shared parameters, got {diff}"
    );
}

/// Scaling by 1/ln n preserves the gradient direction of a single task
/// (magnitude shrinks by that constant).
#[test]
fn scaling_preserves_single_task_gradient_direction() {
    let (model, store) = fixture();
    let task = store.get("sum-a").unwrap();
    let grad_pair = || {
        let mut tape = Tape::new();
        let mut pass = model.pass(&mut tape, ForwardCtx::clean());
        let built = record_loss(&mut pass, &task.train.records[0], "sum-a", 0.1, None).unwrap();
        let g_raw = tape.backward(built.loss.raw).unwrap();
        let g_scaled = tape.backward(built.loss.scaled).unwrap();
        (g_raw, g_scaled)
    };
    let (raw, scaled) = grad_pair();
    let ln_n = (512f64).ln();
    for (name, rt) in raw.iter() {
        let st = scaled.get(name).unwrap();
        for (r, s) in rt.values().iter().zip(st.values()) {
            assert!(
                (s * ln_n - r).abs() <= 1e-12 * r.abs().max(1.0),
                "{name}: scaled*ln(n)={} vs raw={r}",
                s * ln_n
            );
        }
    }
}

#[test]
fn non_finite_sub_batch_loss_names_task_and_record() {
    let (mut model, store) = fixture();
    // Poison a parameter every encode touches so the loss goes non-finite.
    model.params.get_mut("enc.lnf.g").unwrap().values_mut()[0] = f64::NAN;
    let batch = HeterogeneousBatch {
        sub_batches: vec![SubBatch { task_id: "cls-a".into(), record_indices: vec![0] }],
    };
    let cfg = AccumulateCfg { dropout: 0.0, r3f: None, ..accumulate_cfg() };
    let err = accumulate_heterogeneous(&model, &store, &batch, &cfg, 1)
        .unwrap_err()
        .to_string();
    assert!(err.contains("cls-a") && err.contains('0'), "{err}");
}
