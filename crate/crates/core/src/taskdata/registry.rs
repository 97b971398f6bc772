//! Task registry with natural-distribution sampling weights.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::records::TaskFamily;
use crate::error::{Error, Result};

/// A registered task: family, prediction-space size, dataset reference,
/// and train/eval sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub family: TaskFamily,
    /// Human-readable provenance of the data (file path or generator tag).
    pub dataset_ref: String,
    /// Nominal number of predictions the loss operates over (class count,
    /// vocab size, passage length, candidate count). Losses use the exact
    /// per-record value; this one is for reporting and registry checks.
    pub n_predictions: usize,
    pub train_size: usize,
    pub eval_size: usize,
}

/// Ordered task collection. Sampling weights are always proportional to
/// the natural train sizes; there is deliberately no way to re-weight,
/// up-sample, or down-sample through this API.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Registry {
    tasks: Vec<TaskSpec>,
}

impl Registry {
    pub fn new() -> Self {
        Registry::default()
    }

    /// Add a task. Rejects duplicate ids and empty train sets; sampling
    /// weights are re-derived from train sizes on every call.
    pub fn register(&mut self, spec: TaskSpec) -> Result<()> {
        if spec.train_size == 0 {
            return Err(Error::invalid(format!(
                "task '{}' has an empty train set",
                spec.task_id
            )));
        }
        if self.tasks.iter().any(|t| t.task_id == spec.task_id) {
            return Err(Error::DuplicateTask(spec.task_id));
        }
        self.tasks.push(spec);
        Ok(())
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn get(&self, task_id: &str) -> Option<&TaskSpec> {
        self.tasks.iter().find(|t| t.task_id == task_id)
    }

    pub fn total_train(&self) -> usize {
        self.tasks.iter().map(|t| t.train_size).sum()
    }

    /// Weights proportional to natural train sizes, summing to 1.
    pub fn sampling_weights(&self) -> Vec<f64> {
        let total = self.total_train() as f64;
        self.tasks.iter().map(|t| t.train_size as f64 / total).collect()
    }

    /// Draw one task by natural-distribution sampling.
    pub fn sample(&self, rng: &mut impl Rng) -> Result<&TaskSpec> {
        if self.tasks.is_empty() {
            return Err(Error::invalid("cannot sample from an empty registry"));
        }
        let total = self.total_train() as f64;
        let mut u: f64 = rng.gen::<f64>() * total;
        for task in &self.tasks {
            u -= task.train_size as f64;
            if u < 0.0 {
                return Ok(task);
            }
        }
        Ok(self.tasks.last().expect("non-empty"))
    }

    pub fn family_counts(&self) -> Vec<(TaskFamily, usize)> {
        TaskFamily::ALL
            .iter()
            .map(|&f| (f, self.tasks.iter().filter(|t| t.family == f).count()))
            .collect()
    }

    pub fn family_train_totals(&self) -> Vec<(TaskFamily, usize)> {
        TaskFamily::ALL
            .iter()
            .map(|&f| {
                (
                    f,
                    self.tasks.iter().filter(|t| t.family == f).map(|t| t.train_size).sum(),
                )
            })
            .collect()
    }

    /// The reference dataset mix used by head-policy and sampling tests:
    /// 26 classification / 4 summarization / 6 MRC / 10 commonsense
    /// datasets with family train totals 2.9M / 524K / 1.05M / 360K and
    /// eval totals 188K / 30K / 123K / 49K.
    pub fn standard_mix() -> Registry {
        let mut reg = Registry::new();
        let families = [
            (TaskFamily::Classification, 26usize, 2_900_000usize, 188_000usize, 2usize),
            (TaskFamily::Summarization, 4, 524_000, 30_000, 512),
            (TaskFamily::Mrc, 6, 1_050_000, 123_000, 32),
            (TaskFamily::Commonsense, 10, 360_000, 49_000, 4),
        ];
        for (family, count, train_total, eval_total, n_pred) in families {
            for i in 0..count {
                let train = train_total / count + usize::from(i < train_total % count);
                let eval = eval_total / count + usize::from(i < eval_total % count);
                reg.register(TaskSpec {
                    task_id: format!("{family}-{i:02}"),
                    family,
                    dataset_ref: format!("mix:{family}:{i}"),
                    n_predictions: n_pred,
                    train_size: train,
                    eval_size: eval,
                })
                .expect("ids unique by construction");
            }
        }
        reg
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn duplicate_id_rejected() {
        let mut reg = Registry::new();
        let spec = TaskSpec {
            task_id: "t0".into(),
            family: TaskFamily::Classification,
            dataset_ref: "inline".into(),
            n_predictions: 2,
            train_size: 10,
            eval_size: 2,
        };
        reg.register(spec.clone()).unwrap();
        assert!(matches!(reg.register(spec), Err(Error::DuplicateTask(_))));
    }

    #[test]
    fn single_task_weight_is_one() {
        let mut reg = Registry::new();
        reg.register(TaskSpec {
            task_id: "only".into(),
            family: TaskFamily::Mrc,
            dataset_ref: "inline".into(),
            n_predictions: 16,
            train_size: 123,
            eval_size: 7,
        })
        .unwrap();
        assert_eq!(reg.sampling_weights(), vec![1.0]);
    }

    #[test]
    fn standard_mix_counts_and_totals() {
        let reg = Registry::standard_mix();
        let counts: Vec<usize> = reg.family_counts().into_iter().map(|(_, c)| c).collect();
        assert_eq!(counts, vec![26, 4, 6, 10]);
        assert_eq!(reg.len(), 46);
        let total = reg.total_train();
        assert_eq!(total, 4_834_000);
        assert!((total as f64 - 4.8e6).abs() / 4.8e6 < 0.01, "total {total} not ~4.8M");
    }

    #[test]
    fn weights_sum_to_one_and_follow_sizes() {
        let reg = Registry::standard_mix();
        let w = reg.sampling_weights();
        let sum: f64 = w.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        // Largest classification dataset outweighs largest commonsense one.
        let cls = reg.tasks().iter().position(|t| t.family == TaskFamily::Classification).unwrap();
        let cs = reg.tasks().iter().position(|t| t.family == TaskFamily::Commonsense).unwrap();
        assert!(w[cls] > w[cs]);
    }

    #[test]
    fn sample_is_deterministic_under_seed() {
        let reg = Registry::standard_mix();
        let draw = |seed| {
            let mut rng = stream_rng(seed, "sample");
            (0..50).map(|_| reg.sample(&mut rng).unwrap().task_id.clone()).collect::<Vec<_>>()
        };
        assert_eq!(draw(3), draw(3));
        assert_ne!(draw(3), draw(4));
    }
}
