//! The three batching strategies and the deterministic batch stream.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{sample_indices, shuffle, stream_rng};
use crate::taskdata::Registry;

/// How updates are assembled from task data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchingStrategy {
    /// All batches of one dataset before the next, in registry order.
    DatasetHomogeneous,
    /// Single-task batches in globally shuffled order.
    BatchHomogeneous,
    /// Each update carries `worker_count` task-homogeneous sub-batches,
    /// tasks drawn per worker by natural-distribution sampling.
    BatchHeterogeneous,
}

impl BatchingStrategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            BatchingStrategy::DatasetHomogeneous => "dataset_homogeneous",
            BatchingStrategy::BatchHomogeneous => "batch_homogeneous",
            BatchingStrategy::BatchHeterogeneous => "batch_heterogeneous",
        }
    }
}

impl std::fmt::Display for BatchingStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for BatchingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dataset_homogeneous" => Ok(BatchingStrategy::DatasetHomogeneous),
            "batch_homogeneous" => Ok(BatchingStrategy::BatchHomogeneous),
            "batch_heterogeneous" => Ok(BatchingStrategy::BatchHeterogeneous),
            other => Err(Error::invalid(format!("unknown batching strategy '{other}'"))),
        }
    }
}

/// One task-homogeneous sub-batch: a task id and train record indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubBatch {
    pub task_id: String,
    pub record_indices: Vec<usize>,
}

/// One optimizer update's worth of data: an ordered collection of
/// task-homogeneous sub-batches (one per simulated worker under the
/// heterogeneous strategy, exactly one otherwise).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeterogeneousBatch {
    pub sub_batches: Vec<SubBatch>,
}

impl HeterogeneousBatch {
    /// True when every sub-batch names the same task.
    pub fn is_task_homogeneous(&self) -> bool {
        self.sub_batches.windows(2).all(|w| w[0].task_id == w[1].task_id)
    }
}

/// Deterministic infinite batch iterator: (strategy, registry, seed,
/// sizes) fully determine the emitted stream. The two homogeneous
/// strategies cycle epochs, reshuffling record order each epoch.
pub struct BatchStream {
    strategy: BatchingStrategy,
    tasks: Vec<(String, usize)>,
    batch_size: usize,
    worker_count: usize,
    rng: ChaCha8Rng,
    queue: VecDeque<SubBatch>,
}

impl BatchStream {
    pub fn new(
        strategy: BatchingStrategy,
        registry: &Registry,
        batch_size: usize,
        worker_count: usize,
        seed: u64,
    ) -> Result<Self> {
        if registry.is_empty() {
            return Err(Error::invalid("batch stream needs a non-empty registry"));
        }
        if batch_size == 0 || worker_count == 0 {
            return Err(Error::invalid("batch_size and worker_count must be >= 1"));
        }
        Ok(BatchStream {
            strategy,
            tasks: registry
                .tasks()
                .iter()
                .map(|t| (t.task_id.clone(), t.train_size))
                .collect(),
            batch_size,
            worker_count,
            rng: stream_rng(seed, "batch_stream"),
            queue: VecDeque::new(),
        })
    }

    pub fn strategy(&self) -> BatchingStrategy {
        self.strategy
    }

    /// Next update. Infinite: homogeneous strategies start a fresh epoch
    /// when exhausted.
    pub fn next_batch(&mut self) -> HeterogeneousBatch {
        match self.strategy {
            BatchingStrategy::BatchHeterogeneous => {
                let sub_batches = (0..self.worker_count).map(|_| self.sample_sub_batch()).collect();
                HeterogeneousBatch { sub_batches }
            }
            BatchingStrategy::DatasetHomogeneous | BatchingStrategy::BatchHomogeneous => {
                if self.queue.is_empty() {
                    self.refill_epoch();
                }
                let sub = self.queue.pop_front().expect("refill produced batches");
                HeterogeneousBatch { sub_batches: vec![sub] }
            }
        }
    }

    /// One worker's draw: a task by natural-distribution sampling, then a
    /// random batch of its records.
    fn sample_sub_batch(&mut self) -> SubBatch {
        let total: usize = self.tasks.iter().map(|(_, n)| n).sum();
        let mut u = self.rng.gen::<f64>() * total as f64;
        let mut chosen = self.tasks.len() - 1;
        for (i, (_, n)) in self.tasks.iter().enumerate() {
            u -= *n as f64;
            if u < 0.0 {
                chosen = i;
                break;
            }
        }
        let (task_id, n) = &self.tasks[chosen];
        let take = self.batch_size.min(*n);
        SubBatch {
            task_id: task_id.clone(),
            record_indices: sample_indices(*n, take, &mut self.rng),
        }
    }

    fn epoch_batches_for(&mut self, task_idx: usize) -> Vec<SubBatch> {
        let (task_id, n) = self.tasks[task_idx].clone();
        let mut order: Vec<usize> = (0..n).collect();
        shuffle(&mut order, &mut self.rng);
        order
            .chunks(self.batch_size)
            .map(|chunk| SubBatch { task_id: task_id.clone(), record_indices: chunk.to_vec() })
            .collect()
    }

    fn refill_epoch(&mut self) {
        match self.strategy {
            BatchingStrategy::DatasetHomogeneous => {
                // Datasets strictly sequentially, in registry order.
                for i in 0..self.tasks.len() {
                    for sub in self.epoch_batches_for(i) {
                        self.queue.push_back(sub);
                    }
                }
            }
            BatchingStrategy::BatchHomogeneous => {
                // Batch on the dataset level, then pick those same batches
                // in globally shuffled order.
                let mut all = Vec::new();
                for i in 0..self.tasks.len() {
                    all.extend(self.epoch_batches_for(i));
                }
                shuffle(&mut all, &mut self.rng);
                self.queue.extend(all);
            }
            BatchingStrategy::BatchHeterogeneous => unreachable!("no queue in heterogeneous mode"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taskdata::{TaskFamily, TaskSpec};

    fn toy_registry(sizes: &[(&str, usize)]) -> Registry {
        let mut reg = Registry::new();
        for (id, n) in sizes {
            reg.register(TaskSpec {
                task_id: (*id).to_string(),
                family: TaskFamily::Classification,
                dataset_ref: "inline".into(),
                n_predictions: 2,
                train_size: *n,
                eval_size: 1,
            })
            .unwrap();
        }
        reg
    }

    #[test]
    fn dataset_homogeneous_is_sequential() {
        // A has 3 batches of 2, B has 2 batches of 2: expect A,A,A,B,B.
        let reg = toy_registry(&[("A", 6), ("B", 4)]);
        let mut stream =
            BatchStream::new(BatchingStrategy::DatasetHomogeneous, &reg, 2, 1, 7).unwrap();
        let order: Vec<String> =
            (0..5).map(|_| stream.next_batch().sub_batches[0].task_id.clone()).collect();
        assert_eq!(order, vec!["A", "A", "A", "B", "B"]);
        // Next epoch starts over with A.
        assert_eq!(stream.next_batch().sub_batches[0].task_id, "A");
    }

    #[test]
    fn batch_homogeneous_never_mixes_tasks() {
        let reg = toy_registry(&[("A", 20), ("B", 12), ("C", 8)]);
        let mut stream =
            BatchStream::new(BatchingStrategy::BatchHomogeneous, &reg, 4, 1, 9).unwrap();
        for _ in 0..50 {
            let batch = stream.next_batch();
            assert_eq!(batch.sub_batches.len(), 1);
            assert!(batch.is_task_homogeneous());
        }
    }

    #[test]
    fn heterogeneous_emits_worker_count_sub_batches() {
        let reg = toy_registry(&[("A", 50), ("B", 50), ("C", 50), ("D", 50), ("E", 50)]);
        let mut stream =
            BatchStream::new(BatchingStrategy::BatchHeterogeneous, &reg, 4, 8, 3).unwrap();
        let mut all_same = 0;
        let trials = 1000;
        for _ in 0..trials {
            let batch = stream.next_batch();
            assert_eq!(batch.sub_batches.len(), 8);
            for sub in &batch.sub_batches {
                assert!(sub.record_indices.len() == 4);
            }
            if batch.is_task_homogeneous() {
                all_same += 1;
            }
        }
        // With 5 equal-weight tasks, P(all 8 workers agree) = 5^-7 ≈ 1.3e-5;
        // over 1000 batches even a couple of collisions would be suspect.
        assert!(all_same <= 1, "{all_same} fully-collapsed batches in {trials}");
    }

    #[test]
    fn same_seed_reproduces_stream() {
        let reg = toy_registry(&[("A", 30), ("B", 10)]);
        let collect = |seed: u64| {
            let mut s =
                BatchStream::new(BatchingStrategy::BatchHeterogeneous, &reg, 3, 4, seed).unwrap();
            (0..20).map(|_| s.next_batch()).collect::<Vec<_>>()
        };
        assert_eq!(collect(5), collect(5));
        assert_ne!(collect(5), collect(6));
    }

    #[test]
    fn empty_registry_rejected() {
        let reg = Registry::new();
        assert!(BatchStream::new(BatchingStrategy::BatchHomogeneous, &reg, 2, 1, 0).is_err());
    }
}
