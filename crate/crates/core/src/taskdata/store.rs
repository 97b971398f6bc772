//! Materialized tasks: spec + tokenized train/eval data.

use std::collections::BTreeMap;

use super::registry::{Registry, TaskSpec};
use super::tokenized::TokenizedDataset;
use crate::error::{Error, Result};

/// One task's spec and data, ready for training.
#[derive(Debug, Clone)]
pub struct TaskData {
    pub spec: TaskSpec,
    pub train: TokenizedDataset,
    pub eval: TokenizedDataset,
}

/// Immutable-after-construction task collection; safe to share across
/// workers. Insertion order defines registry order.
#[derive(Debug, Clone, Default)]
pub struct TaskStore {
    order: Vec<String>,
    map: BTreeMap<String, TaskData>,
}

impl TaskStore {
    pub fn new() -> Self {
        TaskStore::default()
    }

    pub fn insert(&mut self, task: TaskData) -> Result<()> {
        if task.spec.family != task.train.family || task.spec.family != task.eval.family {
            return Err(Error::invalid(format!(
                "task '{}' family mismatch between spec and data",
                task.spec.task_id
            )));
        }
        if task.spec.train_size != task.train.len() {
            return Err(Error::invalid(format!(
                "task '{}' declares {} train records but holds {}",
                task.spec.task_id,
                task.spec.train_size,
                task.train.len()
            )));
        }
        if self.map.contains_key(&task.spec.task_id) {
            return Err(Error::DuplicateTask(task.spec.task_id.clone()));
        }
        self.order.push(task.spec.task_id.clone());
        self.map.insert(task.spec.task_id.clone(), task);
        Ok(())
    }

    pub fn get(&self, task_id: &str) -> Result<&TaskData> {
        self.map
            .get(task_id)
            .ok_or_else(|| Error::invalid(format!("task '{task_id}' not in store")))
    }

    pub fn task_ids(&self) -> &[String] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &TaskData> {
        self.order.iter().map(|id| &self.map[id])
    }

    /// Derive the registry (specs in insertion order). Sampling weights
    /// follow the natural train sizes recorded in the specs.
    pub fn registry(&self) -> Registry {
        let mut reg = Registry::new();
        for id in &self.order {
            reg.register(self.map[id].spec.clone()).expect("store ids unique");
        }
        reg
    }
}
