//! Task-head table and the head-sharing policy.
//!
//! Every classification dataset gets its own head; all MRC datasets share
//! one head and all commonsense datasets share another (per-dataset heads
//! for those families overfit badly); summarization reuses the decoder
//! output projection and adds zero head parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taskdata::TaskFamily;

/// Key under which a task's head parameters live.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum HeadKey {
    /// Per-dataset classification head, keyed by dataset id.
    Classification(String),
    /// One unified head shared by every MRC dataset.
    Mrc,
    /// One unified head shared by every commonsense dataset.
    Commonsense,
}

impl HeadKey {
    /// Prefix used for this head's parameter names.
    pub fn param_prefix(&self) -> String {
        match self {
            HeadKey::Classification(id) => format!("head.cls.{id}"),
            HeadKey::Mrc => "head.mrc".to_string(),
            HeadKey::Commonsense => "head.cs".to_string(),
        }
    }
}

impl std::fmt::Display for HeadKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HeadKey::Classification(id) => write!(f, "classification:{id}"),
            HeadKey::Mrc => f.write_str("mrc"),
            HeadKey::Commonsense => f.write_str("commonsense"),
        }
    }
}

/// One head entry: its output arity and owned parameter names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadEntry {
    pub n_outputs: usize,
    pub param_names: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "HeadTableRepr", into = "HeadTableRepr")]
pub struct HeadTable {
    entries: std::collections::BTreeMap<HeadKey, HeadEntry>,
}

/// JSON-friendly form: enum keys cannot be JSON object keys, so the
/// table serializes as ordered pairs.
#[derive(Serialize, Deserialize)]
struct HeadTableRepr {
    entries: Vec<(HeadKey, HeadEntry)>,
}

impl From<HeadTable> for HeadTableRepr {
    fn from(t: HeadTable) -> Self {
        HeadTableRepr { entries: t.entries.into_iter().collect() }
    }
}

impl From<HeadTableRepr> for HeadTable {
    fn from(r: HeadTableRepr) -> Self {
        HeadTable { entries: r.entries.into_iter().collect() }
    }
}

/// What `register` decided: which key serves the task and which parameter
/// tensors (name, shape) must be freshly created, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadRegistration {
    pub key: Option<HeadKey>,
    pub new_params: Vec<(String, Vec<usize>)>,
}

impl HeadTable {
    pub fn new() -> Self {
        HeadTable::default()
    }

    /// Resolve the head key for a task and list any parameters that have
    /// to be created. `n_outputs` is the class count for classification
    /// and is ignored for the fixed-arity shared heads. Summarization
    /// resolves to no key and never creates parameters.
    pub fn register(
        &mut self,
        family: TaskFamily,
        task_id: &str,
        n_outputs: usize,
        d_model: usize,
    ) -> Result<HeadRegistration> {
        let (key, n_outputs) = match family {
            TaskFamily::Classification => {
                if n_outputs < 2 {
                    return Err(Error::invalid(format!(
                        "classification head for '{task_id}' needs >= 2 classes, got {n_outputs}"
                    )));
                }
                (HeadKey::Classification(task_id.to_string()), n_outputs)
            }
            TaskFamily::Mrc => (HeadKey::Mrc, 2),
            TaskFamily::Commonsense => (HeadKey::Commonsense, 1),
            TaskFamily::Summarization => {
                return Ok(HeadRegistration { key: None, new_params: Vec::new() })
            }
        };

        if let Some(existing) = self.entries.get(&key) {
            if matches!(key, HeadKey::Classification(_)) {
                return Err(Error::invalid(format!(
                    "classification head for '{task_id}' already registered"
                )));
            }
            debug_assert_eq!(existing.n_outputs, n_outputs);
            return Ok(HeadRegistration { key: Some(key), new_params: Vec::new() });
        }

        let prefix = key.param_prefix();
        let new_params = vec![
            (format!("{prefix}.w"), vec![d_model, n_outputs]),
            (format!("{prefix}.b"), vec![n_outputs]),
        ];
        self.entries.insert(
            key.clone(),
            HeadEntry {
                n_outputs,
                param_names: new_params.iter().map(|(n, _)| n.clone()).collect(),
            },
        );
        Ok(HeadRegistration { key: Some(key), new_params })
    }

    /// The key serving a (family, task) pair, if one is registered.
    /// Summarization always resolves to None.
    pub fn key_for(&self, family: TaskFamily, task_id: &str) -> Result<Option<HeadKey>> {
        let key = match family {
            TaskFamily::Classification => HeadKey::Classification(task_id.to_string()),
            TaskFamily::Mrc => HeadKey::Mrc,
            TaskFamily::Commonsense => HeadKey::Commonsense,
            TaskFamily::Summarization => return Ok(None),
        };
        if self.entries.contains_key(&key) {
            Ok(Some(key))
        } else {
            Err(Error::UnknownHead(key.to_string()))
        }
    }

    pub fn get(&self, key: &HeadKey) -> Result<&HeadEntry> {
        self.entries.get(key).ok_or_else(|| Error::UnknownHead(key.to_string()))
    }

    pub fn contains(&self, key: &HeadKey) -> bool {
        self.entries.contains_key(key)
    }

    pub fn remove(&mut self, key: &HeadKey) -> Option<HeadEntry> {
        self.entries.remove(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&HeadKey, &HeadEntry)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Analytic head parameter count for a registration, for the
    /// parameter-count report.
    pub fn param_count_for(family: TaskFamily, n_outputs: usize, d_model: usize) -> usize {
        match family {
            TaskFamily::Classification => d_model * n_outputs + n_outputs,
            TaskFamily::Mrc => d_model * 2 + 2,
            TaskFamily::Commonsense => d_model + 1,
            TaskFamily::Summarization => 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classification_heads_are_per_dataset() {
        let mut table = HeadTable::new();
        let a = table.register(TaskFamily::Classification, "sst", 2, 8).unwrap();
        let b = table.register(TaskFamily::Classification, "mnli", 3, 8).unwrap();
        assert_ne!(a.key, b.key);
        assert!(!a.new_params.is_empty() && !b.new_params.is_empty());
        let names_a: Vec<_> = a.new_params.iter().map(|(n, _)| n).collect();
        let names_b: Vec<_> = b.new_params.iter().map(|(n, _)| n).collect();
        assert!(names_a.iter().all(|n| !names_b.contains(n)));
    }

    #[test]
    fn mrc_and_commonsense_share_one_head_each() {
        let mut table = HeadTable::new();
        let first = table.register(TaskFamily::Mrc, "squad", 0, 8).unwrap();
        let second = table.register(TaskFamily::Mrc, "record", 0, 8).unwrap();
        assert_eq!(first.key, second.key);
        assert!(second.new_params.is_empty(), "second MRC registration must not add params");
        let cs1 = table.register(TaskFamily::Commonsense, "hella", 0, 8).unwrap();
        let cs2 = table.register(TaskFamily::Commonsense, "cqa", 0, 8).unwrap();
        assert_eq!(cs1.key, cs2.key);
        assert!(cs2.new_params.is_empty());
    }

    #[test]
    fn summarization_adds_zero_parameters() {
        let mut table = HeadTable::new();
        let reg = table.register(TaskFamily::Summarization, "xsum", 0, 8).unwrap();
        assert_eq!(reg.key, None);
        assert!(reg.new_params.is_empty());
        assert!(table.is_empty());
        assert_eq!(HeadTable::param_count_for(TaskFamily::Summarization, 0, 64), 0);
    }

    #[test]
    fn unregistered_key_is_an_error() {
        let table = HeadTable::new();
        let err = table.key_for(TaskFamily::Mrc, "squad").unwrap_err();
        assert!(matches!(err, Error::UnknownHead(_)));
    }
}
