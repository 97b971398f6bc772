//! Task families and raw (untokenized) dataset records.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The four task families. The family determines the loss operation
/// applied to a record and the head-sharing policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskFamily {
    Classification,
    Summarization,
    Mrc,
    Commonsense,
}

impl TaskFamily {
    pub const ALL: [TaskFamily; 4] = [
        TaskFamily::Classification,
        TaskFamily::Summarization,
        TaskFamily::Mrc,
        TaskFamily::Commonsense,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TaskFamily::Classification => "classification",
            TaskFamily::Summarization => "summarization",
            TaskFamily::Mrc => "mrc",
            TaskFamily::Commonsense => "commonsense",
        }
    }
}

impl std::fmt::Display for TaskFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One raw example. Text fields are whitespace-tokenizable strings; MRC
/// span indices are inclusive token positions into the passage.
#[derive(Debug, Clone, PartialEq)]
pub enum Record {
    Classification {
        text: String,
        label: usize,
    },
    Summarization {
        source: String,
        target: String,
    },
    Mrc {
        passage: String,
        question: String,
        answer_start: usize,
        answer_end: usize,
    },
    Commonsense {
        context: String,
        candidates: Vec<String>,
        gold: usize,
    },
}

impl Record {
    pub fn family(&self) -> TaskFamily {
        match self {
            Record::Classification { .. } => TaskFamily::Classification,
            Record::Summarization { .. } => TaskFamily::Summarization,
            Record::Mrc { .. } => TaskFamily::Mrc,
            Record::Commonsense { .. } => TaskFamily::Commonsense,
        }
    }
}

/// A homogeneous collection of records from one family.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    family: TaskFamily,
    records: Vec<Record>,
}

impl Dataset {
    pub fn new(family: TaskFamily) -> Self {
        Dataset { family, records: Vec::new() }
    }

    pub fn family(&self) -> TaskFamily {
        self.family
    }

    pub fn push(&mut self, record: Record) -> Result<()> {
        if record.family() != self.family {
            return Err(Error::invalid(format!(
                "{} record pushed into {} dataset",
                record.family(),
                self.family
            )));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Number of distinct classes (`max label + 1`) for classification
    /// datasets; None for other families.
    pub fn n_classes(&self) -> Option<usize> {
        if self.family != TaskFamily::Classification {
            return None;
        }
        self.records
            .iter()
            .map(|r| match r {
                Record::Classification { label, .. } => label + 1,
                _ => 0,
            })
            .max()
    }
}
