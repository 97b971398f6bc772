//! Tokenized records ready for the model.

use super::records::{Dataset, Record, TaskFamily};
use super::tokenizer::Tokenizer;
use crate::error::{Error, Result};

/// A record converted to token ids. MRC spans stay inclusive token
/// positions into the tokenized passage.
#[derive(Debug, Clone, PartialEq)]
pub enum TokenizedRecord {
    Classification { tokens: Vec<usize>, label: usize, n_classes: usize },
    Summarization { source: Vec<usize>, target: Vec<usize> },
    Mrc { passage: Vec<usize>, question: Vec<usize>, start: usize, end: usize },
    Commonsense { context: Vec<usize>, candidates: Vec<Vec<usize>>, gold: usize },
}

impl TokenizedRecord {
    pub fn family(&self) -> TaskFamily {
        match self {
            TokenizedRecord::Classification { .. } => TaskFamily::Classification,
            TokenizedRecord::Summarization { .. } => TaskFamily::Summarization,
            TokenizedRecord::Mrc { .. } => TaskFamily::Mrc,
            TokenizedRecord::Commonsense { .. } => TaskFamily::Commonsense,
        }
    }

    /// The n(i) of this record: the number of predictions its loss
    /// operates over.
    pub fn n_predictions(&self, vocab_size: usize) -> usize {
        match self {
            TokenizedRecord::Classification { n_classes, .. } => *n_classes,
            TokenizedRecord::Summarization { .. } => vocab_size,
            TokenizedRecord::Mrc { passage, .. } => passage.len(),
            TokenizedRecord::Commonsense { candidates, .. } => candidates.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedDataset {
    pub family: TaskFamily,
    pub records: Vec<TokenizedRecord>,
}

impl TokenizedDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Tokenize a raw dataset. Classification class count is derived from the
/// dataset (`max label + 1`, at least 2); spans are re-validated against
/// the tokenized passage.
pub fn tokenize_dataset(dataset: &Dataset, tok: &Tokenizer) -> Result<TokenizedDataset> {
    tokenize_with_classes(dataset, tok, None)
}

/// Tokenize with an explicit classification class count. Use this when
/// train and eval splits must agree on the prediction space even if a
/// class happens to be absent from one of them.
pub fn tokenize_with_classes(
    dataset: &Dataset,
    tok: &Tokenizer,
    forced_classes: Option<usize>,
) -> Result<TokenizedDataset> {
    let n_classes = match (dataset.family(), forced_classes) {
        (TaskFamily::Classification, Some(c)) => {
            let derived = dataset.n_classes().unwrap_or(0);
            if c < derived {
                return Err(Error::invalid(format!(
                    "declared {c} classes but labels imply {derived}"
                )));
            }
            Some(c)
        }
        _ => dataset.n_classes().map(|c| c.max(2)),
    };
    let mut records = Vec::with_capacity(dataset.len());
    for (i, rec) in dataset.records().iter().enumerate() {
        let tr = match rec {
            Record::Classification { text, label } => TokenizedRecord::Classification {
                tokens: tok.encode(text),
                label: *label,
                n_classes: n_classes.expect("classification dataset"),
            },
            Record::Summarization { source, target } => {
                let target_ids = tok.encode(target);
                if target_ids.is_empty() {
                    return Err(Error::invalid(format!("record {i}: empty summarization target")));
                }
                TokenizedRecord::Summarization { source: tok.encode(source), target: target_ids }
            }
            Record::Mrc { passage, question, answer_start, answer_end } => {
                let passage_ids = tok.encode(passage);
                if *answer_start > *answer_end || *answer_end >= passage_ids.len() {
                    return Err(Error::invalid(format!(
                        "record {i}: span ({answer_start}, {answer_end}) outside tokenized passage of length {}",
                        passage_ids.len()
                    )));
                }
                if passage_ids.len() < 2 {
                    return Err(Error::invalid(format!(
                        "record {i}: passage must have at least 2 tokens for span prediction"
                    )));
                }
                TokenizedRecord::Mrc {
                    passage: passage_ids,
                    question: tok.encode(question),
                    start: *answer_start,
                    end: *answer_end,
                }
            }
            Record::Commonsense { context, candidates, gold } => TokenizedRecord::Commonsense {
                context: tok.encode(context),
                candidates: candidates.iter().map(|c| tok.encode(c)).collect(),
                gold: *gold,
            },
        };
        records.push(tr);
    }
    Ok(TokenizedDataset { family: dataset.family(), records })
}
