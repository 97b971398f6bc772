//! Task registry, dataset ingestion, synthetic generators, and
//! low-resource splits.

mod jsonl;
mod records;
mod registry;
mod splits;
mod store;
mod synth;
mod tokenized;
mod tokenizer;

pub use jsonl::{load_jsonl, write_jsonl};
pub use store::{TaskData, TaskStore};
pub use records::{Dataset, Record, TaskFamily};
pub use registry::{Registry, TaskSpec};
pub use splits::{default_fractions, low_resource_splits, LowResourceSplit};
pub use synth::{synth_classification, synth_generate, SynthParams};
pub use tokenized::{tokenize_dataset, tokenize_with_classes, TokenizedDataset, TokenizedRecord};
pub use tokenizer::{Tokenizer, BOS, EOS, N_SPECIAL, PAD, SEP, UNK};
