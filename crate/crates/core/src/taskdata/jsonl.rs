//! JSONL dataset ingestion with per-family schema validation.
//!
//! Schemas (UTF-8, one object per line):
//!   classification  {"text": str, "label": uint}
//!   summarization   {"source": str, "target": str}
//!   mrc             {"passage": str, "question": str,
//!                    "answer_start": uint, "answer_end": uint}
//!   commonsense     {"context": str, "candidates": [str, ...], "gold": uint}
//!
//! MRC span indices are inclusive token positions into the
//! whitespace-tokenized passage.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde_json::{json, Value};

use super::records::{Dataset, Record, TaskFamily};
use super::tokenizer::Tokenizer;
use crate::error::{Error, Result};

fn field<'v>(obj: &'v Value, name: &str, line: usize) -> Result<&'v Value> {
    obj.get(name).ok_or_else(|| Error::Jsonl {
        line,
        msg: format!("missing required field '{name}'"),
    })
}

fn str_field(obj: &Value, name: &str, line: usize) -> Result<String> {
    field(obj, name, line)?
        .as_str()
        .map(str::to_owned)
        .ok_or_else(|| Error::Jsonl { line, msg: format!("field '{name}' must be a string") })
}

fn uint_field(obj: &Value, name: &str, line: usize) -> Result<usize> {
    field(obj, name, line)?
        .as_u64()
        .map(|v| v as usize)
        .ok_or_else(|| Error::Jsonl {
            line,
            msg: format!("field '{name}' must be a non-negative integer"),
        })
}

fn parse_record(obj: &Value, family: TaskFamily, line: usize) -> Result<Record> {
    if !obj.is_object() {
        return Err(Error::Jsonl { line, msg: "record must be a JSON object".into() });
    }
    match family {
        TaskFamily::Classification => Ok(Record::Classification {
            text: str_field(obj, "text", line)?,
            label: uint_field(obj, "label", line)?,
        }),
        TaskFamily::Summarization => {
            let source = str_field(obj, "source", line)?;
            let target = str_field(obj, "target", line)?;
            if Tokenizer::word_count(&target) == 0 {
                return Err(Error::Jsonl { line, msg: "field 'target' must be non-empty".into() });
            }
            Ok(Record::Summarization { source, target })
        }
        TaskFamily::Mrc => {
            let passage = str_field(obj, "passage", line)?;
            let question = str_field(obj, "question", line)?;
            let answer_start = uint_field(obj, "answer_start", line)?;
            let answer_end = uint_field(obj, "answer_end", line)?;
            let len = Tokenizer::word_count(&passage);
            if answer_start > answer_end || answer_end >= len {
                return Err(Error::Jsonl {
                    line,
                    msg: format!(
                        "gold span ({answer_start}, {answer_end}) outside passage of length {len}"
                    ),
                });
            }
            Ok(Record::Mrc { passage, question, answer_start, answer_end })
        }
        TaskFamily::Commonsense => {
            let context = str_field(obj, "context", line)?;
            let cands = field(obj, "candidates", line)?
                .as_array()
                .ok_or_else(|| Error::Jsonl {
                    line,
                    msg: "field 'candidates' must be an array of strings".into(),
                })?;
            if cands.len() < 2 {
                return Err(Error::Jsonl {
                    line,
                    msg: format!("field 'candidates' needs at least 2 entries, got {}", cands.len()),
                });
            }
            let mut candidates = Vec::with_capacity(cands.len());
            for c in cands {
                candidates.push(
                    c.as_str()
                        .ok_or_else(|| Error::Jsonl {
                            line,
                            msg: "field 'candidates' must contain only strings".into(),
                        })?
                        .to_owned(),
                );
            }
            let gold = uint_field(obj, "gold", line)?;
            if gold >= candidates.len() {
                return Err(Error::Jsonl {
                    line,
                    msg: format!("field 'gold' is {gold} but only {} candidates", candidates.len()),
                });
            }
            Ok(Record::Commonsense { context, candidates, gold })
        }
    }
}

/// Load a JSONL file as a dataset of the given family. Malformed lines and
/// schema violations are reported with their 1-based line number.
pub fn load_jsonl(path: impl AsRef<Path>, family: TaskFamily) -> Result<Dataset> {
    let reader = BufReader::new(File::open(path.as_ref())?);
    let mut ds = Dataset::new(family);
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let obj: Value = serde_json::from_str(&line)
            .map_err(|e| Error::Jsonl { line: line_no, msg: format!("invalid JSON: {e}") })?;
        ds.push(parse_record(&obj, family, line_no)?)?;
    }
    Ok(ds)
}

fn record_to_json(record: &Record) -> Value {
    match record {
        Record::Classification { text, label } => json!({ "text": text, "label": label }),
        Record::Summarization { source, target } => json!({ "source": source, "target": target }),
        Record::Mrc { passage, question, answer_start, answer_end } => json!({
            "passage": passage,
            "question": question,
            "answer_start": answer_start,
            "answer_end": answer_end,
        }),
        Record::Commonsense { context, candidates, gold } => {
            json!({ "context": context, "candidates": candidates, "gold": gold })
        }
    }
}

/// Write a dataset as JSONL. Key order is sorted, so output is
/// deterministic for a given dataset.
pub fn write_jsonl(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    for record in dataset.records() {
        serde_json::to_writer(&mut out, &record_to_json(record))
            .map_err(|e| Error::invalid(format!("jsonl serialize: {e}")))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
