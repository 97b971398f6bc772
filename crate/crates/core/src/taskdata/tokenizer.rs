//! Toy whitespace tokenizer with a hash vocabulary.
//!
//! Words map to ids by FNV hash modulo the non-special vocabulary, so the
//! mapping is stable across runs and platforms without any training.

use crate::error::{Error, Result};
use crate::rng::fnv64;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const SEP: usize = 4;
pub const N_SPECIAL: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tokenizer {
    vocab_size: usize,
}

impl Tokenizer {
    pub fn new(vocab_size: usize) -> Result<Self> {
        if vocab_size <= N_SPECIAL + 1 {
            return Err(Error::invalid(format!(
                "vocab size {vocab_size} leaves no room after {N_SPECIAL} specials"
            )));
        }
        Ok(Tokenizer { vocab_size })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn token_id(&self, word: &str) -> usize {
        N_SPECIAL + (fnv64(word.as_bytes()) % (self.vocab_size - N_SPECIAL) as u64) as usize
    }

    /// Whitespace-split text into token ids (no specials added).
    pub fn encode(&self, text: &str) -> Vec<usize> {
        text.split_whitespace().map(|w| self.token_id(w)).collect()
    }

    /// Token count of a text under this tokenizer (whitespace words).
    pub fn word_count(text: &str) -> usize {
        text.split_whitespace().count()
    }
}
