use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How answer tokens are paired with their probability codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Association {
    /// Each answer token is followed by its own probability slot.
    #[default]
    Sequential,
    /// The probability code is added to the token embedding.
    Additive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LarsConfig {
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    pub k: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub association: Association,
    pub prob_embeddings_trainable: bool,
    pub include_question: bool,
    pub text_only: bool,
    pub prob_only: bool,
    pub seed: u64,
}

impl Default for LarsConfig {
    fn default() -> Self {
        Self {
            d: 64,
            layers: 2,
            heads: 4,
            k: 8,
            vocab_size: 4096,
            max_len: 256,
            association: Association::Sequential,
            prob_embeddings_trainable: false,
            include_question: true,
            text_only: false,
            prob_only: false,
            seed: 0,
        }
    }
}

impl LarsConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return bad(format!("d = {} must be a positive multiple of heads = {}", self.d, self.heads));
        }
        if self.k < 2 || self.d % self.k != 0 {
            return bad(format!("d = {} must be a multiple of k = {} (k >= 2)", self.d, self.k));
        }
        if self.vocab_size < 8 {
            return bad(format!("vocab_size = {} is below 8", self.vocab_size));
        }
        if self.max_len < 3 {
            return bad(format!("max_len = {} cannot hold a single answer token", self.max_len));
        }
        if self.text_only && self.prob_only {
            return bad("text_only and prob_only are mutually exclusive".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }
}
