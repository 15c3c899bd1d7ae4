//! Scoring functions: map one generation (question, tokens, token
//! probabilities) to a pseudo-probability in `(0, 1]`.
//!
//! - [`sequence_prob`]: product of token probabilities.
//! - [`length_normalized_score`]: geometric mean of token probabilities.
//! - [`weighted_score`]: `exp(sum_l w_l * ln p_l)` for any weight vector.
//!
//! Every scorer, including the learned one in [`crate::lars`], implements
//! [`Scorer`] so the aggregators in [`crate::ue`] can use them interchangeably.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;

use crate::data::{min_log_prob, QuestionSample, TokenTrace, MIN_PROB};
use crate::error::{Error, Result};
use crate::oracle::SimilarityOracle;

/// A pseudo-probability and its natural log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    value: f64,
    log_value: f64,
}

impl Score {
    /// Clamps the log into `[ln 1e-300, 0]`.
    pub fn from_log(log_value: f64) -> Self {
        let log_value = if log_value.is_nan() {
            min_log_prob()
        } else {
            log_value.clamp(min_log_prob(), 0.0)
        };
        Self {
            value: log_value.exp().max(MIN_PROB),
            log_value,
        }
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn log_value(&self) -> f64 {
        self.log_value
    }
}

/// Non-negative per-token weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidInput(format!("weight {w} is not a finite non-negative number")));
        }
        Ok(Self(weights))
    }

    pub fn uniform(len: usize) -> Self {
        Self(vec![1.0 / len as f64; len])
    }

    pub fn ones(len: usize) -> Self {
        Self(vec![1.0; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn sequence_prob(trace: &TokenTrace) -> Score {
    Score::from_log(trace.logprobs().iter().sum())
}

pub fn length_normalized_score(trace: &TokenTrace) -> Score {
    let lps = trace.logprobs();
    Score::from_log(lps.iter().sum::<f64>() / lps.len() as f64)
}

pub fn weighted_score(trace: &TokenTrace, weights: &WeightVector) -> Result<Score> {
    if weights.len() != trace.len() {
        return Err(Error::LengthMismatch {
            expected: trace.len(),
            actual: weights.len(),
        });
    }
    let log: f64 = trace
        .logprobs()
        .iter()
        .zip(weights.as_slice())
        .map(|(lp, w)| w * lp)
        .sum();
    Ok(Score::from_log(log))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightNormalization {
    #[default]
    SumToOne,
    None,
}

/// Relevance of each answer token measured by how much the (question, answer)
/// text changes when that token is removed:
/// `r_l = 1 - sim(q + answer, q + answer_without_l)`.
///
/// The reduced answer is rebuilt from the remaining trace tokens (trimmed,
/// space-joined). Under [`WeightNormalization::SumToOne`] the relevances are
/// divided by their sum, falling back to uniform when they are all zero.
pub fn leave_one_out_weights(
    question: &str,
    trace: &TokenTrace,
    answer_text: &str,
    sim: &dyn SimilarityOracle,
    normalize: WeightNormalization,
) -> Result<WeightVector> {
    let full = format!("{} {}", question, answer_text);
    let pieces: Vec<&str> = trace.tokens().iter().map(|t| t.trim()).collect();
    let mut relevance = Vec::with_capacity(pieces.len());
    for l in 0..pieces.len() {
        let reduced_answer = pieces
            .iter()
            .enumerate()
            .filter(|&(i, p)| i != l && !p.is_empty())
            .map(|(_, p)| *p)
            .collect::<Vec<_>>()
            .join(" ");
        let reduced = format!("{} {}", question, reduced_answer);
        let s = sim.similarity(&full, &reduced)?;
        relevance.push((1.0 - s).max(0.0));
    }
    match normalize {
        WeightNormalization::None => WeightVector::new(relevance),
        WeightNormalization::SumToOne => {
            let total: f64 = relevance.iter().sum();
            if total == 0.0 {
                Ok(WeightVector::uniform(relevance.len()))
            } else {
                WeightVector::new(relevance.into_iter().map(|r| r / total).collect())
            }
        }
    }
}

/// A scoring function over one generation of a sample.
pub trait Scorer: Send + Sync {
    fn name(&self) -> &str;

    fn score(&self, sample: &QuestionSample, index: usize) -> Result<Score>;
}

fn generation(sample: &QuestionSample, index: usize) -> Result<&crate::data::GenerationRecord> {
    sample.generations().get(index).ok_or_else(|| {
        Error::InvalidInput(format!("sample {} has no generation {index}", sample.id))
    })
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SequenceProbScorer;

impl Scorer for SequenceProbScorer {
    fn name(&self) -> &str {
        "seq_prob"
    }

    fn score(&self, sample: &QuestionSample, index: usize) -> Result<Score> {
        Ok(sequence_prob(&generation(sample, index)?.trace))
    }
}

/// Length-normalized scoring (LNS).
#[derive(Debug, Clone, Copy, Default)]
pub struct LengthNormalizedScorer;

impl Scorer for LengthNormalizedScorer {
    fn name(&self) -> &str {
        "lns"
    }

    fn score(&self, sample: &QuestionSample, index: usize) -> Result<Score> {
        Ok(length_normalized_score(&generation(sample, index)?.trace))
    }
}

/// Weighted scoring with leave-one-out relevance weights.
pub struct RelevanceWeightedScorer {
    sim: Arc<dyn SimilarityOracle>,
    normalize: WeightNormalization,
}

impl RelevanceWeightedScorer {
    pub fn new(sim: Arc<dyn SimilarityOracle>, normalize: WeightNormalization) -> Self {
        Self { sim, normalize }
    }
}

impl Scorer for RelevanceWeightedScorer {
    fn name(&self) -> &str {
        "weighted"
    }

    fn score(&self, sample: &QuestionSample, index: usize) -> Result<Score> {
        let g = generation(sample, index)?;
        let w = leave_one_out_weights(&sample.question, &g.trace, &g.text, self.sim.as_ref(), self.normalize)?;
        weighted_score(&g.trace, &w)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightLine {
    id: String,
    weights: Vec<f64>,
}

/// Weighted scoring with precomputed weights keyed by generation id
/// (`"<sample id>#<generation index>"`).
#[derive(Debug, Clone, Default)]
pub struct ExternalWeightsScorer {
    weights: HashMap<String, WeightVector>,
}

impl ExternalWeightsScorer {
    pub fn new(weights: HashMap<String, WeightVector>) -> Self {
        Self { weights }
    }

    /// Reads a JSONL file of `{"id": "...", "weights": [...]}` lines.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut weights = HashMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: WeightLine = serde_json::from_str(&line).map_err(|e| Error::Json {
                line: i + 1,
                message: e.to_string(),
            })?;
            let w = WeightVector::new(parsed.weights).map_err(|e| Error::Invalid {
                line: i + 1,
                message: e.to_string(),
            })?;
            weights.insert(parsed.id, w);
        }
        Ok(Self { weights })
    }
}

impl Scorer for ExternalWeightsScorer {
    fn name(&self) -> &str {
        "weighted"
    }

    fn score(&self, sample: &QuestionSample, index: usize) -> Result<Score> {
        let g = generation(sample, index)?;
        let id = sample.generation_id(index);
        let w = self
            .weights
            .get(&id)
            .ok_or_else(|| Error::InvalidInput(format!("no weights for generation {id}")))?;
        weighted_score(&g.trace, w)
    }
}
