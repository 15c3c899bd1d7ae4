//! Domain types, JSON-Lines ingestion and calibration-set curation.
//!
//! Token probabilities are carried as natural-log values everywhere. On load
//! every log-probability is floored at `ln(1e-300)` so that no `-inf` ever
//! reaches the scoring formulas.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

/// Smallest probability representable in a trace.
pub const MIN_PROB: f64 = 1e-300;

/// `ln(MIN_PROB)`.
pub fn min_log_prob() -> f64 {
    MIN_PROB.ln()
}

/// Token strings of a generated answer and their natural-log probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenTrace {
    tokens: Vec<String>,
    logprobs: Vec<f64>,
}

impl TokenTrace {
    /// Validates and floors the log-probabilities.
    pub fn new(tokens: Vec<String>, logprobs: Vec<f64>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::InvalidInput("trace has no tokens".into()));
        }
        if tokens.len() != logprobs.len() {
            return Err(Error::InvalidInput(format!(
                "trace has {} tokens but {} logprobs",
                tokens.len(),
                logprobs.len()
            )));
        }
        let floor = min_log_prob();
        let mut floored = Vec::with_capacity(logprobs.len());
        for (i, &lp) in logprobs.iter().enumerate() {
            if lp.is_nan() || lp > 0.0 {
                return Err(Error::InvalidInput(format!(
                    "logprob {lp} at position {i} is not a log-probability (must be <= 0)"
                )));
            }
            floored.push(lp.max(floor));
        }
        Ok(Self {
            tokens,
            logprobs: floored,
        })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn logprobs(&self) -> &[f64] {
        &self.logprobs
    }

    /// Number of tokens, `L`.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// Always false for a constructed trace; present for API symmetry.
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn probs(&self) -> impl Iterator<Item = f64> + '_ {
        self.logprobs.iter().map(|lp| lp.exp())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRecord {
    pub trace: TokenTrace,
    pub text: String,
    pub is_most_likely: bool,
    /// 1 = correct, 0 = incorrect.
    pub label: Option<u8>,
}

impl GenerationRecord {
    pub fn new(trace: TokenTrace, text: impl Into<String>, is_most_likely: bool, label: Option<u8>) -> Result<Self> {
        let text = text.into();
        if text.is_empty() {
            return Err(Error::InvalidInput("generation text is empty".into()));
        }
        if let Some(l) = label {
            if l > 1 {
                return Err(Error::InvalidInput(format!("label {l} is not binary")));
            }
        }
        Ok(Self {
            trace,
            text,
            is_most_likely,
            label,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuestionSample {
    pub id: String,
    pub question: String,
    pub model_id: String,
    generations: Vec<GenerationRecord>,
}

impl QuestionSample {
    pub fn new(
        id: impl Into<String>,
        question: impl Into<String>,
        model_id: impl Into<String>,
        generations: Vec<GenerationRecord>,
    ) -> Result<Self> {
        if generations.is_empty() {
            return Err(Error::InvalidInput("sample has no generations".into()));
        }
        let most_likely = generations.iter().filter(|g| g.is_most_likely).count();
        if most_likely > 1 {
            return Err(Error::InvalidInput(format!(
                "{most_likely} generations are marked most-likely"
            )));
        }
        Ok(Self {
            id: id.into(),
            question: question.into(),
            model_id: model_id.into(),
            generations,
        })
    }

    pub fn generations(&self) -> &[GenerationRecord] {
        &self.generations
    }

    pub fn most_likely_index(&self) -> Option<usize> {
        self.generations.iter().position(|g| g.is_most_likely)
    }

    pub fn most_likely(&self) -> Option<&GenerationRecord> {
        self.most_likely_index().map(|i| &self.generations[i])
    }

    /// Indices of the sampled generations used by multi-sample aggregators.
    pub fn sampled_indices(&self, include_most_likely: bool) -> Vec<usize> {
        (0..self.generations.len())
            .filter(|&i| include_most_likely || !self.generations[i].is_most_likely)
            .collect()
    }

    /// Stable identifier of one generation, used by external weight files.
    pub fn generation_id(&self, index: usize) -> String {
        format!("{}#{}", self.id, index)
    }
}

/// One labeled (question, answer, probabilities) tuple for scorer training.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationExample {
    pub question: String,
    pub answer_trace: TokenTrace,
    pub label: u8,
}

// ---- wire format ----

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGeneration {
    tokens: Vec<String>,
    logprobs: Vec<f64>,
    text: String,
    is_most_likely: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<u8>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSample {
    id: String,
    question: String,
    model_id: String,
    generations: Vec<RawGeneration>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCalibration {
    question: String,
    tokens: Vec<String>,
    logprobs: Vec<f64>,
    label: u8,
}

impl TryFrom<RawSample> for QuestionSample {
    type Error = Error;

    fn try_from(raw: RawSample) -> Result<Self> {
        let generations = raw
            .generations
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                let trace = TokenTrace::new(g.tokens, g.logprobs)
                    .map_err(|e| Error::InvalidInput(format!("generation {i}: {e}")))?;
                GenerationRecord::new(trace, g.text, g.is_most_likely, g.label)
                    .map_err(|e| Error::InvalidInput(format!("generation {i}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        QuestionSample::new(raw.id, raw.question, raw.model_id, generations)
    }
}

impl From<&QuestionSample> for RawSample {
    fn from(s: &QuestionSample) -> Self {
        RawSample {
            id: s.id.clone(),
            question: s.question.clone(),
            model_id: s.model_id.clone(),
            generations: s
                .generations
                .iter()
                .map(|g| RawGeneration {
                    tokens: g.trace.tokens.clone(),
                    logprobs: g.trace.logprobs.clone(),
                    text: g.text.clone(),
                    is_most_likely: g.is_most_likely,
                    label: g.label,
                })
                .collect(),
        }
    }
}

/// Result of [`load_samples`].
#[derive(Debug, Clone, Default)]
pub struct LoadedSamples {
    pub samples: Vec<QuestionSample>,
    /// Lines skipped in lenient mode, with the reason.
    pub skipped: Vec<(usize, String)>,
}

impl LoadedSamples {
    pub fn skip_count(&self) -> usize {
        self.skipped.len()
    }
}

/// Parses a JSON-Lines file of [`QuestionSample`]s. Blank lines are ignored.
///
/// In strict mode the first malformed or invalid line aborts the load; in
/// lenient mode such lines are skipped and recorded.
pub fn load_samples(path: impl AsRef<Path>, strict: bool) -> Result<LoadedSamples> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_samples(BufReader::new(file), strict).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn parse_samples(reader: impl BufRead, strict: bool) -> Result<LoadedSamples> {
    let mut out = LoadedSamples::default();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io("<input>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<RawSample>(&line)
            .map_err(|e| Error::Json {
                line: line_no,
                message: e.to_string(),
            })
            .and_then(|raw| {
                QuestionSample::try_from(raw).map_err(|e| Error::Invalid {
                    line: line_no,
                    message: e.to_string(),
                })
            });
        match parsed {
            Ok(sample) => out.samples.push(sample),
            Err(e) if strict => return Err(e),
            Err(e) => out.skipped.push((line_no, e.to_string())),
        }
    }
    Ok(out)
}

pub fn sample_to_json(sample: &QuestionSample) -> String {
    serde_json::to_string(&RawSample::from(sample)).expect("sample serializes")
}

pub fn write_samples(path: impl AsRef<Path>, samples: &[QuestionSample]) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for s in samples {
        writeln!(w, "{}", sample_to_json(s)).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn dedup_key(question: &str, text: &str) -> (String, String) {
    (
        question.trim().nfc().collect(),
        text.trim().nfc().collect(),
    )
}

/// One example per labeled generation, in input order. With `dedup`, repeated
/// (question, answer text) pairs keep only their first occurrence; equality is
/// exact after NFC normalization and whitespace trimming.
pub fn build_calibration_set(samples: &[QuestionSample], dedup: bool) -> Result<Vec<CalibrationExample>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for sample in samples {
        for (i, g) in sample.generations.iter().enumerate() {
            let label = g.label.ok_or_else(|| Error::MissingLabel {
                sample: sample.id.clone(),
                index: i,
            })?;
            if dedup && !seen.insert(dedup_key(&sample.question, &g.text)) {
                continue;
            }
            out.push(CalibrationExample {
                question: sample.question.clone(),
                answer_trace: g.trace.clone(),
                label,
            });
        }
    }
    Ok(out)
}

/// Seeded shuffle followed by a split; the holdout receives
/// `round(n * holdout_fraction)` examples.
pub fn split_calibration(
    examples: &[CalibrationExample],
    holdout_fraction: f64,
    seed: u64,
) -> Result<(Vec<CalibrationExample>, Vec<CalibrationExample>)> {
    if !(0.0..1.0).contains(&holdout_fraction) {
        return Err(Error::InvalidInput(format!(
            "holdout fraction {holdout_fraction} outside [0, 1)"
        )));
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_holdout = ((examples.len() as f64) * holdout_fraction).round() as usize;
    let n_train = examples.len() - n_holdout.min(examples.len());
    let train = order[..n_train].iter().map(|&i| examples[i].clone()).collect();
    let holdout = order[n_train..].iter().map(|&i| examples[i].clone()).collect();
    Ok((train, holdout))
}

pub fn calibration_to_json(example: &CalibrationExample) -> String {
    serde_json::to_string(&RawCalibration {
        question: example.question.clone(),
        tokens: example.answer_trace.tokens.clone(),
        logprobs: example.answer_trace.logprobs.clone(),
        label: example.label,
    })
    .expect("calibration example serializes")
}

pub fn write_calibration(path: impl AsRef<Path>, examples: &[CalibrationExample]) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for ex in examples {
        writeln!(w, "{}", calibration_to_json(ex)).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_calibration(path: impl AsRef<Path>) -> Result<Vec<CalibrationExample>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawCalibration = serde_json::from_str(&line).map_err(|e| Error::Json {
            line: line_no,
            message: e.to_string(),
        })?;
        if raw.label > 1 {
            return Err(Error::Invalid {
                line: line_no,
                message: format!("label {} is not binary", raw.label),
            });
        }
        let answer_trace = TokenTrace::new(raw.tokens, raw.logprobs).map_err(|e| Error::Invalid {
            line: line_no,
            message: e.to_string(),
        })?;
        out.push(CalibrationExample {
            question: raw.question,
            answer_trace,
            label: raw.label,
        });
    }
    Ok(out)
}
