//! Symbolic model input: which token, probability code and position each
//! sequence slot carries. Embedding happens inside the model so gradients
//! reach the embedding tables.

use crate::data::{CalibrationExample, TokenTrace};
use crate::error::{Error, Result};

use super::config::{Association, LarsConfig};
use super::partition::ProbPartition;
use super::tokenize::{answer_token_id, tokenize, CLS, PAD, SEP};

/// Every slot also receives the position embedding of its index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub token: Option<u32>,
    /// 0-based probability partition.
    pub prob: Option<usize>,
}

impl Slot {
    fn token(id: u32) -> Self {
        Self {
            token: Some(id),
            prob: None,
        }
    }

    fn prob(r: usize) -> Self {
        Self {
            token: None,
            prob: Some(r),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LarsInput {
    pub slots: Vec<Slot>,
    /// False for padding.
    pub mask: Vec<bool>,
}

impl LarsInput {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Appends masked PAD slots up to `len`.
    pub fn padded(mut self, len: usize) -> Self {
        while self.slots.len() < len {
            self.slots.push(Slot::token(PAD));
            self.mask.push(false);
        }
        self
    }
}

/// Lays out `[CLS] question [SEP] answer` for the configured association and
/// ablation mode, truncating to `max_len`.
///
/// Truncation drops question tokens from the left first, then whole answer
/// units (token plus its probability slot) from the right.
pub fn build_input_parts(question: &str, trace: &TokenTrace, part: &ProbPartition, config: &LarsConfig) -> Result<LarsInput> {
    if part.d() != config.d || part.k() != config.k {
        return Err(Error::InvalidInput(format!(
            "partition (d = {}, k = {}) does not match config (d = {}, k = {})",
            part.d(),
            part.k(),
            config.d,
            config.k
        )));
    }
    let answer: Vec<(u32, usize)> = trace
        .tokens()
        .iter()
        .zip(trace.probs())
        .map(|(tok, p)| (answer_token_id(tok, config.vocab_size), part.index_of(p)))
        .collect();

    let unit_len = if config.prob_only || config.text_only || config.association == Association::Additive {
        1
    } else {
        2
    };
    let encode_unit = |(tok, r): (u32, usize)| -> Vec<Slot> {
        if config.prob_only {
            vec![Slot::prob(r)]
        } else if config.text_only {
            vec![Slot::token(tok)]
        } else {
            match config.association {
                Association::Sequential => vec![Slot::token(tok), Slot::prob(r)],
                Association::Additive => vec![Slot {
                    token: Some(tok),
                    prob: Some(r),
                }],
            }
        }
    };

    let mut slots = vec![Slot::token(CLS)];
    if config.prob_only {
        let room = (config.max_len - 1) / unit_len;
        if room == 0 {
            return Err(Error::InvalidInput("max_len cannot fit a single answer token".into()));
        }
        for u in answer.into_iter().take(room) {
            slots.extend(encode_unit(u));
        }
    } else {
        let question_ids = if config.include_question {
            tokenize(question, config.vocab_size)
        } else {
            Vec::new()
        };
        // CLS and SEP are always present
        let budget = config.max_len - 2;
        let answer_units = (budget / unit_len).min(answer.len());
        if answer_units == 0 {
            return Err(Error::InvalidInput("max_len cannot fit a single answer token".into()));
        }
        let answer_slots = answer_units * unit_len;
        let question_room = budget - answer_slots.min(budget);
        let q_start = question_ids.len().saturating_sub(question_room);
        slots.extend(question_ids[q_start..].iter().map(|&id| Slot::token(id)));
        slots.push(Slot::token(SEP));
        for u in answer.into_iter().take(answer_units) {
            slots.extend(encode_unit(u));
        }
    }
    let mask = vec![true; slots.len()];
    Ok(LarsInput { slots, mask })
}

pub fn build_input(example: &CalibrationExample, part: &ProbPartition, config: &LarsConfig) -> Result<LarsInput> {
    build_input_parts(&example.question, &example.answer_trace, part, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(config: &LarsConfig) -> ProbPartition {
        let step = 1.0 / config.k as f64;
        ProbPartition::new((1..config.k).map(|r| r as f64 * step).collect(), config.d).unwrap()
    }

    fn trace(probs: &[f64]) -> TokenTrace {
        TokenTrace::new(
            (0..probs.len()).map(|i| format!("w{i}")).collect(),
            probs.iter().map(|p| p.ln()).collect(),
        )
        .unwrap()
    }

    fn tiny() -> LarsConfig {
        LarsConfig {
            d: 8,
            heads: 2,
            k: 4,
            vocab_size: 64,
            max_len: 64,
            layers: 1,
            ..LarsConfig::default()
        }
    }

    #[test]
    fn sequential_and_additive_lengths() {
        let cfg = tiny();
        let part = setup(&cfg);
        let t = trace(&[0.9, 0.2, 0.6]);
        let seq = build_input_parts("what is x", &t, &part, &cfg).unwrap();
        assert_eq!(seq.len(), 1 + 3 + 1 + 2 * 3);
        assert_eq!(seq.slots[5].prob, None);
        assert_eq!(seq.slots[6], Slot::prob(part.index_of(0.9)));

        let add = LarsConfig {
            association: Association::Additive,
            ..cfg.clone()
        };
        let a = build_input_parts("what is x", &t, &part, &add).unwrap();
        assert_eq!(a.len(), 1 + 3 + 1 + 3);
        assert!(a.slots[5].token.is_some() && a.slots[5].prob.is_some());

        let no_q = LarsConfig {
            include_question: false,
            ..cfg
        };
        assert_eq!(build_input_parts("what is x", &t, &part, &no_q).unwrap().len(), 2 + 6);
    }

    #[test]
    fn prob_only_layout() {
        let cfg = LarsConfig {
            prob_only: true,
            ..tiny()
        };
        let part = setup(&cfg);
        let probs = [0.9, 0.2, 0.6];
        let inp = build_input_parts("ignored question", &trace(&probs), &part, &cfg).unwrap();
        assert_eq!(inp.len(), 4);
        assert_eq!(inp.slots[0], Slot::token(CLS));
        for (slot, p) in inp.slots[1..].iter().zip(probs) {
            assert_eq!(*slot, Slot::prob(part.index_of(p)));
        }
    }

    #[test]
    fn text_only_has_no_probabilities() {
        let cfg = LarsConfig {
            text_only: true,
            ..tiny()
        };
        let part = setup(&cfg);
        let inp = build_input_parts("q", &trace(&[0.9, 0.2]), &part, &cfg).unwrap();
        assert_eq!(inp.len(), 1 + 1 + 1 + 2);
        assert!(inp.slots.iter().all(|s| s.prob.is_none()));
    }

    #[test]
    fn truncation_drops_question_left_then_answer_right() {
        let cfg = LarsConfig { max_len: 9, ..tiny() };
        let part = setup(&cfg);
        let q = "q1 q2 q3 q4";
        let qi = tokenize(q, cfg.vocab_size);
        // 2 answer tokens = 4 slots, leaving room for the last 3 question tokens
        let inp = build_input_parts(q, &trace(&[0.5, 0.5]), &part, &cfg).unwrap();
        assert_eq!(inp.len(), 9);
        let kept: Vec<u32> = inp.slots[1..4].iter().map(|s| s.token.unwrap()).collect();
        assert_eq!(kept, qi[1..].to_vec());

        // 5 answer tokens need 10 slots; only 3 whole units fit after CLS/SEP
        // and the single leftover slot holds the last question token
        let inp = build_input_parts(q, &trace(&[0.5; 5]), &part, &cfg).unwrap();
        assert_eq!(inp.len(), 9);
        assert_eq!(inp.slots[1].token, Some(qi[3]));
        assert_eq!(inp.slots[2], Slot::token(SEP));
        assert_eq!(inp.slots[3].token, Some(answer_token_id("w0", cfg.vocab_size)));
        assert_eq!(inp.slots[7].token, Some(answer_token_id("w2", cfg.vocab_size)));

        let cramped = LarsConfig { max_len: 3, ..tiny() };
        assert!(build_input_parts(q, &trace(&[0.5]), &part, &cramped).is_err());
    }

    #[test]
    fn padding_is_masked() {
        let cfg = tiny();
        let part = setup(&cfg);
        let inp = build_input_parts("q", &trace(&[0.5]), &part, &cfg).unwrap().padded(10);
        assert_eq!(inp.len(), 10);
        assert_eq!(inp.mask.iter().filter(|&&m| m).count(), 5);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let cfg = tiny();
        let part = ProbPartition::new(vec![0.5], 8).unwrap();
        assert!(build_input_parts("q", &trace(&[0.5]), &part, &cfg).is_err());
    }
}
