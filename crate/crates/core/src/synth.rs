//! Synthetic labeled generations for exercising the learned scorer without
//! external data.
//!
//! - [`SynthTask::Hedge`]: every answer carries one high-probability filler
//!   token. When the filler is a hedge word ("might", "maybe", ...) the answer
//!   is wrong, otherwise it is right. Probabilities are drawn identically for
//!   both classes, so probability-only scores carry no signal.
//! - [`SynthTask::Joint`]: the answer opens with a marker token and its other
//!   tokens are all drawn from a high- or a low-probability regime. The answer
//!   is right only for the "alpha" marker together with the high regime, so
//!   neither text nor probabilities alone determine the label.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{GenerationRecord, QuestionSample, TokenTrace};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SynthTask {
    Hedge,
    Joint,
}

const QUESTION_WORDS: &[&str] = &[
    "who", "what", "which", "when", "where", "wrote", "built", "discovered", "capital", "river", "tallest", "first",
    "largest", "country", "city", "painter", "novel", "mountain", "element", "ocean", "king", "queen", "planet",
    "language", "invented", "composed", "founded", "named", "oldest", "highest",
];

const ENTITY_WORDS: &[&str] = &[
    "paris", "london", "nile", "amazon", "everest", "tolstoy", "austen", "curie", "newton", "darwin", "mozart",
    "picasso", "mars", "venus", "jupiter", "oxygen", "carbon", "gold", "iron", "pacific", "atlantic", "rome",
    "cairo", "tokyo", "lima", "oslo", "dubai", "tower", "bridge", "castle", "river", "lake", "north", "south",
    "empire", "state", "museum", "temple", "garden", "palace",
];

const HEDGE_WORDS: &[&str] = &["might", "maybe", "possibly", "perhaps"];
const NEUTRAL_WORDS: &[&str] = &["is", "was", "the", "of"];

struct Answer {
    tokens: Vec<String>,
    probs: Vec<f64>,
    label: u8,
}

fn hedge_answer(rng: &mut ChaCha8Rng) -> Answer {
    let len = rng.random_range(2..=5);
    let mut tokens: Vec<String> = (0..len).map(|_| ENTITY_WORDS.choose(rng).unwrap().to_string()).collect();
    let mut probs: Vec<f64> = (0..len).map(|_| rng.random_range(0.05..1.0)).collect();
    let hedged = rng.random_bool(0.5);
    let filler = if hedged { HEDGE_WORDS } else { NEUTRAL_WORDS }.choose(rng).unwrap();
    let at = rng.random_range(0..=len);
    tokens.insert(at, filler.to_string());
    probs.insert(at, rng.random_range(0.85..0.99));
    Answer {
        tokens,
        probs,
        label: (!hedged) as u8,
    }
}

fn joint_answer(rng: &mut ChaCha8Rng) -> Answer {
    let len = rng.random_range(2..=5);
    let alpha = rng.random_bool(0.5);
    let high = rng.random_bool(0.5);
    let mut tokens = vec![if alpha { "alpha" } else { "beta" }.to_string()];
    let mut probs = vec![rng.random_range(0.05..1.0)];
    for _ in 0..len {
        tokens.push(ENTITY_WORDS.choose(rng).unwrap().to_string());
        probs.push(if high {
            rng.random_range(0.6..1.0)
        } else {
            rng.random_range(0.05..0.45)
        });
    }
    Answer {
        tokens,
        probs,
        label: (alpha && high) as u8,
    }
}

/// `questions` samples with `generations` labeled answers each; the first
/// generation is the most likely one.
pub fn synthesize(task: SynthTask, questions: usize, generations: usize, seed: u64) -> Result<Vec<QuestionSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(questions);
    for q in 0..questions {
        let q_len = rng.random_range(3..=6);
        let mut question: Vec<&str> = (0..q_len).map(|_| *QUESTION_WORDS.choose(&mut rng).unwrap()).collect();
        question.push("?");
        let question = question.join(" ");
        let mut gens = Vec::with_capacity(generations);
        for g in 0..generations.max(1) {
            let answer = match task {
                SynthTask::Hedge => hedge_answer(&mut rng),
                SynthTask::Joint => joint_answer(&mut rng),
            };
            let text = answer.tokens.join(" ");
            let trace = TokenTrace::new(answer.tokens, answer.probs.iter().map(|p| p.ln()).collect())?;
            gens.push(GenerationRecord::new(trace, text, g == 0, Some(answer.label))?);
        }
        out.push(QuestionSample::new(format!("{task:?}-{q}").to_lowercase(), question, "synthetic", gens)?);
    }
    Ok(out)
}
