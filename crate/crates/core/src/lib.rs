//! Probability-based uncertainty estimation for LLM generations.
//!
//! The pipeline ingests token-probability traces ([`data`]), turns each
//! generation into a pseudo-probability with a scoring function ([`scoring`],
//! or the learned scorer in [`lars`]), aggregates scores across sampled
//! generations into an uncertainty value ([`ue`]) and measures how well that
//! value predicts incorrect answers ([`metrics`]).

pub mod cli;
pub mod data;
pub mod error;
pub mod lars;
pub mod metrics;
pub mod numerics;
pub mod oracle;
pub mod scoring;
pub mod synth;
pub mod ue;

pub use error::{Error, Result};
