//! Central finite-difference verification of the backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::TokenTrace;
use crate::error::{Error, Result};

use super::config::LarsConfig;
use super::input::LarsInput;
use super::model::{loss_and_gradients, mean_loss, LarsModel};
use super::partition::ProbPartition;

pub const DEFAULT_STEP: f64 = 1e-4;
/// Smallest gradient magnitude used as a relative-error denominator.
pub const MAGNITUDE_FLOOR: f64 = 1e-6;

pub const DEFAULT_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub entries: usize,
    /// `max |analytic - numeric| / max(max |analytic|, max |numeric|)`.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub step: f64,
    pub tolerance: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.max_rel_error < self.tolerance)
    }

    pub fn failures(&self) -> Vec<&TensorCheck> {
        self.tensors.iter().filter(|t| t.max_rel_error >= self.tolerance).collect()
    }

    pub fn worst(&self) -> Option<&TensorCheck> {
        self.tensors.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

/// Compares backprop gradients of the mean batch loss against central
/// differences for every entry of every tensor.
///
/// `corrupt` names a tensor whose analytic gradient is deliberately skewed,
/// so callers can confirm the harness catches a broken backward pass.
pub fn gradient_check(
    model: &LarsModel,
    batch: &[(LarsInput, u8)],
    step: f64,
    tolerance: f64,
    corrupt: Option<&str>,
) -> Result<GradcheckReport> {
    let (_, mut grads) = loss_and_gradients(model, batch)?;
    if let Some(name) = corrupt {
        let mut found = false;
        for (n, g) in grads.tensors_mut() {
            if n == name {
                found = true;
                let bump = g.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-3) * 0.01;
                g[0] += bump;
            }
        }
        if !found {
            return Err(Error::InvalidInput(format!("no tensor named {name}")));
        }
    }

    let mut probe = model.clone();
    let names: Vec<String> = model.params.tensors().into_iter().map(|(n, _)| n).collect();
    let analytic = grads.tensors();
    let mut tensors = Vec::with_capacity(names.len());
    for (ti, name) in names.iter().enumerate() {
        let len = analytic[ti].1.len();
        let mut max_abs_err = 0.0f64;
        let mut max_mag = 0.0f64;
        for j in 0..len {
            let original = probe.params.tensors()[ti].1[j];
            probe.params.tensors_mut()[ti].1[j] = original + step;
            let plus = mean_loss(&probe, batch)?;
            probe.params.tensors_mut()[ti].1[j] = original - step;
            let minus = mean_loss(&probe, batch)?;
            probe.params.tensors_mut()[ti].1[j] = original;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[ti].1[j];
            max_abs_err = max_abs_err.max((a - numeric).abs());
            max_mag = max_mag.max(a.abs()).max(numeric.abs());
        }
        // tensors whose exact gradient vanishes (e.g. attention key biases)
        // are compared against the floor rather than their own noise
        let max_rel_error = max_abs_err / max_mag.max(MAGNITUDE_FLOOR);
        tensors.push(TensorCheck {
            name: name.clone(),
            entries: len,
            max_rel_error,
            max_abs_error: max_abs_err,
        });
    }
    Ok(GradcheckReport {
        step,
        tolerance,
        tensors,
    })
}

/// The reference setup: d = 16, one layer, k = 4, trainable probability
/// embeddings (so they are covered), randomized layer-norm and bias values,
/// and a small labeled batch.
pub fn reference_setup(seed: u64) -> Result<(LarsModel, Vec<(LarsInput, u8)>)> {
    let config = LarsConfig {
        d: 16,
        layers: 1,
        heads: 2,
        k: 4,
        vocab_size: 64,
        max_len: 32,
        prob_embeddings_trainable: true,
        seed,
        ..LarsConfig::default()
    };
    let partition = ProbPartition::new(vec![0.25, 0.5, 0.75], config.d)?;
    let mut model = LarsModel::new(config, partition)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    for (name, t) in model.params.tensors_mut() {
        if name.contains("ln") || name.contains(".b") || name == "head_b" {
            for v in t.iter_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
    }

    let words = ["who", "what", "city", "river", "year", "paris", "nile", "1999", "maybe", "the"];
    let mut batch = Vec::new();
    for i in 0..4 {
        let q_len = rng.random_range(1..4);
        let question: Vec<&str> = (0..q_len).map(|_| words[rng.random_range(0..words.len())]).collect();
        let a_len = rng.random_range(1..4);
        let tokens: Vec<String> = (0..a_len).map(|_| words[rng.random_range(0..words.len())].to_string()).collect();
        let logprobs: Vec<f64> = (0..a_len).map(|_| rng.random_range(0.02f64..1.0).ln()).collect();
        let trace = TokenTrace::new(tokens, logprobs)?;
        batch.push((model.input(&question.join(" "), &trace)?, (i % 2) as u8));
    }
    Ok((model, batch))
}
