//! AdamW training loop with per-epoch holdout evaluation.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::CalibrationExample;
use crate::error::{Error, Result};
use crate::metrics::auroc;

use super::input::LarsInput;
use super::model::{batch_loss_and_gradients, bce_with_logit, sigmoid, LarsModel};
use super::params::{Params, PROB_EMB};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moment estimates.
pub struct AdamW {
    config: AdamWConfig,
    m: Params,
    v: Params,
    step: i32,
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &Params) -> Self {
        Self {
            config,
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    /// One decoupled-weight-decay Adam step. Tensors named in `frozen` are
    /// left untouched, including by weight decay.
    pub fn step(&mut self, params: &mut Params, grads: &Params, frozen: &[&str]) {
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step);
        let bc2 = 1.0 - c.beta2.powi(self.step);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut());
        for ((((name, p), (_, g)), (_, m)), (_, v)) in tensors {
            if frozen.contains(&name.as_str()) {
                continue;
            }
            for i in 0..p.len() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= c.lr * c.weight_decay * p[i];
                p[i] -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub holdout_loss: Option<f64>,
    pub holdout_auroc: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOptions {
    pub optimizer: AdamWConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            optimizer: AdamWConfig::default(),
            epochs: 5,
            batch_size: 8,
            seed: 0,
        }
    }
}

fn encode_all(model: &LarsModel, examples: &[CalibrationExample]) -> Result<Vec<(LarsInput, u8)>> {
    examples
        .iter()
        .map(|ex| Ok((model.input_for(ex)?, ex.label)))
        .collect()
}

/// Mean loss and AUROC (uncertainty = negative score) over encoded examples.
fn evaluate_encoded(model: &LarsModel, data: &[(LarsInput, u8)]) -> Result<(Option<f64>, Option<f64>)> {
    if data.is_empty() {
        return Ok((None, None));
    }
    let mut loss = 0.0;
    let mut uncertainties = Vec::with_capacity(data.len());
    let mut labels = Vec::with_capacity(data.len());
    for (input, label) in data {
        let logit = model.logit(input)?;
        loss += bce_with_logit(logit, *label).0;
        uncertainties.push(-sigmoid(logit));
        labels.push(*label);
    }
    Ok((Some(loss / data.len() as f64), auroc(&uncertainties, &labels).ok()))
}

/// Trains with seeded per-epoch shuffling. The returned trajectory starts
/// with an epoch-0 row measured before any update.
pub fn train(
    mut model: LarsModel,
    train: &[CalibrationExample],
    holdout: &[CalibrationExample],
    options: &TrainOptions,
) -> Result<(LarsModel, Vec<EpochMetrics>)> {
    if train.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    if options.batch_size == 0 {
        return Err(Error::InvalidInput("batch size must be positive".into()));
    }
    let train_data = encode_all(&model, train)?;
    let holdout_data = encode_all(&model, holdout)?;
    let frozen: Vec<&str> = if model.config.prob_embeddings_trainable {
        vec![]
    } else {
        vec![PROB_EMB]
    };

    let mut history = Vec::with_capacity(options.epochs + 1);
    let (initial_train, _) = evaluate_encoded(&model, &train_data)?;
    let (holdout_loss, holdout_auroc) = evaluate_encoded(&model, &holdout_data)?;
    history.push(EpochMetrics {
        epoch: 0,
        train_loss: initial_train.unwrap_or(f64::NAN),
        holdout_loss,
        holdout_auroc,
    });

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut optimizer = AdamW::new(options.optimizer, &model.params);
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    for epoch in 1..=options.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, chunk) in order.chunks(options.batch_size).enumerate() {
            let batch: Vec<(LarsInput, u8)> = chunk.iter().map(|&i| train_data[i].clone()).collect();
            let (loss, grads) = batch_loss_and_gradients(&model, &batch, b)?;
            optimizer.step(&mut model.params, &grads, &frozen);
            epoch_loss += loss * chunk.len() as f64;
        }
        if !model.params.all_finite() {
            return Err(Error::NonFiniteLoss { batch: usize::MAX });
        }
        let (holdout_loss, holdout_auroc) = evaluate_encoded(&model, &holdout_data)?;
        history.push(EpochMetrics {
            epoch,
            train_loss: epoch_loss / train_data.len() as f64,
            holdout_loss,
            holdout_auroc,
        });
    }
    Ok((model, history))
}

/// `epoch,train_loss,holdout_loss,holdout_auroc`; undefined values are empty.
pub fn write_metrics_csv(w: impl Write, history: &[EpochMetrics]) -> std::io::Result<()> {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.8}")).unwrap_or_default();
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["epoch", "train_loss", "holdout_loss", "holdout_auroc"])?;
    for m in history {
        out.write_record([
            m.epoch.to_string(),
            format!("{:.8}", m.train_loss),
            opt(m.holdout_loss),
            opt(m.holdout_auroc),
        ])?;
    }
    out.flush()
}
