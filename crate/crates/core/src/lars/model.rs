//! Pre-layer-norm transformer encoder with a single-logit head, plus
//! hand-written reverse-mode gradients.
//!
//! Per block: `x + MHA(LN(x))`, then `h + FFN(LN(h))` with a tanh-GELU
//! feed-forward of width `4d`. The logit is read from the `[CLS]` position
//! after a final layer norm.

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{CalibrationExample, QuestionSample, TokenTrace};
use crate::error::{Error, Result};
use crate::scoring::{Score, Scorer};

use super::config::LarsConfig;
use super::input::{build_input, build_input_parts, LarsInput};
use super::params::Params;
use super::partition::ProbPartition;

const LN_EPS: f64 = 1e-5;
const PROB_CLAMP: f64 = 1e-12;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

#[derive(Debug, Clone, PartialEq)]
pub struct LarsModel {
    pub config: LarsConfig,
    pub partition: ProbPartition,
    pub params: Params,
}

struct BlockCache {
    xhat1: Array2<f64>,
    rstd1: Array1<f64>,
    a: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Vec<Array2<f64>>,
    ctx: Array2<f64>,
    xhat2: Array2<f64>,
    rstd2: Array1<f64>,
    c: Array2<f64>,
    u: Array2<f64>,
    g: Array2<f64>,
}

/// Activations kept by [`LarsModel::forward`] for the backward pass.
pub struct ForwardCache {
    input: LarsInput,
    blocks: Vec<BlockCache>,
    xhat_f: Array1<f64>,
    rstd_f: f64,
    z: Array1<f64>,
}

fn layer_norm(x: &Array2<f64>, g: &Array1<f64>, b: &Array1<f64>) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
        let mean = row.sum() / d;
        row -= mean;
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *r = 1.0 / (var + LN_EPS).sqrt();
        row *= *r;
    }
    let out = &xhat * g + b;
    (out, xhat, rstd)
}

/// Gradient through `y = xhat * g + b`; accumulates `dg`, `db`.
fn layer_norm_backward(
    dy: &Array2<f64>,
    xhat: &Array2<f64>,
    rstd: &Array1<f64>,
    g: &Array1<f64>,
    dg: &mut Array1<f64>,
    db: &mut Array1<f64>,
) -> Array2<f64> {
    *dg += &(dy * xhat).sum_axis(Axis(0));
    *db += &dy.sum_axis(Axis(0));
    let d = dy.ncols() as f64;
    let mut dx = dy * g;
    for ((mut row, xh), &r) in dx.rows_mut().into_iter().zip(xhat.rows()).zip(rstd.iter()) {
        let mean = row.sum() / d;
        let mean_xh = row.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>() / d;
        row.zip_mut_with(&xh, |v, &h| *v = r * (*v - mean - h * mean_xh));
    }
    dx
}

fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + GELU_A * u * u * u)).tanh())
}

fn gelu_grad(u: f64) -> f64 {
    let t = (GELU_C * (u + GELU_A * u * u * u)).tanh();
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * u * u)
}

/// `ln(sigmoid(x))` without overflow.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    log_sigmoid(x).exp()
}

/// Binary cross-entropy of one logit with the sigmoid clamped to
/// `[1e-12, 1 - 1e-12]`, and its derivative with respect to the logit.
pub fn bce_with_logit(logit: f64, label: u8) -> (f64, f64) {
    let p = sigmoid(logit);
    let clamped = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let y = label as f64;
    let loss = -(y * clamped.ln() + (1.0 - y) * (1.0 - clamped).ln());
    let grad = if clamped == p { p - y } else { 0.0 };
    (loss, grad)
}

impl LarsModel {
    /// Randomly initialized model (seeded by `config.seed`).
    pub fn new(config: LarsConfig, partition: ProbPartition) -> Result<Self> {
        config.validate()?;
        if partition.k() != config.k || partition.d() != config.d {
            return Err(Error::InvalidInput(format!(
                "partition (k = {}, d = {}) does not match config (k = {}, d = {})",
                partition.k(),
                partition.d(),
                config.k,
                config.d
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = Params::init(&config, &partition, &mut rng);
        Ok(Self {
            config,
            partition,
            params,
        })
    }

    pub fn input(&self, question: &str, trace: &TokenTrace) -> Result<LarsInput> {
        build_input_parts(question, trace, &self.partition, &self.config)
    }

    pub fn input_for(&self, example: &CalibrationExample) -> Result<LarsInput> {
        build_input(example, &self.partition, &self.config)
    }

    fn check_input(&self, input: &LarsInput) -> Result<()> {
        let c = &self.config;
        if input.is_empty() || input.len() > c.max_len || input.mask.len() != input.len() {
            return Err(Error::InvalidInput(format!(
                "input of length {} does not fit max_len {}",
                input.len(),
                c.max_len
            )));
        }
        if !input.mask[0] {
            return Err(Error::InvalidInput("first position must not be padding".into()));
        }
        for slot in &input.slots {
            if slot.token.is_some_and(|t| t as usize >= c.vocab_size) {
                return Err(Error::InvalidInput("token id outside vocabulary".into()));
            }
            if slot.prob.is_some_and(|r| r >= c.k) {
                return Err(Error::InvalidInput("probability partition out of range".into()));
            }
        }
        Ok(())
    }

    fn embed(&self, input: &LarsInput) -> Array2<f64> {
        let p = &self.params;
        let mut x = p.pos_emb.slice(s![..input.len(), ..]).to_owned();
        for (mut row, slot) in x.rows_mut().into_iter().zip(&input.slots) {
            if let Some(t) = slot.token {
                row += &p.token_emb.row(t as usize);
            }
            if let Some(r) = slot.prob {
                row += &p.prob_emb.row(r);
            }
        }
        x
    }

    /// Logit for one input, with the activations needed by [`Self::backward`].
    pub fn forward(&self, input: &LarsInput) -> Result<(f64, ForwardCache)> {
        self.check_input(input)?;
        let c = &self.config;
        let t_len = input.len();
        let dh = c.head_dim();
        let inv_sqrt_dh = 1.0 / (dh as f64).sqrt();

        let mut x = self.embed(input);
        let mut caches = Vec::with_capacity(c.layers);
        for bp in &self.params.blocks {
            let (a, xhat1, rstd1) = layer_norm(&x, &bp.ln1_g, &bp.ln1_b);
            let q = a.dot(&bp.wq) + &bp.bq;
            let k = a.dot(&bp.wk) + &bp.bk;
            let v = a.dot(&bp.wv) + &bp.bv;
            let mut ctx = Array2::<f64>::zeros((t_len, c.d));
            let mut attn = Vec::with_capacity(c.heads);
            for h in 0..c.heads {
                let cols = s![.., h * dh..(h + 1) * dh];
                let mut scores = q.slice(cols).dot(&k.slice(cols).t()) * inv_sqrt_dh;
                for mut row in scores.rows_mut() {
                    let mut max = f64::NEG_INFINITY;
                    for (j, v) in row.iter().enumerate() {
                        if input.mask[j] && *v > max {
                            max = *v;
                        }
                    }
                    let mut sum = 0.0;
                    for (j, v) in row.iter_mut().enumerate() {
                        *v = if input.mask[j] { (*v - max).exp() } else { 0.0 };
                        sum += *v;
                    }
                    row /= sum;
                }
                ctx.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
                attn.push(scores);
            }
            x = x + ctx.dot(&bp.wo) + &bp.bo;

            let (cn, xhat2, rstd2) = layer_norm(&x, &bp.ln2_g, &bp.ln2_b);
            let u = cn.dot(&bp.w1) + &bp.b1;
            let g = u.mapv(gelu);
            x = x + g.dot(&bp.w2) + &bp.b2;
            caches.push(BlockCache {
                xhat1,
                rstd1,
                a,
                q,
                k,
                v,
                attn,
                ctx,
                xhat2,
                rstd2,
                c: cn,
                u,
                g,
            });
        }

        let cls = x.row(0);
        let d = c.d as f64;
        let mean = cls.sum() / d;
        let centered = cls.mapv(|v| v - mean);
        let rstd_f = 1.0 / (centered.dot(&centered) / d + LN_EPS).sqrt();
        let xhat_f = centered * rstd_f;
        let z = &xhat_f * &self.params.lnf_g + &self.params.lnf_b;
        let logit = z.dot(&self.params.head_w) + self.params.head_b[0];
        Ok((
            logit,
            ForwardCache {
                input: input.clone(),
                blocks: caches,
                xhat_f,
                rstd_f,
                z,
            },
        ))
    }

    pub fn logit(&self, input: &LarsInput) -> Result<f64> {
        Ok(self.forward(input)?.0)
    }

    /// Accumulates `dlogit * d(logit)/d(params)` into `grads`. The probability
    /// embeddings only receive gradient when configured trainable.
    pub fn backward(&self, cache: &ForwardCache, dlogit: f64, grads: &mut Params) {
        let c = &self.config;
        let p = &self.params;
        let t_len = cache.input.len();
        let dh = c.head_dim();
        let inv_sqrt_dh = 1.0 / (dh as f64).sqrt();

        grads.head_b[0] += dlogit;
        grads.head_w.scaled_add(dlogit, &cache.z);
        let dz = &p.head_w * dlogit;
        grads.lnf_g += &(&dz * &cache.xhat_f);
        grads.lnf_b += &dz;
        let dxhat = &dz * &p.lnf_g;
        let d = c.d as f64;
        let mean = dxhat.sum() / d;
        let mean_xh = dxhat.dot(&cache.xhat_f) / d;
        let dcls: Array1<f64> = dxhat
            .iter()
            .zip(cache.xhat_f.iter())
            .map(|(g, h)| cache.rstd_f * (g - mean - h * mean_xh))
            .collect();
        let mut dx = Array2::<f64>::zeros((t_len, c.d));
        dx.row_mut(0).assign(&dcls);

        for (bi, (bp, bc)) in p.blocks.iter().zip(&cache.blocks).enumerate().rev() {
            let gb = &mut grads.blocks[bi];

            // feed-forward
            gb.b2 += &dx.sum_axis(Axis(0));
            gb.w2 += &bc.g.t().dot(&dx);
            let mut du = dx.dot(&bp.w2.t());
            du.zip_mut_with(&bc.u, |g, &u| *g *= gelu_grad(u));
            gb.w1 += &bc.c.t().dot(&du);
            gb.b1 += &du.sum_axis(Axis(0));
            let dc = du.dot(&bp.w1.t());
            dx += &layer_norm_backward(&dc, &bc.xhat2, &bc.rstd2, &bp.ln2_g, &mut gb.ln2_g, &mut gb.ln2_b);

            // attention
            gb.bo += &dx.sum_axis(Axis(0));
            gb.wo += &bc.ctx.t().dot(&dx);
            let dctx = dx.dot(&bp.wo.t());
            let mut dq = Array2::<f64>::zeros((t_len, c.d));
            let mut dk = Array2::<f64>::zeros((t_len, c.d));
            let mut dv = Array2::<f64>::zeros((t_len, c.d));
            for (h, probs) in bc.attn.iter().enumerate() {
                let cols = s![.., h * dh..(h + 1) * dh];
                let dctx_h = dctx.slice(cols);
                let dp = dctx_h.dot(&bc.v.slice(cols).t());
                dv.slice_mut(cols).assign(&probs.t().dot(&dctx_h));
                let mut ds = dp;
                for (mut ds_row, p_row) in ds.rows_mut().into_iter().zip(probs.rows()) {
                    let inner: f64 = ds_row.iter().zip(p_row.iter()).map(|(a, b)| a * b).sum();
                    ds_row.zip_mut_with(&p_row, |g, &pr| *g = pr * (*g - inner) * inv_sqrt_dh);
                }
                dq.slice_mut(cols).assign(&ds.dot(&bc.k.slice(cols)));
                dk.slice_mut(cols).assign(&ds.t().dot(&bc.q.slice(cols)));
            }
            gb.wq += &bc.a.t().dot(&dq);
            gb.bq += &dq.sum_axis(Axis(0));
            gb.wk += &bc.a.t().dot(&dk);
            gb.bk += &dk.sum_axis(Axis(0));
            gb.wv += &bc.a.t().dot(&dv);
            gb.bv += &dv.sum_axis(Axis(0));
            let da = dq.dot(&bp.wq.t()) + dk.dot(&bp.wk.t()) + dv.dot(&bp.wv.t());
            dx += &layer_norm_backward(&da, &bc.xhat1, &bc.rstd1, &bp.ln1_g, &mut gb.ln1_g, &mut gb.ln1_b);
        }

        for (t, (slot, row)) in cache.input.slots.iter().zip(dx.rows()).enumerate() {
            add_row(&mut grads.pos_emb, t, row);
            if let Some(tok) = slot.token {
                add_row(&mut grads.token_emb, tok as usize, row);
            }
            if let Some(r) = slot.prob {
                if c.prob_embeddings_trainable {
                    add_row(&mut grads.prob_emb, r, row);
                }
            }
        }
    }

    /// `sigmoid(logit)` as a [`Score`].
    pub fn score(&self, question: &str, trace: &TokenTrace) -> Result<Score> {
        let logit = self.logit(&self.input(question, trace)?)?;
        Ok(Score::from_log(log_sigmoid(logit)))
    }
}

fn add_row(m: &mut Array2<f64>, i: usize, row: ArrayView1<f64>) {
    let mut target = m.row_mut(i);
    target += &row;
}

impl Scorer for LarsModel {
    fn name(&self) -> &str {
        "lars"
    }

    fn score(&self, sample: &QuestionSample, index: usize) -> Result<Score> {
        let g = sample
            .generations()
            .get(index)
            .ok_or_else(|| Error::InvalidInput(format!("sample {} has no generation {index}", sample.id)))?;
        LarsModel::score(self, &sample.question, &g.trace)
    }
}

/// Mean BCE over the batch and its gradient with respect to every parameter.
pub fn loss_and_gradients(model: &LarsModel, batch: &[(LarsInput, u8)]) -> Result<(f64, Params)> {
    batch_loss_and_gradients(model, batch, 0)
}

pub(crate) fn batch_loss_and_gradients(model: &LarsModel, batch: &[(LarsInput, u8)], batch_index: usize) -> Result<(f64, Params)> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grads = model.params.zeros_like();
    let mut total = 0.0;
    for (input, label) in batch {
        let (logit, cache) = model.forward(input)?;
        let (loss, dlogit) = bce_with_logit(logit, *label);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { batch: batch_index });
        }
        total += loss;
        model.backward(&cache, dlogit * scale, &mut grads);
    }
    Ok((total * scale, grads))
}

/// Mean BCE without gradients.
pub fn mean_loss(model: &LarsModel, batch: &[(LarsInput, u8)]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let mut total = 0.0;
    for (input, label) in batch {
        total += bce_with_logit(model.logit(input)?, *label).0;
    }
    Ok(total / batch.len() as f64)
}
