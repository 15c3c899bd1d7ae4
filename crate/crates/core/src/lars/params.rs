//! Parameter tensors of the encoder. Gradients use the same struct.
//!
//! Linear layers compute `y = x W + b` with `W` stored `in x out`.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::LarsConfig;
use super::partition::ProbPartition;

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub ln1_g: Array1<f64>,
    pub ln1_b: Array1<f64>,
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub wk: Array2<f64>,
    pub bk: Array1<f64>,
    pub wv: Array2<f64>,
    pub bv: Array1<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
    pub ln2_g: Array1<f64>,
    pub ln2_b: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub token_emb: Array2<f64>,
    pub pos_emb: Array2<f64>,
    pub prob_emb: Array2<f64>,
    pub blocks: Vec<BlockParams>,
    pub lnf_g: Array1<f64>,
    pub lnf_b: Array1<f64>,
    pub head_w: Array1<f64>,
    pub head_b: Array1<f64>,
}

/// Name of the few-hot probability embedding tensor.
pub const PROB_EMB: &str = "prob_emb";

macro_rules! block_fields {
    ($mac:ident, $b:expr, $i:expr, $out:expr) => {
        $mac!($b, $i, $out, ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2)
    };
}

macro_rules! push_ref {
    ($b:expr, $i:expr, $out:expr, $($f:ident),*) => {
        $( $out.push((format!("blocks.{}.{}", $i, stringify!($f)), $b.$f.as_slice().expect("standard layout"))); )*
    };
}

macro_rules! push_mut {
    ($b:expr, $i:expr, $out:expr, $($f:ident),*) => {
        $( $out.push((format!("blocks.{}.{}", $i, stringify!($f)), $b.$f.as_slice_mut().expect("standard layout"))); )*
    };
}

impl BlockParams {
    fn zeros(d: usize) -> Self {
        let ff = 4 * d;
        Self {
            ln1_g: Array1::zeros(d),
            ln1_b: Array1::zeros(d),
            wq: Array2::zeros((d, d)),
            bq: Array1::zeros(d),
            wk: Array2::zeros((d, d)),
            bk: Array1::zeros(d),
            wv: Array2::zeros((d, d)),
            bv: Array1::zeros(d),
            wo: Array2::zeros((d, d)),
            bo: Array1::zeros(d),
            ln2_g: Array1::zeros(d),
            ln2_b: Array1::zeros(d),
            w1: Array2::zeros((d, ff)),
            b1: Array1::zeros(ff),
            w2: Array2::zeros((ff, d)),
            b2: Array1::zeros(d),
        }
    }
}

fn normal_matrix<R: Rng>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Array2<f64> {
    let dist = Normal::new(0.0, std).expect("positive std");
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

impl Params {
    /// All-zero tensors shaped for `config`.
    pub fn zeros(config: &LarsConfig) -> Self {
        let d = config.d;
        Self {
            token_emb: Array2::zeros((config.vocab_size, d)),
            pos_emb: Array2::zeros((config.max_len, d)),
            prob_emb: Array2::zeros((config.k, d)),
            blocks: (0..config.layers).map(|_| BlockParams::zeros(d)).collect(),
            lnf_g: Array1::zeros(d),
            lnf_b: Array1::zeros(d),
            head_w: Array1::zeros(d),
            head_b: Array1::zeros(1),
        }
    }

    /// Embeddings `N(0, 1/d)`, linear weights `N(0, 1/fan_in)`, zero biases,
    /// unit layer-norm gains, and few-hot probability codes.
    pub fn init<R: Rng>(config: &LarsConfig, partition: &ProbPartition, rng: &mut R) -> Self {
        let d = config.d;
        let emb_std = 1.0 / (d as f64).sqrt();
        let ff_std = 1.0 / ((4 * d) as f64).sqrt();
        let mut p = Self::zeros(config);
        p.token_emb = normal_matrix(config.vocab_size, d, emb_std, rng);
        p.pos_emb = normal_matrix(config.max_len, d, emb_std, rng);
        for r in 0..config.k {
            p.prob_emb.row_mut(r).assign(&partition.code(r));
        }
        for b in p.blocks.iter_mut() {
            b.ln1_g.fill(1.0);
            b.ln2_g.fill(1.0);
            b.wq = normal_matrix(d, d, emb_std, rng);
            b.wk = normal_matrix(d, d, emb_std, rng);
            b.wv = normal_matrix(d, d, emb_std, rng);
            b.wo = normal_matrix(d, d, emb_std, rng);
            b.w1 = normal_matrix(d, 4 * d, emb_std, rng);
            b.w2 = normal_matrix(4 * d, d, ff_std, rng);
        }
        p.lnf_g.fill(1.0);
        p.head_w = normal_matrix(1, d, emb_std, rng).into_shape_with_order(d).expect("1 x d");
        p
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    /// Every tensor with a stable dotted name, in serialization order.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = vec![
            ("token_emb".into(), self.token_emb.as_slice().expect("standard layout")),
            ("pos_emb".into(), self.pos_emb.as_slice().expect("standard layout")),
            (PROB_EMB.into(), self.prob_emb.as_slice().expect("standard layout")),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            block_fields!(push_ref, b, i, out);
        }
        out.push(("lnf_g".into(), self.lnf_g.as_slice().expect("standard layout")));
        out.push(("lnf_b".into(), self.lnf_b.as_slice().expect("standard layout")));
        out.push(("head_w".into(), self.head_w.as_slice().expect("standard layout")));
        out.push(("head_b".into(), self.head_b.as_slice().expect("standard layout")));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = vec![
            ("token_emb".into(), self.token_emb.as_slice_mut().expect("standard layout")),
            ("pos_emb".into(), self.pos_emb.as_slice_mut().expect("standard layout")),
            (PROB_EMB.into(), self.prob_emb.as_slice_mut().expect("standard layout")),
        ];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            block_fields!(push_mut, b, i, out);
        }
        out.push(("lnf_g".into(), self.lnf_g.as_slice_mut().expect("standard layout")));
        out.push(("lnf_b".into(), self.lnf_b.as_slice_mut().expect("standard layout")));
        out.push(("head_w".into(), self.head_w.as_slice_mut().expect("standard layout")));
        out.push(("head_b".into(), self.head_b.as_slice_mut().expect("standard layout")));
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> LarsConfig {
        LarsConfig {
            d: 8,
            heads: 2,
            k: 4,
            vocab_size: 16,
            max_len: 10,
            layers: 2,
            ..LarsConfig::default()
        }
    }

    #[test]
    fn tensor_listing_is_complete_and_named() {
        let c = cfg();
        let p = Params::zeros(&c);
        let names: Vec<String> = p.tensors().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names.len(), 3 + 2 * 16 + 4);
        assert_eq!(names[3], "blocks.0.ln1_g");
        assert_eq!(names.last().unwrap(), "head_b");
        let d = 8;
        let per_block = 4 * (d * d + d) + 4 * d + (d * 4 * d + 4 * d) + (4 * d * d + d);
        assert_eq!(p.num_parameters(), 16 * d + 10 * d + 4 * d + 2 * per_block + 2 * d + d + 1);
    }

    #[test]
    fn init_is_seeded_and_few_hot() {
        let c = cfg();
        let part = ProbPartition::new(vec![0.25, 0.5, 0.75], 8).unwrap();
        let a = Params::init(&c, &part, &mut ChaCha8Rng::seed_from_u64(3));
        let b = Params::init(&c, &part, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        let gram = a.prob_emb.dot(&a.prob_emb.t());
        for ((i, j), &x) in gram.indexed_iter() {
            if i == j {
                assert!((x - 1.0).abs() < 1e-15);
            } else {
                assert_eq!(x, 0.0);
            }
        }
        assert!(a.all_finite());
    }
}
