//! Quantile partitions of `[0, 1]` and the few-hot probability encoding.
//!
//! Partition `r` (1-based) covers `(q_{r-1}, q_r]` with `q_0 = 0`, `q_k = 1`,
//! and the first partition also contains 0. A probability in partition `r`
//! is encoded as a `d`-vector whose `r`-th block of `d / k` entries is set
//! and everything else is zero, divided by `sqrt(d / k)` so that every code
//! has unit L2 norm. Codes of distinct partitions are orthogonal.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::data::CalibrationExample;
use crate::error::{Error, Result};
use crate::numerics::quantile_sorted;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbPartition {
    boundaries: Vec<f64>,
    k: usize,
    d: usize,
    scale: f64,
}

impl ProbPartition {
    /// Builds a partition from `k - 1` strictly ascending interior boundaries.
    pub fn new(boundaries: Vec<f64>, d: usize) -> Result<Self> {
        let k = boundaries.len() + 1;
        if k < 2 {
            return Err(Error::InvalidInput("need at least 2 partitions".into()));
        }
        if d == 0 || d % k != 0 {
            return Err(Error::InvalidInput(format!("d = {d} is not a positive multiple of k = {k}")));
        }
        if boundaries.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::InvalidInput("boundaries must lie in (0, 1)".into()));
        }
        if boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput("boundaries must be strictly ascending".into()));
        }
        Ok(Self {
            boundaries,
            k,
            d,
            scale: ((d / k) as f64).sqrt(),
        })
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// 0-based partition index of `p`.
    pub fn index_of(&self, p: f64) -> usize {
        self.boundaries.partition_point(|&b| b < p)
    }

    /// Few-hot code of partition `r` (0-based).
    pub fn code(&self, r: usize) -> Array1<f64> {
        let block = self.d / self.k;
        let mut v = Array1::zeros(self.d);
        for x in v.iter_mut().skip(r * block).take(block) {
            *x = 1.0 / self.scale;
        }
        v
    }
}

/// Boundaries at the `1/k, ..., (k-1)/k` empirical quantiles of every token
/// probability in the calibration set.
pub fn fit_partition(calibration: &[CalibrationExample], k: usize, d: usize) -> Result<ProbPartition> {
    if k < 2 {
        return Err(Error::InvalidInput(format!("k = {k} must be at least 2")));
    }
    if d == 0 || d % k != 0 {
        return Err(Error::InvalidInput(format!("d = {d} is not a positive multiple of k = {k}")));
    }
    let mut probs: Vec<f64> = calibration
        .iter()
        .flat_map(|ex| ex.answer_trace.probs())
        .collect();
    probs.sort_by(f64::total_cmp);
    let mut distinct = probs.clone();
    distinct.dedup();
    if distinct.len() < k {
        return Err(Error::InvalidInput(format!(
            "calibration set has {} distinct probabilities, need at least k = {k}",
            distinct.len()
        )));
    }
    let mut boundaries = (1..k)
        .map(|r| quantile_sorted(&probs, r as f64 / k as f64))
        .collect::<Result<Vec<_>>>()?;

    // force strictly ascending values inside the open interval (0, 1)
    let mut floor = 0.0f64;
    for b in boundaries.iter_mut() {
        if *b <= floor {
            *b = floor.next_up();
        }
        floor = *b;
    }
    let mut ceil = 1.0f64;
    for b in boundaries.iter_mut().rev() {
        if *b >= ceil {
            *b = ceil.next_down();
        }
        ceil = *b;
    }
    ProbPartition::new(boundaries, d)
}

/// Few-hot code of the partition containing `p`.
pub fn encode_probability(p: f64, part: &ProbPartition) -> Array1<f64> {
    part.code(part.index_of(p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TokenTrace;

    fn calib(probs: &[f64]) -> Vec<CalibrationExample> {
        vec![CalibrationExample {
            question: "q".into(),
            answer_trace: TokenTrace::new(
                probs.iter().map(|_| "t".to_string()).collect(),
                probs.iter().map(|p| p.ln()).collect(),
            )
            .unwrap(),
            label: 1,
        }]
    }

    #[test]
    fn median_boundary_on_grid() {
        let grid: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        let part = fit_partition(&calib(&grid), 2, 8).unwrap();
        assert_eq!(part.boundaries().len(), 1);
        assert!((part.boundaries()[0] - 0.55).abs() < 1e-12);
    }

    #[test]
    fn scale_is_unit_norm_divisor() {
        let part = ProbPartition::new(vec![0.2, 0.5, 0.8], 8).unwrap();
        assert!((part.scale() - 2f64.sqrt()).abs() < 1e-15);
        for r in 0..4 {
            let c = part.code(r);
            assert!((c.dot(&c) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn degenerate_calibration_is_rejected() {
        assert!(fit_partition(&calib(&[0.5; 20]), 4, 8).is_err());
        assert!(fit_partition(&calib(&[0.1, 0.2, 0.3]), 4, 8).is_err());
        assert!(fit_partition(&calib(&[0.1, 0.2, 0.3, 0.4]), 4, 6).is_err());
    }

    #[test]
    fn duplicate_quantiles_are_separated() {
        // heavy mass at 1.0 pushes every upper quantile to 1.0
        let mut probs = vec![1.0; 50];
        probs.extend([0.1, 0.2, 0.3]);
        let part = fit_partition(&calib(&probs), 4, 8).unwrap();
        let b = part.boundaries();
        assert!(b.windows(2).all(|w| w[0] < w[1]));
        assert!(b.iter().all(|&x| x > 0.0 && x < 1.0));
        assert_eq!(part.index_of(1.0), 3);
    }

    #[test]
    fn encoding_examples() {
        let part = ProbPartition::new(vec![0.25, 0.5, 0.75], 8).unwrap();
        let s = 1.0 / 2f64.sqrt();
        assert_eq!(encode_probability(0.3, &part).to_vec(), vec![0.0, 0.0, s, s, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(part.index_of(0.0), 0);
        assert_eq!(part.index_of(0.25), 0);
        assert_eq!(part.index_of(0.2500001), 1);
        assert_eq!(part.index_of(1.0), 3);
        for a in 0..4 {
            for b in 0..4 {
                let dot = part.code(a).dot(&part.code(b));
                assert_eq!(dot == 0.0, a != b);
            }
        }
    }
}
