//! Small numerical kernels: Rouge-L similarity, empirical quantiles and a
//! cyclic Jacobi eigensolver for tiny symmetric matrices.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Longest common subsequence length of two token sequences.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    // single rolling row over b
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// Sentence-level Rouge-L F-measure over whitespace tokens, no stemming.
///
/// Recall is taken against `a`, precision against `b`; the F-measure is
/// symmetric. Two empty strings are identical (1.0).
pub fn rouge_l_f(a: &str, b: &str) -> f64 {
    let ta: Vec<&str> = a.split_whitespace().collect();
    let tb: Vec<&str> = b.split_whitespace().collect();
    if ta.is_empty() && tb.is_empty() {
        return 1.0;
    }
    let l = lcs_len(&ta, &tb);
    if l == 0 {
        return 0.0;
    }
    let precision = l as f64 / tb.len() as f64;
    let recall = l as f64 / ta.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Linear-interpolation quantile of an unsorted sample (`h = q (n - 1)`).
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, q)
}

/// Same as [`quantile`] for an already ascending sample.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::InvalidInput("quantile of empty sample".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidInput(format!("quantile level {q} outside [0, 1]")));
    }
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

/// Eigen-decomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct EigenResult {
    /// Ascending.
    pub eigenvalues: Array1<f64>,
    /// Column `i` pairs with `eigenvalues[i]`.
    pub eigenvectors: Array2<f64>,
}

pub const MAX_JACOBI_SWEEPS: usize = 100;
pub const MAX_EIGEN_DIM: usize = 64;

fn off_diagonal_norm(a: &Array2<f64>) -> f64 {
    let n = a.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[[i, j]] * a[[i, j]];
            }
        }
    }
    s.sqrt()
}

/// Cyclic Jacobi rotations until the off-diagonal Frobenius norm falls below
/// `1e-12 * ||A||_F`.
///
/// Eigenpairs are returned in ascending order; each eigenvector is signed so
/// that its largest-magnitude component (first one on ties) is positive.
pub fn symmetric_eigen(matrix: &Array2<f64>) -> Result<EigenResult> {
    let n = matrix.nrows();
    if n != matrix.ncols() {
        return Err(Error::InvalidInput(format!(
            "matrix is {}x{}, not square",
            n,
            matrix.ncols()
        )));
    }
    if n > MAX_EIGEN_DIM {
        return Err(Error::InvalidInput(format!(
            "matrix dimension {n} exceeds {MAX_EIGEN_DIM}"
        )));
    }
    let norm = matrix.iter().map(|x| x * x).sum::<f64>().sqrt();
    for i in 0..n {
        for j in (i + 1)..n {
            if (matrix[[i, j]] - matrix[[j, i]]).abs() > 1e-9 * norm.max(1.0) {
                return Err(Error::InvalidInput(format!(
                    "matrix not symmetric at ({i}, {j})"
                )));
            }
        }
    }

    let mut a = matrix.clone();
    let mut v = Array2::<f64>::eye(n);
    let tol = 1e-12 * norm;
    let mut sweeps = 0;
    while off_diagonal_norm(&a) > tol {
        if sweeps == MAX_JACOBI_SWEEPS {
            return Err(Error::NoConvergence {
                sweeps,
                off_norm: off_diagonal_norm(&a),
            });
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
                // signum(+0.0) == 1, so theta == 0 yields a 45 degree rotation
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
        sweeps += 1;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[[i, i]].total_cmp(&a[[j, j]]));
    let eigenvalues = Array1::from_iter(order.iter().map(|&i| a[[i, i]]));
    let mut eigenvectors = Array2::<f64>::zeros((n, n));
    for (col, &src) in order.iter().enumerate() {
        let mut pivot = 0;
        for k in 0..n {
            if v[[k, src]].abs() > v[[pivot, src]].abs() {
                pivot = k;
            }
        }
        let sign = if v[[pivot, src]] < 0.0 { -1.0 } else { 1.0 };
        for k in 0..n {
            eigenvectors[[k, col]] = sign * v[[k, src]];
        }
    }
    Ok(EigenResult {
        eigenvalues,
        eigenvectors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn rouge_fixtures() {
        assert_eq!(rouge_l_f("a b c", "a b c"), 1.0);
        assert_eq!(rouge_l_f("a b", "c d"), 0.0);
        assert_eq!(rouge_l_f("a b c", "a c"), 0.8);
        assert_eq!(rouge_l_f("", ""), 1.0);
        assert_eq!(rouge_l_f("a", ""), 0.0);
    }

    #[test]
    fn lcs_brute_force() {
        assert_eq!(lcs_len(&[1, 2, 3, 4], &[2, 4, 3]), 2);
        assert_eq!(lcs_len(&["x"; 3], &["x"; 5]), 3);
    }

    #[test]
    fn quantile_fixtures() {
        assert_eq!(quantile(&[4.0, 1.0, 3.0, 2.0], 0.5).unwrap(), 2.5);
        assert_eq!(quantile(&[4.0, 1.0, 3.0], 0.0).unwrap(), 1.0);
        assert_eq!(quantile(&[4.0, 1.0, 3.0], 1.0).unwrap(), 4.0);
        assert!(quantile(&[], 0.5).is_err());
    }

    #[test]
    fn eigen_fixtures() {
        let r = symmetric_eigen(&Array2::eye(3)).unwrap();
        assert!(r.eigenvalues.iter().all(|&l| (l - 1.0).abs() < 1e-14));

        let r = symmetric_eigen(&array![[2.0, 1.0], [1.0, 2.0]]).unwrap();
        assert!((r.eigenvalues[0] - 1.0).abs() < 1e-10);
        assert!((r.eigenvalues[1] - 3.0).abs() < 1e-10);

        let r = symmetric_eigen(&array![[3.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 2.0]]).unwrap();
        assert_eq!(r.eigenvalues.to_vec(), vec![1.0, 2.0, 3.0]);
        assert_eq!(r.eigenvectors.column(0).to_vec(), vec![0.0, 1.0, 0.0]);
        assert_eq!(r.eigenvectors.column(2).to_vec(), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn eigen_rejects_asymmetric() {
        assert!(symmetric_eigen(&array![[1.0, 2.0], [0.0, 1.0]]).is_err());
    }

    proptest! {
        #[test]
        fn rouge_symmetric_and_reflexive(a in prop::collection::vec("[a-d]", 0..8), b in prop::collection::vec("[a-d]", 0..8)) {
            let (a, b) = (a.join(" "), b.join(" "));
            prop_assert_eq!(rouge_l_f(&a, &b), rouge_l_f(&b, &a));
            if !a.is_empty() {
                prop_assert_eq!(rouge_l_f(&a, &a), 1.0);
            }
        }

        #[test]
        fn quantile_monotone_and_bracketed(values in prop::collection::vec(-100.0f64..100.0, 1..30), q1 in 0.0f64..=1.0, q2 in 0.0f64..=1.0) {
            let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
            let a = quantile(&values, lo).unwrap();
            let b = quantile(&values, hi).unwrap();
            let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(a <= b);
            prop_assert!(min <= a && b <= max);
        }
    }
}
