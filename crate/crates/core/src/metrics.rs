//! AUROC and Prediction Rejection Ratio of uncertainty scores against
//! correctness labels (1 = correct, 0 = incorrect).

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::QuestionSample;
use crate::error::{Error, Result};
use crate::ue::UeScore;

fn check_lengths(uncertainties: &[f64], labels: &[u8]) -> Result<()> {
    if uncertainties.len() != labels.len() {
        return Err(Error::LengthMismatch {
            expected: uncertainties.len(),
            actual: labels.len(),
        });
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::InvalidInput(format!("label {l} is not binary")));
    }
    if let Some(u) = uncertainties.iter().find(|u| u.is_nan()) {
        return Err(Error::InvalidInput(format!("uncertainty {u} is NaN")));
    }
    Ok(())
}

/// Probability that a random incorrect item is more uncertain than a random
/// correct one, ties counting one half. Computed from average ranks.
pub fn auroc(uncertainties: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(uncertainties, labels)?;
    let n_incorrect = labels.iter().filter(|&&l| l == 0).count();
    let n_correct = labels.len() - n_incorrect;
    if n_incorrect == 0 || n_correct == 0 {
        return Err(Error::MetricUndefined("AUROC needs both correct and incorrect items".into()));
    }

    let mut order: Vec<usize> = (0..uncertainties.len()).collect();
    order.sort_by(|&a, &b| uncertainties[a].total_cmp(&uncertainties[b]));
    // ranks are 1-based; tied runs share their mean rank
    let mut rank_sum_incorrect = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && uncertainties[order[end]] == uncertainties[order[start]] {
            end += 1;
        }
        let mean_rank = (start + 1 + end) as f64 / 2.0;
        let incorrect_in_run = order[start..end].iter().filter(|&&i| labels[i] == 0).count();
        rank_sum_incorrect += mean_rank * incorrect_in_run as f64;
        start = end;
    }
    let n0 = n_incorrect as f64;
    let u_stat = rank_sum_incorrect - n0 * (n0 + 1.0) / 2.0;
    Ok(u_stat / (n0 * n_correct as f64))
}

/// Error rate of the retained items after rejecting the `j` most uncertain,
/// for `j = 0..=n`. Ties keep input order. Nothing retained counts as 0.
pub fn rejection_curve(uncertainties: &[f64], labels: &[u8]) -> Result<Vec<f64>> {
    check_lengths(uncertainties, labels)?;
    let n = labels.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| uncertainties[b].total_cmp(&uncertainties[a]));
    let mut remaining_errors = labels.iter().filter(|&&l| l == 0).count();
    let mut curve = Vec::with_capacity(n + 1);
    for (j, &i) in order.iter().enumerate() {
        curve.push(remaining_errors as f64 / (n - j) as f64);
        if labels[i] == 0 {
            remaining_errors -= 1;
        }
    }
    curve.push(0.0);
    Ok(curve)
}

fn trapezoid(curve: &[f64]) -> f64 {
    let dx = 1.0 / (curve.len() - 1) as f64;
    curve.windows(2).map(|w| 0.5 * (w[0] + w[1]) * dx).sum()
}

/// Area between the random baseline and the method's rejection curve,
/// normalized by the same area for the oracle. Negative when worse than
/// random; not clamped.
pub fn prr(uncertainties: &[f64], labels: &[u8]) -> Result<f64> {
    let method = rejection_curve(uncertainties, labels)?;
    let n = labels.len();
    let errors = labels.iter().filter(|&&l| l == 0).count();
    if errors == 0 {
        return Err(Error::MetricUndefined("PRR needs at least one incorrect item".into()));
    }
    let base = errors as f64 / n as f64;
    let mut random = vec![base; n + 1];
    random[n] = 0.0;
    let oracle: Vec<f64> = (0..=n)
        .map(|j| {
            if j == n {
                0.0
            } else {
                errors.saturating_sub(j) as f64 / (n - j) as f64
            }
        })
        .collect();
    let random_area = trapezoid(&random);
    let oracle_gain = random_area - trapezoid(&oracle);
    if oracle_gain <= 0.0 {
        return Err(Error::MetricUndefined("oracle rejection curve has zero area".into()));
    }
    Ok((random_area - trapezoid(&method)) / oracle_gain)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub auroc: Option<f64>,
    pub prr: Option<f64>,
    pub n: usize,
    /// Number of correct items.
    pub positives: usize,
}

/// Scores every method against the correctness of each sample's most-likely
/// generation. Metrics that are undefined on the data are left empty.
pub fn evaluate(method: &str, samples: &[QuestionSample], results: &[UeScore]) -> Result<EvalReport> {
    if samples.len() != results.len() {
        return Err(Error::LengthMismatch {
            expected: samples.len(),
            actual: results.len(),
        });
    }
    let labels = samples
        .iter()
        .map(|s| {
            let ml = s.most_likely().ok_or_else(|| Error::NoMostLikely(s.id.clone()))?;
            ml.label.ok_or_else(|| Error::MissingLabel {
                sample: s.id.clone(),
                index: s.most_likely_index().unwrap_or_default(),
            })
        })
        .collect::<Result<Vec<u8>>>()?;
    let uncertainties: Vec<f64> = results.iter().map(|r| r.value).collect();
    Ok(EvalReport {
        method: method.to_string(),
        auroc: auroc(&uncertainties, &labels).ok(),
        prr: prr(&uncertainties, &labels).ok(),
        n: labels.len(),
        positives: labels.iter().filter(|&&l| l == 1).count(),
    })
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn write_reports_csv(w: impl Write, reports: &[EvalReport]) -> std::io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["method", "auroc", "prr", "n", "positives"])?;
    for r in reports {
        out.write_record([
            r.method.clone(),
            fmt_metric(r.auroc),
            fmt_metric(r.prr),
            r.n.to_string(),
            r.positives.to_string(),
        ])?;
    }
    out.flush()
}

pub fn write_reports_json(w: impl Write, reports: &[EvalReport]) -> std::io::Result<()> {
    serde_json::to_writer_pretty(w, reports).map_err(std::io::Error::other)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{GenerationRecord, TokenTrace};
    use crate::ue::UeMethod;
    use proptest::prelude::*;

    fn brute_auroc(u: &[f64], labels: &[u8]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for i in 0..u.len() {
            for j in 0..u.len() {
                if labels[i] == 0 && labels[j] == 1 {
                    pairs += 1.0;
                    if u[i] > u[j] {
                        wins += 1.0;
                    } else if u[i] == u[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.9, 0.8, 0.1, 0.2], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.3; 5], &[0, 1, 0, 1, 1]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.9, 0.1, 0.5], &[0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.9, 0.1, 0.5], &[0, 0, 1]).unwrap(), 0.5);
        assert!(matches!(auroc(&[0.1, 0.2], &[1, 1]), Err(Error::MetricUndefined(_))));
        assert!(auroc(&[0.1], &[1, 0]).is_err());
    }

    #[test]
    fn prr_examples() {
        let labels = [1, 1, 0, 0];
        assert_eq!(prr(&[0.1, 0.2, 0.9, 0.8], &labels).unwrap(), 1.0);
        let errors: Vec<f64> = labels.iter().map(|&l| 1.0 - l as f64).collect();
        assert_eq!(prr(&errors, &labels).unwrap(), 1.0);
        assert!(prr(&[0.9, 0.8, 0.1, 0.2], &labels).unwrap() < 0.0);
        assert!(matches!(prr(&[0.1, 0.2], &[1, 1]), Err(Error::MetricUndefined(_))));
    }

    #[test]
    fn prr_all_errors_is_undefined() {
        // every item wrong: the oracle cannot beat random
        assert!(prr(&[0.1, 0.2], &[0, 0]).is_err());
    }

    #[test]
    fn rejection_curve_by_hand() {
        let c = rejection_curve(&[0.1, 0.9, 0.5], &[1, 0, 1]).unwrap();
        assert_eq!(c, vec![1.0 / 3.0, 0.0, 0.0, 0.0]);
    }

    fn sample(id: &str, label: u8) -> QuestionSample {
        let t = TokenTrace::new(vec!["a".into()], vec![-0.1]).unwrap();
        QuestionSample::new(id, "q", "m", vec![GenerationRecord::new(t, "a", true, Some(label)).unwrap()]).unwrap()
    }

    fn ue(v: f64) -> UeScore {
        UeScore {
            value: v,
            method: UeMethod::Confidence,
        }
    }

    #[test]
    fn evaluate_examples() {
        let all_correct = [sample("a", 1), sample("b", 1)];
        let r = evaluate("m", &all_correct, &[ue(0.1), ue(0.2)]).unwrap();
        assert_eq!((r.auroc, r.prr, r.n, r.positives), (None, None, 2, 2));

        let two = [sample("a", 1), sample("b", 0)];
        let r = evaluate("m", &two, &[ue(0.1), ue(0.9)]).unwrap();
        assert_eq!((r.auroc, r.prr), (Some(1.0), Some(1.0)));

        let swapped = [sample("b", 0), sample("a", 1)];
        let r2 = evaluate("m", &swapped, &[ue(0.9), ue(0.1)]).unwrap();
        assert_eq!(r, r2);
    }

    #[test]
    fn report_csv_layout() {
        let mut buf = Vec::new();
        let reports = [EvalReport {
            method: "confidence-lns".into(),
            auroc: Some(0.75),
            prr: None,
            n: 4,
            positives: 2,
        }];
        write_reports_csv(&mut buf, &reports).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "method,auroc,prr,n,positives\nconfidence-lns,0.750000,,4,2\n"
        );
    }

    fn labeled() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
        (2usize..60).prop_flat_map(|n| {
            (
                prop::collection::vec((0u8..6).prop_map(|x| x as f64 / 5.0), n),
                prop::collection::vec(0u8..=1, n),
            )
        })
    }

    proptest! {
        #[test]
        fn auroc_matches_pair_counting((u, labels) in labeled()) {
            prop_assume!(labels.contains(&0) && labels.contains(&1));
            prop_assert_eq!(auroc(&u, &labels).unwrap(), brute_auroc(&u, &labels));
        }

        #[test]
        fn metrics_invariant_under_monotone_transform((u, labels) in labeled()) {
            prop_assume!(labels.contains(&0) && labels.contains(&1));
            let t: Vec<f64> = u.iter().map(|x| (3.0 * x).exp() - 7.0).collect();
            prop_assert_eq!(auroc(&u, &labels).unwrap(), auroc(&t, &labels).unwrap());
            prop_assert_eq!(prr(&u, &labels).unwrap(), prr(&t, &labels).unwrap());
        }
    }
}
