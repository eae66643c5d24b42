//! ROC / AUC / balanced accuracy.
//!
//! Malicious is the positive class and higher scores are more anomalous: a
//! sample is predicted malicious when `score >= threshold`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Label;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("degenerate ROC: need at least one benign and one malicious sample")]
    Degenerate,
    #[error("non-finite score for sample {0}")]
    NonFinite(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub sample_id: String,
    pub score: f64,
    pub label: Label,
}

impl ScoredSample {
    pub fn new(sample_id: impl Into<String>, score: f64, label: Label) -> Self {
        ScoredSample {
            sample_id: sample_id.into(),
            score,
            label,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn at(samples: &[ScoredSample], threshold: f64) -> Self {
        let mut c = ConfusionCounts::default();
        for s in samples {
            match (s.label.is_malicious(), s.score >= threshold) {
                (true, true) => c.tp += 1,
                (true, false) => c.fn_ += 1,
                (false, true) => c.fp += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn balanced_accuracy(&self) -> Result<f64, MetricsError> {
        let pos = self.tp + self.fn_;
        let neg = self.tn + self.fp;
        if pos == 0 || neg == 0 {
            return Err(MetricsError::Degenerate);
        }
        Ok(0.5 * (self.tp as f64 / pos as f64 + self.tn as f64 / neg as f64))
    }
}

/// Points from (0, 0) to (1, 1); `thresholds[i]` produced `points[i]`
/// (the first is `+inf`).
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<(f64, f64)>,
    pub thresholds: Vec<f64>,
}

fn class_counts(samples: &[ScoredSample]) -> Result<(u64, u64), MetricsError> {
    if let Some(s) = samples.iter().find(|s| !s.score.is_finite()) {
        return Err(MetricsError::NonFinite(s.sample_id.clone()));
    }
    let pos = samples.iter().filter(|s| s.label.is_malicious()).count() as u64;
    let neg = samples.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricsError::Degenerate);
    }
    Ok((pos, neg))
}

/// Descending score order with per-distinct-score (threshold, tp, fp) totals.
fn sweep(samples: &[ScoredSample]) -> Vec<(f64, u64, u64)> {
    let mut sorted: Vec<&ScoredSample> = samples.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut out: Vec<(f64, u64, u64)> = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    for (i, s) in sorted.iter().enumerate() {
        if s.label.is_malicious() {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_group = sorted.get(i + 1).map_or(true, |n| n.score != s.score);
        if last_of_group {
            out.push((s.score, tp, fp));
        }
    }
    out
}

pub fn roc_curve(samples: &[ScoredSample]) -> Result<RocCurve, MetricsError> {
    let (pos, neg) = class_counts(samples)?;
    let mut points = vec![(0.0, 0.0)];
    let mut thresholds = vec![f64::INFINITY];
    for (t, tp, fp) in sweep(samples) {
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
        thresholds.push(t);
    }
    Ok(RocCurve { points, thresholds })
}

/// Trapezoidal area under the curve.
pub fn auc(curve: &RocCurve) -> f64 {
    curve
        .points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) * 0.5)
        .sum()
}

/// Shorthand for `auc(&roc_curve(samples)?)`.
pub fn roc_auc(samples: &[ScoredSample]) -> Result<f64, MetricsError> {
    Ok(auc(&roc_curve(samples)?))
}

pub fn balanced_accuracy(samples: &[ScoredSample], threshold: f64) -> Result<f64, MetricsError> {
    class_counts(samples)?;
    ConfusionCounts::at(samples, threshold).balanced_accuracy()
}

/// Maximises balanced accuracy over the distinct score values used as
/// thresholds; ties go to the lowest threshold.
pub fn best_balanced_accuracy(samples: &[ScoredSample]) -> Result<(f64, f64), MetricsError> {
    let (pos, neg) = class_counts(samples)?;
    let mut best = (f64::INFINITY, f64::NEG_INFINITY);
    for (t, tp, fp) in sweep(samples) {
        let tn = neg - fp;
        let v = 0.5 * (tp as f64 / pos as f64 + tn as f64 / neg as f64);
        // descending sweep: `>=` lets a lower threshold win ties
        if v >= best.1 {
            best = (t, v);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn s(score: f64, mal: bool) -> ScoredSample {
        ScoredSample::new(
            "x",
            score,
            if mal { Label::Malicious } else { Label::Benign },
        )
    }

    /// P(score_mal > score_ben) + ½ P(tie), over all pairs.
    fn mann_whitney(samples: &[ScoredSample]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for p in samples.iter().filter(|x| x.label.is_malicious()) {
            for n in samples.iter().filter(|x| !x.label.is_malicious()) {
                den += 1.0;
                if p.score > n.score {
                    num += 1.0;
                } else if p.score == n.score {
                    num += 0.5;
                }
            }
        }
        num / den
    }

    /// Every candidate threshold, evaluated from scratch.
    fn exhaustive_roc(samples: &[ScoredSample]) -> Vec<(f64, f64)> {
        let pos = samples.iter().filter(|x| x.label.is_malicious()).count() as f64;
        let neg = samples.len() as f64 - pos;
        let mut ts: Vec<f64> = samples.iter().map(|x| x.score).collect();
        ts.push(f64::INFINITY);
        ts.sort_by(|a, b| b.total_cmp(a));
        ts.dedup();
        ts.iter()
            .map(|&t| {
                let c = ConfusionCounts::at(samples, t);
                (c.fp as f64 / neg, c.tp as f64 / pos)
            })
            .collect()
    }

    #[test]
    fn perfect_and_tied() {
        let perfect = [s(0.9, true), s(0.8, true), s(0.2, false), s(0.1, false)];
        let c = roc_curve(&perfect).unwrap();
        assert!(c.points.contains(&(0.0, 1.0)));
        assert_eq!(auc(&c), 1.0);

        let tied = [s(0.5, true), s(0.5, false), s(0.5, false)];
        let c = roc_curve(&tied).unwrap();
        assert_eq!(c.points, vec![(0.0, 0.0), (1.0, 1.0)]);
        assert_eq!(auc(&c), 0.5);
    }

    #[test]
    fn four_sample_case() {
        let v = [s(0.9, true), s(0.4, true), s(0.6, false), s(0.1, false)];
        let c = roc_curve(&v).unwrap();
        assert_eq!(c.points, exhaustive_roc(&v));
        assert_eq!(
            c.points,
            vec![(0.0, 0.0), (0.0, 0.5), (0.5, 0.5), (0.5, 1.0), (1.0, 1.0)]
        );
        assert_eq!(auc(&c), 0.75);

        // thresholds 0.9, 0.6, 0.4, 0.1 give balanced accuracies .75, .5, .75, .5
        let (t, b) = best_balanced_accuracy(&v).unwrap();
        assert_eq!((t, b), (0.4, 0.75));
    }

    #[test]
    fn degenerate_inputs() {
        assert_eq!(roc_curve(&[s(1.0, true)]), Err(MetricsError::Degenerate));
        assert_eq!(
            balanced_accuracy(&[s(1.0, false), s(2.0, false)], 1.0),
            Err(MetricsError::Degenerate)
        );
        assert!(matches!(
            roc_curve(&[s(f64::NAN, true), s(0.0, false)]),
            Err(MetricsError::NonFinite(_))
        ));
    }

    #[test]
    fn balanced_accuracy_examples() {
        let c = ConfusionCounts {
            tp: 50,
            fn_: 50,
            tn: 80,
            fp: 20,
        };
        assert_eq!(c.balanced_accuracy().unwrap(), 0.65);
        let v = [s(0.9, true), s(0.8, true), s(0.2, false)];
        assert_eq!(balanced_accuracy(&v, 0.5).unwrap(), 1.0);
        assert_eq!(balanced_accuracy(&v, 10.0).unwrap(), 0.5);
        assert_eq!(balanced_accuracy(&v, -10.0).unwrap(), 0.5);
    }

    #[test]
    fn separated_best_threshold_is_lowest_separator() {
        let v = [s(3.0, true), s(2.0, true), s(1.0, false), s(0.0, false)];
        assert_eq!(best_balanced_accuracy(&v).unwrap(), (2.0, 1.0));
        let tied = [s(1.0, true), s(1.0, false)];
        assert_eq!(best_balanced_accuracy(&tied).unwrap(), (1.0, 0.5));
    }

    #[test]
    fn random_sets_match_pair_counting() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let n = rng.gen_range(2..=200);
            let mut v: Vec<ScoredSample> = (0..n)
                .map(|_| s((rng.gen_range(0..40) as f64) / 7.0, rng.gen_bool(0.4)))
                .collect();
            v[0].label = Label::Malicious;
            v[1].label = Label::Benign;
            let c = roc_curve(&v).unwrap();
            assert_eq!(c.points, exhaustive_roc(&v));
            assert!((auc(&c) - mann_whitney(&v)).abs() <= 1e-12);
        }
    }

    proptest! {
        #[test]
        fn invariances(
            raw in proptest::collection::vec((0u32..50, any::<bool>()), 2..80),
            k in 0.01f64..100.0,
        ) {
            let mut v: Vec<ScoredSample> = raw.iter().map(|&(x, m)| s(x as f64, m)).collect();
            v[0].label = Label::Malicious;
            v[1].label = Label::Benign;
            let a = roc_auc(&v).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));

            // strictly increasing transform
            let t: Vec<_> = v.iter().map(|x| s(x.score.powi(3) + 2.0, x.label.is_malicious())).collect();
            prop_assert!((roc_auc(&t).unwrap() - a).abs() < 1e-12);

            // positive scaling leaves curve and best-threshold partition alone
            let scaled: Vec<_> = v.iter().map(|x| s(x.score * k, x.label.is_malicious())).collect();
            prop_assert_eq!(roc_curve(&scaled).unwrap().points, roc_curve(&v).unwrap().points);
            let (t0, b0) = best_balanced_accuracy(&v).unwrap();
            let (t1, b1) = best_balanced_accuracy(&scaled).unwrap();
            prop_assert!((b0 - b1).abs() < 1e-12);
            let part = |xs: &[ScoredSample], th: f64| xs.iter().map(|x| x.score >= th).collect::<Vec<_>>();
            prop_assert_eq!(part(&v, t0), part(&scaled, t1));

            // permutation invariance
            let mut r = v.clone();
            r.reverse();
            prop_assert_eq!(roc_curve(&r).unwrap().points, roc_curve(&v).unwrap().points);

            // monotone curve, exact endpoints
            let c = roc_curve(&v).unwrap();
            prop_assert_eq!(c.points[0], (0.0, 0.0));
            prop_assert_eq!(*c.points.last().unwrap(), (1.0, 1.0));
            prop_assert!(c.points.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1));
        }
    }
}
