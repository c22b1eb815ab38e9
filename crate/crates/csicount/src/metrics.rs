//! Classification and counting metrics plus the generalisation index.

use std::collections::BTreeMap;

use crate::{Error, EventLabel, Result};

#[derive(Debug, Clone)]
pub struct ClassMetrics {
    pub label: EventLabel,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone)]
pub struct MetricReport {
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub mae: f64,
    pub rmse: f64,
}

impl MetricReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        out.push_str(&format!("accuracy,{}\n", self.accuracy));
        out.push_str(&format!("weighted_f1,{}\n", self.weighted_f1));
        out.push_str(&format!("mae,{}\n", self.mae));
        out.push_str(&format!("rmse,{}\n", self.rmse));
        for c in &self.per_class {
            let n = c.label.name();
            out.push_str(&format!("precision_{n},{}\n", c.precision));
            out.push_str(&format!("recall_{n},{}\n", c.recall));
            out.push_str(&format!("f1_{n},{}\n", c.f1));
            out.push_str(&format!("support_{n},{}\n", c.support));
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "accuracy {:.4}  weighted_f1 {:.4}  mae {:.4}  rmse {:.4}\n",
            self.accuracy, self.weighted_f1, self.mae, self.rmse
        );
        out.push_str("class            precision  recall     f1      support\n");
        for c in &self.per_class {
            out.push_str(&format!(
                "{:<16} {:>9.4} {:>7.4} {:>7.4} {:>8}\n",
                c.label.name(),
                c.precision,
                c.recall,
                c.f1,
                c.support
            ));
        }
        out
    }
}

/// Accuracy, per-class precision/recall/F1, and support-weighted F1.
pub fn classification_metrics(preds: &[EventLabel], labels: &[EventLabel]) -> Result<MetricReport> {
    if preds.is_empty() || preds.len() != labels.len() {
        return Err(Error::InvalidArg(format!(
            "classification_metrics: {} predictions vs {} labels (both must be non-empty and equal)",
            preds.len(),
            labels.len()
        )));
    }
    let n = labels.len();
    let correct = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    let accuracy = correct as f64 / n as f64;

    // classes ordered by label; include any class seen in either stream
    let mut classes: BTreeMap<EventLabel, ()> = BTreeMap::new();
    for l in labels.iter().chain(preds) {
        classes.insert(*l, ());
    }

    let mut per_class = Vec::new();
    let mut weighted_f1 = 0.0;
    for (&cls, _) in &classes {
        let tp = preds
            .iter()
            .zip(labels)
            .filter(|(p, l)| **p == cls && **l == cls)
            .count() as f64;
        let fp = preds
            .iter()
            .zip(labels)
            .filter(|(p, l)| **p == cls && **l != cls)
            .count() as f64;
        let fn_ = preds
            .iter()
            .zip(labels)
            .filter(|(p, l)| **p != cls && **l == cls)
            .count() as f64;
        let support = labels.iter().filter(|l| **l == cls).count();
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        weighted_f1 += (support as f64 / n as f64) * f1;
        per_class.push(ClassMetrics {
            label: cls,
            precision,
            recall,
            f1,
            support,
        });
    }
    Ok(MetricReport {
        accuracy,
        weighted_f1,
        per_class,
        mae: 0.0,
        rmse: 0.0,
    })
}

/// Per-window counting errors: (mae, rmse).
pub fn counting_errors(estimates: &[i64], truth: &[i64]) -> Result<(f64, f64)> {
    if estimates.len() != truth.len() {
        return Err(Error::InvalidArg(format!(
            "counting_errors: {} estimates vs {} truth values",
            estimates.len(),
            truth.len()
        )));
    }
    if estimates.is_empty() {
        return Err(Error::InvalidArg("counting_errors: empty input".into()));
    }
    let n = estimates.len() as f64;
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    for (&e, &t) in estimates.iter().zip(truth) {
        let d = (e - t) as f64;
        abs_sum += d.abs();
        sq_sum += d * d;
    }
    Ok((abs_sum / n, (sq_sum / n).sqrt()))
}

/// Generalisation index: higher is better on both components.
/// `gi_accuracy = target_accuracy / source_accuracy`,
/// `gi_mae = source_mae / target_mae`. A zero denominator yields an
/// explicit infinite-quality sentinel, never NaN.
pub fn generalisation_index(source: &MetricReport, target: &MetricReport) -> (f64, f64) {
    let gi_acc = if source.accuracy > 0.0 {
        target.accuracy / source.accuracy
    } else {
        f64::INFINITY
    };
    let gi_mae = if target.mae > 0.0 {
        source.mae / target.mae
    } else if source.mae == 0.0 && target.mae == 0.0 {
        1.0
    } else {
        f64::INFINITY
    };
    (gi_acc, gi_mae)
}

#[cfg(test)]
mod tests {
    use super::*;
    use EventLabel::{Enter, Exit, NoEvent};

    fn report(acc: f64, mae: f64) -> MetricReport {
        MetricReport {
            accuracy: acc,
            weighted_f1: acc,
            per_class: vec![],
            mae,
            rmse: mae,
        }
    }

    #[test]
    fn perfect_predictions() {
        let labels = vec![Enter, Exit, NoEvent, NoEvent];
        let r = classification_metrics(&labels, &labels).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert!((r.weighted_f1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn binary_confusion_case() {
        // preds [1,1,0], labels [1,0,0]: TP=1 FP=1 FN=0 TN=1
        let preds = vec![Enter, Enter, NoEvent];
        let labels = vec![Enter, NoEvent, NoEvent];
        let r = classification_metrics(&preds, &labels).unwrap();
        assert!((r.accuracy - 2.0 / 3.0).abs() < 1e-12);
        let c1 = r.per_class.iter().find(|c| c.label == Enter).unwrap();
        assert!((c1.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn single_class_all_correct() {
        let labels = vec![NoEvent; 5];
        let r = classification_metrics(&labels, &labels).unwrap();
        let c = &r.per_class[0];
        assert!((r.weighted_f1 - c.f1).abs() < 1e-12);
    }

    #[test]
    fn empty_or_mismatched_rejected() {
        assert!(classification_metrics(&[], &[]).is_err());
        assert!(classification_metrics(&[Enter], &[Enter, Exit]).is_err());
    }

    #[test]
    fn weighted_f1_equals_macro_for_equal_supports() {
        let labels = vec![Enter, Enter, Exit, Exit, NoEvent, NoEvent];
        let preds = vec![Enter, Exit, Exit, NoEvent, NoEvent, Enter];
        let r = classification_metrics(&preds, &labels).unwrap();
        let macro_f1: f64 =
            r.per_class.iter().map(|c| c.f1).sum::<f64>() / r.per_class.len() as f64;
        assert!((r.weighted_f1 - macro_f1).abs() < 1e-12);
    }

    #[test]
    fn counting_error_cases() {
        assert_eq!(counting_errors(&[1, 2, 3], &[1, 2, 3]).unwrap(), (0.0, 0.0));
        let (mae, rmse) = counting_errors(&[1, 2, 2], &[1, 1, 2]).unwrap();
        assert!((mae - 1.0 / 3.0).abs() < 1e-12);
        assert!((rmse - (1.0f64 / 3.0).sqrt()).abs() < 1e-12);
        // one error of 3 among 9 zeros: rmse penalizes harder than mae
        let mut est = vec![0i64; 10];
        est[4] = 3;
        let (mae, rmse) = counting_errors(&est, &vec![0; 10]).unwrap();
        assert!((mae - 0.3).abs() < 1e-12);
        assert!((rmse - (0.9f64).sqrt()).abs() < 1e-12);
        assert!(rmse > mae);
        assert!(counting_errors(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn rmse_at_least_mae_on_random_traces() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let n = rng.gen_range(1..50);
            let est: Vec<i64> = (0..n).map(|_| rng.gen_range(0..6)).collect();
            let truth: Vec<i64> = (0..n).map(|_| rng.gen_range(0..6)).collect();
            let (mae, rmse) = counting_errors(&est, &truth).unwrap();
            assert!(rmse >= mae - 1e-12);
        }
    }

    #[test]
    fn gi_identity() {
        let r = report(0.9, 0.5);
        assert_eq!(generalisation_index(&r, &r), (1.0, 1.0));
    }

    #[test]
    fn gi_mae_reproduces_reported_ratio() {
        let source = report(0.96, 4.37);
        let target = report(0.998, 0.07);
        let (gi_acc, gi_mae) = generalisation_index(&source, &target);
        assert!((gi_mae - 62.4).abs() < 0.5, "gi_mae {gi_mae}");
        assert!((gi_acc - 1.0396).abs() < 1e-3, "gi_acc {gi_acc}");
    }

    #[test]
    fn gi_sentinels_never_nan() {
        let zero = report(0.0, 0.0);
        let some = report(0.5, 1.0);
        let (a, m) = generalisation_index(&zero, &some);
        assert!(a.is_infinite() && !a.is_nan());
        assert!(m.is_finite());
        let (_, m) = generalisation_index(&some, &zero);
        assert!(m.is_infinite() && !m.is_nan());
    }
}
