//! Confusion matrices, macro-averaged classification metrics and
//! five-number summaries over repeated trials.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Counts indexed `[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(k: usize) -> Self {
        Self {
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes()).map(|i| self.counts[i][i]).sum()
    }

    fn row_sum(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    fn col_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }
}

pub fn confusion_matrix(y_true: &[usize], y_pred: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::input(format!(
            "{} true labels but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let mut cm = ConfusionMatrix::zeros(k);
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t >= k || p >= k {
            return Err(Error::input(format!("label pair ({t}, {p}) outside {k} classes")));
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassScores {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
}

fn ratio(num: u64, den: u64, what: &str, class: usize) -> f64 {
    if den == 0 {
        log::warn!("{what} of class {class} has a zero denominator; using 0");
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn per_class_scores(cm: &ConfusionMatrix) -> ClassScores {
    let k = cm.n_classes();
    let mut s = ClassScores {
        precision: Vec::with_capacity(k),
        recall: Vec::with_capacity(k),
        f1: Vec::with_capacity(k),
    };
    for c in 0..k {
        let tp = cm.counts[c][c];
        let p = ratio(tp, cm.col_sum(c), "precision", c);
        let r = ratio(tp, cm.row_sum(c), "recall", c);
        s.precision.push(p);
        s.recall.push(r);
        s.f1.push(if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 });
    }
    s
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn classification_metrics(cm: &ConfusionMatrix) -> Result<MetricsRecord> {
    if cm.is_empty() {
        return Err(Error::input("metrics of an empty confusion matrix"));
    }
    let s = per_class_scores(cm);
    Ok(MetricsRecord {
        accuracy: cm.trace() as f64 / cm.total() as f64,
        precision: mean(&s.precision),
        recall: mean(&s.recall),
        f1: mean(&s.f1),
    })
}

/// Mean and five-number summary of one metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Quantile by linear interpolation between order statistics at position
/// `q · (n - 1)`.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl Summary {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::input("cannot summarize zero values"));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let base = sorted[0];
        let offset = sorted.iter().map(|v| v - base).sum::<f64>() / sorted.len() as f64;
        Ok(Self {
            mean: base + offset,
            min: sorted[0],
            q1: quantile(&sorted, 0.25),
            median: quantile(&sorted, 0.5),
            q3: quantile(&sorted, 0.75),
            max: sorted[sorted.len() - 1],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialAggregate {
    pub n_trials: usize,
    pub accuracy: Summary,
    pub precision: Summary,
    pub recall: Summary,
    pub f1: Summary,
}

pub fn aggregate_trials(records: &[MetricsRecord]) -> Result<TrialAggregate> {
    if records.is_empty() {
        return Err(Error::input("cannot aggregate zero trials"));
    }
    let pick = |f: fn(&MetricsRecord) -> f64| -> Result<Summary> {
        Summary::of(&records.iter().map(f).collect::<Vec<_>>())
    };
    Ok(TrialAggregate {
        n_trials: records.len(),
        accuracy: pick(|r| r.accuracy)?,
        precision: pick(|r| r.precision)?,
        recall: pick(|r| r.recall)?,
        f1: pick(|r| r.f1)?,
    })
}

/// One line of the per-trial CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub trial: usize,
    pub classifier: String,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl TrialRow {
    pub fn new(trial: usize, classifier: &str, m: &MetricsRecord) -> Self {
        Self {
            trial,
            classifier: classifier.to_string(),
            accuracy: m.accuracy,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
        }
    }

    pub fn record(&self) -> MetricsRecord {
        MetricsRecord {
            accuracy: self.accuracy,
            precision: self.precision,
            recall: self.recall,
            f1: self.f1,
        }
    }
}

pub fn write_trial_csv<W: Write>(rows: &[TrialRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for row in rows {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trial_csv<R: Read>(r: R) -> Result<Vec<TrialRow>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

/// Aggregates grouped by classifier name, in first-seen order.
pub fn aggregate_by_classifier(rows: &[TrialRow]) -> Result<Vec<(String, TrialAggregate)>> {
    let mut names: Vec<&str> = Vec::new();
    for r in rows {
        if !names.contains(&r.classifier.as_str()) {
            names.push(&r.classifier);
        }
    }
    names
        .into_iter()
        .map(|name| {
            let records: Vec<MetricsRecord> = rows
                .iter()
                .filter(|r| r.classifier == name)
                .map(TrialRow::record)
                .collect();
            Ok((name.to_string(), aggregate_trials(&records)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_tally_and_metrics() {
        let cm = confusion_matrix(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 1], vec![0, 2]]);
        let m = classification_metrics(&cm).unwrap();
        assert!((m.accuracy - 0.75).abs() < 1e-12);
        assert!((m.precision - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert!((m.recall - 0.75).abs() < 1e-12);
        assert!((m.f1 - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_empty() {
        let cm = confusion_matrix(&[0, 1, 2, 2], &[0, 1, 2, 2], 3).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 2]]);
        let m = classification_metrics(&cm).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));
        let empty = confusion_matrix(&[], &[], 3).unwrap();
        assert!(empty.is_empty());
        assert_eq!(empty, ConfusionMatrix::zeros(3));
        assert!(classification_metrics(&empty).is_err());
    }

    #[test]
    fn bad_labels() {
        assert!(matches!(confusion_matrix(&[0, 3], &[0, 1], 3), Err(Error::InvalidInput(_))));
        assert!(confusion_matrix(&[0], &[0, 1], 3).is_err());
    }

    #[test]
    fn zero_denominator_is_zero() {
        // class 1 is never predicted
        let cm = confusion_matrix(&[0, 1], &[0, 0], 2).unwrap();
        let s = per_class_scores(&cm);
        assert_eq!(s.precision[1], 0.0);
        assert_eq!(s.f1[1], 0.0);
    }

    #[test]
    fn aggregate_examples() {
        let rec = |a: f64| MetricsRecord {
            accuracy: a,
            precision: a,
            recall: a,
            f1: a,
        };
        let agg = aggregate_trials(&[0.90, 0.92, 0.94, 0.96].map(rec)).unwrap();
        assert!((agg.accuracy.median - 0.93).abs() < 1e-12);
        assert!((agg.accuracy.mean - 0.93).abs() < 1e-12);
        let same = aggregate_trials(&vec![rec(0.8); 50]).unwrap();
        assert_eq!(same.n_trials, 50);
        let s = same.accuracy;
        assert!([s.min, s.q1, s.median, s.q3, s.max].iter().all(|&v| v == s.mean));
        assert!(aggregate_trials(&[]).is_err());
    }

    #[test]
    fn trial_csv_round_trip() {
        let rows = vec![
            TrialRow::new(0, "slp", &MetricsRecord { accuracy: 0.5, precision: 0.25, recall: 1.0, f1: 0.0 }),
            TrialRow::new(1, "slp", &MetricsRecord { accuracy: 1.0, precision: 1.0, recall: 1.0, f1: 1.0 }),
        ];
        let mut buf = Vec::new();
        write_trial_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("trial,classifier,accuracy,precision,recall,f1\n"));
        assert_eq!(read_trial_csv(buf.as_slice()).unwrap(), rows);
        let agg = aggregate_by_classifier(&rows).unwrap();
        assert_eq!(agg[0].0, "slp");
        assert_eq!(agg[0].1.accuracy.mean, 0.75);
    }

    fn labels(k: usize) -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
        (1usize..40).prop_flat_map(move |n| {
            (
                proptest::collection::vec(0..k, n),
                proptest::collection::vec(0..k, n),
            )
        })
    }

    proptest! {
        #[test]
        fn accuracy_matches_direct_count((t, p) in labels(3)) {
            let cm = confusion_matrix(&t, &p, 3).unwrap();
            prop_assert_eq!(cm.total() as usize, t.len());
            let m = classification_metrics(&cm).unwrap();
            let direct = t.iter().zip(&p).filter(|(a, b)| a == b).count() as f64 / t.len() as f64;
            prop_assert!((m.accuracy - direct).abs() < 1e-12);
            let s = per_class_scores(&cm);
            let lo = s.f1.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = s.f1.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(m.f1 >= lo - 1e-12 && m.f1 <= hi + 1e-12);
            for v in [m.accuracy, m.precision, m.recall, m.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn relabeling_keeps_macro_metrics((t, p) in labels(3), perm in Just([2usize, 0, 1])) {
            let a = classification_metrics(&confusion_matrix(&t, &p, 3).unwrap()).unwrap();
            let tt: Vec<usize> = t.iter().map(|&c| perm[c]).collect();
            let pp: Vec<usize> = p.iter().map(|&c| perm[c]).collect();
            let b = classification_metrics(&confusion_matrix(&tt, &pp, 3).unwrap()).unwrap();
            prop_assert!((a.precision - b.precision).abs() < 1e-12);
            prop_assert!((a.recall - b.recall).abs() < 1e-12);
            prop_assert!((a.f1 - b.f1).abs() < 1e-12);
        }

        #[test]
        fn aggregation_is_order_free(mut v in proptest::collection::vec(0.0f64..1.0, 1..30), seed in any::<u64>()) {
            let recs: Vec<MetricsRecord> = v.iter().map(|&a| MetricsRecord { accuracy: a, precision: a, recall: a, f1: a }).collect();
            let a = aggregate_trials(&recs).unwrap();
            let k = (seed as usize) % v.len();
            v.rotate_left(k);
            v.reverse();
            let recs2: Vec<MetricsRecord> = v.iter().map(|&a| MetricsRecord { accuracy: a, precision: a, recall: a, f1: a }).collect();
            let b = aggregate_trials(&recs2).unwrap();
            prop_assert_eq!(a.accuracy.median, b.accuracy.median);
            prop_assert!((a.accuracy.mean - b.accuracy.mean).abs() < 1e-12);
            let s = a.accuracy;
            prop_assert!(s.min <= s.q1 && s.q1 <= s.median && s.median <= s.q3 && s.q3 <= s.max);
        }
    }
}
