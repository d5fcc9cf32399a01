//! Confusion matrices and the per-class / macro-averaged scores reported
//! for relatedness prediction.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows are actual classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(k: usize) -> Self {
        ConfusionMatrix {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_counts(k: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != k * k {
            return Err(Error::Argument(format!(
                "confusion matrix needs {} cells, got {}",
                k * k,
                counts.len()
            )));
        }
        Ok(ConfusionMatrix { k, counts })
    }

    pub fn n_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, actual: usize, predicted: usize) -> u64 {
        self.counts[actual * self.k + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    /// Relabels classes: class `i` becomes `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Self {
        let mut out = ConfusionMatrix::zeros(self.k);
        for a in 0..self.k {
            for p in 0..self.k {
                out.counts[perm[a] * self.k + perm[p]] = self.get(a, p);
            }
        }
        out
    }
}

pub fn confusion(actual: &[usize], predicted: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if actual.len() != predicted.len() {
        return Err(Error::Argument(format!(
            "{} actual labels but {} predictions",
            actual.len(),
            predicted.len()
        )));
    }
    let mut cm = ConfusionMatrix::zeros(k);
    for (&a, &p) in actual.iter().zip(predicted) {
        if a >= k || p >= k {
            return Err(Error::Argument(format!(
                "label out of range 0..{k}: actual {a}, predicted {p}"
            )));
        }
        cm.counts[a * k + p] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when a denominator was zero and the affected score defaulted to 0.
    pub undefined: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: Vec<ClassScores>,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Unweighted arithmetic mean.
pub fn macro_average(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn score(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Argument("cannot score an empty confusion matrix".into()));
    }
    let k = cm.k;
    let per_class: Vec<ClassScores> = (0..k)
        .map(|j| {
            let hit = cm.get(j, j) as f64;
            let predicted: u64 = (0..k).map(|i| cm.get(i, j)).sum();
            let actual: u64 = (0..k).map(|i| cm.get(j, i)).sum();
            let precision = if predicted == 0 { 0.0 } else { hit / predicted as f64 };
            let recall = if actual == 0 { 0.0 } else { hit / actual as f64 };
            ClassScores {
                precision,
                recall,
                f1: f1_score(precision, recall),
                undefined: predicted == 0 || actual == 0 || precision + recall == 0.0,
            }
        })
        .collect();
    Ok(MetricsReport::from_class_scores(
        per_class,
        cm.trace() as f64 / total as f64,
    ))
}

impl MetricsReport {
    /// Builds a report whose overall scores are macro averages.
    pub fn from_class_scores(per_class: Vec<ClassScores>, accuracy: f64) -> Self {
        let col = |f: fn(&ClassScores) -> f64| macro_average(&per_class.iter().map(f).collect::<Vec<_>>());
        MetricsReport {
            precision: col(|c| c.precision),
            recall: col(|c| c.recall),
            f1: col(|c| c.f1),
            accuracy,
            per_class,
        }
    }

    /// Element-wise mean of several reports (e.g. over folds).
    pub fn mean(reports: &[MetricsReport]) -> Result<MetricsReport> {
        let first = reports
            .first()
            .ok_or_else(|| Error::Argument("no reports to average".into()))?;
        let k = first.per_class.len();
        if reports.iter().any(|r| r.per_class.len() != k) {
            return Err(Error::Argument("reports disagree on class count".into()));
        }
        let n = reports.len() as f64;
        let avg = |f: &dyn Fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        let per_class = (0..k)
            .map(|j| ClassScores {
                precision: avg(&|r| r.per_class[j].precision),
                recall: avg(&|r| r.per_class[j].recall),
                f1: avg(&|r| r.per_class[j].f1),
                undefined: reports.iter().any(|r| r.per_class[j].undefined),
            })
            .collect();
        Ok(MetricsReport {
            per_class,
            accuracy: avg(&|r| r.accuracy),
            precision: avg(&|r| r.precision),
            recall: avg(&|r| r.recall),
            f1: avg(&|r| r.f1),
        })
    }

    /// CSV with one row per class plus an `overall` row.
    pub fn to_csv(&self, class_names: &[&str]) -> String {
        let mut out = String::from("class,precision,recall,f1,accuracy\n");
        for (j, c) in self.per_class.iter().enumerate() {
            let name = class_names.get(j).copied().unwrap_or("?");
            let _ = writeln!(out, "{name},{:.6},{:.6},{:.6},", c.precision, c.recall, c.f1);
        }
        let _ = writeln!(
            out,
            "overall,{:.6},{:.6},{:.6},{:.6}",
            self.precision, self.recall, self.f1, self.accuracy
        );
        out
    }

    /// Aligned text table: metrics as rows, classes then `Overall` as columns.
    pub fn to_table(&self, class_names: &[&str], title: &str) -> String {
        let mut headers: Vec<String> = vec!["Metric".into()];
        headers.extend(class_names.iter().map(|s| s.to_string()));
        headers.push("Overall".into());
        let mut rows: Vec<Vec<String>> = Vec::new();
        let mut push = |name: &str, f: fn(&ClassScores) -> f64, overall: f64| {
            let mut row = vec![name.to_string()];
            row.extend(self.per_class.iter().map(|c| format!("{:.3}", f(c))));
            row.push(format!("{overall:.3}"));
            rows.push(row);
        };
        push("Precision", |c| c.precision, self.precision);
        push("Recall", |c| c.recall, self.recall);
        push("F1-score", |c| c.f1, self.f1);
        let mut acc = vec!["Accuracy".to_string()];
        acc.extend(self.per_class.iter().map(|_| "-".to_string()));
        acc.push(format!("{:.3}", self.accuracy));
        rows.push(acc);
        render_table(title, &headers, &rows)
    }
}

/// Left-aligned first column, right-aligned remaining columns.
pub fn render_table(title: &str, headers: &[String], rows: &[Vec<String>]) -> String {
    let ncol = headers.len();
    let widths: Vec<usize> = (0..ncol)
        .map(|c| {
            rows.iter()
                .filter_map(|r| r.get(c))
                .chain(std::iter::once(&headers[c]))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |cells: &[String]| {
        cells
            .iter()
            .enumerate()
            .map(|(c, s)| {
                if c == 0 {
                    format!("{s:<w$}", w = widths[c])
                } else {
                    format!("{s:>w$}", w = widths[c])
                }
            })
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let rule = "-".repeat(widths.iter().sum::<usize>() + 2 * (ncol.saturating_sub(1)));
    let mut out = String::new();
    if !title.is_empty() {
        let _ = writeln!(out, "{title}");
    }
    let _ = writeln!(out, "{}", line(headers));
    let _ = writeln!(out, "{rule}");
    for r in rows {
        let _ = writeln!(out, "{}", line(r));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_prediction() {
        let cm = confusion(&[0, 1, 2, 3], &[0, 1, 2, 3], 4).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(cm.get(i, j), u64::from(i == j));
            }
        }
        let r = score(&cm).unwrap();
        assert_eq!((r.accuracy, r.precision, r.recall, r.f1), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn direct_counts_and_errors() {
        let cm = confusion(&[0, 0], &[1, 1], 2).unwrap();
        assert_eq!(cm.get(0, 1), 2);
        assert_eq!(cm.total(), 2);
        assert!(matches!(confusion(&[0], &[0, 1], 2), Err(Error::Argument(_))));
        assert!(matches!(confusion(&[0], &[5], 2), Err(Error::Argument(_))));
        assert!(matches!(score(&ConfusionMatrix::zeros(3)), Err(Error::Argument(_))));
    }

    #[test]
    fn zero_denominators_flagged() {
        // class 1 is never predicted and never occurs
        let cm = confusion(&[0, 0, 2], &[0, 2, 2], 3).unwrap();
        let r = score(&cm).unwrap();
        assert_eq!(r.per_class[1].precision, 0.0);
        assert_eq!(r.per_class[1].f1, 0.0);
        assert!(r.per_class[1].undefined);
        assert!(!r.per_class[0].undefined);
    }

    #[test]
    fn published_rows_macro_average() {
        let recall = macro_average(&[0.725, 0.433, 0.980, 0.538]);
        assert!((recall - 0.669).abs() < 1e-12);
        let precision = macro_average(&[0.611, 0.560, 0.787, 0.676]);
        assert!((precision - 0.6585).abs() < 1e-12);
        let tuned = macro_average(&[0.885, 0.851, 0.944, 0.903]);
        assert!((tuned - 0.89575).abs() < 1e-12);
    }

    #[test]
    fn balanced_macro_recall_equals_accuracy() {
        let cm = ConfusionMatrix::from_counts(3, vec![7, 2, 1, 3, 5, 2, 0, 4, 6]).unwrap();
        let r = score(&cm).unwrap();
        assert!((r.recall - r.accuracy).abs() < 1e-12);
    }

    #[test]
    fn text_outputs() {
        let cm = confusion(&[0, 1, 1, 0], &[0, 1, 0, 0], 2).unwrap();
        let r = score(&cm).unwrap();
        let csv = r.to_csv(&["a", "b"]);
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.lines().last().unwrap().starts_with("overall,"));
        let table = r.to_table(&["a", "b"], "");
        assert!(table.lines().nth(2).unwrap().starts_with("Precision"));
    }

    fn matrix() -> impl Strategy<Value = ConfusionMatrix> {
        proptest::collection::vec(0u64..20, 16)
            .prop_filter("non-empty", |v| v.iter().sum::<u64>() > 0)
            .prop_map(|v| ConfusionMatrix::from_counts(4, v).unwrap())
    }

    proptest! {
        #[test]
        fn score_properties(cm in matrix(), perm in Just([0usize, 1, 2, 3]).prop_shuffle()) {
            let r = score(&cm).unwrap();
            prop_assert_eq!(r.accuracy, cm.trace() as f64 / cm.total() as f64);
            for c in &r.per_class {
                for v in [c.precision, c.recall, c.f1] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
                let (lo, hi) = (c.precision.min(c.recall), c.precision.max(c.recall));
                if lo > 0.0 {
                    prop_assert!(c.f1 >= lo - 1e-12 && c.f1 <= hi + 1e-12);
                }
            }
            let permuted = score(&cm.permute(&perm)).unwrap();
            for (i, &p) in perm.iter().enumerate() {
                prop_assert!((permuted.per_class[p].f1 - r.per_class[i].f1).abs() < 1e-12);
                prop_assert!((permuted.per_class[p].precision - r.per_class[i].precision).abs() < 1e-12);
            }
            prop_assert!((permuted.f1 - r.f1).abs() < 1e-12);
        }

        #[test]
        fn confusion_conserves_total(pairs in proptest::collection::vec((0usize..4, 0usize..4), 1000)) {
            let (a, p): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            prop_assert_eq!(confusion(&a, &p, 4).unwrap().total(), 1000);
        }
    }
}
