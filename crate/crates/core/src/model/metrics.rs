//! Support-weighted precision, recall and F1.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrant::Quadrant;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FoldSummary {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    pub per_class: Vec<ClassMetrics>,
    /// Averages weighted by true-class support.
    pub weighted: ClassMetrics,
    pub accuracy: f64,
    /// Per-fold headline metrics; empty for a single evaluation.
    pub folds: Vec<FoldSummary>,
    /// Sample standard deviation across folds, when there are at least two.
    pub fold_std: Option<FoldSummary>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

impl EvalReport {
    /// Metrics from a square confusion matrix of any size.
    pub fn from_confusion(confusion: Vec<Vec<u64>>) -> Result<Self> {
        let k = confusion.len();
        if k == 0 || confusion.iter().any(|r| r.len() != k) {
            return Err(Error::Size("confusion matrix must be square and nonempty".into()));
        }
        let total: u64 = confusion.iter().flatten().sum();
        let per_class: Vec<ClassMetrics> = (0..k)
            .map(|c| {
                let tp = confusion[c][c];
                let support: u64 = confusion[c].iter().sum();
                let predicted: u64 = confusion.iter().map(|r| r[c]).sum();
                let precision = ratio(tp, predicted);
                let recall = ratio(tp, support);
                ClassMetrics {
                    precision,
                    recall,
                    f1: f1(precision, recall),
                    support,
                }
            })
            .collect();
        let weigh = |f: fn(&ClassMetrics) -> f64| -> f64 {
            if total == 0 {
                return 0.0;
            }
            per_class
                .iter()
                .map(|m| m.support as f64 / total as f64 * f(m))
                .sum()
        };
        let correct: u64 = (0..k).map(|c| confusion[c][c]).sum();
        let accuracy = ratio(correct, total);
        // Support-weighted recall reduces to sum(tp) / total.
        let weighted = ClassMetrics {
            precision: weigh(|m| m.precision),
            recall: accuracy,
            f1: weigh(|m| m.f1),
            support: total,
        };
        Ok(Self {
            accuracy,
            confusion,
            per_class,
            weighted,
            folds: Vec::new(),
            fold_std: None,
        })
    }

    pub fn summary(&self) -> FoldSummary {
        FoldSummary {
            accuracy: self.accuracy,
            precision: self.weighted.precision,
            recall: self.weighted.recall,
            f1: self.weighted.f1,
        }
    }

    /// Combines per-fold reports: the confusion matrix and per-class metrics
    /// are pooled, the headline weighted metrics are fold means with their
    /// standard deviations.
    pub fn across_folds(reports: &[EvalReport]) -> Result<Self> {
        let first = reports
            .first()
            .ok_or_else(|| Error::Input("no fold reports".into()))?;
        let k = first.confusion.len();
        let mut pooled = vec![vec![0u64; k]; k];
        for r in reports {
            if r.confusion.len() != k {
                return Err(Error::Size("fold reports disagree on class count".into()));
            }
            for (row, src) in pooled.iter_mut().zip(&r.confusion) {
                for (d, s) in row.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut out = Self::from_confusion(pooled)?;
        let folds: Vec<FoldSummary> = reports.iter().map(EvalReport::summary).collect();
        let n = folds.len() as f64;
        let mean = |f: fn(&FoldSummary) -> f64| folds.iter().map(f).sum::<f64>() / n;
        let std = |f: fn(&FoldSummary) -> f64| {
            let m = mean(f);
            (folds.iter().map(|s| (f(s) - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        out.accuracy = mean(|s| s.accuracy);
        out.weighted.precision = mean(|s| s.precision);
        out.weighted.recall = mean(|s| s.recall);
        out.weighted.f1 = mean(|s| s.f1);
        if folds.len() >= 2 {
            out.fold_std = Some(FoldSummary {
                accuracy: std(|s| s.accuracy),
                precision: std(|s| s.precision),
                recall: std(|s| s.recall),
                f1: std(|s| s.f1),
            });
        }
        out.folds = folds;
        Ok(out)
    }

    /// Plain-text table: weighted precision, accuracy/recall and F1 for one
    /// model, standard deviations in parentheses, then the per-quadrant rows.
    pub fn to_table(&self, model_name: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<24}{:>12}{:>18}{:>12}", "", "Precision", "Accuracy/Recall", "F1");
        let _ = writeln!(
            s,
            "{:<24}{:>12.4}{:>18.4}{:>12.4}",
            model_name, self.weighted.precision, self.weighted.recall, self.weighted.f1
        );
        if let Some(sd) = &self.fold_std {
            let p = |v: f64| format!("({v:.4})");
            let _ = writeln!(s, "{:<24}{:>12}{:>18}{:>12}", "", p(sd.precision), p(sd.recall), p(sd.f1));
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<24}{:>12}{:>18}{:>12}{:>10}", "quadrant", "Precision", "Recall", "F1", "support");
        for (i, m) in self.per_class.iter().enumerate() {
            let name = Quadrant::from_index(i).map_or_else(|_| format!("class {i}"), |q| q.to_string());
            let _ = writeln!(
                s,
                "{:<24}{:>12.4}{:>18.4}{:>12.4}{:>10}",
                name, m.precision, m.recall, m.f1, m.support
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "confusion (rows = true, columns = predicted)");
        for row in &self.confusion {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:>6}")).collect();
            let _ = writeln!(s, "{}", cells.join(""));
        }
        s
    }
}

pub fn evaluate(preds: &[Quadrant], truth: &[Quadrant]) -> Result<EvalReport> {
    if preds.len() != truth.len() {
        return Err(Error::Input(format!(
            "{} predictions for {} labels",
            preds.len(),
            truth.len()
        )));
    }
    let mut confusion = vec![vec![0u64; 4]; 4];
    for (p, t) in preds.iter().zip(truth) {
        confusion[t.index()][p.index()] += 1;
    }
    EvalReport::from_confusion(confusion)
}

#[cfg(test)]
mod tests {
    use super::*;
    use Quadrant::*;

    #[test]
    fn perfect_predictions() {
        let t = [Q1, Q2, Q3, Q4, Q4];
        let r = evaluate(&t, &t).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.weighted.f1, 1.0);
        assert_eq!(r.weighted.precision, 1.0);
    }

    #[test]
    fn two_class_oracle() {
        let r = EvalReport::from_confusion(vec![vec![5, 0], vec![5, 0]]).unwrap();
        assert_eq!(r.per_class[0].precision, 0.5);
        assert_eq!(r.per_class[0].recall, 1.0);
        assert!((r.per_class[0].f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.per_class[1].f1, 0.0);
    }

    #[test]
    fn constant_predictor_on_balanced_data() {
        let truth: Vec<Quadrant> = Quadrant::ALL.iter().flat_map(|&q| [q; 5]).collect();
        let r = evaluate(&vec![Q2; 20], &truth).unwrap();
        assert_eq!(r.accuracy, 0.25);
        assert_eq!(r.accuracy, r.weighted.recall);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(evaluate(&[Q1], &[]), Err(Error::Input(_))));
    }

    #[test]
    fn fold_means_and_std() {
        let a = EvalReport::from_confusion(vec![vec![2, 0], vec![0, 2]]).unwrap();
        let b = EvalReport::from_confusion(vec![vec![1, 1], vec![1, 1]]).unwrap();
        let r = EvalReport::across_folds(&[a, b]).unwrap();
        assert_eq!(r.accuracy, 0.75);
        assert_eq!(r.weighted.recall, 0.75);
        assert!((r.fold_std.unwrap().accuracy - 0.5f64.sqrt() * 0.5).abs() < 1e-12);
        assert_eq!(r.confusion, vec![vec![3, 1], vec![1, 3]]);
        let t = r.to_table("harmonics");
        assert!(t.contains("Accuracy/Recall") && t.contains("(0.3536)"));
    }
}
