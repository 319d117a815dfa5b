use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    #[default]
    Accuracy,
    MacroF1,
}

impl Metric {
    pub fn of(&self, report: &EvalReport) -> f64 {
        match self {
            Metric::Accuracy => report.accuracy,
            Metric::MacroF1 => report.macro_f1,
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy" => Ok(Metric::Accuracy),
            "macro-f1" | "macro_f1" => Ok(Metric::MacroF1),
            other => Err(Error::Config(format!("unknown metric '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CasePrediction {
    pub id: usize,
    pub gold: String,
    pub predicted: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_label: Vec<LabelMetrics>,
    pub labels: Vec<String>,
    /// Rows are gold labels, columns predictions, both in label-set order.
    pub confusion: Vec<Vec<usize>>,
    pub n_cases: usize,
    pub prompt_hash: String,
    #[serde(default)]
    pub predictions: Vec<CasePrediction>,
    #[serde(default)]
    pub skipped_ids: Vec<usize>,
}

impl EvalReport {
    /// Metrics from a square confusion matrix.
    ///
    /// Labels with no support and no predictions get f1 = 0 and still count
    /// toward the macro average.
    pub fn from_confusion(labels: Vec<String>, confusion: Vec<Vec<usize>>) -> Result<Self> {
        let k = labels.len();
        if confusion.len() != k || confusion.iter().any(|row| row.len() != k) {
            return Err(Error::Config("confusion matrix does not match the label count".into()));
        }
        let total: usize = confusion.iter().flatten().sum();
        if total == 0 {
            return Err(Error::Config("no evaluated cases".into()));
        }
        let correct: usize = (0..k).map(|i| confusion[i][i]).sum();
        let per_label: Vec<LabelMetrics> = (0..k)
            .map(|i| {
                let tp = confusion[i][i] as f64;
                let support: usize = confusion[i].iter().sum();
                let predicted: usize = confusion.iter().map(|row| row[i]).sum();
                let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
                let recall = if support == 0 { 0.0 } else { tp / support as f64 };
                let f1 = if precision + recall == 0.0 {
                    0.0
                } else {
                    2.0 * precision * recall / (precision + recall)
                };
                LabelMetrics {
                    label: labels[i].clone(),
                    precision,
                    recall,
                    f1,
                    support,
                }
            })
            .collect();
        let macro_f1 = per_label.iter().map(|m| m.f1).sum::<f64>() / k as f64;
        Ok(Self {
            accuracy: correct as f64 / total as f64,
            macro_f1,
            per_label,
            labels,
            confusion,
            n_cases: total,
            prompt_hash: String::new(),
            predictions: Vec::new(),
            skipped_ids: Vec::new(),
        })
    }

    /// Metrics from `(gold, predicted)` label-index pairs.
    pub fn from_pairs(labels: Vec<String>, pairs: &[(usize, usize)]) -> Result<Self> {
        let k = labels.len();
        let mut confusion = vec![vec![0usize; k]; k];
        for &(g, p) in pairs {
            if g >= k || p >= k {
                return Err(Error::Config(format!("label index out of range in ({g}, {p})")));
            }
            confusion[g][p] += 1;
        }
        Self::from_confusion(labels, confusion)
    }

    /// Per-label table as CSV.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["label", "precision", "recall", "f1", "support"])
            .map_err(csv_err)?;
        for m in &self.per_label {
            w.write_record([
                m.label.clone(),
                m.precision.to_string(),
                m.recall.to_string(),
                m.f1.to_string(),
                m.support.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.write_record(["accuracy".to_string(), self.accuracy.to_string(), String::new(), String::new(), self.n_cases.to_string()])
            .map_err(csv_err)?;
        w.write_record(["macro_f1".to_string(), String::new(), String::new(), self.macro_f1.to_string(), String::new()])
            .map_err(csv_err)?;
        finish_csv(w)
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

pub(crate) fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(std::io::Error::other(e)))
}

/// Two-sample Kolmogorov-Smirnov statistic: the largest gap between the two
/// empirical CDFs. `None` when either sample is empty.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.is_empty() || b.is_empty() {
        return None;
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Some(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| i.to_string()).collect()
    }

    #[test]
    fn worked_binary_case() {
        let r = EvalReport::from_pairs(labels(2), &[(0, 0), (0, 1), (1, 1), (1, 1)]).unwrap();
        assert_eq!(r.accuracy, 0.75);
        assert!((r.per_label[0].f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.per_label[1].f1 - 0.8).abs() < 1e-12);
        assert!((r.macro_f1 - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-12);
        assert_eq!(r.confusion, vec![vec![1, 1], vec![0, 2]]);
    }

    #[test]
    fn zero_support_label_counts_in_macro() {
        let r = EvalReport::from_pairs(labels(3), &[(0, 0), (1, 1)]).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.per_label[2].f1, 0.0);
        assert!((r.macro_f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_is_error() {
        assert!(EvalReport::from_pairs(labels(2), &[]).is_err());
    }

    #[test]
    fn ks_cases() {
        assert_eq!(ks_statistic(&[], &[1.0]), None);
        assert_eq!(ks_statistic(&[0.1, 0.3], &[0.3, 0.1]), Some(0.0));
        assert_eq!(ks_statistic(&[1.0, 2.0], &[3.0, 4.0]), Some(1.0));
        assert_eq!(ks_statistic(&[1.0, 3.0], &[2.0]), Some(0.5));
    }

    #[test]
    fn csv_has_label_rows() {
        let r = EvalReport::from_pairs(labels(2), &[(0, 0), (1, 0)]).unwrap();
        let csv = r.to_csv().unwrap();
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.starts_with("label,precision"));
    }
}
