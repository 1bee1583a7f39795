//! Classification metrics: accuracy, macro precision/recall/F1, and the
//! confusion matrix (rows = true class, columns = predicted class).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of evaluation examples whose true class is this one.
    pub support: usize,
    /// True when the class appears in neither predictions nor targets; it
    /// still contributes zeros to the macro averages.
    pub absent: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: Vec<Vec<usize>>,
    pub total: usize,
}

/// Macro metrics are the unweighted mean of per-class values; zero-division
/// cases contribute 0 for that class.
pub fn evaluate(predictions: &[usize], targets: &[usize], k: usize) -> Result<MetricsReport> {
    if predictions.is_empty() {
        return Err(Error::Domain("cannot evaluate an empty prediction set".into()));
    }
    if predictions.len() != targets.len() {
        return Err(Error::Domain(format!(
            "{} predictions vs {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    if k == 0 {
        return Err(Error::Domain("need at least one class".into()));
    }
    let mut confusion = vec![vec![0usize; k]; k];
    for (&p, &t) in predictions.iter().zip(targets.iter()) {
        if p >= k || t >= k {
            return Err(Error::Domain(format!(
                "class id out of range: prediction {p}, target {t}, K={k}"
            )));
        }
        confusion[t][p] += 1;
    }
    let total = predictions.len();
    let trace: usize = (0..k).map(|i| confusion[i][i]).sum();

    let mut per_class = Vec::with_capacity(k);
    for c in 0..k {
        let tp = confusion[c][c];
        let row: usize = confusion[c].iter().sum();
        let col: usize = (0..k).map(|r| confusion[r][c]).sum();
        let precision = if col > 0 { tp as f64 / col as f64 } else { 0.0 };
        let recall = if row > 0 { tp as f64 / row as f64 } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        per_class.push(ClassMetrics {
            precision,
            recall,
            f1,
            support: row,
            absent: row == 0 && col == 0,
        });
    }
    let kf = k as f64;
    Ok(MetricsReport {
        accuracy: trace as f64 / total as f64,
        macro_precision: per_class.iter().map(|m| m.precision).sum::<f64>() / kf,
        macro_recall: per_class.iter().map(|m| m.recall).sum::<f64>() / kf,
        macro_f1: per_class.iter().map(|m| m.f1).sum::<f64>() / kf,
        per_class,
        confusion,
        total,
    })
}

impl MetricsReport {
    /// Precision/recall table in percent, one row per class plus macro.
    pub fn precision_recall_table(&self, class_names: &[String]) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<24} {:>10} {:>10}", "Class", "Precision", "Recall");
        for (i, m) in self.per_class.iter().enumerate() {
            let name = class_names.get(i).cloned().unwrap_or_else(|| format!("class{i}"));
            let _ = writeln!(
                out,
                "{:<24} {:>9.2} {:>10.2}{}",
                name,
                m.precision * 100.0,
                m.recall * 100.0,
                if m.absent { "  (absent)" } else { "" }
            );
        }
        let _ = writeln!(
            out,
            "{:<24} {:>9.2} {:>10.2}",
            "macro",
            self.macro_precision * 100.0,
            self.macro_recall * 100.0
        );
        out
    }

    /// F1 table in percent, one row per class plus macro.
    pub fn f1_table(&self, class_names: &[String]) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<24} {:>10}", "Class", "F1");
        for (i, m) in self.per_class.iter().enumerate() {
            let name = class_names.get(i).cloned().unwrap_or_else(|| format!("class{i}"));
            let _ = writeln!(out, "{:<24} {:>9.2}", name, m.f1 * 100.0);
        }
        let _ = writeln!(out, "{:<24} {:>9.2}", "macro", self.macro_f1 * 100.0);
        out
    }

    pub fn confusion_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "confusion matrix (rows = true, cols = predicted):");
        for row in &self.confusion {
            let cells: Vec<String> = row.iter().map(|c| format!("{c:>6}")).collect();
            let _ = writeln!(out, "  {}", cells.join(" "));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_correct() {
        let r = evaluate(&[0, 1, 2], &[0, 1, 2], 3).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.macro_f1, 1.0);
    }

    #[test]
    fn all_wrong_binary() {
        let r = evaluate(&[1, 0, 1, 0], &[0, 1, 0, 1], 2).unwrap();
        assert_eq!(r.accuracy, 0.0);
    }

    #[test]
    fn hand_computed_confusion_example() {
        // targets [0,0,1,1], preds [0,1,1,1] -> cm [[1,1],[0,2]]
        let r = evaluate(&[0, 1, 1, 1], &[0, 0, 1, 1], 2).unwrap();
        assert_eq!(r.confusion, vec![vec![1, 1], vec![0, 2]]);
        assert!((r.accuracy - 0.75).abs() < 1e-12);
        assert!((r.per_class[0].precision - 1.0).abs() < 1e-12);
        assert!((r.per_class[0].recall - 0.5).abs() < 1e-12);
        assert!((r.per_class[0].f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.per_class[1].precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.per_class[1].recall - 1.0).abs() < 1e-12);
        assert!((r.per_class[1].f1 - 0.8).abs() < 1e-12);
        let expect_macro = (2.0 / 3.0 + 0.8) / 2.0;
        assert!((r.macro_f1 - expect_macro).abs() < 1e-12);
    }

    #[test]
    fn absent_class_contributes_zero_with_flag() {
        let r = evaluate(&[0, 0], &[0, 0], 3).unwrap();
        assert!(r.per_class[1].absent && r.per_class[2].absent);
        assert!((r.macro_f1 - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn permutation_invariance() {
        let preds = vec![0, 1, 2, 1, 0, 2, 2];
        let targs = vec![0, 1, 1, 1, 2, 2, 0];
        let a = evaluate(&preds, &targs, 3).unwrap();
        // reverse the joint order
        let rp: Vec<usize> = preds.iter().rev().copied().collect();
        let rt: Vec<usize> = targs.iter().rev().copied().collect();
        let b = evaluate(&rp, &rt, 3).unwrap();
        assert_eq!(a.confusion, b.confusion);
        assert_eq!(a.macro_f1, b.macro_f1);
    }

    #[test]
    fn relabeling_permutes_per_class_and_keeps_macro() {
        let preds = vec![0, 1, 2, 1, 0, 2, 2, 0];
        let targs = vec![0, 1, 1, 1, 2, 2, 0, 0];
        let a = evaluate(&preds, &targs, 3).unwrap();
        // permutation 0->2, 1->0, 2->1
        let perm = [2usize, 0, 1];
        let pp: Vec<usize> = preds.iter().map(|&c| perm[c]).collect();
        let pt: Vec<usize> = targs.iter().map(|&c| perm[c]).collect();
        let b = evaluate(&pp, &pt, 3).unwrap();
        assert!((a.macro_f1 - b.macro_f1).abs() < 1e-12);
        assert!((a.macro_precision - b.macro_precision).abs() < 1e-12);
        for c in 0..3 {
            assert!((a.per_class[c].f1 - b.per_class[perm[c]].f1).abs() < 1e-12);
        }
    }

    #[test]
    fn errors_on_bad_input() {
        assert!(evaluate(&[], &[], 2).is_err());
        assert!(evaluate(&[0], &[0, 1], 2).is_err());
        assert!(evaluate(&[5], &[0], 2).is_err());
    }
}
