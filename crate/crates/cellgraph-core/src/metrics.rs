//! Classification metrics: accuracy, rank-based AUC, ROC curves, and
//! cross-fold aggregation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fraction of correct predictions.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() || predictions.is_empty() {
        return Err(Error::Config(format!(
            "accuracy needs matching non-empty slices ({} vs {})",
            predictions.len(),
            labels.len()
        )));
    }
    let correct = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Mann–Whitney AUC with ties counted 0.5, via average ranks.
/// Returns `None` when only one class is present.
pub fn auc(scores: &[f64], labels: &[usize]) -> Result<Option<f64>> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::Config(format!(
            "auc needs matching non-empty slices ({} vs {})",
            scores.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Average ranks over tie groups (1-based).
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let auc = (rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0) / (n_pos as f64 * n_neg as f64);
    Ok(Some(auc))
}

/// Brute-force pairwise AUC (ties 0.5); the oracle the rank formulation is
/// tested against.
pub fn auc_pairwise_oracle(scores: &[f64], labels: &[usize]) -> Option<f64> {
    let pos: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 1)
        .map(|(&s, _)| s)
        .collect();
    let neg: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 0)
        .map(|(&s, _)| s)
        .collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut total = 0.0;
    for &p in &pos {
        for &n in &neg {
            total += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    Some(total / (pos.len() * neg.len()) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    pub threshold: f64,
}

/// ROC points sorted by descending threshold: the (0,0) anchor at +∞, one
/// point per distinct score, ending at (1,1). Tied scores collapse into a
/// single row. Errors when only one class is present.
pub fn roc_points(scores: &[f64], labels: &[usize]) -> Result<Vec<RocPoint>> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::Config("roc needs matching non-empty slices".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Config(
            "roc requires both classes in the evaluation set".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
            threshold,
        });
    }
    Ok(points)
}

/// Trapezoidal area under an ROC point series.
pub fn roc_trapezoid_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

/// TSV export: header plus one `fpr\ttpr\tthreshold` row per point.
pub fn write_roc_tsv(path: &Path, points: &[RocPoint]) -> Result<()> {
    let mut out = String::from("fpr\ttpr\tthreshold\n");
    for p in points {
        out.push_str(&format!("{}\t{}\t{}\n", p.fpr, p.tpr, p.threshold));
    }
    crate::imgio::write_atomic(path, out.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub accuracy: f64,
    /// `None` when the test split held a single class.
    pub auc: Option<f64>,
    pub best_epoch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub auc_mean: Option<f64>,
    pub auc_std: Option<f64>,
}

/// Per-fold metrics plus mean ± sample standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub folds: Vec<FoldMetrics>,
    pub summary: MetricSummary,
}

/// Sample standard deviation (n−1 denominator); 0 for a single value.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var =
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (values.len() - 1) as f64;
    var.sqrt()
}

impl RunMetrics {
    pub fn aggregate(folds: Vec<FoldMetrics>) -> Result<Self> {
        if folds.is_empty() {
            return Err(Error::EmptyInput("fold metrics"));
        }
        let accs: Vec<f64> = folds.iter().map(|f| f.accuracy).collect();
        let aucs: Vec<f64> = folds.iter().filter_map(|f| f.auc).collect();
        let summary = MetricSummary {
            accuracy_mean: accs.iter().sum::<f64>() / accs.len() as f64,
            accuracy_std: sample_std(&accs),
            auc_mean: (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64),
            auc_std: (!aucs.is_empty()).then(|| sample_std(&aucs)),
        };
        Ok(RunMetrics { folds, summary })
    }

    /// Aligned human-readable table.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str("fold   n_train  n_val  n_test  accuracy      auc\n");
        for f in &self.folds {
            out.push_str(&format!(
                "{:<6} {:<8} {:<6} {:<7} {:<12.4} {}\n",
                f.fold,
                f.n_train,
                f.n_val,
                f.n_test,
                f.accuracy,
                f.auc.map_or("n/a".to_string(), |a| format!("{a:.4}")),
            ));
        }
        out.push_str(&format!(
            "mean   accuracy {:.4} ± {:.4}   auc {} ± {}\n",
            self.summary.accuracy_mean,
            self.summary.accuracy_std,
            self.summary
                .auc_mean
                .map_or("n/a".into(), |a| format!("{a:.4}")),
            self.summary
                .auc_std
                .map_or("n/a".to_string(), |a| format!("{a:.4}")),
        ));
        out
    }
}
