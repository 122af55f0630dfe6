//! Classification and regression metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Counts indexed `[predicted][observed]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn n_classes(&self) -> usize {
        self.labels.len()
    }
}

pub fn confusion(pred: &[usize], truth: &[usize], labels: &[&str]) -> Result<ConfusionMatrix> {
    if pred.len() != truth.len() {
        return Err(Error::invalid(format!(
            "{} predictions but {} observations",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::invalid("confusion matrix needs at least one instance"));
    }
    let k = labels.len();
    let mut counts = vec![vec![0u64; k]; k];
    for (&p, &t) in pred.iter().zip(truth) {
        if p >= k || t >= k {
            return Err(Error::invalid(format!("label index out of range for {k} classes")));
        }
        counts[p][t] += 1;
    }
    Ok(ConfusionMatrix {
        labels: labels.iter().map(|s| s.to_string()).collect(),
        counts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    /// Never predicted: precision set to 0.
    pub precision_undefined: bool,
    /// Never observed: recall set to 0.
    pub recall_undefined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationSummary {
    pub per_class: Vec<ClassScores>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub accuracy: f64,
}

pub fn precision_recall_accuracy(cm: &ConfusionMatrix) -> Result<ClassificationSummary> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::invalid("confusion matrix is empty"));
    }
    let k = cm.n_classes();
    let per_class: Vec<ClassScores> = (0..k)
        .map(|c| {
            let tp = cm.counts[c][c] as f64;
            let predicted: u64 = cm.counts[c].iter().sum();
            let observed: u64 = (0..k).map(|p| cm.counts[p][c]).sum();
            ClassScores {
                precision: if predicted == 0 { 0.0 } else { tp / predicted as f64 },
                recall: if observed == 0 { 0.0 } else { tp / observed as f64 },
                precision_undefined: predicted == 0,
                recall_undefined: observed == 0,
            }
        })
        .collect();
    let trace: u64 = (0..k).map(|c| cm.counts[c][c]).sum();
    Ok(ClassificationSummary {
        macro_precision: per_class.iter().map(|s| s.precision).sum::<f64>() / k as f64,
        macro_recall: per_class.iter().map(|s| s.recall).sum::<f64>() / k as f64,
        accuracy: trace as f64 / total as f64,
        per_class,
    })
}

/// Area under the ROC curve; tied scores form a single threshold step (half credit).
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::invalid("scores and labels differ in length"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("scores contain NaN"));
    }
    let n_pos = labels.iter().filter(|&&l| l).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid("ROC AUC needs both classes present"));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the Mann-Whitney U statistic, kept in integers.
    let mut twice_u: u64 = 0;
    let mut neg_below: u64 = 0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0u64, 0u64);
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            if labels[idx[j]] {
                pos += 1;
            } else {
                neg += 1;
            }
            j += 1;
        }
        twice_u += 2 * pos * neg_below + pos * neg;
        neg_below += neg;
        i = j;
    }
    Ok(twice_u as f64 / (2 * n_pos * n_neg) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MulticlassAuc {
    pub macro_auc: f64,
    /// `None` for classes absent from the labels.
    pub per_class: Vec<Option<f64>>,
    pub excluded: Vec<usize>,
}

/// Macro one-vs-rest AUC over the classes present in `labels`.
pub fn multiclass_auc(probs: &Matrix, labels: &[usize]) -> Result<MulticlassAuc> {
    if probs.n_rows() != labels.len() {
        return Err(Error::invalid("probability rows and labels differ in length"));
    }
    let k = probs.n_cols();
    let mut present = vec![false; k];
    for &l in labels {
        if l >= k {
            return Err(Error::invalid(format!("label {l} out of range for {k} classes")));
        }
        present[l] = true;
    }
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::invalid("multiclass AUC needs at least two classes present"));
    }
    let mut per_class = Vec::with_capacity(k);
    let mut excluded = Vec::new();
    for c in 0..k {
        if !present[c] {
            per_class.push(None);
            excluded.push(c);
            continue;
        }
        let bin: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        per_class.push(Some(roc_auc(&probs.column(c), &bin)?));
    }
    let vals: Vec<f64> = per_class.iter().flatten().copied().collect();
    Ok(MulticlassAuc {
        macro_auc: vals.iter().sum::<f64>() / vals.len() as f64,
        per_class,
        excluded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub n: usize,
    pub mae: f64,
    /// Percent; `None` when every observation is zero.
    pub mape: Option<f64>,
    pub rmse: f64,
    /// Observations equal to zero, left out of MAPE.
    pub mape_excluded: usize,
}

pub fn regression_metrics(pred: &[f64], obs: &[f64]) -> Result<RegressionMetrics> {
    if pred.len() != obs.len() {
        return Err(Error::invalid(format!("{} predictions but {} observations", pred.len(), obs.len())));
    }
    if pred.is_empty() {
        return Err(Error::invalid("regression metrics need at least one pair"));
    }
    let n = pred.len() as f64;
    let mut abs = 0.0;
    let mut sq = 0.0;
    let mut pct = 0.0;
    let mut excluded = 0;
    for (&p, &o) in pred.iter().zip(obs) {
        let e = p - o;
        abs += e.abs();
        sq += e * e;
        if o == 0.0 {
            excluded += 1;
        } else {
            pct += (e / o).abs();
        }
    }
    let kept = pred.len() - excluded;
    Ok(RegressionMetrics {
        n: pred.len(),
        mae: abs / n,
        mape: (kept > 0).then(|| 100.0 * pct / kept as f64),
        rmse: (sq / n).sqrt(),
        mape_excluded: excluded,
    })
}
