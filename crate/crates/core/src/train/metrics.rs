use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::graph::{binarize_adjacency, correlation_adjacency, global_jaccard};

fn check_inputs(scores: &[f64], labels: &[u8], what: &str) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{what}: {} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("{what}: scores")));
    }
    let pos = labels.iter().filter(|&&l| l != 0).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass(what.to_string()));
    }
    Ok((pos, neg))
}

/// Mann–Whitney estimate `P(s⁺ > s⁻) + ½·P(s⁺ = s⁻)` via midranks.
pub fn compute_auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check_inputs(scores, labels, "compute_auroc")?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] != 0 {
                rank_sum += midrank;
            }
        }
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdPolicy {
    /// Every distinct score is tried as a `score ≥ threshold` cut; the highest
    /// F1 wins, ties going to the larger threshold.
    OptimalF1,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub f1: f64,
    pub accuracy: f64,
    pub recall: f64,
    pub threshold: f64,
}

/// F1, accuracy and recall of the cut `score ≥ threshold`. F1 is 0 when
/// there are no true positives.
pub fn metrics_at(scores: &[f64], labels: &[u8], threshold: f64) -> BinaryMetrics {
    let (mut tp, mut fp, mut fneg, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l != 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => tn += 1,
        }
    }
    let f1 = if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
    };
    BinaryMetrics {
        f1,
        accuracy: (tp + tn) as f64 / scores.len() as f64,
        recall: if tp + fneg == 0 { 0.0 } else { tp as f64 / (tp + fneg) as f64 },
        threshold,
    }
}

pub fn compute_f1_acc_recall(scores: &[f64], labels: &[u8], policy: ThresholdPolicy) -> Result<BinaryMetrics> {
    let (pos, _) = check_inputs(scores, labels, "compute_f1_acc_recall")?;
    match policy {
        ThresholdPolicy::Fixed(t) => Ok(metrics_at(scores, labels, t)),
        ThresholdPolicy::OptimalF1 => {
            let mut order: Vec<usize> = (0..scores.len()).collect();
            order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
            let total = scores.len();
            let (mut tp, mut fp) = (0usize, 0usize);
            let mut best: Option<(f64, usize, usize, f64)> = None;
            let mut i = 0;
            while i < total {
                let t = scores[order[i]];
                while i < total && scores[order[i]] == t {
                    if labels[order[i]] != 0 {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                    i += 1;
                }
                let f1 = 2.0 * tp as f64 / (tp + fp + pos) as f64;
                if best.is_none_or(|b| f1 > b.0) {
                    best = Some((f1, tp, fp, t));
                }
            }
            let (f1, tp, fp, threshold) = best.expect("non-empty scores");
            let tn = total - pos - fp;
            Ok(BinaryMetrics {
                f1,
                accuracy: (tp + tn) as f64 / total as f64,
                recall: tp as f64 / pos as f64,
                threshold,
            })
        }
    }
}

/// Cosine similarity of matching rows, skipping rows where either side has
/// zero norm. `None` when every row was skipped.
pub fn row_cosine(pred: &Tensor, truth: &Tensor) -> Option<f64> {
    let mut acc = 0.0;
    let mut count = 0;
    for i in 0..pred.rows() {
        let (a, b) = (pred.row_slice(i), truth.row_slice(i));
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            continue;
        }
        acc += a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb);
        count += 1;
    }
    (count > 0).then(|| acc / count as f64)
}

/// GJI between the top-`tau` edges of the adjacency derived from predicted
/// node attributes and those of the true adjacency.
pub fn forecast_gji(pred: &Tensor, truth_adjacency: &Tensor, tau: usize) -> Result<f64> {
    let g = correlation_adjacency(pred, tau)?;
    let pe = binarize_adjacency(&g.adjacency, tau)?;
    let te = binarize_adjacency(truth_adjacency, tau)?;
    Ok(global_jaccard(&te, &pe))
}

/// Held-out evaluation summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auroc: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub recall: f64,
    pub gji: f64,
    pub cosine_similarity: f64,
    pub nfe: usize,
    pub wall_seconds: f64,
}
