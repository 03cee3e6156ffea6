//! Evaluation: AUC, MAE, score merging, top-K ranking, Gini diversity and
//! encoder-alignment diagnostics.

mod alignment;
mod eval;
mod ranking;
mod report;
#[cfg(test)]
mod tests;

pub use alignment::{alignment_stats, AlignmentStats, EMBEDDING_EXPORT_SOURCES};
pub use eval::{evaluate, predict, EvalMode, Predictions};
pub use ranking::{
    diversity_eval, rank_topk, sample_requests, top_k, CandidatePool, DiversityReport, GiniPair, RankRequest,
};
pub use report::{MetricsReport, TaskMetric};

use std::cmp::Ordering;

use crate::diffcore::sigmoid;
use crate::error::{Error, Result};
use crate::models::TaskKind;

/// Area under the ROC curve via the Mann-Whitney rank statistic.
///
/// Tied scores share the average of their ranks, which counts every tied
/// positive/negative pair as one half.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Metric(format!(
            "auc: {} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metric("auc: NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1.0).count();
    let n_neg = labels.iter().filter(|&&y| y == 0.0).count();
    if n_pos + n_neg != labels.len() {
        return Err(Error::Metric("auc: labels must be 0 or 1".into()));
    }
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Metric(format!(
            "auc undefined with {n_pos} positives and {n_neg} negatives"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j share their mean
        let avg = (i + 1 + j) as f64 / 2.0;
        let pos = order[i..j].iter().filter(|&&k| labels[k] == 1.0).count();
        pos_rank_sum += avg * pos as f64;
        i = j;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

pub fn mae(preds: &[f64], targets: &[f64]) -> Result<f64> {
    if preds.is_empty() || preds.len() != targets.len() {
        return Err(Error::Metric(format!(
            "mae over {} predictions and {} targets",
            preds.len(),
            targets.len()
        )));
    }
    Ok(preds.iter().zip(targets).map(|(p, t)| (p - t).abs()).sum::<f64>() / preds.len() as f64)
}

/// Default ranking weights: 1 for click heads, 0.05 for watch-time heads.
pub fn default_merge_weights(kinds: &[TaskKind]) -> Vec<f64> {
    kinds
        .iter()
        .map(|k| match k {
            TaskKind::Binary => 1.0,
            TaskKind::Regression => 0.05,
        })
        .collect()
}

/// Final ranking score `r = sum_m w_m g(p_m)` for every row of the
/// row-major `[N, M]` prediction matrix; `g` is the sigmoid for binary
/// heads and the identity for regression heads.
pub fn merge_scores(preds: &[f64], kinds: &[TaskKind], weights: &[f64]) -> Result<Vec<f64>> {
    let m = kinds.len();
    if weights.len() != m {
        return Err(Error::Config(format!(
            "{} merge weights for {m} tasks",
            weights.len()
        )));
    }
    if m == 0 || preds.len() % m != 0 {
        return Err(Error::Shape(format!("{} predictions for {m} tasks", preds.len())));
    }
    Ok(preds
        .chunks_exact(m)
        .map(|row| {
            row.iter()
                .zip(kinds)
                .zip(weights)
                .map(|((&p, kind), w)| {
                    w * match kind {
                        TaskKind::Binary => sigmoid(p),
                        TaskKind::Regression => p,
                    }
                })
                .sum()
        })
        .collect())
}

/// Gini coefficient of exposure counts from the sorted form
/// `sum_i (2i - n - 1) x_(i) / (n sum x)` with ascending `x`, `i = 1..n`.
pub fn gini(counts: &[f64]) -> Result<f64> {
    if counts.is_empty() {
        return Err(Error::Metric("gini of an empty count map".into()));
    }
    if counts.iter().any(|&c| c < 0.0 || !c.is_finite()) {
        return Err(Error::Metric("gini counts must be finite and non-negative".into()));
    }
    let total: f64 = counts.iter().sum();
    if total <= 0.0 {
        return Err(Error::Metric("gini needs a positive total count".into()));
    }
    let mut x = counts.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let weighted: f64 = x
        .iter()
        .enumerate()
        .map(|(i, &v)| (2.0 * (i + 1) as f64 - n - 1.0) * v)
        .sum();
    Ok(weighted / (n * total))
}

/// Gini over the values of a key -> count map.
pub fn gini_map<K>(counts: &std::collections::BTreeMap<K, u64>) -> Result<f64> {
    let v: Vec<f64> = counts.values().map(|&c| c as f64).collect();
    gini(&v)
}

/// Descending by score, ties by ascending key.
pub(crate) fn rank_order(scores: &[f64], keys: &[u32]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| match scores[b].total_cmp(&scores[a]) {
        Ordering::Equal => keys[a].cmp(&keys[b]),
        o => o,
    });
    idx
}
