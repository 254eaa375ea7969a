//! Per-image detection metrics.

use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::data::{DatasetSplit, Sample};
use crate::error::{Error, Result};
use crate::model::SegDecNet;
use crate::raster::Image;
use crate::real::Real;

/// Reporting threshold for CA, FP and FN unless told otherwise.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

fn check_lengths(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Argument(alloc::format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Argument("NaN score".into()));
    }
    Ok(())
}

/// Indices sorted by descending score.
fn descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    idx
}

/// Area under the step-interpolated precision-recall curve: the mean over
/// positives of the precision at the positive's score. Tied items all sit at
/// the worst rank of their tie group.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 {
        return Err(Error::UndefinedMetric("average precision needs at least one positive"));
    }
    let order = descending(scores);
    let (mut seen, mut seen_pos, mut sum) = (0usize, 0usize, 0.0f64);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let mut group_pos = 0;
        let mut j = i;
        while j < order.len() && scores[order[j]] == s {
            group_pos += usize::from(labels[order[j]]);
            j += 1;
        }
        seen += j - i;
        seen_pos += group_pos;
        sum += group_pos as f64 * seen_pos as f64 / seen as f64;
        i = j;
    }
    Ok(sum / n_pos as f64)
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("ROC AUC needs both positives and negatives"));
    }
    // ascending order, average ranks over ties (1-based)
    let mut order = descending(scores);
    order.reverse();
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let mut j = i;
        while j < order.len() && scores[order[j]] == s {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        rank_sum += avg_rank * order[i..j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMetrics {
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub ca: f64,
    pub f1: f64,
    pub macc: f64,
}

/// Confusion-derived metrics with predictions `score >= threshold`.
/// Without positives TPR counts as 1, without negatives TNR counts as 1, and
/// F1 is 1 when there is nothing to find and nothing was flagged.
pub fn threshold_metrics(scores: &[f64], labels: &[bool], threshold: f64) -> Result<ThresholdMetrics> {
    check_lengths(scores, labels)?;
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let total = scores.len();
    let ratio = |a: usize, b: usize| if b == 0 { 1.0 } else { a as f64 / b as f64 };
    let tpr = ratio(tp, tp + fn_);
    let tnr = ratio(tn, tn + fp);
    Ok(ThresholdMetrics {
        threshold,
        tp,
        fp,
        tn,
        fn_,
        ca: ratio(tp + tn, total),
        f1: ratio(2 * tp, 2 * tp + fp + fn_),
        macc: (tpr + tnr) / 2.0,
    })
}

/// Threshold maximizing F1 over every distinct score (lowest such threshold
/// on ties).
pub fn best_f1_threshold(scores: &[f64], labels: &[bool]) -> Result<ThresholdMetrics> {
    check_lengths(scores, labels)?;
    let mut candidates: Vec<f64> = scores.to_vec();
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    candidates.dedup();
    if candidates.is_empty() {
        return threshold_metrics(scores, labels, DEFAULT_THRESHOLD);
    }
    let mut best: Option<ThresholdMetrics> = None;
    for t in candidates {
        let m = threshold_metrics(scores, labels, t)?;
        if best.is_none_or(|b| m.f1 > b.f1) {
            best = Some(m);
        }
    }
    Ok(best.expect("at least one candidate"))
}

/// Points `(recall, precision, threshold)` at every distinct score, highest
/// threshold first.
pub fn pr_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64, f64)>> {
    check_lengths(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 {
        return Err(Error::UndefinedMetric("PR curve needs at least one positive"));
    }
    let order = descending(scores);
    let mut out = Vec::new();
    let (mut seen, mut tp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            tp += usize::from(labels[order[i]]);
            seen += 1;
            i += 1;
        }
        out.push((tp as f64 / n_pos as f64, tp as f64 / seen as f64, s));
    }
    Ok(out)
}

/// Points `(fpr, tpr, threshold)` starting from `(0, 0, +inf)`.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64, f64)>> {
    check_lengths(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("ROC curve needs both classes"));
    }
    let order = descending(scores);
    let mut out = alloc::vec![(0.0, 0.0, f64::INFINITY)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64, s));
    }
    Ok(out)
}

/// Anything that maps a sample to a defect probability.
pub trait Scorer {
    fn score_sample(&self, sample: &Sample) -> Result<f64>;
}

impl<T: Real> Scorer for SegDecNet<T> {
    fn score_sample(&self, sample: &Sample) -> Result<f64> {
        score_image(self, &sample.image)
    }
}

/// Adapts a closure into a [`Scorer`].
pub struct FnScorer<F>(pub F);

impl<F: Fn(&Sample) -> f64> Scorer for FnScorer<F> {
    fn score_sample(&self, sample: &Sample) -> Result<f64> {
        Ok((self.0)(sample))
    }
}

/// `sigmoid(C_p)` for one image.
pub fn score_image<T: Real>(model: &SegDecNet<T>, image: &Image) -> Result<f64> {
    model.score(image)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ThresholdPolicy {
    Fixed(f64),
    BestF1,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredImage {
    pub id: String,
    pub score: f64,
    pub positive: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub images: Vec<ScoredImage>,
    pub ap: f64,
    pub auc: f64,
    /// Metrics at the policy threshold.
    pub at_threshold: ThresholdMetrics,
    /// Metrics at the F1-maximizing threshold.
    pub best_f1: ThresholdMetrics,
}

impl EvalReport {
    pub fn from_scores(images: Vec<ScoredImage>, policy: ThresholdPolicy) -> Result<Self> {
        let scores: Vec<f64> = images.iter().map(|i| i.score).collect();
        let labels: Vec<bool> = images.iter().map(|i| i.positive).collect();
        let ap = average_precision(&scores, &labels)?;
        let auc = roc_auc(&scores, &labels)?;
        let best_f1 = best_f1_threshold(&scores, &labels)?;
        let at_threshold = match policy {
            ThresholdPolicy::Fixed(t) => {
                if !(0.0..=1.0).contains(&t) {
                    return Err(Error::Argument(alloc::format!("threshold {t} outside [0, 1]")));
                }
                threshold_metrics(&scores, &labels, t)?
            }
            ThresholdPolicy::BestF1 => best_f1,
        };
        Ok(EvalReport { images, ap, auc, at_threshold, best_f1 })
    }

    pub fn scores(&self) -> Vec<f64> {
        self.images.iter().map(|i| i.score).collect()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.images.iter().map(|i| i.positive).collect()
    }
}

pub fn evaluate_split(scorer: &impl Scorer, split: &DatasetSplit, policy: ThresholdPolicy) -> Result<EvalReport> {
    if split.is_empty() {
        return Err(Error::Argument("cannot evaluate an empty split".into()));
    }
    let images = split
        .samples
        .iter()
        .map(|s| Ok(ScoredImage { id: s.id.clone(), score: scorer.score_sample(s)?, positive: s.positive }))
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_scores(images, policy)
}
