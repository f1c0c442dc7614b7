//! Estimation and classification metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mse {
    pub mse: f64,
    pub n_evaluated: usize,
    pub n_missing: usize,
}

/// Mean squared difference over cells where both sides are present.
pub fn mse(estimates: &[Option<f64>], reference: &[Option<f64>]) -> Result<Mse> {
    if estimates.len() != reference.len() {
        return Err(Error::ShapeMismatch("estimates vs reference".into()));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (e, r) in estimates.iter().zip(reference) {
        if let (Some(e), Some(r)) = (e, r) {
            sum += (e - r).powi(2);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::NoOverlap);
    }
    Ok(Mse {
        mse: sum / n as f64,
        n_evaluated: n,
        n_missing: estimates.len() - n,
    })
}

/// Same as [`mse`] for fully observed slices.
pub fn mse_dense(estimates: &[f64], reference: &[f64]) -> Result<f64> {
    if estimates.len() != reference.len() {
        return Err(Error::ShapeMismatch("estimates vs reference".into()));
    }
    if estimates.is_empty() {
        return Err(Error::NoOverlap);
    }
    Ok(estimates.iter().zip(reference).map(|(e, r)| (e - r).powi(2)).sum::<f64>() / estimates.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores at or above this value are called positive.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Roc {
    pub auc: f64,
    pub points: Vec<RocPoint>,
}

/// AUC from the Mann-Whitney rank sum with midranks for ties, plus the ROC
/// curve at every distinct score.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<Roc> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch("scores vs labels".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateLabels);
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("scores contain NaN"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut rank_sum_pos = 0.0;
    let mut k = 0;
    while k < order.len() {
        let mut end = k;
        while end + 1 < order.len() && scores[order[end + 1]] == scores[order[k]] {
            end += 1;
        }
        let midrank = (k + end) as f64 / 2.0 + 1.0;
        for &idx in &order[k..=end] {
            if labels[idx] {
                rank_sum_pos += midrank;
            }
        }
        k = end + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    let auc = u / (n_pos as f64 * n_neg as f64);

    // Walk thresholds from high to low.
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = order.len();
    while k > 0 {
        let s = scores[order[k - 1]];
        while k > 0 && scores[order[k - 1]] == s {
            if labels[order[k - 1]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k -= 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
            threshold: s,
        });
    }
    Ok(Roc { auc, points })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub mse: f64,
    /// NaN when only one class is present on the validation side.
    pub auc: f64,
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: f64,
    pub f1: f64,
    /// False when precision + sensitivity = 0 and f1 was set to 0.
    pub f1_defined: bool,
    pub n_evaluated: usize,
    pub n_missing: usize,
}

/// Confusion-matrix metrics of predicted counts against observed validation
/// counts. A cell is positive when its observed count is nonzero and predicted
/// positive when the prediction reaches `threshold`. Cells missing on either
/// side are skipped and counted in `n_missing`.
pub fn classification_metrics(predicted: &[Option<f64>], observed: &[Option<u64>], threshold: f64) -> Result<MetricSet> {
    if predicted.len() != observed.len() {
        return Err(Error::ShapeMismatch("predicted vs observed".into()));
    }
    let pairs: Vec<(f64, u64)> = predicted
        .iter()
        .zip(observed)
        .filter_map(|(p, o)| Some(((*p)?, (*o)?)))
        .collect();
    if pairs.is_empty() {
        return Err(Error::EmptyValidation);
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    let mut sq = 0.0;
    for &(p, o) in &pairs {
        sq += (p - o as f64).powi(2);
        match (p >= threshold, o > 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let ratio = |a: usize, b: usize| if a + b == 0 { 0.0 } else { a as f64 / (a + b) as f64 };
    let sensitivity = ratio(tp, fn_);
    let specificity = ratio(tn, fp);
    let precision = ratio(tp, fp);
    let f1_defined = precision + sensitivity > 0.0;
    let f1 = if f1_defined {
        2.0 * precision * sensitivity / (precision + sensitivity)
    } else {
        0.0
    };
    let scores: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let labels: Vec<bool> = pairs.iter().map(|p| p.1 > 0).collect();
    let auc = match roc_auc(&scores, &labels) {
        Ok(r) => r.auc,
        Err(Error::DegenerateLabels) => f64::NAN,
        Err(e) => return Err(e),
    };
    Ok(MetricSet {
        mse: sq / pairs.len() as f64,
        auc,
        accuracy: (tp + tn) as f64 / pairs.len() as f64,
        sensitivity,
        specificity,
        precision,
        f1,
        f1_defined,
        n_evaluated: pairs.len(),
        n_missing: predicted.len() - pairs.len(),
    })
}

pub fn pearson_correlation(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch("x vs y".into()));
    }
    if x.len() < 2 {
        return Err(Error::invalid("correlation needs at least two pairs"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok(sxy / (sxx * syy).sqrt())
}
