use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Centered `[1/3, 1/3, 1/3]` convolution with zero padding.
pub fn smooth_scores(v: &[f64]) -> Vec<f64> {
    (0..v.len())
        .map(|i| {
            let left = if i > 0 { v[i - 1] } else { 0.0 };
            let right = v.get(i + 1).copied().unwrap_or(0.0);
            (left + v[i] + right) / 3.0
        })
        .collect()
}

/// `label[i] = d[i] ≤ threshold`.
pub fn distance_labels(d: &[f64], threshold: f64) -> Vec<bool> {
    d.iter().map(|&x| x <= threshold).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocResult {
    /// Score cut-offs; point `i` classifies `score ≥ thresholds[i]` as positive.
    /// The first entry is `+∞` and yields the `(0, 0)` point.
    pub thresholds: Vec<f64>,
    pub tpr: Vec<f64>,
    pub fpr: Vec<f64>,
    pub auc: f64,
}

pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<RocResult> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "roc_auc: {} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateLabels);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut thresholds = vec![f64::INFINITY];
    let mut tpr = vec![0.0];
    let mut fpr = vec![0.0];
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
        thresholds.push(s);
        tpr.push(tp as f64 / pos as f64);
        fpr.push(fp as f64 / neg as f64);
    }
    let auc = trapezoid(&fpr, &tpr);
    Ok(RocResult {
        thresholds,
        tpr,
        fpr,
        auc,
    })
}

pub(crate) fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| (xs[1] - xs[0]) * (ys[0] + ys[1]) / 2.0)
        .sum()
}

/// Indices of the `m` largest values (`descending`) or smallest, ties to the lower index.
pub fn top_indices(values: &[f64], m: usize, descending: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        let c = if descending {
            values[b].total_cmp(&values[a])
        } else {
            values[a].total_cmp(&values[b])
        };
        c.then(a.cmp(&b))
    });
    order.truncate(m);
    order
}

/// Binding Region Hit Rate: share of the `⌈t·n⌉` top-scored residues that are
/// also among the `⌈t·n⌉` closest residues.
pub fn brhr(scores: &[f64], distances: &[f64], t: f64) -> Result<f64> {
    if scores.is_empty() || distances.is_empty() {
        return Err(Error::Usage("brhr on empty vectors".into()));
    }
    if scores.len() != distances.len() {
        return Err(Error::Shape(format!(
            "brhr: {} scores vs {} distances",
            scores.len(),
            distances.len()
        )));
    }
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::Usage(format!("brhr fraction {t} outside (0, 1]")));
    }
    let n = scores.len();
    Ok(hit_rate(scores, distances, top_count(t, n)))
}

/// `⌈t·n⌉`, clamped to `[1, n]`. The slack keeps products such as `0.3 · 10`
/// (which rounds to `3.0000000000000004`) from ceiling one past the intended count.
pub fn top_count(t: f64, n: usize) -> usize {
    ((t * n as f64 - 1e-9).ceil() as usize).clamp(1, n.max(1))
}

fn hit_rate(scores: &[f64], distances: &[f64], m: usize) -> f64 {
    let near = top_indices(distances, m, false);
    let hits = top_indices(scores, m, true).iter().filter(|i| near.contains(i)).count();
    hits as f64 / m as f64
}
