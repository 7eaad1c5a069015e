//! Binary classification metrics at a 0.5 threshold plus rank-based AUC.

use std::fmt;

use crate::error::{AcitError, Result};

pub const THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub acc: f64,
    /// `None` when only one class is present.
    pub auc: Option<f64>,
    pub f1: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

impl Metrics {
    pub fn n(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub const CSV_HEADER: &'static str = "acc,auc,f1,precision,recall,tp,fp,tn,fn";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            fmt_metric(Some(self.acc)),
            fmt_metric(self.auc),
            fmt_metric(self.f1),
            fmt_metric(self.precision),
            fmt_metric(self.recall),
            self.tp,
            self.fp,
            self.tn,
            self.fn_
        )
    }
}

/// Six decimals, or `undefined`.
pub fn fmt_metric(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.6}"),
        None => "undefined".to_string(),
    }
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "acc={} auc={} f1={} precision={} recall={} (tp={} fp={} tn={} fn={})",
            fmt_metric(Some(self.acc)),
            fmt_metric(self.auc),
            fmt_metric(self.f1),
            fmt_metric(self.precision),
            fmt_metric(self.recall),
            self.tp,
            self.fp,
            self.tn,
            self.fn_
        )
    }
}

/// Mann-Whitney AUC with average ranks for ties.
pub fn auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share their mean.
        let avg = (i + j + 2) as f64 / 2.0;
        for &k in &idx[i..=j] {
            if labels[k] == 1 {
                rank_sum += avg;
            }
        }
        i = j + 1;
    }
    let np = n_pos as f64;
    Some((rank_sum - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

pub fn compute_metrics(scores: &[f64], labels: &[u8]) -> Result<Metrics> {
    if scores.len() != labels.len() {
        return Err(AcitError::dim(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(AcitError::config("metrics need at least one sample"));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(AcitError::Validation(format!("labels must be 0 or 1, found {l}")));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(AcitError::Numeric(format!("non-finite score {s}")));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= THRESHOLD, l == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b > 0 { Some(a as f64 / b as f64) } else { None };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    Ok(Metrics {
        tp,
        fp,
        tn,
        fn_,
        acc: (tp + tn) as f64 / scores.len() as f64,
        auc: auc(scores, labels),
        f1,
        precision,
        recall,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_inverted() {
        let m = compute_metrics(&[0.9, 0.1], &[1, 0]).unwrap();
        assert_eq!((m.acc, m.auc, m.f1, m.precision, m.recall), (1.0, Some(1.0), Some(1.0), Some(1.0), Some(1.0)));
        let m = compute_metrics(&[0.1, 0.9], &[1, 0]).unwrap();
        assert_eq!((m.acc, m.auc, m.recall), (0.0, Some(0.0), Some(0.0)));
        assert_eq!(m.precision, Some(0.0));
        assert_eq!(m.f1, None);
    }

    #[test]
    fn single_class_leaves_auc_undefined() {
        let m = compute_metrics(&[0.2, 0.7], &[1, 1]).unwrap();
        assert_eq!(m.auc, None);
        assert_eq!(m.recall, Some(0.5));
    }

    #[test]
    fn ties_count_half() {
        assert_eq!(auc(&[0.5, 0.5], &[1, 0]), Some(0.5));
    }
}
