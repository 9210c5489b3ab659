use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::ScoreSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Scores at or above the threshold are called positive. The first
    /// point of every curve uses `+inf`, written as `"inf"` in JSON.
    #[serde(with = "threshold_json")]
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

mod threshold_json {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if *v == f64::INFINITY {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad threshold {t:?}"))),
        }
    }
}

impl RocPoint {
    pub fn specificity(&self) -> f64 {
        1.0 - self.fpr
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EerMetrics {
    pub threshold: f64,
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

fn sorted_desc(s: &ScoreSet) -> Vec<(f64, u8)> {
    let mut v: Vec<(f64, u8)> = s.scores.iter().copied().zip(s.labels.iter().copied()).collect();
    v.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal));
    v
}

/// Mann-Whitney AUC over all positive/negative pairs, ties credited 1/2.
///
/// Counts are kept as doubled integers so the result is exact up to the
/// final division.
pub fn auc(s: &ScoreSet) -> Result<f64> {
    let (n_pos, n_neg) = s.require_both_classes()?;
    let v = sorted_desc(s);
    // walk from the highest score; for each tie block, every positive beats
    // all negatives still below it and ties with the negatives in the block
    let mut neg_remaining = n_neg as u64;
    let mut twice_wins: u64 = 0;
    let mut i = 0;
    while i < v.len() {
        let mut j = i;
        let (mut p, mut n) = (0u64, 0u64);
        while j < v.len() && v[j].0 == v[i].0 {
            if v[j].1 == 1 {
                p += 1;
            } else {
                n += 1;
            }
            j += 1;
        }
        neg_remaining -= n;
        twice_wins += p * (2 * neg_remaining + n);
        i = j;
    }
    Ok(twice_wins as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

/// One point per distinct threshold, starting at (0, 0) and ending at (1, 1).
pub fn roc_curve(s: &ScoreSet) -> Result<Vec<RocPoint>> {
    let (n_pos, n_neg) = s.require_both_classes()?;
    let v = sorted_desc(s);
    let mut points = vec![RocPoint { threshold: f64::INFINITY, tpr: 0.0, fpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < v.len() {
        let t = v[i].0;
        while i < v.len() && v[i].0 == t {
            if v[i].1 == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint { threshold: t, tpr: tp as f64 / n_pos as f64, fpr: fp as f64 / n_neg as f64 });
    }
    Ok(points)
}

/// Trapezoidal area under a ROC polyline.
pub fn trapezoid_area(points: &[RocPoint]) -> f64 {
    points.windows(2).map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) * 0.5).sum()
}

/// Standard error of an AUC estimate after Hanley and McNeil (1982).
pub fn hanley_mcneil_se(a: f64, n_pos: usize, n_neg: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&a) {
        return Err(Error::invalid(format!("AUC {a} outside [0, 1]")));
    }
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid("Hanley-McNeil SE needs at least one sample per class"));
    }
    let q1 = a / (2.0 - a);
    let q2 = 2.0 * a * a / (1.0 + a);
    let a2 = a * a;
    let (np, nn) = (n_pos as f64, n_neg as f64);
    let var = (a * (1.0 - a) + (np - 1.0) * (q1 - a2) + (nn - 1.0) * (q2 - a2)) / (np * nn);
    Ok(var.max(0.0).sqrt())
}

/// Operating point where sensitivity equals specificity.
///
/// Walks the ROC polyline and linearly interpolates inside the segment where
/// `tpr - (1 - fpr)` changes sign. The threshold is interpolated the same way,
/// with the leading `+inf` point replaced by the next finite threshold.
pub fn eer_metrics(s: &ScoreSet) -> Result<EerMetrics> {
    let (n_pos, n_neg) = s.require_both_classes()?;
    let pts = roc_curve(s)?;
    let gap = |p: &RocPoint| p.tpr + p.fpr - 1.0;
    let finite_threshold = |i: usize| {
        if pts[i].threshold.is_finite() {
            pts[i].threshold
        } else {
            pts[i + 1].threshold
        }
    };
    for i in 0..pts.len() - 1 {
        let (a, b) = (&pts[i], &pts[i + 1]);
        let (ga, gb) = (gap(a), gap(b));
        if ga <= 0.0 && gb >= 0.0 {
            let lambda = if ga == 0.0 || gb == ga { 0.0 } else { -ga / (gb - ga) };
            let tpr = a.tpr + lambda * (b.tpr - a.tpr);
            let fpr = a.fpr + lambda * (b.fpr - a.fpr);
            let (ta, tb) = (finite_threshold(i), finite_threshold(i + 1));
            let accuracy = (tpr * n_pos as f64 + (1.0 - fpr) * n_neg as f64) / (n_pos + n_neg) as f64;
            return Ok(EerMetrics { threshold: ta + lambda * (tb - ta), accuracy, sensitivity: tpr, specificity: 1.0 - fpr });
        }
    }
    unreachable!("ROC curves always run from (0,0) to (1,1)")
}
