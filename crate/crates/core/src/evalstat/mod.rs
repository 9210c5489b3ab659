//! ROC statistics and score fusion.
//!
//! AUC is the Mann-Whitney statistic with ties credited one half. The ROC
//! curve is built independently from the sorted thresholds so the two
//! estimators can be cross-checked against each other.

mod aggregate;
mod fusion;
mod roc;
mod scores_io;
mod svg;

pub use aggregate::{cv_aggregate, Aggregate};
pub use fusion::{ensemble_score, tta_score, Scorer};
pub use roc::{auc, eer_metrics, hanley_mcneil_se, roc_curve, trapezoid_area, EerMetrics, RocPoint};
pub use scores_io::{read_scores_csv, write_roc_csv, write_scores_csv};
pub use svg::roc_svg;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Paired scores and binary labels (0 = benign, 1 = malignant).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub ids: Vec<String>,
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

impl ScoreSet {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        let ids = (0..scores.len()).map(|i| i.to_string()).collect();
        Self::with_ids(ids, scores, labels)
    }

    pub fn with_ids(ids: Vec<String>, scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.len() != labels.len() || ids.len() != scores.len() {
            return Err(Error::invalid(format!(
                "score set lists differ in length: {} ids, {} scores, {} labels",
                ids.len(),
                scores.len(),
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::invalid(format!("label {l} is not binary")));
        }
        if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
            return Err(Error::invalid(format!("non-finite score {s}")));
        }
        Ok(Self { ids, scores, labels })
    }

    pub fn from_pos_neg(pos: &[f64], neg: &[f64]) -> Result<Self> {
        let scores = pos.iter().chain(neg).copied().collect();
        let labels = std::iter::repeat_n(1u8, pos.len()).chain(std::iter::repeat_n(0u8, neg.len())).collect();
        Self::new(scores, labels)
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn n_pos(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn n_neg(&self) -> usize {
        self.len() - self.n_pos()
    }

    /// Same scores with every label inverted.
    pub fn flipped(&self) -> Self {
        Self { ids: self.ids.clone(), scores: self.scores.clone(), labels: self.labels.iter().map(|l| 1 - l).collect() }
    }

    pub(crate) fn require_both_classes(&self) -> Result<(usize, usize)> {
        let (p, n) = (self.n_pos(), self.n_neg());
        if p == 0 || n == 0 {
            return Err(Error::invalid(format!("AUC needs both classes, got {p} positive and {n} negative")));
        }
        Ok((p, n))
    }
}
