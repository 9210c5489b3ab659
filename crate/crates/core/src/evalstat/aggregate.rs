use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    /// Population standard deviation (divisor N).
    pub std: f64,
}

pub fn cv_aggregate(values: &[f64]) -> Result<Aggregate> {
    if values.len() < 2 {
        return Err(Error::invalid(format!("aggregation needs at least 2 folds, got {}", values.len())));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(Aggregate { mean, std: var.sqrt() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_five_row() {
        let a = cv_aggregate(&[0.8891, 0.8880, 0.9486, 0.9882, 0.9350]).unwrap();
        assert!((a.mean - 0.9298).abs() <= 1e-4, "{a:?}");
        assert!((a.std - 0.0379).abs() <= 1e-4, "{a:?}");
    }

    #[test]
    fn degenerate_inputs() {
        assert!(cv_aggregate(&[0.7, 0.7, 0.7]).unwrap().std < 1e-12);
        assert_eq!(cv_aggregate(&[0.0, 1.0]).unwrap(), Aggregate { mean: 0.5, std: 0.5 });
        assert!(cv_aggregate(&[0.9]).is_err());
        assert!(cv_aggregate(&[]).is_err());
    }
}
