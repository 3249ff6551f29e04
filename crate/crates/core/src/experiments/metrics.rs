//! Loss and error measurements on runs and held-out data.

use crate::data::DataPoint;
use crate::error::{check_dim, Error, Result};
use crate::trace::RunTrace;
use crate::Vector;

/// Per-node empirical loss `C̄_p(t) = (C^R/B_p)·Σ L(y f_p(t)·x)` after round `t`.
pub fn empirical_loss(trace: &RunTrace, t: usize) -> Result<Vec<f64>> {
    Ok(trace.at(t)?.nodes.iter().map(|n| n.empirical_loss).collect())
}

/// Node-averaged `C̄(t)` for every round `0..=T`.
pub fn loss_curve(trace: &RunTrace) -> Vec<f64> {
    std::iter::once(&trace.initial).chain(&trace.records).map(|r| r.mean_empirical_loss()).collect()
}

/// Fraction of points with `sign(f·x) ≠ y`, where `sign(0) = +1`.
pub fn misclassification_rate(classifier: &Vector, test_set: &[DataPoint]) -> Result<f64> {
    if test_set.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    let mut wrong = 0usize;
    for p in test_set {
        check_dim(classifier.len(), p.x.len())?;
        let predicted = if classifier.dot(&p.x) >= 0.0 { 1.0 } else { -1.0 };
        if predicted != p.y {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / test_set.len() as f64)
}
