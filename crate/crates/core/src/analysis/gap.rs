//! Measured suboptimality `Σ_p Z_p(f̄(t)) − Σ_p Z_p(f̄(T))` of a finished run.

use crate::error::{Error, Result};
use crate::trace::RunTrace;

/// Objective after round `t` minus the objective after the final round.
/// Refuses traces whose final consensus residual exceeds `residual_tol`.
pub fn measure_gap(trace: &RunTrace, t: usize, residual_tol: f64) -> Result<f64> {
    let last = trace.last();
    if !(last.consensus_residual <= residual_tol) {
        return Err(Error::NotConverged { residual: last.consensus_residual, tolerance: residual_tol });
    }
    Ok(trace.at(t)?.objective - last.objective)
}
