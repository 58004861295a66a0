//! Per-trajectory diagnostics: entry into and permanent stay inside the robust
//! ratio interval, eventual sign of `Delta`, final-state convergence.

use spinadapt_core::{
    bures_distance, AngularMomentumOps, QuantumError, RobustBounds, TrajectoryRecord,
};

/// When a ratio series settled inside the robust interval for good.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExitTime {
    /// Time of the sample at which the series re-entered the interval after
    /// its last excursion (the first sample time if it never left).
    At(f64),
    /// The final sample is outside the interval.
    NeverInside,
}

impl ExitTime {
    pub fn time(&self) -> Option<f64> {
        match self {
            Self::At(t) => Some(*t),
            Self::NeverInside => None,
        }
    }
}

/// Last exit time of `ratios` (sampled at `times`) from the open interval
/// `(1 + alpha, 1 + beta)`. Panics on an empty or ragged series.
pub fn last_exit_time(times: &[f64], ratios: &[f64], bounds: &RobustBounds<f64>) -> ExitTime {
    assert!(!times.is_empty() && times.len() == ratios.len(), "series must be nonempty and aligned");
    match ratios.iter().rposition(|&r| !bounds.contains_ratio(r)) {
        None => ExitTime::At(times[0]),
        Some(i) if i + 1 == ratios.len() => ExitTime::NeverInside,
        Some(i) => ExitTime::At(times[i + 1]),
    }
}

/// First sample time at which the ratio is inside the interval.
pub fn first_entry_time(times: &[f64], ratios: &[f64], bounds: &RobustBounds<f64>) -> Option<f64> {
    ratios
        .iter()
        .position(|&r| bounds.contains_ratio(r))
        .map(|i| times[i])
}

/// Last sample time at which `values < threshold`, if any.
pub fn last_time_below(times: &[f64], values: &[f64], threshold: f64) -> Option<f64> {
    values.iter().rposition(|&v| v < threshold).map(|i| times[i])
}

/// Whether the record's final `d_B((rho, rho_hat), (rho_target, rho_target))`
/// is below `tol`.
pub fn check_convergence(
    record: &TrajectoryRecord<f64>,
    target: usize,
    tol: f64,
    ops: &AngularMomentumOps<f64>,
) -> Result<bool, QuantumError> {
    let s = &record.final_state;
    Ok(bures_distance(&s.rho, &s.rho_hat, target, target, ops)? < tol)
}
