//! Measurement-based adaptive feedback stabilization of N-level spin systems.
//!
//! The crate simulates a continuously monitored angular-momentum system whose
//! conditional state follows a stochastic master equation, an adaptive quantum
//! filter driven by the same homodyne record, and an online tuning law for the
//! measurement-strength parameter `theta = sqrt(eta * M)`.
//!
//! All numerical code is generic over the real scalar type through [`Real`].
//! The `*F64` aliases below fix the scalar to `f64`, which is what the
//! experiment runner uses; `f32` instantiations compile but will not meet the
//! `1e-10` algebraic tolerances.
//!
//! Module map:
//! - [`quantum`]: density matrices, spin operators, state functionals.
//! - [`sde`]: Euler–Maruyama stepping of the true system, the adaptive filter
//!   and the tuning law; single-trajectory simulation.
//! - [`control`]: feedback/feedforward inputs, robust ratio bounds, the
//!   `Delta` functional.
//! - [`oracle`]: closed-form equilibrium statistics of the tuning law and a
//!   brute-force scalar SDE Monte Carlo to check them.

pub use nalgebra::Complex;
use nalgebra::RealField;
use num_traits::ToPrimitive;

pub mod control;
pub mod oracle;
pub mod quantum;
pub mod sde;
pub mod tolerance;

pub use control::{
    condition_holds, delta_functional, robust_bounds, u_feedback, u_feedforward, ControlError,
    RobustBounds,
};
pub use oracle::{
    c_theta, c_x, gain_integral, mean_exact, mean_limit, scalar_sde_moments, variance_exact,
    variance_limit, EquilibriumScenario, MeanLimit, Moments, OracleError, VarianceLimit,
};
pub use quantum::{
    bures_distance, jz_mean, jz_variance, trace_norm_distance, AngularMomentumOps, CMatrix,
    DensityMatrix, QuantumError,
};
pub use sde::{
    advance, drift_true, euler_candidate, innovation_gain, simulate_trajectory, step_filter, step_theta, step_true,
    GainSchedule, InitialState, ParamError, Sample, SimError, SimState, StepOutput, SystemParams,
    TrajectoryRecord, TrajectorySetup, DEFAULT_THETA_FLOOR,
};

/// Real scalar the numerics are written against.
///
/// Blanket-implemented for every `nalgebra::RealField` that is `Copy` and
/// convertible to primitives, i.e. `f32` and `f64`.
pub trait Real: RealField + Copy + ToPrimitive {}

impl<T: RealField + Copy + ToPrimitive> Real for T {}

/// Converts an `f64` literal into the working scalar.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    nalgebra::convert(x)
}

/// Converts a working scalar to `f64` (used for I/O and tolerance checks).
#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

pub type DensityMatrixF64 = DensityMatrix<f64>;
pub type AngularMomentumOpsF64 = AngularMomentumOps<f64>;
pub type SystemParamsF64 = SystemParams<f64>;
pub type GainScheduleF64 = GainSchedule<f64>;
pub type TrajectorySetupF64 = TrajectorySetup<f64>;
pub type TrajectoryRecordF64 = TrajectoryRecord<f64>;
pub type RobustBoundsF64 = RobustBounds<f64>;
pub type EquilibriumScenarioF64 = EquilibriumScenario<f64>;
