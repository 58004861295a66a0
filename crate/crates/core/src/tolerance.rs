//! Numerical tolerances shared by the library and its tests.

/// Hermiticity and unit-trace slack for a valid density matrix.
pub const ALGEBRAIC: f64 = 1e-10;

/// Slack on the smallest eigenvalue of a valid density matrix.
pub const SPECTRAL: f64 = 1e-9;

/// Negative radicands in the Bures distance down to this value are clamped to 0.
pub const RADICAND: f64 = 1e-12;

/// Anti-Hermitian part (max-abs entry) above which an Euler step is treated
/// as numerically broken rather than re-Hermitized.
pub const HERMITIAN_BREAKDOWN: f64 = 1e-6;

/// Smallest trace accepted when renormalizing a clipped state.
pub const MIN_TRACE: f64 = 1e-12;
