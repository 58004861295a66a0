//! Control inputs, the robust ratio interval for `theta_hat / theta`, and the
//! `Delta` functional tracked as a convergence diagnostic.

use thiserror::Error;

use crate::quantum::{jz_mean, jz_variance, AngularMomentumOps, DensityMatrix, QuantumError};
use crate::sde::GainSchedule;
use crate::{lit, Real};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ControlError {
    #[error("dimension must be at least 2, got {0}")]
    DimensionTooSmall(usize),
    #[error("target level {n_bar} out of range for dimension {dim}")]
    TargetOutOfRange { n_bar: usize, dim: usize },
    #[error("middle-level bounds are undefined for dimension 2")]
    DegenerateMiddle,
}

/// Open interval `(alpha, beta)` for `theta_hat / theta - 1` inside which a
/// stabilizing controller for target `n_bar` exists.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustBounds<T: Real> {
    pub n_bar: usize,
    pub alpha: T,
    pub beta: T,
    /// `L = 4 |J - n_bar| max(n_bar, 2J - n_bar)`, only for interior,
    /// non-middle targets.
    pub l: Option<u64>,
}

impl<T: Real> RobustBounds<T> {
    /// Lower end `1 + alpha` of the admissible ratio interval.
    pub fn ratio_lower(&self) -> T {
        T::one() + self.alpha
    }

    /// Upper end `1 + beta`.
    pub fn ratio_upper(&self) -> T {
        T::one() + self.beta
    }

    /// Strict membership of a ratio `theta_hat / theta`.
    pub fn contains_ratio(&self, ratio: T) -> bool {
        let excess = ratio - T::one();
        self.alpha < excess && excess < self.beta
    }
}

/// Robust bounds for an `n`-level system and target `n_bar`.
pub fn robust_bounds<T: Real>(n: usize, n_bar: usize) -> Result<RobustBounds<T>, ControlError> {
    if n < 2 {
        return Err(ControlError::DimensionTooSmall(n));
    }
    let two_j = n - 1;
    if n_bar > two_j {
        return Err(ControlError::TargetOutOfRange { n_bar, dim: n });
    }
    let nf = n as f64;
    if n_bar == 0 || n_bar == two_j {
        let alpha = -1.0 / (2.0 * nf - 1.0);
        let beta = 0.5 * (((nf + 1.0) / (nf - 1.0)).sqrt() - 1.0);
        return Ok(RobustBounds {
            n_bar,
            alpha: lit(alpha),
            beta: lit(beta),
            l: None,
        });
    }
    if 2 * n_bar == two_j {
        if n == 2 {
            return Err(ControlError::DegenerateMiddle);
        }
        let w = 1.0 / (nf - 2.0);
        return Ok(RobustBounds {
            n_bar,
            alpha: lit(-w),
            beta: lit(w),
            l: None,
        });
    }
    // 4|J - n_bar| = 2|2J - 2 n_bar|, an integer for half-integer J as well.
    let l = 2 * (two_j as i64 - 2 * n_bar as i64).unsigned_abs() * n_bar.max(two_j - n_bar) as u64;
    let lf = l as f64;
    Ok(RobustBounds {
        n_bar,
        alpha: lit(-1.0 / (lf + 1.0)),
        beta: lit(1.0 / (lf - 1.0)),
        l: Some(l),
    })
}

/// `alpha < theta_hat / theta - 1 < beta`, strictly.
pub fn condition_holds<T: Real>(theta_hat: T, theta: T, bounds: &RobustBounds<T>) -> bool {
    bounds.contains_ratio(theta_hat / theta)
}

/// `gain_fb * (1 - Tr[rho_hat target])^2`.
pub fn u_feedback<T: Real>(
    rho_hat: &DensityMatrix<T>,
    target: &DensityMatrix<T>,
    gain_fb: T,
) -> Result<T, QuantumError> {
    let miss = T::one() - rho_hat.overlap(target)?;
    Ok(gain_fb * miss * miss)
}

/// `f(t)^2`.
pub fn u_feedforward<T: Real>(t: T, gain: &GainSchedule<T>) -> T {
    let f = gain.f(t);
    f * f
}

/// `3 V^2 + 2 V V_hat + 3 V_hat^2 - 2 V_hat (Tr[J_z (rho - rho_hat)] + Tr[J_z rho_hat] (1 - theta_hat / theta))`
/// with `V`, `V_hat` the `J_z` variances of `rho` and `rho_hat`.
pub fn delta_functional<T: Real>(
    rho: &DensityMatrix<T>,
    rho_hat: &DensityMatrix<T>,
    theta_hat: T,
    theta: T,
    ops: &AngularMomentumOps<T>,
) -> Result<T, QuantumError> {
    let v = jz_variance(rho, ops)?;
    let v_hat = jz_variance(rho_hat, ops)?;
    let x = jz_mean(rho, ops)?;
    let x_hat = jz_mean(rho_hat, ops)?;
    let three: T = lit(3.0);
    let two: T = lit(2.0);
    let quadratic = three * v * v + two * v * v_hat + three * v_hat * v_hat;
    let cross = two * v_hat * ((x - x_hat) + x_hat * (T::one() - theta_hat / theta));
    Ok(quadratic - cross)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::build_ops;

    #[test]
    fn bounds_endpoint_n5() {
        let b = robust_bounds::<f64>(5, 0).unwrap();
        assert!((b.alpha + 1.0 / 9.0).abs() < 1e-15);
        assert!((b.beta - 0.5 * (1.5f64.sqrt() - 1.0)).abs() < 1e-15);
        assert!((b.ratio_lower() - 0.889).abs() < 5e-4);
        assert!((b.ratio_upper() - 1.11).abs() < 5e-3);
        assert_eq!(robust_bounds::<f64>(5, 4).unwrap().alpha, b.alpha);
    }

    #[test]
    fn bounds_middle_and_interior_n5() {
        let b = robust_bounds::<f64>(5, 2).unwrap();
        assert!((b.alpha + 1.0 / 3.0).abs() < 1e-15 && (b.beta - 1.0 / 3.0).abs() < 1e-15);
        let b = robust_bounds::<f64>(5, 1).unwrap();
        assert_eq!(b.l, Some(12));
        assert!((b.alpha + 1.0 / 13.0).abs() < 1e-15 && (b.beta - 1.0 / 11.0).abs() < 1e-15);
        assert_eq!(robust_bounds::<f64>(5, 3).unwrap().l, Some(12));
    }

    #[test]
    fn bounds_half_integer_spin() {
        // N = 4, J = 3/2, n_bar = 1: L = 4 * 1/2 * 2 = 4.
        let b = robust_bounds::<f64>(4, 1).unwrap();
        assert_eq!(b.l, Some(4));
    }

    #[test]
    fn bounds_errors() {
        assert_eq!(
            robust_bounds::<f64>(5, 5).unwrap_err(),
            ControlError::TargetOutOfRange { n_bar: 5, dim: 5 }
        );
        assert_eq!(robust_bounds::<f64>(1, 0).unwrap_err(), ControlError::DimensionTooSmall(1));
    }

    #[test]
    fn bounds_interval_contains_one() {
        for n in 3..=12 {
            for n_bar in 0..n {
                let b = robust_bounds::<f64>(n, n_bar).unwrap();
                assert!(b.alpha < 0.0 && 0.0 < b.beta, "n={n} n_bar={n_bar}");
                assert!(b.contains_ratio(1.0));
            }
        }
    }

    #[test]
    fn endpoint_beta_decreases_with_n() {
        let betas: Vec<f64> = (3..=50).map(|n| robust_bounds::<f64>(n, 0).unwrap().beta).collect();
        assert!(betas.windows(2).all(|w| w[1] < w[0]));
        assert!(*betas.last().unwrap() < 0.011);
    }

    #[test]
    fn condition_examples() {
        let b = robust_bounds::<f64>(5, 0).unwrap();
        let theta = 0.9f64.sqrt();
        assert!(condition_holds(theta, theta, &b));
        assert!(!condition_holds(1.2 * theta, theta, &b));
        assert!(condition_holds(0.9 * theta, theta, &b));
        let edge = RobustBounds { n_bar: 0, alpha: -0.5, beta: 0.5, l: None };
        assert!(!condition_holds(1.5, 1.0, &edge));
        assert!(!condition_holds(0.5, 1.0, &edge));
    }

    #[test]
    fn feedback_examples() {
        let o = build_ops::<f64>(5).unwrap();
        let target = o.equilibrium(0).unwrap();
        assert_eq!(u_feedback(target, target, 4.0).unwrap(), 0.0);
        let mixed = DensityMatrix::maximally_mixed(5).unwrap();
        assert!((u_feedback(&mixed, target, 4.0).unwrap() - 2.56).abs() < 1e-14);
        assert_eq!(u_feedback(o.equilibrium(3).unwrap(), target, 4.0).unwrap(), 4.0);
    }

    #[test]
    fn feedforward_examples() {
        let g = GainSchedule::new(20.0, 0.6).unwrap();
        assert_eq!(u_feedforward(0.0, &g), 1.0);
        assert!((u_feedforward(1.0, &g) - 21f64.powf(-1.2)).abs() < 1e-15);
        assert!((u_feedforward(1.0, &g) - 0.025_902_211_566).abs() < 1e-11);
        let flat = GainSchedule::new(20.0, 0.0).unwrap();
        assert!([0.0, 1.0, 1e3].iter().all(|&t| u_feedforward(t, &flat) == 1.0));
        let grid: Vec<f64> = (0..1000).map(|k| u_feedforward(k as f64 * 0.37, &g)).collect();
        assert!(grid.windows(2).all(|w| w[1] <= w[0] && w[1] > 0.0));
    }

    #[test]
    fn delta_examples() {
        let o = build_ops::<f64>(5).unwrap();
        let theta = 0.9f64.sqrt();
        let r0 = o.equilibrium(0).unwrap();
        assert_eq!(delta_functional(r0, r0, theta, theta, &o).unwrap(), 0.0);

        let mixed = DensityMatrix::maximally_mixed(5).unwrap();
        let v = jz_variance(&mixed, &o).unwrap();
        let d = delta_functional(&mixed, &mixed, theta, theta, &o).unwrap();
        assert!((d - 8.0 * v * v).abs() < 1e-12);

        let d = delta_functional(&mixed, r0, theta, theta, &o).unwrap();
        assert!((d - 12.0).abs() < 1e-12);
    }

    #[test]
    fn delta_zero_on_eigenprojectors_for_any_theta_hat() {
        let o = build_ops::<f64>(5).unwrap();
        for a in o.equilibria() {
            for b in o.equilibria() {
                for th in [0.0, 0.3, 5.0] {
                    assert_eq!(delta_functional(a, b, th, 0.9, &o).unwrap(), 0.0);
                }
            }
        }
    }
}
