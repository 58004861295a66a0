//! Closed-form statistics of the tuning law when both states sit at
//! equilibria with `u = 0`, plus a brute-force Monte Carlo of the scalar SDE
//!
//! ```text
//! d theta_hat = f(t) x_hat [ (theta x - theta_hat x_hat) dt + dW / 2 ]
//! ```
//!
//! that the closed forms (and the full simulator) are checked against.
//!
//! With `F(t) = int_0^t f` the mean and variance of `theta_hat(t)` solve
//! linear ODEs:
//!
//! ```text
//! E[theta_hat](t) = e^{-x_hat^2 F(t)} theta_hat(0) + (1 - e^{-x_hat^2 F(t)}) theta x / x_hat
//! V(t)            = (x_hat^2 / 4) e^{-2 x_hat^2 F(t)} int_0^t e^{2 x_hat^2 F(s)} f(s)^2 ds
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::sde::GainSchedule;
use crate::{lit, to_f64, Real};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("dimension must be at least 2, got {0}")]
    DimensionTooSmall(usize),
    #[error("level index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("filter level m = {0} is the middle level (x_hat = 0)")]
    MiddleFilterLevel(usize),
    #[error("theta must be > 0, got {0}")]
    NonPositiveTheta(f64),
    #[error("time must be >= 0, got {0}")]
    NegativeTime(f64),
    #[error("quadrature did not converge: estimated error {error:e} for value {value:e}")]
    QuadratureNotConverged { value: f64, error: f64 },
    #[error("Monte Carlo needs dt > 0 and at least 2 paths")]
    BadMonteCarlo,
}

/// True state at `rho_n`, filter at `rho_m` (`m != J`), no control.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquilibriumScenario<T: Real> {
    pub dim: usize,
    pub n: usize,
    pub m: usize,
    pub theta: T,
    pub theta_hat0: T,
    pub gain: GainSchedule<T>,
}

impl<T: Real> EquilibriumScenario<T> {
    pub fn new(
        dim: usize,
        n: usize,
        m: usize,
        theta: T,
        theta_hat0: T,
        gain: GainSchedule<T>,
    ) -> Result<Self, OracleError> {
        if dim < 2 {
            return Err(OracleError::DimensionTooSmall(dim));
        }
        for index in [n, m] {
            if index >= dim {
                return Err(OracleError::IndexOutOfRange { index, dim });
            }
        }
        if 2 * m == dim - 1 {
            return Err(OracleError::MiddleFilterLevel(m));
        }
        if !(theta > T::zero()) {
            return Err(OracleError::NonPositiveTheta(to_f64(theta)));
        }
        Ok(Self {
            dim,
            n,
            m,
            theta,
            theta_hat0,
            gain,
        })
    }

    pub fn j(&self) -> T {
        lit((self.dim as f64 - 1.0) / 2.0)
    }

    /// `x = J - n`.
    pub fn x(&self) -> T {
        self.j() - lit(self.n as f64)
    }

    /// `x_hat = J - m`, never zero.
    pub fn x_hat(&self) -> T {
        self.j() - lit(self.m as f64)
    }

    /// `theta (J - n) / (J - m)`.
    pub fn stationary_mean(&self) -> T {
        self.theta * self.x() / self.x_hat()
    }
}

/// `F(t) = int_0^t (K s + 1)^(-p) ds`.
pub fn gain_integral<T: Real>(t: T, gain: &GainSchedule<T>) -> T {
    let (k, p) = (gain.k(), gain.p());
    let base = k * t + T::one();
    if p == T::one() {
        base.ln() / k
    } else {
        let q = T::one() - p;
        (base.powf(q) - T::one()) / (k * q)
    }
}

/// Long-time mean of `theta_hat`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeanLimit<T> {
    /// `theta (J - n) / (J - m)` for `p <= 1`.
    Limit(T),
    /// `p > 1`: the limit depends on `theta_hat(0)`; `value` is the exact limit
    /// `e^{-x_hat^2 F(inf)} theta_hat(0) + (1 - e^{-x_hat^2 F(inf)}) theta x / x_hat`
    /// with `F(inf) = 1 / (K (p - 1))`.
    DependsOnInitial { value: T },
}

impl<T: Copy> MeanLimit<T> {
    pub fn value(&self) -> T {
        match *self {
            Self::Limit(v) | Self::DependsOnInitial { value: v } => v,
        }
    }
}

pub fn mean_limit<T: Real>(scenario: &EquilibriumScenario<T>) -> MeanLimit<T> {
    let gain = &scenario.gain;
    if gain.p() <= T::one() {
        return MeanLimit::Limit(scenario.stationary_mean());
    }
    let f_inf = T::one() / (gain.k() * (gain.p() - T::one()));
    let xh = scenario.x_hat();
    let decay = (-xh * xh * f_inf).exp();
    MeanLimit::DependsOnInitial {
        value: decay * scenario.theta_hat0 + (T::one() - decay) * scenario.stationary_mean(),
    }
}

/// `E[theta_hat(t)]` for a deterministic start.
pub fn mean_exact<T: Real>(t: T, scenario: &EquilibriumScenario<T>) -> T {
    let xh = scenario.x_hat();
    let decay = (-xh * xh * gain_integral(t, &scenario.gain)).exp();
    decay * scenario.theta_hat0 + (T::one() - decay) * scenario.stationary_mean()
}

/// `V(theta_hat(t))` for a deterministic start, by adaptive Gauss–Kronrod
/// quadrature of the inner integral. The integrand is evaluated as
/// `exp(2 x_hat^2 (F(s) - F(t))) f(s)^2` so nothing overflows.
pub fn variance_exact<T: Real>(t: T, scenario: &EquilibriumScenario<T>) -> Result<T, OracleError> {
    if t < T::zero() {
        return Err(OracleError::NegativeTime(to_f64(t)));
    }
    if t == T::zero() {
        return Ok(T::zero());
    }
    let gain = scenario.gain;
    let xh = scenario.x_hat();
    let c = lit::<T>(2.0) * xh * xh;
    let f_t = gain_integral(t, &gain);
    let integrand = |s: T| {
        let f = gain.f(s);
        (c * (gain_integral(s, &gain) - f_t)).exp() * f * f
    };
    let integral = integrate(integrand, T::zero(), t, lit(1e-11), lit(1e-8))?;
    Ok(xh * xh / lit(4.0) * integral)
}

/// Long-time variance of `theta_hat`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VarianceLimit<T> {
    Limit(T),
    /// `p > 1`: only `limsup V <= bound` is known.
    UpperBound(T),
    Infinite,
}

pub fn variance_limit<T: Real>(scenario: &EquilibriumScenario<T>) -> VarianceLimit<T> {
    let p = scenario.gain.p();
    if p > T::one() {
        VarianceLimit::UpperBound(lit(0.125))
    } else if p > T::zero() {
        VarianceLimit::Limit(T::zero())
    } else if p == T::zero() {
        VarianceLimit::Limit(lit(0.125))
    } else {
        VarianceLimit::Infinite
    }
}

/// `(1 - theta_hat / theta)^2`.
pub fn c_theta<T: Real>(theta_hat: T, theta: T) -> T {
    let e = T::one() - theta_hat / theta;
    e * e
}

/// `(x - x_hat)^2`.
pub fn c_x<T: Real>(x: T, x_hat: T) -> T {
    let e = x - x_hat;
    e * e
}

/// Sample statistics of one quantity across paths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments<T> {
    pub count: usize,
    pub mean: T,
    /// Unbiased sample variance.
    pub variance: T,
    /// Standard error of `mean`.
    pub se_mean: T,
    /// Standard error of `variance`, `sqrt((m4 - s^4) / n)` from the sample
    /// fourth central moment.
    pub se_variance: T,
}

impl<T: Real> Moments<T> {
    pub fn from_samples(xs: &[T]) -> Self {
        let count = xs.len();
        let nf: T = lit(count as f64);
        let mean = xs.iter().fold(T::zero(), |a, &x| a + x) / nf;
        let (m2, m4) = xs.iter().fold((T::zero(), T::zero()), |(a2, a4), &x| {
            let d = x - mean;
            let d2 = d * d;
            (a2 + d2, a4 + d2 * d2)
        });
        let variance = if count > 1 { m2 / (nf - T::one()) } else { T::zero() };
        let pop_var = m2 / nf;
        let kurt_term = m4 / nf - pop_var * pop_var;
        let kurt_term = if kurt_term > T::zero() { kurt_term } else { T::zero() };
        Self {
            count,
            mean,
            variance,
            se_mean: (variance / nf).sqrt(),
            se_variance: (kurt_term / nf).sqrt(),
        }
    }
}

/// Euler–Maruyama Monte Carlo of the equilibrium scalar SDE. Path `i` uses a
/// ChaCha8 stream seeded with `seed + i`. Returns moments of `theta_hat` at
/// each of `times` (rounded to the step grid). `floor` optionally clamps
/// `theta_hat` from below after every step.
pub fn scalar_sde_moments<T: Real>(
    scenario: &EquilibriumScenario<T>,
    dt: T,
    times: &[T],
    paths: usize,
    seed: u64,
    floor: Option<T>,
) -> Result<Vec<Moments<T>>, OracleError> {
    if !(dt > T::zero()) || paths < 2 {
        return Err(OracleError::BadMonteCarlo);
    }
    if let Some(&t) = times.iter().find(|&&t| t < T::zero()) {
        return Err(OracleError::NegativeTime(to_f64(t)));
    }
    let marks: Vec<usize> = times
        .iter()
        .map(|&t| to_f64(t / dt).round() as usize)
        .collect();
    let last = marks.iter().copied().max().unwrap_or(0);
    let s = *scenario;
    let half: T = lit(0.5);
    let sqrt_dt = dt.sqrt();
    let drift_target = s.theta * s.x();
    let xh = s.x_hat();

    let per_path: Vec<Vec<T>> = (0..paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i));
            let mut th = s.theta_hat0;
            let mut at = vec![T::zero(); marks.len()];
            for (slot, &mk) in marks.iter().enumerate() {
                if mk == 0 {
                    at[slot] = th;
                }
            }
            for k in 0..last {
                let t = lit::<T>(k as f64) * dt;
                let z: f64 = rng.sample(StandardNormal);
                let dw = sqrt_dt * lit(z);
                th += s.gain.f(t) * xh * ((drift_target - th * xh) * dt + half * dw);
                if let Some(lo) = floor {
                    if th < lo {
                        th = lo;
                    }
                }
                for (slot, &mk) in marks.iter().enumerate() {
                    if mk == k + 1 {
                        at[slot] = th;
                    }
                }
            }
            at
        })
        .collect();

    Ok((0..marks.len())
        .map(|slot| {
            let xs: Vec<T> = per_path.iter().map(|v| v[slot]).collect();
            Moments::from_samples(&xs)
        })
        .collect())
}

// Gauss–Kronrod 7/15 nodes on [-1, 1] (non-negative half) and weights.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
// Gauss weights for XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn kronrod<T: Real, F: Fn(T) -> T>(f: &F, a: T, b: T) -> (T, T) {
    let center = (a + b) * lit(0.5);
    let half = (b - a) * lit(0.5);
    let fc = f(center);
    let mut kron = fc * lit(WGK[7]);
    let mut gauss = fc * lit(WG[3]);
    for i in 0..7 {
        let dx = half * lit(XGK[i]);
        let pair = f(center - dx) + f(center + dx);
        kron += pair * lit(WGK[i]);
        if i % 2 == 1 {
            gauss += pair * lit(WG[i / 2]);
        }
    }
    let err = ((kron - gauss) * half).abs();
    (kron * half, err)
}

/// Globally adaptive G7/K15: bisects the panel with the largest error
/// estimate until the total estimate is below `max(abs_tol, target_rel |I|)`.
/// Fails if that cannot be reached or the result is worse than `accept_rel`.
fn integrate<T: Real, F: Fn(T) -> T>(
    f: F,
    a: T,
    b: T,
    target_rel: T,
    accept_rel: T,
) -> Result<T, OracleError> {
    const INITIAL_PANELS: usize = 32;
    const MAX_PANELS: usize = 20_000;
    let abs_tol: T = lit(1e-300);
    let width = (b - a) / lit(INITIAL_PANELS as f64);
    let mut panels: Vec<(T, T, T, T)> = (0..INITIAL_PANELS)
        .map(|i| {
            let lo = a + width * lit(i as f64);
            let hi = if i + 1 == INITIAL_PANELS { b } else { lo + width };
            let (v, e) = kronrod(&f, lo, hi);
            (lo, hi, v, e)
        })
        .collect();
    loop {
        let value = panels.iter().fold(T::zero(), |s, p| s + p.2);
        let error = panels.iter().fold(T::zero(), |s, p| s + p.3);
        let tol = (target_rel * value.abs()).max(abs_tol);
        if error <= tol || panels.len() >= MAX_PANELS {
            if error <= (accept_rel * value.abs()).max(abs_tol) && to_f64(value).is_finite() {
                return Ok(value);
            }
            return Err(OracleError::QuadratureNotConverged {
                value: to_f64(value),
                error: to_f64(error),
            });
        }
        let (worst, _) = panels
            .iter()
            .enumerate()
            .fold((0, T::zero()), |(wi, we), (i, p)| if p.3 > we { (i, p.3) } else { (wi, we) });
        let (lo, hi, _, _) = panels.swap_remove(worst);
        let mid = (lo + hi) * lit(0.5);
        let (v1, e1) = kronrod(&f, lo, mid);
        let (v2, e2) = kronrod(&f, mid, hi);
        panels.push((lo, mid, v1, e1));
        panels.push((mid, hi, v2, e2));
    }
}
