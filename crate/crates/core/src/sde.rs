//! Euler–Maruyama stepping of the monitored spin system, the adaptive filter
//! and the `theta` tuning law.
//!
//! One step advances, in order: the true state (which also produces the
//! measurement increment `dy`), the filter driven by that same `dy`, and the
//! estimate `theta_hat`. The filter's coupling is then `M_hat = theta_hat^2 / eta_hat`.

use nalgebra::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::control::{delta_functional, u_feedback, u_feedforward};
use crate::oracle::c_theta;
use crate::quantum::{
    bures_distance, commutator, jz_mean, jz_mean_unchecked, AngularMomentumOps, CMatrix,
    DensityMatrix, QuantumError,
};
use crate::{lit, to_f64, Real};

/// Lower clamp on `theta_hat` used unless a setup says otherwise.
pub const DEFAULT_THETA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("{name} must be {requirement}, got {value}")]
    OutOfRange {
        name: &'static str,
        requirement: &'static str,
        value: f64,
    },
    #[error("target level {target} out of range for dimension {dim}")]
    TargetOutOfRange { target: usize, dim: usize },
    #[error("initial state: {0}")]
    InitialState(QuantumError),
}

fn require<T: Real>(
    ok: bool,
    name: &'static str,
    requirement: &'static str,
    value: T,
) -> Result<(), ParamError> {
    if ok {
        Ok(())
    } else {
        Err(ParamError::OutOfRange {
            name,
            requirement,
            value: to_f64(value),
        })
    }
}

/// Frequency `omega`, coupling `M` and efficiency `eta`, with the cached
/// composite `theta = sqrt(eta * M)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemParams<T: Real> {
    omega: T,
    coupling: T,
    eta: T,
    theta: T,
}

impl<T: Real> SystemParams<T> {
    pub fn new(omega: T, coupling: T, eta: T) -> Result<Self, ParamError> {
        require(omega > T::zero(), "omega", "> 0", omega)?;
        require(coupling > T::zero(), "M", "> 0", coupling)?;
        require(eta > T::zero() && eta <= T::one(), "eta", "in (0, 1]", eta)?;
        Ok(Self {
            omega,
            coupling,
            eta,
            theta: (eta * coupling).sqrt(),
        })
    }

    pub fn omega(&self) -> T {
        self.omega
    }

    pub fn coupling(&self) -> T {
        self.coupling
    }

    pub fn eta(&self) -> T {
        self.eta
    }

    pub fn theta(&self) -> T {
        self.theta
    }

    /// Same `omega` and `eta`, new coupling.
    pub fn with_coupling(&self, coupling: T) -> Result<Self, ParamError> {
        Self::new(self.omega, coupling, self.eta)
    }
}

/// Learning-rate schedule `f(t) = (K t + 1)^(-p)`.
///
/// `p` is unrestricted here; the runner warns when it leaves `(0.5, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainSchedule<T: Real> {
    k: T,
    p: T,
}

impl<T: Real> GainSchedule<T> {
    pub fn new(k: T, p: T) -> Result<Self, ParamError> {
        require(k > T::zero() && to_f64(k).is_finite(), "K", "> 0", k)?;
        require(to_f64(p).is_finite(), "p", "finite", p)?;
        Ok(Self { k, p })
    }

    pub fn k(&self) -> T {
        self.k
    }

    pub fn p(&self) -> T {
        self.p
    }

    pub fn f(&self, t: T) -> T {
        (self.k * t + T::one()).powf(-self.p)
    }
}

/// Joint state of one realization.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState<T: Real> {
    pub t: T,
    pub rho: DensityMatrix<T>,
    pub rho_hat: DensityMatrix<T>,
    pub theta_hat: T,
}

/// Per-step record of the measurement increment, the applied input and the
/// Wiener increment it was built from: `dy = 2 theta Tr[J_z rho] dt + dw`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutput<T: Real> {
    pub dy: T,
    pub u: T,
    pub dw: T,
}

/// Deterministic part of the master equation:
/// `i[omega J_z + u J_y, rho] - (M/2) [J_z, [J_z, rho]]`.
pub fn drift_true<T: Real>(
    rho: &DensityMatrix<T>,
    u: T,
    params: &SystemParams<T>,
    ops: &AngularMomentumOps<T>,
) -> Result<CMatrix<T>, QuantumError> {
    ops.check_dim(rho)?;
    Ok(drift(rho.matrix(), u, params.omega(), params.coupling(), ops))
}

/// Measurement back-action `theta (J_z rho + rho J_z - 2 Tr[J_z rho] rho)`.
pub fn innovation_gain<T: Real>(
    rho: &DensityMatrix<T>,
    theta: T,
    ops: &AngularMomentumOps<T>,
) -> Result<CMatrix<T>, QuantumError> {
    ops.check_dim(rho)?;
    let x = jz_mean_unchecked(rho.matrix(), ops);
    Ok(gain(rho.matrix(), theta, x, ops))
}

fn drift<T: Real>(
    m: &CMatrix<T>,
    u: T,
    omega: T,
    coupling: T,
    ops: &AngularMomentumOps<T>,
) -> CMatrix<T> {
    let z = ops.jz_diag();
    let half_m = coupling * lit(0.5);
    let mut out = CMatrix::from_fn(m.nrows(), m.ncols(), |k, l| {
        let gap = z[k] - z[l];
        // i*omega*gap*rho_kl - (M/2)*gap^2*rho_kl
        m[(k, l)] * Complex::new(-half_m * gap * gap, omega * gap)
    });
    if u != T::zero() {
        let c = commutator(ops.jy(), m);
        out += c * Complex::new(T::zero(), u);
    }
    out
}

fn gain<T: Real>(m: &CMatrix<T>, theta: T, x: T, ops: &AngularMomentumOps<T>) -> CMatrix<T> {
    let z = ops.jz_diag();
    let two_x = x + x;
    CMatrix::from_fn(m.nrows(), m.ncols(), |k, l| {
        m[(k, l)] * Complex::new(theta * (z[k] + z[l] - two_x), T::zero())
    })
}

/// Unprojected Euler–Maruyama candidate
/// `rho + drift * dt + gain * innovation` where `innovation = dy - 2 theta x dt`.
///
/// Exposed so callers can inspect the raw scheme (it is trace-preserving in
/// exact arithmetic but not positivity-preserving).
#[allow(clippy::too_many_arguments)]
pub fn euler_candidate<T: Real>(
    rho: &DensityMatrix<T>,
    u: T,
    innovation: T,
    dt: T,
    omega: T,
    coupling: T,
    theta: T,
    ops: &AngularMomentumOps<T>,
) -> Result<CMatrix<T>, QuantumError> {
    ops.check_dim(rho)?;
    let m = rho.matrix();
    let x = jz_mean_unchecked(m, ops);
    let d = drift(m, u, omega, coupling, ops);
    let g = gain(m, theta, x, ops);
    let dt = Complex::new(dt, T::zero());
    let innovation = Complex::new(innovation, T::zero());
    Ok(m + d * dt + g * innovation)
}

/// Advances the true state by one step and produces the measurement increment
/// `dy = 2 theta Tr[J_z rho] dt + dw`. `dw` must be an `N(0, dt)` draw.
pub fn step_true<T: Real>(
    rho: &DensityMatrix<T>,
    u: T,
    dw: T,
    dt: T,
    params: &SystemParams<T>,
    ops: &AngularMomentumOps<T>,
) -> Result<(DensityMatrix<T>, T), QuantumError> {
    let x = jz_mean(rho, ops)?;
    let theta = params.theta();
    let dy = lit::<T>(2.0) * theta * x * dt + dw;
    let candidate = euler_candidate(
        rho,
        u,
        dw,
        dt,
        params.omega(),
        params.coupling(),
        theta,
        ops,
    )?;
    Ok((DensityMatrix::project(candidate)?, dy))
}

/// Advances the filter state with the shared record increment `dy`, using the
/// model parameters `(omega_hat, M_hat, eta_hat)`.
#[allow(clippy::too_many_arguments)]
pub fn step_filter<T: Real>(
    rho_hat: &DensityMatrix<T>,
    u: T,
    dy: T,
    dt: T,
    eta_hat: T,
    m_hat: T,
    omega_hat: T,
    ops: &AngularMomentumOps<T>,
) -> Result<DensityMatrix<T>, QuantumError> {
    let x_hat = jz_mean(rho_hat, ops)?;
    let theta_hat = (eta_hat * m_hat).sqrt();
    let innovation = dy - lit::<T>(2.0) * theta_hat * x_hat * dt;
    let candidate = euler_candidate(rho_hat, u, innovation, dt, omega_hat, m_hat, theta_hat, ops)?;
    DensityMatrix::project(candidate)
}

/// One step of the tuning law
/// `theta_hat += f(t) (-x_hat^2 theta_hat dt + x_hat dy / 2)`, clamped below at
/// `floor` when one is given.
pub fn step_theta<T: Real>(
    theta_hat: T,
    x_hat: T,
    dy: T,
    dt: T,
    t: T,
    gain: &GainSchedule<T>,
    floor: Option<T>,
) -> T {
    let half: T = lit(0.5);
    let next = theta_hat + gain.f(t) * (-x_hat * x_hat * theta_hat * dt + half * x_hat * dy);
    match floor {
        Some(lo) if next < lo => lo,
        _ => next,
    }
}

/// How a trajectory's initial state is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialState<T: Real> {
    MaximallyMixed,
    /// Hilbert–Schmidt random state, drawn from the trajectory's RNG.
    RandomHs,
    Projector(usize),
    Explicit(DensityMatrix<T>),
}

impl<T: Real> InitialState<T> {
    pub fn materialize<R: Rng + ?Sized>(
        &self,
        dim: usize,
        rng: &mut R,
    ) -> Result<DensityMatrix<T>, QuantumError> {
        match self {
            Self::MaximallyMixed => DensityMatrix::maximally_mixed(dim),
            Self::RandomHs => DensityMatrix::random_hs(dim, rng),
            Self::Projector(k) => DensityMatrix::projector(dim, *k),
            Self::Explicit(rho) if rho.dim() == dim => Ok(rho.clone()),
            Self::Explicit(rho) => Err(QuantumError::DimensionMismatch {
                expected: dim,
                found: rho.dim(),
            }),
        }
    }
}

/// Everything needed to run one realization except its seed.
#[derive(Debug, Clone)]
pub struct TrajectorySetup<T: Real> {
    pub ops: AngularMomentumOps<T>,
    /// Target level `n_bar`.
    pub target: usize,
    pub true_params: SystemParams<T>,
    pub omega_hat: T,
    pub coupling_hat0: T,
    pub eta_hat: T,
    pub gain: GainSchedule<T>,
    /// Feedback gain; `u_FB = gain_fb (1 - Tr[rho_hat rho_target])^2`. Zero disables feedback.
    pub gain_fb: T,
    /// Adds `u_FF(t) = f(t)^2` when set.
    pub feedforward: bool,
    pub dt: T,
    pub horizon: T,
    pub output_stride: usize,
    pub initial_true: InitialState<T>,
    pub initial_filter: InitialState<T>,
    pub theta_floor: Option<T>,
}

impl<T: Real> TrajectorySetup<T> {
    pub fn validate(&self) -> Result<(), ParamError> {
        let dim = self.ops.dim();
        if self.target >= dim {
            return Err(ParamError::TargetOutOfRange {
                target: self.target,
                dim,
            });
        }
        SystemParams::new(self.omega_hat, self.coupling_hat0, self.eta_hat)?;
        require(self.dt > T::zero() && to_f64(self.dt).is_finite(), "dt", "> 0", self.dt)?;
        require(
            self.horizon >= T::zero() && to_f64(self.horizon).is_finite(),
            "horizon",
            ">= 0",
            self.horizon,
        )?;
        require(self.gain_fb >= T::zero(), "gain_fb", ">= 0", self.gain_fb)?;
        require(
            self.output_stride >= 1,
            "output_stride",
            ">= 1",
            lit::<T>(self.output_stride as f64),
        )?;
        if let Some(floor) = self.theta_floor {
            require(floor >= T::zero(), "theta_floor", ">= 0", floor)?;
        }
        for init in [&self.initial_true, &self.initial_filter] {
            match init {
                InitialState::Projector(k) if *k >= dim => {
                    return Err(ParamError::InitialState(QuantumError::IndexOutOfRange {
                        index: *k,
                        dim,
                    }))
                }
                InitialState::Explicit(rho) if rho.dim() != dim => {
                    return Err(ParamError::InitialState(QuantumError::DimensionMismatch {
                        expected: dim,
                        found: rho.dim(),
                    }))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Number of Euler steps, `round(horizon / dt)`.
    pub fn steps(&self) -> usize {
        to_f64(self.horizon / self.dt).round() as usize
    }

    /// `u(t) = u_FB(rho_hat) + u_FF(t)`.
    pub fn control(&self, t: T, rho_hat: &DensityMatrix<T>) -> Result<T, QuantumError> {
        let mut u = T::zero();
        if self.gain_fb != T::zero() {
            let target = self.ops.equilibrium(self.target)?;
            u += u_feedback(rho_hat, target, self.gain_fb)?;
        }
        if self.feedforward {
            u += u_feedforward(t, &self.gain);
        }
        Ok(u)
    }

    pub fn theta_hat0(&self) -> T {
        (self.eta_hat * self.coupling_hat0).sqrt()
    }
}

/// One recorded time point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample<T: Real> {
    pub t: T,
    pub theta_hat: T,
    /// `theta_hat / theta`.
    pub ratio: T,
    /// Control applied from this time on.
    pub u: T,
    /// Bures-type distance of `(rho, rho_hat)` to `(rho_target, rho_target)`.
    pub d_b: T,
    pub delta: T,
    pub c_theta: T,
    /// `Tr[rho rho_target]`.
    pub fid_true: T,
    /// `Tr[rho_hat rho_target]`.
    pub fid_filter: T,
    pub x: T,
    pub x_hat: T,
}

/// Sampled time series of one realization plus its final full state.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord<T: Real> {
    pub seed: u64,
    pub target: usize,
    pub theta: T,
    pub samples: Vec<Sample<T>>,
    pub final_state: SimState<T>,
}

impl<T: Real> TrajectoryRecord<T> {
    pub fn last(&self) -> &Sample<T> {
        self.samples.last().expect("a record always holds the initial sample")
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid setup: {0}")]
    Setup(#[from] ParamError),
    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: QuantumError,
    },
}

fn sample<T: Real>(
    setup: &TrajectorySetup<T>,
    state: &SimState<T>,
    step: usize,
) -> Result<Sample<T>, SimError> {
    let at = |source| SimError::Step { step, source };
    let ops = &setup.ops;
    let theta = setup.true_params.theta();
    let n = setup.target;
    Ok(Sample {
        t: state.t,
        theta_hat: state.theta_hat,
        ratio: state.theta_hat / theta,
        u: setup.control(state.t, &state.rho_hat).map_err(at)?,
        d_b: bures_distance(&state.rho, &state.rho_hat, n, n, ops).map_err(at)?,
        delta: delta_functional(&state.rho, &state.rho_hat, state.theta_hat, theta, ops)
            .map_err(at)?,
        c_theta: c_theta(state.theta_hat, theta),
        fid_true: state.rho.population(n),
        fid_filter: state.rho_hat.population(n),
        x: jz_mean(&state.rho, ops).map_err(at)?,
        x_hat: jz_mean(&state.rho_hat, ops).map_err(at)?,
    })
}

/// One closed-loop step from `state` with Wiener increment `dw`: control from
/// the current filter state, true state and record, filter, then `theta_hat`.
pub fn advance<T: Real>(
    setup: &TrajectorySetup<T>,
    state: &SimState<T>,
    dw: T,
) -> Result<(SimState<T>, StepOutput<T>), QuantumError> {
    let ops = &setup.ops;
    let dt = setup.dt;
    let t = state.t;
    let u = setup.control(t, &state.rho_hat)?;
    let x_hat = jz_mean(&state.rho_hat, ops)?;
    let (rho, dy) = step_true(&state.rho, u, dw, dt, &setup.true_params, ops)?;
    let m_hat = state.theta_hat * state.theta_hat / setup.eta_hat;
    let rho_hat = step_filter(&state.rho_hat, u, dy, dt, setup.eta_hat, m_hat, setup.omega_hat, ops)?;
    let theta_hat = step_theta(state.theta_hat, x_hat, dy, dt, t, &setup.gain, setup.theta_floor);
    Ok((
        SimState {
            t: t + dt,
            rho,
            rho_hat,
            theta_hat,
        },
        StepOutput { dy, u, dw },
    ))
}

/// Runs one realization of the closed loop. Fully determined by
/// `(setup, seed)`: the seed drives a ChaCha8 stream that first draws any
/// random initial states (true, then filter) and then one standard normal per
/// step for the Wiener increment.
pub fn simulate_trajectory<T: Real>(
    setup: &TrajectorySetup<T>,
    seed: u64,
) -> Result<TrajectoryRecord<T>, SimError> {
    setup.validate()?;
    let ops = &setup.ops;
    let dim = ops.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = |source| SimError::Step { step: 0, source };
    let rho = setup.initial_true.materialize(dim, &mut rng).map_err(init)?;
    let rho_hat = setup.initial_filter.materialize(dim, &mut rng).map_err(init)?;

    let dt = setup.dt;
    let sqrt_dt = dt.sqrt();
    let steps = setup.steps();
    let mut state = SimState {
        t: T::zero(),
        rho,
        rho_hat,
        theta_hat: setup.theta_hat0(),
    };
    let mut samples = Vec::with_capacity(steps / setup.output_stride + 2);
    samples.push(sample(setup, &state, 0)?);

    for k in 0..steps {
        let z: f64 = rng.sample(StandardNormal);
        let (next, _) = advance(setup, &state, sqrt_dt * lit(z)).map_err(|source| SimError::Step {
            step: k + 1,
            source,
        })?;
        // Re-derive t from the step index so it does not accumulate rounding.
        state = SimState {
            t: lit::<T>((k + 1) as f64) * dt,
            ..next
        };
        if (k + 1) % setup.output_stride == 0 || k + 1 == steps {
            samples.push(sample(setup, &state, k + 1)?);
        }
    }

    Ok(TrajectoryRecord {
        seed,
        target: setup.target,
        theta: setup.true_params.theta(),
        samples,
        final_state: state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::{build_ops, trace_norm_distance};

    fn ops5() -> AngularMomentumOps<f64> {
        build_ops(5).unwrap()
    }

    fn params() -> SystemParams<f64> {
        SystemParams::new(0.5, 1.0, 0.9).unwrap()
    }

    fn max_abs(m: &CMatrix<f64>) -> f64 {
        m.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    fn random_state(seed: u64) -> DensityMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DensityMatrix::random_hs(5, &mut rng).unwrap()
    }

    #[test]
    fn params_validate() {
        assert!(SystemParams::new(0.5, 1.0, 0.9).is_ok());
        assert!(SystemParams::new(0.0, 1.0, 0.9).is_err());
        assert!(SystemParams::new(0.5, -1.0, 0.9).is_err());
        assert!(SystemParams::new(0.5, 1.0, 1.1).is_err());
        assert!(SystemParams::new(0.5, 1.0, 0.0).is_err());
        let p = params();
        assert!((p.theta() * p.theta() - 0.9).abs() < 1e-12);
        assert!((p.with_coupling(25.0).unwrap().theta() - (0.9f64 * 25.0).sqrt()).abs() < 1e-12);
        assert!(GainSchedule::new(0.0, 0.6).is_err());
        assert!(GainSchedule::new(20.0, f64::NAN).is_err());
        assert!(GainSchedule::new(20.0, -0.5).is_ok());
    }

    #[test]
    fn drift_vanishes_on_projectors_and_identity() {
        let o = ops5();
        for r in o.equilibria() {
            let d = drift_true(r, 0.0, &params(), &o).unwrap();
            assert!(d.iter().all(|z| *z == Complex::new(0.0, 0.0)));
        }
        let mixed = DensityMatrix::maximally_mixed(5).unwrap();
        let d = drift_true(&mixed, 0.0, &params(), &o).unwrap();
        assert!(max_abs(&d) == 0.0);
    }

    #[test]
    fn drift_is_traceless_and_hermitian() {
        let o = ops5();
        for seed in 0..50 {
            let r = random_state(seed);
            let d = drift_true(&r, 0.37 * seed as f64 - 3.0, &params(), &o).unwrap();
            assert!(d.trace().norm() < 1e-13);
            assert!(max_abs(&(&d - d.adjoint())) < 1e-13);
        }
    }

    #[test]
    fn innovation_gain_examples() {
        let o = ops5();
        for r in o.equilibria() {
            let g = innovation_gain(r, 0.9, &o).unwrap();
            assert!(max_abs(&g) == 0.0);
        }
        let mixed = DensityMatrix::maximally_mixed(5).unwrap();
        let g = innovation_gain(&mixed, 1.0, &o).unwrap();
        let want = o.jz() * Complex::new(2.0 / 5.0, 0.0);
        assert!(max_abs(&(g - want)) < 1e-15);
        for seed in 0..50 {
            let g = innovation_gain(&random_state(seed), 1.3, &o).unwrap();
            assert!(g.trace().norm() < 1e-13);
        }
    }

    #[test]
    fn step_true_fixed_point_at_rho0() {
        let o = ops5();
        let r0 = o.equilibrium(0).unwrap().clone();
        let p = params();
        for dw in [-0.3, 0.0, 0.05, 1.7] {
            let (next, dy) = step_true(&r0, 0.0, dw, 0.01, &p, &o).unwrap();
            assert_eq!(next, r0);
            assert_eq!(dy, 2.0 * p.theta() * 2.0 * 0.01 + dw);
        }
    }

    #[test]
    fn step_true_identity_with_zero_noise() {
        let o = ops5();
        let p = SystemParams::new(0.5, 1.0, 0.9).unwrap();
        let mixed = DensityMatrix::maximally_mixed(5).unwrap();
        let (next, dy) = step_true(&mixed, 0.0, 0.0, 0.01, &p, &o).unwrap();
        // Tr[J_z I/5] sums to rounding noise, not an exact zero.
        assert!(dy.abs() < 1e-15);
        assert!(max_abs(&(next.matrix() - mixed.matrix())) < 1e-15);
    }

    #[test]
    fn euler_candidate_preserves_trace() {
        let o = ops5();
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let r = DensityMatrix::random_hs(5, &mut rng).unwrap();
            let u: f64 = rng.random_range(-5.0..5.0);
            let dw: f64 = 0.1 * rng.sample::<f64, _>(StandardNormal);
            let cand = euler_candidate(&r, u, dw, 0.01, p.omega(), p.coupling(), p.theta(), &o).unwrap();
            assert!((cand.trace().re - 1.0).abs() < 1e-10);
            let (next, _) = step_true(&r, u, dw, 0.01, &p, &o).unwrap();
            assert!((next.matrix().trace().re - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn step_filter_fixed_point_and_matched_equivalence() {
        let o = ops5();
        for r in o.equilibria() {
            for dy in [-1.0, 0.0, 0.4] {
                let next = step_filter(r, 0.0, dy, 0.01, 1.0, 25.0, 1.0, &o).unwrap();
                assert_eq!(&next, r);
            }
        }
        let p = params();
        let r = random_state(7);
        let (from_true, dy) = step_true(&r, 0.8, 0.0, 0.01, &p, &o).unwrap();
        let from_filter = step_filter(&r, 0.8, dy, 0.01, p.eta(), p.coupling(), p.omega(), &o).unwrap();
        assert!(trace_norm_distance(&from_true, &from_filter).unwrap() < 1e-14);
    }

    #[test]
    fn step_theta_examples() {
        let gain = GainSchedule::new(20.0, 0.6).unwrap();
        assert_eq!(step_theta(1.3, 0.0, 0.7, 0.01, 4.0, &gain, None), 1.3);

        let theta = params().theta();
        let x = 1.0;
        let dy = 2.0 * theta * x * 0.01;
        let next = step_theta(theta, x, dy, 0.01, 3.0, &gain, None);
        assert!((next - theta).abs() < 1e-15);

        let (th, xh, dy, dt) = (2.0, 1.5, 0.3, 0.01);
        let want = th + (-xh * xh * th * dt + 0.5 * xh * dy);
        assert_eq!(step_theta(th, xh, dy, dt, 0.0, &gain, None), want);
    }

    #[test]
    fn step_theta_floor_clamps_negative() {
        let gain = GainSchedule::new(20.0, 0.0).unwrap();
        let next = step_theta(0.01, 2.0, -1.0, 0.01, 0.0, &gain, Some(DEFAULT_THETA_FLOOR));
        assert_eq!(next, DEFAULT_THETA_FLOOR);
        let free = step_theta(0.01, 2.0, -1.0, 0.01, 0.0, &gain, None);
        assert!(free < 0.0);
    }

    fn equilibrium_setup(n: usize, m: usize, horizon: f64) -> TrajectorySetup<f64> {
        TrajectorySetup {
            ops: ops5(),
            target: 0,
            true_params: params(),
            omega_hat: 1.0,
            coupling_hat0: 25.0,
            eta_hat: 1.0,
            gain: GainSchedule::new(20.0, 0.6).unwrap(),
            gain_fb: 0.0,
            feedforward: false,
            dt: 0.01,
            horizon,
            output_stride: 10,
            initial_true: InitialState::Projector(n),
            initial_filter: InitialState::Projector(m),
            theta_floor: Some(DEFAULT_THETA_FLOOR),
        }
    }

    #[test]
    fn zero_horizon_records_initial_sample_only() {
        let rec = simulate_trajectory(&equilibrium_setup(1, 1, 0.0), 3).unwrap();
        assert_eq!(rec.samples.len(), 1);
        assert_eq!(rec.samples[0].t, 0.0);
        assert_eq!(rec.samples[0].theta_hat, 5.0);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let mut setup = equilibrium_setup(1, 1, 5.0);
        setup.initial_true = InitialState::RandomHs;
        setup.initial_filter = InitialState::MaximallyMixed;
        setup.gain_fb = 4.0;
        setup.feedforward = true;
        let a = simulate_trajectory(&setup, 11).unwrap();
        let b = simulate_trajectory(&setup, 11).unwrap();
        assert_eq!(a, b);
        let c = simulate_trajectory(&setup, 12).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn stride_and_final_sample() {
        let mut setup = equilibrium_setup(1, 1, 1.05);
        setup.output_stride = 10;
        let rec = simulate_trajectory(&setup, 0).unwrap();
        // 105 steps: samples at 0, 10, ..., 100 and the final step 105.
        assert_eq!(rec.samples.len(), 12);
        assert!((rec.last().t - 1.05).abs() < 1e-12);
    }

    #[test]
    fn equilibrium_states_stay_exact() {
        let setup = equilibrium_setup(1, 3, 20.0);
        let rec = simulate_trajectory(&setup, 5).unwrap();
        let o = &setup.ops;
        assert_eq!(&rec.final_state.rho, o.equilibrium(1).unwrap());
        assert_eq!(&rec.final_state.rho_hat, o.equilibrium(3).unwrap());
        for s in &rec.samples {
            assert_eq!(s.x, 1.0);
            assert_eq!(s.x_hat, -1.0);
        }
    }

    #[test]
    fn invalid_setup_is_rejected() {
        let mut setup = equilibrium_setup(1, 1, 1.0);
        setup.dt = 0.0;
        assert!(matches!(simulate_trajectory(&setup, 0), Err(SimError::Setup(_))));
        let mut setup = equilibrium_setup(1, 1, 1.0);
        setup.target = 5;
        assert!(matches!(
            simulate_trajectory(&setup, 0),
            Err(SimError::Setup(ParamError::TargetOutOfRange { .. }))
        ));
        let mut setup = equilibrium_setup(1, 1, 1.0);
        setup.initial_filter = InitialState::Projector(9);
        assert!(simulate_trajectory(&setup, 0).is_err());
    }
}
