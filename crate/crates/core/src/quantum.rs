//! Density matrices, spin-J angular-momentum operators and state functionals.

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::{lit, to_f64, tolerance, Real};

/// Dense complex square matrix.
pub type CMatrix<T> = DMatrix<Complex<T>>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuantumError {
    #[error("dimension must be at least 2, got {0}")]
    DimensionTooSmall(usize),
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("level index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("matrix is not Hermitian (max deviation {0:e})")]
    NotHermitian(f64),
    #[error("trace deviates from 1 by {0:e}")]
    TraceNotUnit(f64),
    #[error("matrix is not positive semidefinite (smallest eigenvalue {0:e})")]
    NotPositive(f64),
    #[error("fidelity radicand {0:e} is negative beyond rounding")]
    InvalidRadicand(f64),
    #[error("state has non-finite entries")]
    NonFinite,
    #[error("state trace {0:e} collapsed during projection")]
    DegenerateTrace(f64),
}

/// Hermitian, positive-semidefinite, unit-trace complex matrix.
///
/// Every constructor either validates the invariants against
/// [`tolerance::ALGEBRAIC`] / [`tolerance::SPECTRAL`] or enforces them
/// ([`DensityMatrix::project`]).
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix<T: Real> {
    m: CMatrix<T>,
}

impl<T: Real> DensityMatrix<T> {
    /// Validates `m` and wraps it.
    pub fn new(m: CMatrix<T>) -> Result<Self, QuantumError> {
        check_square(&m)?;
        if m.nrows() < 2 {
            return Err(QuantumError::DimensionTooSmall(m.nrows()));
        }
        if m.iter().any(|z| !is_finite(z.re) || !is_finite(z.im)) {
            return Err(QuantumError::NonFinite);
        }
        let herm = to_f64(max_hermitian_defect(&m));
        if herm > tolerance::ALGEBRAIC {
            return Err(QuantumError::NotHermitian(herm));
        }
        let tr = m.trace();
        let tr_err = (to_f64(tr.re) - 1.0).abs().max(to_f64(tr.im).abs());
        if tr_err > tolerance::ALGEBRAIC {
            return Err(QuantumError::TraceNotUnit(tr_err));
        }
        let rho = Self { m };
        let min_eig = to_f64(rho.min_eigenvalue());
        if min_eig < -tolerance::SPECTRAL {
            return Err(QuantumError::NotPositive(min_eig));
        }
        Ok(rho)
    }

    /// `I / dim`.
    pub fn maximally_mixed(dim: usize) -> Result<Self, QuantumError> {
        if dim < 2 {
            return Err(QuantumError::DimensionTooSmall(dim));
        }
        let w = Complex::new(T::one() / lit(dim as f64), T::zero());
        Ok(Self {
            m: CMatrix::from_diagonal_element(dim, dim, w),
        })
    }

    /// Rank-1 projector onto basis vector `k` (0-based).
    pub fn projector(dim: usize, k: usize) -> Result<Self, QuantumError> {
        if dim < 2 {
            return Err(QuantumError::DimensionTooSmall(dim));
        }
        if k >= dim {
            return Err(QuantumError::IndexOutOfRange { index: k, dim });
        }
        let mut m = CMatrix::zeros(dim, dim);
        m[(k, k)] = Complex::new(T::one(), T::zero());
        Ok(Self { m })
    }

    /// `|psi><psi| / <psi|psi>`.
    pub fn pure(psi: &DVector<Complex<T>>) -> Result<Self, QuantumError> {
        let norm_sq = psi.iter().fold(T::zero(), |acc, z| acc + z.norm_sqr());
        if !(norm_sq > T::zero()) {
            return Err(QuantumError::DegenerateTrace(to_f64(norm_sq)));
        }
        let m = psi * psi.adjoint() / Complex::new(norm_sq, T::zero());
        Self::project(m)
    }

    /// Hilbert–Schmidt random state: `G G* / Tr[G G*]` with i.i.d. standard
    /// normal real and imaginary parts in `G`.
    pub fn random_hs<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<Self, QuantumError> {
        if dim < 2 {
            return Err(QuantumError::DimensionTooSmall(dim));
        }
        let g = CMatrix::<T>::from_fn(dim, dim, |_, _| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex::new(lit(re), lit(im))
        });
        let gg = &g * g.adjoint();
        let tr = gg.trace().re;
        let m = hermitian_part(&(gg / Complex::new(tr, T::zero())));
        Ok(Self { m })
    }

    /// Repairs the output of an Euler step into a valid state: re-Hermitize
    /// via `(X + X*)/2`, clip negative eigenvalues to zero, renormalize the
    /// trace. A positive-definite Hermitian matrix with unit trace comes back
    /// bit-identical.
    pub fn project(m: CMatrix<T>) -> Result<Self, QuantumError> {
        check_square(&m)?;
        if m.iter().any(|z| !is_finite(z.re) || !is_finite(z.im)) {
            return Err(QuantumError::NonFinite);
        }
        let defect = to_f64(max_hermitian_defect(&m));
        if defect > tolerance::HERMITIAN_BREAKDOWN {
            return Err(QuantumError::NotHermitian(defect));
        }
        let mut h = hermitian_part(&m);
        if is_diagonal(&h) {
            for i in 0..h.nrows() {
                if h[(i, i)].re < T::zero() {
                    h[(i, i)] = Complex::new(T::zero(), T::zero());
                }
            }
        } else if !is_positive_definite(&h) {
            clip_negative_spectrum(&mut h);
        }
        let tr = h.trace().re;
        if !is_finite(tr) || to_f64(tr) <= tolerance::MIN_TRACE {
            return Err(QuantumError::DegenerateTrace(to_f64(tr)));
        }
        // Traces within a few ulps of 1 are left alone so projection is idempotent.
        if (tr - T::one()).abs() > lit::<T>(4.0) * T::default_epsilon() {
            h /= Complex::new(tr, T::zero());
        }
        Ok(Self { m: h })
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &CMatrix<T> {
        &self.m
    }

    pub fn into_inner(self) -> CMatrix<T> {
        self.m
    }

    /// `Re rho[k][k]`, i.e. `Tr[rho rho_k]` for the basis projector `rho_k`.
    pub fn population(&self, k: usize) -> T {
        self.m[(k, k)].re
    }

    /// `Re Tr[self * other]`.
    pub fn overlap(&self, other: &Self) -> Result<T, QuantumError> {
        check_same_dim(self.dim(), other.dim())?;
        let n = self.dim();
        let mut acc = T::zero();
        for i in 0..n {
            for j in 0..n {
                acc += (self.m[(i, j)] * other.m[(j, i)]).re;
            }
        }
        Ok(acc)
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<T> {
        let mut ev: Vec<T> = SymmetricEigen::new(self.m.clone())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        ev
    }

    pub fn min_eigenvalue(&self) -> T {
        SymmetricEigen::new(self.m.clone())
            .eigenvalues
            .iter()
            .copied()
            .fold(T::max_value().unwrap_or_else(T::one), |a, b| if b < a { b } else { a })
    }

    /// Largest `|rho_ij - conj(rho_ji)|`.
    pub fn hermiticity_defect(&self) -> T {
        max_hermitian_defect(&self.m)
    }

    /// `U rho U*` for a unitary `u`; the result is re-validated.
    pub fn conjugate_by(&self, u: &CMatrix<T>) -> Result<Self, QuantumError> {
        check_same_dim(self.dim(), u.nrows())?;
        Self::new(hermitian_part(&(u * &self.m * u.adjoint())))
    }
}

/// Precomputed `J_z`, `J_y`, `J_z^2` and the `N` equilibrium projectors for
/// spin `J = (N - 1) / 2`.
///
/// `J_z = diag(J, J-1, ..., -J)`; `J_y` is tridiagonal with `-i c_m` above and
/// `i c_m` below the diagonal, `c_m = sqrt((2J + 1 - m) m) / 2`.
#[derive(Debug, Clone)]
pub struct AngularMomentumOps<T: Real> {
    dim: usize,
    j: T,
    jz_diag: Vec<T>,
    ladder: Vec<T>,
    jz: CMatrix<T>,
    jy: CMatrix<T>,
    jz_sq: CMatrix<T>,
    equilibria: Vec<DensityMatrix<T>>,
}

/// Builds the operator set for an `n`-level system.
pub fn build_ops<T: Real>(n: usize) -> Result<AngularMomentumOps<T>, QuantumError> {
    AngularMomentumOps::build(n)
}

impl<T: Real> AngularMomentumOps<T> {
    pub fn build(n: usize) -> Result<Self, QuantumError> {
        if n < 2 {
            return Err(QuantumError::DimensionTooSmall(n));
        }
        let j: T = lit((n as f64 - 1.0) / 2.0);
        let jz_diag: Vec<T> = (0..n).map(|k| j - lit(k as f64)).collect();
        let ladder: Vec<T> = (1..n)
            .map(|m| {
                let m = m as f64;
                lit::<T>(0.5) * lit::<T>((n as f64 - m) * m).sqrt()
            })
            .collect();

        let jz = CMatrix::from_fn(n, n, |r, c| {
            if r == c {
                Complex::new(jz_diag[r], T::zero())
            } else {
                Complex::new(T::zero(), T::zero())
            }
        });
        let jz_sq = CMatrix::from_fn(n, n, |r, c| {
            if r == c {
                Complex::new(jz_diag[r] * jz_diag[r], T::zero())
            } else {
                Complex::new(T::zero(), T::zero())
            }
        });
        let mut jy = CMatrix::zeros(n, n);
        for (idx, &c) in ladder.iter().enumerate() {
            jy[(idx, idx + 1)] = Complex::new(T::zero(), -c);
            jy[(idx + 1, idx)] = Complex::new(T::zero(), c);
        }
        let equilibria = (0..n)
            .map(|k| DensityMatrix::projector(n, k))
            .collect::<Result<Vec<_>, _>>()?;

        Ok(Self {
            dim: n,
            j,
            jz_diag,
            ladder,
            jz,
            jy,
            jz_sq,
            equilibria,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Spin quantum number `J`.
    pub fn j(&self) -> T {
        self.j
    }

    /// Diagonal of `J_z`: `J, J-1, ..., -J`.
    pub fn jz_diag(&self) -> &[T] {
        &self.jz_diag
    }

    /// Ladder coefficients `c_1 ... c_{N-1}`.
    pub fn ladder(&self) -> &[T] {
        &self.ladder
    }

    pub fn jz(&self) -> &CMatrix<T> {
        &self.jz
    }

    pub fn jy(&self) -> &CMatrix<T> {
        &self.jy
    }

    pub fn jz_sq(&self) -> &CMatrix<T> {
        &self.jz_sq
    }

    /// `rho_n`, the projector onto the `(n+1)`-th basis vector.
    pub fn equilibrium(&self, n: usize) -> Result<&DensityMatrix<T>, QuantumError> {
        self.equilibria.get(n).ok_or(QuantumError::IndexOutOfRange {
            index: n,
            dim: self.dim,
        })
    }

    pub fn equilibria(&self) -> &[DensityMatrix<T>] {
        &self.equilibria
    }

    pub(crate) fn check_dim(&self, rho: &DensityMatrix<T>) -> Result<(), QuantumError> {
        check_same_dim(self.dim, rho.dim())
    }

    pub(crate) fn check_index(&self, n: usize) -> Result<(), QuantumError> {
        if n < self.dim {
            Ok(())
        } else {
            Err(QuantumError::IndexOutOfRange {
                index: n,
                dim: self.dim,
            })
        }
    }
}

/// `Tr[J_z rho]`.
pub fn jz_mean<T: Real>(rho: &DensityMatrix<T>, ops: &AngularMomentumOps<T>) -> Result<T, QuantumError> {
    ops.check_dim(rho)?;
    Ok(jz_mean_unchecked(rho.matrix(), ops))
}

/// `Tr[J_z^2 rho] - Tr[J_z rho]^2`.
pub fn jz_variance<T: Real>(
    rho: &DensityMatrix<T>,
    ops: &AngularMomentumOps<T>,
) -> Result<T, QuantumError> {
    ops.check_dim(rho)?;
    let mean = jz_mean_unchecked(rho.matrix(), ops);
    let second = ops
        .jz_diag
        .iter()
        .enumerate()
        .fold(T::zero(), |acc, (k, &z)| acc + z * z * rho.population(k));
    Ok(second - mean * mean)
}

pub(crate) fn jz_mean_unchecked<T: Real>(m: &CMatrix<T>, ops: &AngularMomentumOps<T>) -> T {
    ops.jz_diag
        .iter()
        .enumerate()
        .fold(T::zero(), |acc, (k, &z)| acc + z * m[(k, k)].re)
}

/// Sum of Bures distances of `rho` to `rho_n` and of `rho_hat` to `rho_m`:
/// `sqrt(2 - 2 sqrt(Tr[rho rho_n])) + sqrt(2 - 2 sqrt(Tr[rho_hat rho_m]))`.
pub fn bures_distance<T: Real>(
    rho: &DensityMatrix<T>,
    rho_hat: &DensityMatrix<T>,
    n: usize,
    m: usize,
    ops: &AngularMomentumOps<T>,
) -> Result<T, QuantumError> {
    ops.check_dim(rho)?;
    ops.check_dim(rho_hat)?;
    ops.check_index(n)?;
    ops.check_index(m)?;
    Ok(bures_to_projector(rho.population(n))? + bures_to_projector(rho_hat.population(m))?)
}

/// `sqrt(2 - 2 sqrt(fidelity))` with rounding-level negatives clamped to zero.
pub fn bures_to_projector<T: Real>(fidelity: T) -> Result<T, QuantumError> {
    let slack: T = lit(tolerance::RADICAND);
    let fid = clamp_radicand(fidelity, slack)?;
    let two: T = lit(2.0);
    let radicand = clamp_radicand(two - two * fid.sqrt(), slack)?;
    Ok(radicand.sqrt())
}

fn clamp_radicand<T: Real>(x: T, slack: T) -> Result<T, QuantumError> {
    if x >= T::zero() {
        Ok(x)
    } else if x >= -slack {
        Ok(T::zero())
    } else {
        Err(QuantumError::InvalidRadicand(to_f64(x)))
    }
}

/// `Tr |a - b|`.
pub fn trace_norm_distance<T: Real>(
    a: &DensityMatrix<T>,
    b: &DensityMatrix<T>,
) -> Result<T, QuantumError> {
    check_same_dim(a.dim(), b.dim())?;
    let diff = hermitian_part(&(a.matrix() - b.matrix()));
    Ok(SymmetricEigen::new(diff)
        .eigenvalues
        .iter()
        .fold(T::zero(), |acc, &l| acc + if l < T::zero() { -l } else { l }))
}

/// `(X + X*) / 2`.
pub fn hermitian_part<T: Real>(m: &CMatrix<T>) -> CMatrix<T> {
    let half = Complex::new(lit::<T>(0.5), T::zero());
    (m + m.adjoint()) * half
}

/// `[a, b] = ab - ba`.
pub(crate) fn commutator<T: Real>(a: &CMatrix<T>, b: &CMatrix<T>) -> CMatrix<T> {
    a * b - b * a
}

// Replaces negative eigenvalues of a Hermitian matrix by zero.
fn clip_negative_spectrum<T: Real>(h: &mut CMatrix<T>) {
    let eig = SymmetricEigen::new(h.clone());
    if eig.eigenvalues.iter().all(|&l| l >= T::zero()) {
        return;
    }
    let clipped = eig.eigenvalues.map(|l| if l < T::zero() { T::zero() } else { l });
    let v = &eig.eigenvectors;
    let scaled = CMatrix::from_fn(v.nrows(), v.ncols(), |i, j| {
        v[(i, j)] * Complex::new(clipped[j], T::zero())
    });
    *h = hermitian_part(&(scaled * v.adjoint()));
}

// Cholesky attempt on a Hermitian matrix; succeeds iff every pivot is positive.
fn is_positive_definite<T: Real>(h: &CMatrix<T>) -> bool {
    let n = h.nrows();
    let mut l = CMatrix::<T>::zeros(n, n);
    for j in 0..n {
        let mut d = h[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if !(d > T::zero()) {
            return false;
        }
        let piv = d.sqrt();
        l[(j, j)] = Complex::new(piv, T::zero());
        for i in j + 1..n {
            let mut acc = h[(i, j)];
            for k in 0..j {
                acc -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = acc / Complex::new(piv, T::zero());
        }
    }
    true
}

fn is_diagonal<T: Real>(m: &CMatrix<T>) -> bool {
    let zero = Complex::new(T::zero(), T::zero());
    m.iter()
        .enumerate()
        .all(|(idx, z)| idx % m.nrows() == idx / m.nrows() || *z == zero)
}

fn max_hermitian_defect<T: Real>(m: &CMatrix<T>) -> T {
    let n = m.nrows();
    let mut worst = T::zero();
    for i in 0..n {
        for j in i..n {
            let d = (m[(i, j)] - m[(j, i)].conj()).norm_sqr().sqrt();
            if d > worst {
                worst = d;
            }
        }
    }
    worst
}

fn check_square<T: Real>(m: &CMatrix<T>) -> Result<(), QuantumError> {
    if m.nrows() != m.ncols() {
        return Err(QuantumError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(())
}

fn check_same_dim(expected: usize, found: usize) -> Result<(), QuantumError> {
    if expected != found {
        return Err(QuantumError::DimensionMismatch { expected, found });
    }
    Ok(())
}

fn is_finite<T: Real>(x: T) -> bool {
    to_f64(x).is_finite()
}
