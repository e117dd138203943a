//! Dense matrix functions behind the equilibrium formulas.
//!
//! The three power series
//!
//! ```text
//! f(Qt) = Σ Q^k t^(2k)   / (2k)!
//! g(Qt) = Σ Q^k t^(2k+1) / (2k+1)!
//! h(Qt) = Σ Q^k t^(2k+2) / (2k+2)!
//! ```
//!
//! converge for every square `Q`. For any square root `H` of `Q` they equal
//! `cosh(Ht)`, `H⁻¹ sinh(Ht)` and `(cosh(Ht) - I) Q⁻¹`, but the series need no
//! square root and stay defined when `Q` is singular.
//!
//! Two evaluation routes are provided. When `Q` has a well-conditioned
//! eigenvector basis the functions are applied per eigenvalue; otherwise the
//! series is summed at a reduced argument and recombined with the
//! double-angle relations `g(2τ) = 2 g f`, `h(2τ) = 2 g²`, `f = I + Q h`.

use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Imaginary parts at or below `REAL_TOL * (1 + |λ|)` classify an eigenvalue as real.
pub const REAL_TOL: f64 = 1e-9;

/// Default relative tolerance `|T - T_k| <= tol * T_k` for hitting a critical horizon.
pub const DEFAULT_CRITICAL_TOL: f64 = 1e-4;

/// Eigenvector bases with a condition estimate above this are not used for evaluation.
pub const SPECTRAL_COND_LIMIT: f64 = 1e6;

/// Dense square matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix(DMatrix<f64>);

impl SquareMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::NotSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        if m.nrows() == 0 {
            return Err(Error::Empty);
        }
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                if !m[(i, j)].is_finite() {
                    return Err(Error::NonFinite { row: i, col: j });
                }
            }
        }
        Ok(Self(m))
    }

    /// Builds a matrix from rows; every row must have the same length as the row count.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n = rows.len();
        for r in rows {
            if r.as_ref().len() != n {
                return Err(Error::NotSquare {
                    rows: n,
                    cols: r.as_ref().len(),
                });
            }
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i].as_ref()[j]))
    }

    pub fn identity(order: usize) -> Self {
        Self(DMatrix::identity(order, order))
    }

    pub fn zeros(order: usize) -> Self {
        Self(DMatrix::zeros(order, order))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn order(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    /// Largest `|a_ij - a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let n = self.order();
        let mut worst = 0.0_f64;
        for i in 0..n {
            for j in (i + 1)..n {
                worst = worst.max((self.0[(i, j)] - self.0[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.asymmetry() <= tol
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.order())
            .map(|i| self.0.row(i).iter().copied().collect())
            .collect()
    }
}

impl From<SquareMatrix> for DMatrix<f64> {
    fn from(m: SquareMatrix) -> Self {
        m.0
    }
}

/// Eigenvalues of `Q` plus an optional usable eigenvector basis.
#[derive(Debug, Clone)]
pub struct SpectralInfo {
    pub eigenvalues: Vec<Complex64>,
    /// Most negative real eigenvalue `-r²`, if any.
    pub min_real_negative: Option<f64>,
    /// Condition estimate (≥ 1) of the unit-column eigenvector basis; infinite when defective.
    pub conditioning: f64,
    basis: Option<EigenBasis>,
}

impl SpectralInfo {
    /// Real eigenvalues strictly below zero, ascending.
    pub fn negative_real_eigenvalues(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .eigenvalues
            .iter()
            .filter(|z| z.im == 0.0 && z.re < 0.0)
            .map(|z| z.re)
            .collect();
        out.sort_by(f64::total_cmp);
        out
    }

    pub fn has_real_negative(&self) -> bool {
        self.min_real_negative.is_some()
    }

    pub fn min_modulus(&self) -> f64 {
        self.eigenvalues
            .iter()
            .map(|z| z.norm())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_modulus(&self) -> f64 {
        self.eigenvalues.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Eigenvalues sorted by descending real part (then imaginary part).
    pub fn sorted_eigenvalues(&self) -> Vec<Complex64> {
        let mut v = self.eigenvalues.clone();
        v.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
        v
    }

    /// The eigenvector basis when it is well enough conditioned to evaluate functions with.
    pub fn basis(&self) -> Option<&EigenBasis> {
        self.basis
            .as_ref()
            .filter(|_| self.conditioning < SPECTRAL_COND_LIMIT)
    }
}

/// `Q = V Λ V⁻¹` with unit-norm columns in `V`.
#[derive(Debug, Clone)]
pub struct EigenBasis {
    values: Vec<Complex64>,
    vectors: DMatrix<Complex64>,
    inverse: DMatrix<Complex64>,
}

impl EigenBasis {
    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    /// `Re(V diag(k(λ)) V⁻¹)`.
    pub fn apply(&self, k: impl Fn(Complex64) -> Complex64) -> DMatrix<f64> {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for (j, lam) in self.values.iter().enumerate() {
            let s = k(*lam);
            for i in 0..n {
                scaled[(i, j)] *= s;
            }
        }
        (scaled * &self.inverse).map(|z| z.re)
    }

    /// Coordinates `V⁻¹ y` of a real vector in the eigenvector basis.
    pub fn coordinates(&self, y: &DVector<f64>) -> DVector<Complex64> {
        &self.inverse * y.map(Complex64::from)
    }

    /// `Re(V diag(k(λ)) c)` for coordinates `c` from [`EigenBasis::coordinates`].
    pub fn synthesize(
        &self,
        coords: &DVector<Complex64>,
        k: impl Fn(Complex64) -> Complex64,
    ) -> DVector<f64> {
        let weighted = DVector::from_iterator(
            coords.len(),
            coords.iter().zip(&self.values).map(|(c, lam)| c * k(*lam)),
        );
        (&self.vectors * weighted).map(|z| z.re)
    }
}

fn is_real(z: Complex64) -> bool {
    z.im.abs() <= REAL_TOL * (1.0 + z.norm())
}

fn symmetric_tol(m: &DMatrix<f64>) -> f64 {
    1e-14 * (1.0 + m.amax())
}

/// Eigenvalues and (when available) an eigenvector basis of `Q`.
pub fn spectral(q: &SquareMatrix) -> Result<SpectralInfo> {
    let m = q.as_matrix();
    let n = q.order();

    let (values, basis, conditioning) = if q.asymmetry() <= symmetric_tol(m) {
        let sym = (m + m.transpose()) * 0.5;
        let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 0)
            .ok_or_else(|| Error::Eigensolver("symmetric QR iteration did not converge".into()))?;
        let values: Vec<Complex64> = eig.eigenvalues.iter().map(|&v| Complex64::from(v)).collect();
        let vectors = eig.eigenvectors.map(Complex64::from);
        let inverse = vectors.transpose();
        let basis = EigenBasis {
            values: values.clone(),
            vectors,
            inverse,
        };
        (values, Some(basis), 1.0)
    } else {
        let fm = faer::Mat::<f64>::from_fn(n, n, |i, j| m[(i, j)]);
        let eig = fm
            .eigen()
            .map_err(|e| Error::Eigensolver(format!("{e:?}")))?;
        let s = eig.S();
        let u = eig.U();
        let mut values: Vec<Complex64> = (0..n).map(|i| s[i]).collect();
        for z in values.iter_mut() {
            if !z.re.is_finite() || !z.im.is_finite() {
                return Err(Error::Eigensolver("non-finite eigenvalue".into()));
            }
            if is_real(*z) {
                z.im = 0.0;
            }
        }
        let mut vectors = DMatrix::<Complex64>::from_fn(n, n, |i, j| u[(i, j)]);
        for mut col in vectors.column_iter_mut() {
            let norm = col.norm();
            if norm > 0.0 {
                col.unscale_mut(norm);
            }
        }
        let (basis, conditioning) = match vectors.clone().try_inverse() {
            Some(inverse) => {
                let cond = one_norm_c(&vectors) * one_norm_c(&inverse);
                let lam = DMatrix::from_diagonal(&DVector::from_column_slice(&values));
                let resid = (m.map(Complex64::from) * &vectors - &vectors * lam).norm();
                let ok = resid <= 1e-8 * (1.0 + m.norm()) * cond.max(1.0) && cond.is_finite();
                let basis = EigenBasis {
                    values: values.clone(),
                    vectors,
                    inverse,
                };
                if ok {
                    (Some(basis), cond.max(1.0))
                } else {
                    (None, f64::INFINITY)
                }
            }
            None => (None, f64::INFINITY),
        };
        (values, basis, conditioning)
    };

    let min_real_negative = values
        .iter()
        .filter(|z| z.im == 0.0 && z.re < 0.0)
        .map(|z| z.re)
        .min_by(f64::total_cmp);

    Ok(SpectralInfo {
        eigenvalues: values,
        min_real_negative,
        conditioning,
        basis,
    })
}

fn one_norm_c(m: &DMatrix<Complex64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub(crate) fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// scalar kernels, evaluated per eigenvalue q with a = sqrt(q) (principal branch)

const SMALL_ARG: f64 = 1e-4;

fn kernel_f(q: Complex64, t: f64) -> Complex64 {
    (q.sqrt() * t).cosh()
}

fn kernel_g(q: Complex64, t: f64) -> Complex64 {
    let a = q.sqrt();
    let z = a * t;
    if z.norm() < SMALL_ARG {
        t * (1.0 + z * z / 6.0)
    } else {
        z.sinh() / a
    }
}

fn kernel_h(q: Complex64, t: f64) -> Complex64 {
    let a = q.sqrt();
    let z = a * t;
    if z.norm() < SMALL_ARG {
        0.5 * t * t * (1.0 + z * z / 12.0)
    } else {
        let s = (z * 0.5).sinh() / a;
        2.0 * s * s
    }
}

/// `1 - e^{-w}` without cancellation near `w = 0`.
fn one_minus_exp_neg(w: Complex64) -> Complex64 {
    let (x, y) = (w.re, w.im);
    let half = (0.5 * y).sin();
    // e^{-w} - 1 = expm1(-x) cos y - 2 sin²(y/2) - i e^{-x} sin y
    let re = (-x).exp_m1() * y.cos() - 2.0 * half * half;
    let im = -(-x).exp() * y.sin();
    -Complex64::new(re, im)
}

/// `(1 - e^{-a s}) / a`, continuous at `a = 0`.
fn em1_over(a: Complex64, s: f64) -> Complex64 {
    let w = a * s;
    if w.norm() < SMALL_ARG {
        s * (1.0 - w / 2.0 + w * w / 6.0)
    } else {
        one_minus_exp_neg(w) / a
    }
}

/// Scalar form of `[h(Q(T-t)) - h(QT)] f(QT)⁻¹` at eigenvalue `q`, overflow-free for large `T`.
pub(crate) fn state_kernel(q: Complex64, horizon: f64, t: f64) -> Complex64 {
    let a = q.sqrt();
    let num = em1_over(a, t) * em1_over(a, 2.0 * horizon - t);
    let den = 1.0 + (-2.0 * a * horizon).exp();
    -num / den
}

/// Scalar form of `-g(Q(T-t)) f(QT)⁻¹` at eigenvalue `q`.
pub(crate) fn control_kernel(q: Complex64, horizon: f64, t: f64) -> Complex64 {
    let a = q.sqrt();
    let num = (-a * t).exp() * em1_over(a, 2.0 * (horizon - t));
    let den = 1.0 + (-2.0 * a * horizon).exp();
    -num / den
}

/// `cosh(√λ (T-t)) / cosh(√λ T)` for real `λ ≥ 0`, bounded by 1 and free of overflow.
pub fn cosh_ratio(lambda: f64, horizon: f64, t: f64) -> f64 {
    let a = lambda.max(0.0).sqrt();
    (-a * t).exp() * (1.0 + (-2.0 * a * (horizon - t)).exp()) / (1.0 + (-2.0 * a * horizon).exp())
}

fn ln_abs_cosh(z: Complex64) -> f64 {
    let z = if z.re >= 0.0 { z } else { -z };
    z.re + (1.0 + (-2.0 * z).exp()).norm().ln() - std::f64::consts::LN_2
}

// ---------------------------------------------------------------------------

/// `f(Qt)`, `g(Qt)` and `h(Qt)` evaluated together.
#[derive(Debug, Clone)]
pub struct Fgh {
    pub f: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub h: DMatrix<f64>,
}

/// Spectral evaluation when the basis is usable, scaled series otherwise.
pub fn fgh(q: &SquareMatrix, t: f64) -> Result<Fgh> {
    check_time(t)?;
    let info = spectral(q)?;
    Ok(fgh_with(q, &info, t))
}

pub(crate) fn fgh_with(q: &SquareMatrix, info: &SpectralInfo, t: f64) -> Fgh {
    match info.basis() {
        Some(basis) => fgh_spectral(basis, t),
        None => fgh_scaled_series(q.as_matrix(), t),
    }
}

pub fn fgh_spectral(basis: &EigenBasis, t: f64) -> Fgh {
    Fgh {
        f: basis.apply(|q| kernel_f(q, t)),
        g: basis.apply(|q| kernel_g(q, t)),
        h: basis.apply(|q| kernel_h(q, t)),
    }
}

/// Truncated series at `τ = t / 2^s` with `‖Q‖ τ² ≤ 1/2`, followed by `s` doublings.
pub fn fgh_scaled_series(q: &DMatrix<f64>, t: f64) -> Fgh {
    let n = q.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    if t == 0.0 {
        return Fgh {
            f: id.clone(),
            g: DMatrix::zeros(n, n),
            h: DMatrix::zeros(n, n),
        };
    }
    let norm = one_norm(q);
    let mut squarings = 0u32;
    let mut tau = t;
    while norm * tau * tau > 0.5 {
        tau *= 0.5;
        squarings += 1;
    }
    let tau2 = tau * tau;

    // term_k = Q^k τ^{2k} / (2k)!, the g and h terms follow by extra factors
    let mut f = id.clone();
    let mut g = &id * tau;
    let mut h = &id * (tau2 / 2.0);
    let mut term = id.clone();
    for k in 1..64u32 {
        let kk = f64::from(k);
        term = (&term * q) * (tau2 / ((2.0 * kk - 1.0) * (2.0 * kk)));
        let tf = term.clone();
        let tg = &term * (tau / (2.0 * kk + 1.0));
        let th = &term * (tau2 / ((2.0 * kk + 1.0) * (2.0 * kk + 2.0)));
        f += &tf;
        g += &tg;
        h += &th;
        if tf.amax() <= f64::EPSILON * 1e-2 * f.amax() {
            break;
        }
    }
    for _ in 0..squarings {
        let h2 = (&g * &g) * 2.0;
        let g2 = (&g * &f) * 2.0;
        f = &id + q * &h2;
        g = g2;
        h = h2;
    }
    Fgh { f, g, h }
}

fn check_time(t: f64) -> Result<()> {
    if !t.is_finite() {
        return Err(Error::Invalid(format!("non-finite time {t}")));
    }
    Ok(())
}

/// `f(Qt) = Σ Q^k t^{2k}/(2k)!`.
pub fn series_f(q: &SquareMatrix, t: f64) -> Result<SquareMatrix> {
    SquareMatrix::new(fgh(q, t)?.f)
}

/// `g(Qt) = Σ Q^k t^{2k+1}/(2k+1)!`.
pub fn series_g(q: &SquareMatrix, t: f64) -> Result<SquareMatrix> {
    SquareMatrix::new(fgh(q, t)?.g)
}

/// `h(Qt) = Σ Q^k t^{2k+2}/(2k+2)!`.
pub fn series_h(q: &SquareMatrix, t: f64) -> Result<SquareMatrix> {
    SquareMatrix::new(fgh(q, t)?.h)
}

// ---------------------------------------------------------------------------
// square roots

/// Square root of `Q` whose eigenvalues all lie in the open right half-plane.
pub fn sqrt_positive_real(q: &SquareMatrix) -> Result<SquareMatrix> {
    let info = spectral(q)?;
    sqrt_positive_real_with(q, &info)
}

pub(crate) fn sqrt_positive_real_with(q: &SquareMatrix, info: &SpectralInfo) -> Result<SquareMatrix> {
    if let Some(neg) = info.min_real_negative {
        return Err(Error::RealNegativeEigenvalue(neg));
    }
    let scale = info.max_modulus().max(f64::MIN_POSITIVE);
    let min = info.min_modulus();
    if min <= 1e-13 * scale {
        return Err(Error::Singular(min));
    }
    let root = match info.basis() {
        Some(basis) => basis.apply(|z| z.sqrt()),
        // defective or badly conditioned: Denman-Beavers on the real matrix
        None => denman_beavers(&q.as_matrix().map(Complex64::from))
            .ok_or(Error::Singular(min))?
            .map(|z| z.re),
    };
    SquareMatrix::new(root)
}

/// Symmetric positive semidefinite square root of a symmetric matrix; negative eigenvalues are clipped to 0.
pub fn spd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// Principal square root by the scaled Denman-Beavers iteration. Requires no
/// eigenvalue on the closed negative real axis.
pub fn denman_beavers(a: &DMatrix<Complex64>) -> Option<DMatrix<Complex64>> {
    let n = a.nrows();
    let mut y = a.clone();
    let mut z = DMatrix::<Complex64>::identity(n, n);
    for iter in 0..100 {
        let yi = y.clone().try_inverse()?;
        let zi = z.clone().try_inverse()?;
        let mu = if iter < 10 {
            let dy = y.clone().determinant().norm();
            let dz = z.clone().determinant().norm();
            let prod = dy * dz;
            if prod.is_finite() && prod > 0.0 {
                prod.powf(-1.0 / (2.0 * n as f64))
            } else {
                1.0
            }
        } else {
            1.0
        };
        let mu_c = Complex64::from(mu);
        let inv_mu = Complex64::from(1.0 / mu);
        let y_next = (&y * mu_c + &zi * inv_mu) * Complex64::from(0.5);
        let z_next = (&z * mu_c + &yi * inv_mu) * Complex64::from(0.5);
        let change = (&y_next - &y).norm() / y_next.norm().max(f64::MIN_POSITIVE);
        y = y_next;
        z = z_next;
        if change < 1e-15 && iter >= 10 {
            break;
        }
    }
    if y.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
        Some(y)
    } else {
        None
    }
}

/// A complex square root of a nonsingular `Q`, computed without its eigenvectors.
/// Uses `Q^{1/2} = e^{iθ/2} (e^{-iθ} Q)^{1/2}` with `θ` chosen so that the rotated
/// spectrum avoids the negative real axis.
pub fn complex_sqrt(q: &SquareMatrix, eigenvalues: &[Complex64]) -> Result<DMatrix<Complex64>> {
    let candidates = [
        0.0,
        std::f64::consts::FRAC_PI_2,
        -std::f64::consts::FRAC_PI_2,
        std::f64::consts::FRAC_PI_4,
        -std::f64::consts::FRAC_PI_4,
        3.0 * std::f64::consts::FRAC_PI_4,
        -3.0 * std::f64::consts::FRAC_PI_4,
    ];
    let clearance = |theta: f64| {
        eigenvalues
            .iter()
            .map(|z| {
                let rot = z * Complex64::from_polar(1.0, -theta);
                // angular distance of rot from the negative real axis
                std::f64::consts::PI - rot.arg().abs()
            })
            .fold(f64::INFINITY, f64::min)
    };
    let theta = candidates
        .iter()
        .copied()
        .max_by(|a, b| clearance(*a).total_cmp(&clearance(*b)))
        .unwrap_or(0.0);
    let rotated = q.as_matrix().map(|v| Complex64::from(v) * Complex64::from_polar(1.0, -theta));
    let root = denman_beavers(&rotated).ok_or(Error::Singular(0.0))?;
    Ok(root * Complex64::from_polar(1.0, theta / 2.0))
}

// ---------------------------------------------------------------------------
// Fact 1: singularity of f(QT)

/// One negative real eigenvalue `-r²` and its critical horizons `(2k+1)π/(2r)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalBranch {
    pub r: f64,
    pub times: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CriticalTimes {
    pub entries: Vec<CriticalBranch>,
}

/// Critical horizon `(2k+1)π/(2r)`.
pub fn critical_time(r: f64, k: u32) -> f64 {
    f64::from(2 * k + 1) * std::f64::consts::PI / (2.0 * r)
}

impl CriticalTimes {
    /// All critical horizons up to `bound` for the negative real eigenvalues in `info`.
    pub fn from_spectrum(info: &SpectralInfo, bound: f64) -> Self {
        let mut rs: Vec<f64> = info
            .negative_real_eigenvalues()
            .into_iter()
            .map(|l| (-l).sqrt())
            .collect();
        rs.sort_by(f64::total_cmp);
        rs.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + b.abs()));
        let entries = rs
            .into_iter()
            .map(|r| {
                let times = (0u32..)
                    .map(|k| critical_time(r, k))
                    .take_while(|&t| t <= bound)
                    .collect();
                CriticalBranch { r, times }
            })
            .collect();
        Self { entries }
    }

    /// All horizons, ascending.
    pub fn all_times(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.entries.iter().flat_map(|e| e.times.iter().copied()).collect();
        v.sort_by(f64::total_cmp);
        v
    }

    pub fn is_empty(&self) -> bool {
        self.entries.iter().all(|e| e.times.is_empty())
    }
}

impl fmt::Display for CriticalTimes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.entries.is_empty() {
            return write!(f, "none");
        }
        for (n, e) in self.entries.iter().enumerate() {
            if n > 0 {
                write!(f, "; ")?;
            }
            write!(f, "r = {:.6}:", e.r)?;
            for t in &e.times {
                write!(f, " {t:.6}")?;
            }
        }
        Ok(())
    }
}

/// A horizon that hits a critical value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalHit {
    pub r: f64,
    pub k: u32,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Singularity {
    Nonsingular,
    Critical(Vec<CriticalHit>),
}

#[derive(Debug, Clone)]
pub struct SingularityReport {
    pub verdict: Singularity,
    /// Critical horizons below `2T`.
    pub critical_times: CriticalTimes,
    /// Condition estimate of `f(QT)`.
    pub condition: f64,
    /// `max_k 1 / |cosh(√λ_k T)|`: how strongly `f(QT)⁻¹` amplifies its worst channel.
    /// At most 1 without real negative or complex eigenvalues.
    pub critical_gain: f64,
}

impl SingularityReport {
    pub fn is_nonsingular(&self) -> bool {
        matches!(self.verdict, Singularity::Nonsingular)
    }
}

/// Decides whether `f(QT)` is singular: exactly when a real negative eigenvalue
/// `-r²` has `T` within `tol · T_k` of some `T_k = (2k+1)π/(2r)`.
pub fn f_singularity(q: &SquareMatrix, horizon: f64, tol: f64) -> Result<SingularityReport> {
    let info = spectral(q)?;
    Ok(f_singularity_with(q, &info, horizon, tol))
}

pub(crate) fn f_singularity_with(
    q: &SquareMatrix,
    info: &SpectralInfo,
    horizon: f64,
    tol: f64,
) -> SingularityReport {
    let critical_times = CriticalTimes::from_spectrum(info, 2.0 * horizon);
    let mut hits = Vec::new();
    for branch in &critical_times.entries {
        // nearest k on either side of T
        let k_real = (horizon * 2.0 * branch.r / std::f64::consts::PI - 1.0) / 2.0;
        let lo = k_real.floor().max(0.0) as u32;
        for k in [lo, lo + 1] {
            let tk = critical_time(branch.r, k);
            if (horizon - tk).abs() <= tol * tk {
                hits.push(CriticalHit {
                    r: branch.r,
                    k,
                    time: tk,
                });
            }
        }
    }
    let condition = f_condition(q, info, horizon);
    let critical_gain = critical_gain(info, horizon);
    let verdict = if hits.is_empty() {
        Singularity::Nonsingular
    } else {
        Singularity::Critical(hits)
    };
    SingularityReport {
        verdict,
        critical_times,
        condition,
        critical_gain,
    }
}

/// `max_k 1 / |cosh(√λ_k T)|` over the eigenvalues of `Q`.
pub fn critical_gain(info: &SpectralInfo, horizon: f64) -> f64 {
    info.eigenvalues
        .iter()
        .map(|&l| (-ln_abs_cosh(l.sqrt() * horizon)).exp())
        .fold(0.0, f64::max)
}

/// Condition estimate of `f(QT)`: spectral when the basis is usable, SVD otherwise.
pub(crate) fn f_condition(q: &SquareMatrix, info: &SpectralInfo, horizon: f64) -> f64 {
    match info.basis() {
        Some(basis) => {
            let logs: Vec<f64> = basis
                .values()
                .iter()
                .map(|&l| ln_abs_cosh(l.sqrt() * horizon))
                .collect();
            let hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = logs.iter().copied().fold(f64::INFINITY, f64::min);
            (hi - lo).exp() * info.conditioning
        }
        None => {
            let f = fgh_scaled_series(q.as_matrix(), horizon).f;
            singular_value_condition(&f)
        }
    }
}

/// `σ_max / σ_min` (infinite for an exactly singular matrix).
pub fn singular_value_condition(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m1(v: f64) -> SquareMatrix {
        SquareMatrix::from_rows(&[[v]]).unwrap()
    }

    #[test]
    fn rejects_non_finite_and_non_square() {
        assert!(matches!(
            SquareMatrix::new(DMatrix::from_element(2, 2, f64::NAN)),
            Err(Error::NonFinite { .. })
        ));
        assert!(matches!(
            SquareMatrix::new(DMatrix::zeros(2, 3)),
            Err(Error::NotSquare { .. })
        ));
        assert!(SquareMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0]]).is_err());
    }

    #[test]
    fn f_of_zero_matrix_is_identity() {
        let f = series_f(&SquareMatrix::zeros(3), 5.0).unwrap();
        assert_eq!(f.as_matrix(), &DMatrix::identity(3, 3));
    }

    #[test]
    fn g_and_h_of_zero_matrix() {
        let g = series_g(&SquareMatrix::zeros(2), 3.0).unwrap();
        assert!((g.as_matrix() - DMatrix::identity(2, 2) * 3.0).amax() < 1e-15);
        let h = series_h(&SquareMatrix::zeros(2), 2.0).unwrap();
        assert!((h.as_matrix() - DMatrix::identity(2, 2) * 2.0).amax() < 1e-15);
    }

    #[test]
    fn scalar_values() {
        // direct series sums, frozen
        let cosh2 = 3.762_195_691_083_631;
        let sinh1 = 1.175_201_193_643_801_4;
        let half_sinh2 = 1.813_430_203_923_509_4;
        let cosh1_m1 = 0.543_080_634_815_243_7;
        assert!((series_f(&m1(4.0), 1.0).unwrap().as_matrix()[(0, 0)] - cosh2).abs() < 1e-12);
        assert!((series_g(&m1(1.0), 1.0).unwrap().as_matrix()[(0, 0)] - sinh1).abs() < 1e-12);
        assert!((series_g(&m1(4.0), 1.0).unwrap().as_matrix()[(0, 0)] - half_sinh2).abs() < 1e-12);
        assert!((series_h(&m1(1.0), 1.0).unwrap().as_matrix()[(0, 0)] - cosh1_m1).abs() < 1e-12);
        let pi = std::f64::consts::PI;
        assert!(series_f(&m1(-1.0), pi / 2.0).unwrap().as_matrix()[(0, 0)].abs() < 1e-12);
        assert!((series_h(&m1(-1.0), pi).unwrap().as_matrix()[(0, 0)] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn scalar_series_route_matches_closed_forms() {
        for &(q, t) in &[(4.0, 1.0), (1.0, 1.0), (-1.0, 2.0), (30.0, 3.0), (-9.0, 2.5), (0.0, 1.5)] {
            let s = fgh_scaled_series(&DMatrix::from_element(1, 1, q), t);
            let (f, g, h) = if q > 0.0 {
                let a = f64::sqrt(q);
                ((a * t).cosh(), (a * t).sinh() / a, ((a * t).cosh() - 1.0) / q)
            } else if q < 0.0 {
                let r = f64::sqrt(-q);
                ((r * t).cos(), (r * t).sin() / r, (1.0 - (r * t).cos()) / -q)
            } else {
                (1.0, t, t * t / 2.0)
            };
            let scale = 1.0 + f.abs();
            assert!((s.f[(0, 0)] - f).abs() < 1e-12 * scale, "f q={q} t={t}");
            assert!((s.g[(0, 0)] - g).abs() < 1e-12 * scale, "g q={q} t={t}");
            assert!((s.h[(0, 0)] - h).abs() < 1e-12 * scale, "h q={q} t={t}");
        }
    }

    #[test]
    fn spectral_of_diagonal() {
        let info = spectral(&SquareMatrix::from_diagonal(&[4.0, -9.0]).unwrap()).unwrap();
        assert_eq!(info.min_real_negative, Some(-9.0));
        let mut re: Vec<f64> = info.eigenvalues.iter().map(|z| z.re).collect();
        re.sort_by(f64::total_cmp);
        assert_eq!(re, vec![-9.0, 4.0]);

        let id = spectral(&SquareMatrix::identity(2)).unwrap();
        assert!(id.eigenvalues.iter().all(|z| (z - Complex64::from(1.0)).norm() < 1e-15));
        assert_eq!(id.min_real_negative, None);
    }

    #[test]
    fn nonsymmetric_spectrum_has_conjugate_pair() {
        let q = SquareMatrix::from_rows(&[[0.0, -2.0], [2.0, 0.0]]).unwrap();
        let info = spectral(&q).unwrap();
        let mut ims: Vec<f64> = info.eigenvalues.iter().map(|z| z.im).collect();
        ims.sort_by(f64::total_cmp);
        assert!((ims[0] + 2.0).abs() < 1e-12 && (ims[1] - 2.0).abs() < 1e-12);
        assert!(info.basis().is_some());
    }

    #[test]
    fn defective_matrix_falls_back_to_series() {
        let q = SquareMatrix::from_rows(&[[1.0, 1.0], [0.0, 1.0]]).unwrap();
        let info = spectral(&q).unwrap();
        assert!(info.basis().is_none());
        // f(Qt) for a Jordan block: [[cosh t, t sinh t / 2], [0, cosh t]]
        let t: f64 = 0.7;
        let out = fgh(&q, t).unwrap();
        assert!((out.f[(0, 0)] - t.cosh()).abs() < 1e-13);
        assert!((out.f[(0, 1)] - t * t.sinh() / 2.0).abs() < 1e-13);
    }

    #[test]
    fn sqrt_examples() {
        let r = sqrt_positive_real(&m1(4.0)).unwrap();
        assert!((r.as_matrix()[(0, 0)] - 2.0).abs() < 1e-14);
        let r = sqrt_positive_real(&SquareMatrix::identity(3)).unwrap();
        assert!((r.as_matrix() - DMatrix::identity(3, 3)).amax() < 1e-14);
        assert!(matches!(
            sqrt_positive_real(&SquareMatrix::from_diagonal(&[1.0, -4.0]).unwrap()),
            Err(Error::RealNegativeEigenvalue(v)) if v == -4.0
        ));
        assert!(matches!(
            sqrt_positive_real(&SquareMatrix::from_diagonal(&[1.0, 0.0]).unwrap()),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn sqrt_of_defective_matrix_uses_iteration() {
        let q = SquareMatrix::from_rows(&[[4.0, 1.0], [0.0, 4.0]]).unwrap();
        let r = sqrt_positive_real(&q).unwrap();
        let back = r.as_matrix() * r.as_matrix();
        assert!((back - q.as_matrix()).amax() < 1e-12);
        assert!((r.as_matrix()[(0, 1)] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn complex_sqrt_handles_negative_eigenvalue() {
        let q = SquareMatrix::from_rows(&[[1.0, 2.0], [3.0, -1.5]]).unwrap();
        let info = spectral(&q).unwrap();
        assert!(info.has_real_negative());
        let h = complex_sqrt(&q, &info.eigenvalues).unwrap();
        let back = &h * &h;
        let err = (back - q.as_matrix().map(Complex64::from)).norm();
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn singularity_examples() {
        let id = f_singularity(&SquareMatrix::identity(2), 7.3, DEFAULT_CRITICAL_TOL).unwrap();
        assert!(id.is_nonsingular());

        let pi = std::f64::consts::PI;
        let q = SquareMatrix::from_diagonal(&[-pi * pi / 4.0, 1.0]).unwrap();
        let rep = f_singularity(&q, 1.0, 1e-6).unwrap();
        match rep.verdict {
            Singularity::Critical(hits) => {
                assert_eq!(hits.len(), 1);
                assert_eq!(hits[0].k, 0);
                assert!((hits[0].r - pi / 2.0).abs() < 1e-14);
            }
            Singularity::Nonsingular => panic!("expected critical"),
        }
        assert!(rep.condition > 1e10);

        // second branch k = 1 at T = 3
        let rep = f_singularity(&q, 3.0, 1e-6).unwrap();
        assert!(matches!(rep.verdict, Singularity::Critical(ref h) if h[0].k == 1));
        let rep = f_singularity(&q, 2.0, 1e-6).unwrap();
        assert!(rep.is_nonsingular());
    }

    #[test]
    fn critical_times_listing() {
        let info = spectral(&SquareMatrix::from_diagonal(&[-1.0, -1.0, 2.0]).unwrap()).unwrap();
        let ct = CriticalTimes::from_spectrum(&info, 10.0);
        assert_eq!(ct.entries.len(), 1, "duplicate eigenvalues collapse");
        let pi = std::f64::consts::PI;
        assert_eq!(ct.entries[0].times, vec![pi / 2.0, 3.0 * pi / 2.0, 5.0 * pi / 2.0]);
    }

    #[test]
    fn stable_kernels_match_direct_formulas() {
        for &q in &[2.0, 0.3, -0.7, 1e-12, 0.0] {
            let qc = Complex64::from(q);
            let (horizon, t) = (1.7, 0.6);
            let direct = (kernel_h(qc, horizon - t) - kernel_h(qc, horizon)) / kernel_f(qc, horizon);
            let stable = state_kernel(qc, horizon, t);
            assert!((direct - stable).norm() < 1e-12, "q={q}: {direct} vs {stable}");
            let direct_u = -kernel_g(qc, horizon - t) / kernel_f(qc, horizon);
            assert!((direct_u - control_kernel(qc, horizon, t)).norm() < 1e-12);
        }
        // no overflow at huge horizons
        let k = state_kernel(Complex64::from(50.0), 1e4, 1.0);
        assert!(k.re.is_finite());
        assert!((cosh_ratio(4.0, 1e4, 1.0) - (-2.0f64).exp()).abs() < 1e-15);
    }
}
