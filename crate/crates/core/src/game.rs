//! One-stage opinion game: assembly of `Q`, existence, and the equilibrium.
//!
//! With `W = diag(W_11, ..., W_nn)` and `Q` the block matrix whose diagonal
//! block `i` is `W_ii + Σ_{j∈N_i} W_ij` and whose off-diagonal block `(i, j)`
//! is `-W_ij`, the open-loop equilibrium exists iff `f(QT)` is nonsingular
//! and then
//!
//! ```text
//! x*(t) = b + [h(Q(T-t)) - h(QT)] f(QT)⁻¹ (Q - W) b
//! u*(t) = -g(Q(T-t)) f(QT)⁻¹ (Q - W) b
//! ```
//!
//! These are the state/costate solution with `x(0) = b`, `p(T) = 0`,
//! rewritten with `h(t) f(T) - g(t) g(T) = h(T-t) - h(T)` and
//! `g(t) f(T) - f(t) g(T) = -g(T-t)`. When `Q` is nonsingular they agree with
//! the hyperbolic form `x*(t) = [Q⁻¹W + cosh(H(T-t)) cosh(HT)⁻¹ (I - Q⁻¹W)] b`
//! for any square root `H`, which [`CoshForm`] evaluates independently.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::matfun::{
    self, control_kernel, f_singularity_with, spectral, state_kernel, CriticalHit, CriticalTimes, Singularity,
    SpectralInfo, SquareMatrix, DEFAULT_CRITICAL_TOL,
};
use crate::weights::{check_weights, Violation};

/// [`ExistenceReport::critical_gain`] above which a solution is flagged near-critical.
pub const NEAR_CRITICAL_GAIN: f64 = 1e3;

/// A complete one-stage game. Agents and issues are 0-based.
#[derive(Debug, Clone, PartialEq)]
pub struct GameSpec {
    n: usize,
    d: usize,
    horizon: f64,
    stubbornness: Vec<SquareMatrix>,
    influence: BTreeMap<(usize, usize), SquareMatrix>,
    biases: Vec<DVector<f64>>,
}

impl GameSpec {
    /// `influence` maps `(i, j)` to `W_ij`; zero matrices are dropped, so the
    /// neighborhood of `i` is exactly `{ j : W_ij != 0 }`.
    pub fn new(
        horizon: f64,
        stubbornness: Vec<SquareMatrix>,
        influence: impl IntoIterator<Item = ((usize, usize), SquareMatrix)>,
        biases: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let n = stubbornness.len();
        if n == 0 {
            return Err(Error::Invalid("a game needs at least one agent".into()));
        }
        let d = stubbornness[0].order();
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Invalid(format!("horizon {horizon} must be positive and finite")));
        }
        if let Some((i, w)) = stubbornness.iter().enumerate().find(|(_, w)| w.order() != d) {
            return Err(Error::Dimension(format!(
                "W_{{{0},{0}}} has order {1}, expected {d}",
                i + 1,
                w.order()
            )));
        }
        if biases.len() != n {
            return Err(Error::Dimension(format!("{} bias vectors for {n} agents", biases.len())));
        }
        let biases: Vec<DVector<f64>> = biases
            .into_iter()
            .enumerate()
            .map(|(i, b)| {
                if b.len() != d {
                    Err(Error::Dimension(format!("bias of agent {} has {} issues, expected {d}", i + 1, b.len())))
                } else if b.iter().any(|v| !v.is_finite()) {
                    Err(Error::Invalid(format!("bias of agent {} is not finite", i + 1)))
                } else {
                    Ok(DVector::from_vec(b))
                }
            })
            .collect::<Result<_>>()?;
        let mut map = BTreeMap::new();
        for ((i, j), w) in influence {
            if i >= n || j >= n {
                return Err(Error::Dimension(format!("influence ({}, {}) outside {n} agents", i + 1, j + 1)));
            }
            if i == j {
                return Err(Error::Invalid(format!("influence ({0}, {0}) is a self-loop", i + 1)));
            }
            if w.order() != d {
                return Err(Error::Dimension(format!("W_{{{},{}}} has order {}", i + 1, j + 1, w.order())));
            }
            if !w.is_zero() {
                map.insert((i, j), w);
            }
        }
        let violations = check_weights(&stubbornness, map.iter());
        if !violations.is_empty() {
            return Err(Error::Assumption(describe(&violations)));
        }
        Ok(Self {
            n,
            d,
            horizon,
            stubbornness,
            influence: map,
            biases,
        })
    }

    pub fn agents(&self) -> usize {
        self.n
    }

    pub fn issues(&self) -> usize {
        self.d
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn stubbornness(&self) -> &[SquareMatrix] {
        &self.stubbornness
    }

    pub fn influence(&self) -> &BTreeMap<(usize, usize), SquareMatrix> {
        &self.influence
    }

    /// `W_ij`, or `None` when `j` is not a neighbor of `i`.
    pub fn influence_of(&self, i: usize, j: usize) -> Option<&SquareMatrix> {
        self.influence.get(&(i, j))
    }

    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        self.influence
            .keys()
            .filter(|(a, _)| *a == i)
            .map(|&(_, j)| j)
            .collect()
    }

    pub fn biases(&self) -> &[DVector<f64>] {
        &self.biases
    }

    /// Stacked `nd` bias vector.
    pub fn stacked_biases(&self) -> DVector<f64> {
        stack(&self.biases)
    }

    pub fn with_biases(&self, biases: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(self.horizon, self.stubbornness.clone(), self.influence.clone(), biases)
    }

    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        let mut out = self.clone();
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Invalid(format!("horizon {horizon} must be positive and finite")));
        }
        out.horizon = horizon;
        Ok(out)
    }

    /// True when `W_ij = W_ji` for every ordered pair (absent counts as zero).
    pub fn is_pairwise_symmetric(&self) -> bool {
        self.influence.iter().all(|(&(i, j), w)| match self.influence.get(&(j, i)) {
            Some(back) => back == w,
            None => false,
        })
    }
}

fn describe(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

pub(crate) fn stack(blocks: &[DVector<f64>]) -> DVector<f64> {
    DVector::from_iterator(
        blocks.iter().map(|b| b.len()).sum(),
        blocks.iter().flat_map(|b| b.iter().copied()),
    )
}

/// Splits a stacked `nd` vector into `n` agent vectors.
pub fn unstack(v: &DVector<f64>, d: usize) -> Vec<DVector<f64>> {
    v.as_slice()
        .chunks(d)
        .map(DVector::from_column_slice)
        .collect()
}

/// `Q`, the block-diagonal stubbornness matrix `W`, and the stacked biases.
#[derive(Debug, Clone)]
pub struct QAssembly {
    pub q: SquareMatrix,
    pub w: SquareMatrix,
    pub b: DVector<f64>,
    pub agents: usize,
    pub issues: usize,
}

impl QAssembly {
    /// `(Q - W) b`.
    pub fn drive(&self) -> DVector<f64> {
        (self.q.as_matrix() - self.w.as_matrix()) * &self.b
    }
}

pub fn assemble(spec: &GameSpec) -> QAssembly {
    let (n, d) = (spec.n, spec.d);
    let mut q = DMatrix::<f64>::zeros(n * d, n * d);
    let mut w = DMatrix::<f64>::zeros(n * d, n * d);
    for (i, wii) in spec.stubbornness.iter().enumerate() {
        q.view_mut((i * d, i * d), (d, d)).copy_from(wii.as_matrix());
        w.view_mut((i * d, i * d), (d, d)).copy_from(wii.as_matrix());
    }
    for (&(i, j), wij) in &spec.influence {
        let m = wij.as_matrix();
        let mut diag = q.view_mut((i * d, i * d), (d, d));
        diag += m;
        let mut off = q.view_mut((i * d, j * d), (d, d));
        off -= m;
    }
    QAssembly {
        q: SquareMatrix::new(q).expect("finite blocks"),
        w: SquareMatrix::new(w).expect("finite blocks"),
        b: spec.stacked_biases(),
        agents: n,
        issues: d,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Existence {
    UniqueEquilibrium,
    NoneAtT(Vec<CriticalHit>),
}

#[derive(Debug, Clone)]
pub struct ExistenceReport {
    pub verdict: Existence,
    /// Critical horizons below `2T`.
    pub critical_times: CriticalTimes,
    /// Condition estimate of `f(QT)`.
    pub condition: f64,
    /// `max_k 1 / |cosh(√λ_k T)|`; large only near a critical horizon.
    pub critical_gain: f64,
    pub eigenvalues: Vec<Complex64>,
}

impl ExistenceReport {
    pub fn exists(&self) -> bool {
        matches!(self.verdict, Existence::UniqueEquilibrium)
    }
}

pub fn check_existence(assembly: &QAssembly, horizon: f64) -> Result<ExistenceReport> {
    check_existence_with_tol(assembly, horizon, DEFAULT_CRITICAL_TOL)
}

pub fn check_existence_with_tol(assembly: &QAssembly, horizon: f64, tol: f64) -> Result<ExistenceReport> {
    let info = spectral(&assembly.q)?;
    Ok(existence_from(assembly, &info, horizon, tol))
}

fn existence_from(assembly: &QAssembly, info: &SpectralInfo, horizon: f64, tol: f64) -> ExistenceReport {
    let rep = f_singularity_with(&assembly.q, info, horizon, tol);
    let verdict = match rep.verdict {
        Singularity::Nonsingular => Existence::UniqueEquilibrium,
        Singularity::Critical(hits) => Existence::NoneAtT(hits),
    };
    ExistenceReport {
        verdict,
        critical_times: rep.critical_times,
        condition: rep.condition,
        critical_gain: rep.critical_gain,
        eigenvalues: info.sorted_eigenvalues(),
    }
}

#[derive(Debug, Clone)]
enum Engine {
    /// Coordinates of `(Q - W) b` in the eigenvector basis; `f(QT)⁻¹` is applied per eigenvalue.
    Spectral { coords: DVector<Complex64> },
    /// `f(QT)⁻¹ (Q - W) b` from one linear solve, plus `h(QT)`.
    Series {
        factor: DVector<f64>,
        h_horizon: DMatrix<f64>,
    },
}

/// The equilibrium of a solvable game, evaluated on demand.
#[derive(Debug, Clone)]
pub struct NashSolution {
    assembly: QAssembly,
    horizon: f64,
    existence: ExistenceReport,
    spectral: SpectralInfo,
    engine: Engine,
}

impl NashSolution {
    pub fn new(spec: &GameSpec) -> Result<Self> {
        Self::with_tolerance(spec, DEFAULT_CRITICAL_TOL)
    }

    pub fn with_tolerance(spec: &GameSpec, tol: f64) -> Result<Self> {
        Self::from_assembly(assemble(spec), spec.horizon(), tol)
    }

    pub fn from_assembly(assembly: QAssembly, horizon: f64, tol: f64) -> Result<Self> {
        let info = spectral(&assembly.q)?;
        let existence = existence_from(&assembly, &info, horizon, tol);
        if !existence.exists() {
            return Err(Error::NoEquilibrium {
                horizon,
                critical: existence.critical_times.clone(),
            });
        }
        let drive = assembly.drive();
        let engine = match info.basis() {
            Some(basis) => Engine::Spectral {
                coords: basis.coordinates(&drive),
            },
            None => {
                let fgh = matfun::fgh_scaled_series(assembly.q.as_matrix(), horizon);
                let lu = fgh.f.lu();
                let factor = lu.solve(&drive).ok_or_else(|| Error::NoEquilibrium {
                    horizon,
                    critical: existence.critical_times.clone(),
                })?;
                Engine::Series {
                    factor,
                    h_horizon: fgh.h,
                }
            }
        };
        if existence.critical_gain > NEAR_CRITICAL_GAIN {
            log::warn!(
                "T = {horizon} is near a critical horizon (gain {:.3e}); trajectories are large and sensitive",
                existence.critical_gain
            );
        }
        Ok(Self {
            assembly,
            horizon,
            existence,
            spectral: info,
            engine,
        })
    }

    pub fn assembly(&self) -> &QAssembly {
        &self.assembly
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn existence(&self) -> &ExistenceReport {
        &self.existence
    }

    pub fn spectral(&self) -> &SpectralInfo {
        &self.spectral
    }

    /// [`ExistenceReport::critical_gain`] exceeds [`NEAR_CRITICAL_GAIN`].
    pub fn is_near_critical(&self) -> bool {
        self.existence.critical_gain > NEAR_CRITICAL_GAIN
    }

    /// Whether evaluation goes through the eigenvector basis (else the scaled series).
    pub fn uses_spectral_engine(&self) -> bool {
        matches!(self.engine, Engine::Spectral { .. })
    }

    fn check_t(&self, t: f64) -> Result<()> {
        if (0.0..=self.horizon).contains(&t) {
            Ok(())
        } else {
            Err(Error::TimeOutOfRange {
                t,
                horizon: self.horizon,
            })
        }
    }

    /// Equilibrium opinion profile `x*(t)` (stacked by agent).
    pub fn state_at(&self, t: f64) -> Result<DVector<f64>> {
        self.check_t(t)?;
        let horizon = self.horizon;
        let delta = match &self.engine {
            Engine::Spectral { coords } => {
                let basis = self.spectral.basis().expect("spectral engine has a basis");
                basis.synthesize(coords, |q| state_kernel(q, horizon, t))
            }
            Engine::Series { factor, h_horizon } => {
                let h_rest = matfun::fgh_scaled_series(self.assembly.q.as_matrix(), horizon - t).h;
                (h_rest - h_horizon) * factor
            }
        };
        Ok(&self.assembly.b + delta)
    }

    /// Equilibrium control `u*(t) = dx*/dt`.
    pub fn control_at(&self, t: f64) -> Result<DVector<f64>> {
        self.check_t(t)?;
        let horizon = self.horizon;
        Ok(match &self.engine {
            Engine::Spectral { coords } => {
                let basis = self.spectral.basis().expect("spectral engine has a basis");
                basis.synthesize(coords, |q| control_kernel(q, horizon, t))
            }
            Engine::Series { factor, .. } => {
                let g_rest = matfun::fgh_scaled_series(self.assembly.q.as_matrix(), horizon - t).g;
                -(g_rest * factor)
            }
        })
    }

    /// States and controls on a uniform grid of `grid_points ≥ 2` times over `[0, T]`.
    pub fn sample(&self, grid_points: usize) -> Result<TrajectorySample> {
        if grid_points < 2 {
            return Err(Error::Invalid("a trajectory sample needs at least 2 grid points".into()));
        }
        let last = grid_points - 1;
        let grid: Vec<f64> = (0..grid_points)
            .map(|k| {
                if k == last {
                    self.horizon
                } else {
                    self.horizon * k as f64 / last as f64
                }
            })
            .collect();
        let states = grid.iter().map(|&t| self.state_at(t)).collect::<Result<Vec<_>>>()?;
        let controls = grid.iter().map(|&t| self.control_at(t)).collect::<Result<Vec<_>>>()?;
        Ok(TrajectorySample {
            agents: self.assembly.agents,
            issues: self.assembly.issues,
            grid,
            states,
            controls,
        })
    }
}

/// States and controls of all agents on a time grid.
#[derive(Debug, Clone)]
pub struct TrajectorySample {
    pub agents: usize,
    pub issues: usize,
    pub grid: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
}

impl TrajectorySample {
    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("non-empty sample")
    }

    /// Opinion of `agent` on `issue` along the grid.
    pub fn series(&self, agent: usize, issue: usize) -> Vec<f64> {
        let idx = agent * self.issues + issue;
        self.states.iter().map(|x| x[idx]).collect()
    }

    /// Largest Euclidean norm of the full profile over the grid.
    pub fn max_state_norm(&self) -> f64 {
        self.states.iter().map(|x| x.norm()).fold(0.0, f64::max)
    }
}

/// Long-run weighted average `Q⁻¹ W b`.
pub fn long_run_limit(assembly: &QAssembly) -> Result<DVector<f64>> {
    let wb = assembly.w.as_matrix() * &assembly.b;
    solve_q(assembly, &wb)
}

fn solve_q(assembly: &QAssembly, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let q = assembly.q.as_matrix();
    let lu = q.clone().lu();
    let min_pivot = lu.u().diagonal().iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
    if min_pivot <= 1e-13 * q.amax() {
        return Err(Error::Singular(min_pivot));
    }
    lu.solve(rhs).ok_or(Error::Singular(0.0))
}

/// Infinite-horizon profile `[Q⁻¹W + exp(-H_p t)(I - Q⁻¹W)] b`, where `H_p` is the
/// square root of `Q` with eigenvalues in the open right half-plane.
pub fn infinite_horizon_state(assembly: &QAssembly, t: f64) -> Result<DVector<f64>> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Invalid(format!("time {t} must be finite and >= 0")));
    }
    let info = spectral(&assembly.q)?;
    let root = matfun::sqrt_positive_real_with(&assembly.q, &info)?;
    let limit = long_run_limit(assembly)?;
    if t == 0.0 {
        return Ok(assembly.b.clone());
    }
    let decay = (root.as_matrix() * -t).exp();
    Ok(&limit + decay * (&assembly.b - &limit))
}

/// Independent evaluation through `cosh(H(T-t)) cosh(HT)⁻¹` with a square root `H`
/// obtained by Denman-Beavers iteration and matrix exponentials. Requires a
/// nonsingular `Q`; intended as a cross-check for moderate horizons.
#[derive(Debug, Clone)]
pub struct CoshForm {
    root: DMatrix<Complex64>,
    horizon: f64,
    limit: DVector<f64>,
    deviation: DVector<Complex64>,
    cosh_horizon: nalgebra::LU<Complex64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl CoshForm {
    pub fn new(sol: &NashSolution) -> Result<Self> {
        let assembly = sol.assembly();
        let limit = long_run_limit(assembly)?;
        let root = matfun::complex_sqrt(&assembly.q, &sol.spectral().eigenvalues)?;
        let deviation = (&assembly.b - &limit).map(Complex64::from);
        let cosh_horizon = ccosh(&root, sol.horizon()).lu();
        Ok(Self {
            root,
            horizon: sol.horizon(),
            limit,
            deviation,
            cosh_horizon,
        })
    }

    pub fn state_at(&self, t: f64) -> Result<DVector<f64>> {
        let v = ccosh(&self.root, self.horizon - t) * &self.deviation;
        let y = self.cosh_horizon.solve(&v).ok_or(Error::Singular(0.0))?;
        Ok(&self.limit + y.map(|z| z.re))
    }

    /// `u*(t) = -H sinh(H(T-t)) cosh(HT)⁻¹ (I - Q⁻¹W) b`.
    pub fn control_at(&self, t: f64) -> Result<DVector<f64>> {
        let v = &self.root * csinh(&self.root, self.horizon - t) * &self.deviation;
        let y = self.cosh_horizon.solve(&v).ok_or(Error::Singular(0.0))?;
        Ok(-y.map(|z| z.re))
    }
}

fn ccosh(h: &DMatrix<Complex64>, s: f64) -> DMatrix<Complex64> {
    let p = (h * Complex64::from(s)).exp();
    let m = (h * Complex64::from(-s)).exp();
    (p + m) * Complex64::from(0.5)
}

fn csinh(h: &DMatrix<Complex64>, s: f64) -> DMatrix<Complex64> {
    let p = (h * Complex64::from(s)).exp();
    let m = (h * Complex64::from(-s)).exp();
    (p - m) * Complex64::from(0.5)
}
