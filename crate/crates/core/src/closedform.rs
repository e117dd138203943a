//! Closed forms for uniform-weight and single-leader networks.
//!
//! Both reduce the `nd`-dimensional problem to `d x d` symmetric positive
//! definite blocks, so hyperbolic ratios are taken per eigenvalue of that block.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::game::{assemble, GameSpec};
use crate::matfun::{cosh_ratio, SquareMatrix};
use crate::weights::{min_eigenvalue, ASSUMPTION_TOL};

/// Relative gap below which two eigenvalues are treated as shared.
pub const EIGEN_OVERLAP_TOL: f64 = 1e-9;

/// `n` agents with stubbornness `F` and pairwise influence `G`.
#[derive(Debug, Clone)]
pub struct UniformSpec {
    pub f: SquareMatrix,
    pub g: SquareMatrix,
    pub horizon: f64,
    pub biases: Vec<DVector<f64>>,
}

/// Leader is agent 0; follower `i ≥ 1` listens to the leader only.
#[derive(Debug, Clone)]
pub struct LeaderSpec {
    pub leader_stubbornness: SquareMatrix,
    /// `(W_ii, W_i1)` for followers in order.
    pub followers: Vec<(SquareMatrix, SquareMatrix)>,
    pub horizon: f64,
    /// Leader bias first.
    pub biases: Vec<DVector<f64>>,
}

/// Symmetric matrix function `φ(M)` through the eigen-decomposition of `M`.
fn sym_apply(eig: &SymmetricEigen<f64, nalgebra::Dyn>, phi: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let v = &eig.eigenvectors;
    let mut scaled = v.clone();
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        scaled.column_mut(j).scale_mut(phi(lam));
    }
    scaled * v.transpose()
}

fn check_spd(what: &str, m: &SquareMatrix) -> Result<()> {
    if !m.is_symmetric(0.0) {
        return Err(Error::NotSymmetric {
            what: what.into(),
            asymmetry: m.asymmetry(),
        });
    }
    let lo = min_eigenvalue(m.as_matrix());
    if lo <= ASSUMPTION_TOL {
        return Err(Error::Assumption(format!("{what} is not positive definite (eigenvalue {lo:e})")));
    }
    Ok(())
}

fn check_nnd(what: &str, m: &SquareMatrix) -> Result<()> {
    if !m.is_symmetric(0.0) {
        return Err(Error::NotSymmetric {
            what: what.into(),
            asymmetry: m.asymmetry(),
        });
    }
    let lo = min_eigenvalue(m.as_matrix());
    if lo < -ASSUMPTION_TOL {
        return Err(Error::Assumption(format!("{what} is not nonnegative definite (eigenvalue {lo:e})")));
    }
    Ok(())
}

fn check_biases(biases: &[DVector<f64>], d: usize) -> Result<()> {
    if let Some((i, b)) = biases.iter().enumerate().find(|(_, b)| b.len() != d) {
        return Err(Error::Dimension(format!("bias of agent {} has {} issues, expected {d}", i + 1, b.len())));
    }
    Ok(())
}

fn check_time(t: f64, horizon: f64) -> Result<()> {
    if (0.0..=horizon).contains(&t) {
        Ok(())
    } else {
        Err(Error::TimeOutOfRange { t, horizon })
    }
}

impl UniformSpec {
    pub fn new(f: SquareMatrix, g: SquareMatrix, horizon: f64, biases: Vec<Vec<f64>>) -> Result<Self> {
        let d = f.order();
        if g.order() != d {
            return Err(Error::Dimension(format!("F is {d}x{d} but G is {0}x{0}", g.order())));
        }
        if biases.is_empty() {
            return Err(Error::Invalid("a game needs at least one agent".into()));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Invalid(format!("horizon {horizon} must be positive and finite")));
        }
        check_spd("F", &f)?;
        check_nnd("G", &g)?;
        let biases: Vec<_> = biases.into_iter().map(DVector::from_vec).collect();
        check_biases(&biases, d)?;
        Ok(Self { f, g, horizon, biases })
    }

    pub fn agents(&self) -> usize {
        self.biases.len()
    }

    pub fn average(&self) -> DVector<f64> {
        let n = self.agents() as f64;
        self.biases.iter().fold(DVector::zeros(self.f.order()), |acc, b| acc + b) / n
    }

    /// `F + nG`.
    pub fn combined(&self) -> DMatrix<f64> {
        self.f.as_matrix() + self.g.as_matrix() * self.agents() as f64
    }

    /// The real positive definite square root of `F + nG`.
    pub fn root(&self) -> DMatrix<f64> {
        let eig = SymmetricEigen::new(self.combined());
        sym_apply(&eig, f64::sqrt)
    }

    /// The same game as a general [`GameSpec`].
    pub fn to_game_spec(&self) -> Result<GameSpec> {
        let n = self.agents();
        let influence = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|key| (key, self.g.clone()))
            .collect::<Vec<_>>();
        GameSpec::new(
            self.horizon,
            vec![self.f.clone(); n],
            influence,
            self.biases.iter().map(|b| b.as_slice().to_vec()).collect(),
        )
    }

    /// `(F+nG)⁻¹ {F + φ(F+nG) nG} v` with `φ` applied spectrally.
    fn propagate(&self, v: &DVector<f64>, phi: impl Fn(f64) -> f64) -> DVector<f64> {
        let n = self.agents() as f64;
        let eig = SymmetricEigen::new(self.combined());
        let inv = sym_apply(&eig, f64::recip);
        let ratio = sym_apply(&eig, phi);
        let braces = self.f.as_matrix() + ratio * self.g.as_matrix() * n;
        inv * braces * v
    }

    fn agent(&self, i: usize) -> Result<&DVector<f64>> {
        self.biases
            .get(i)
            .ok_or_else(|| Error::Invalid(format!("agent {} outside {} agents", i + 1, self.agents())))
    }
}

pub fn uniform_state(spec: &UniformSpec, i: usize, t: f64) -> Result<DVector<f64>> {
    check_time(t, spec.horizon)?;
    let avg = spec.average();
    let dev = spec.agent(i)? - &avg;
    let horizon = spec.horizon;
    Ok(&avg + spec.propagate(&dev, |lam| cosh_ratio(lam, horizon, t)))
}

pub fn uniform_infinite_state(spec: &UniformSpec, i: usize, t: f64) -> Result<DVector<f64>> {
    if !(t >= 0.0) {
        return Err(Error::Invalid(format!("time {t} must be >= 0")));
    }
    let avg = spec.average();
    let dev = spec.agent(i)? - &avg;
    if t == 0.0 {
        return Ok(spec.agent(i)?.clone());
    }
    Ok(&avg + spec.propagate(&dev, |lam| (-lam.sqrt() * t).exp()))
}

/// Long-run value `(F+nG)⁻¹ (F b_i + G Σ b_j)`.
pub fn uniform_limit(spec: &UniformSpec, i: usize) -> Result<DVector<f64>> {
    let total = spec.biases.iter().fold(DVector::zeros(spec.f.order()), |acc, b| acc + b);
    let rhs = spec.f.as_matrix() * spec.agent(i)? + spec.g.as_matrix() * total;
    spec.combined()
        .cholesky()
        .map(|c| c.solve(&rhs))
        .ok_or_else(|| Error::Assumption("F + nG is not positive definite".into()))
}

pub fn uniform_difference(spec: &UniformSpec, i: usize, j: usize, t: f64) -> Result<DVector<f64>> {
    if i == j {
        return Err(Error::Invalid("opinion difference needs two distinct agents".into()));
    }
    check_time(t, spec.horizon)?;
    let diff = spec.agent(i)? - spec.agent(j)?;
    let horizon = spec.horizon;
    Ok(spec.propagate(&diff, |lam| cosh_ratio(lam, horizon, t)))
}

/// Single-issue uniform network.
pub fn scalar_uniform_state(f: f64, g: f64, biases: &[f64], i: usize, horizon: f64, t: f64) -> Result<f64> {
    if !(f > 0.0 && g >= 0.0) {
        return Err(Error::Assumption(format!("need f > 0 and g >= 0, got f = {f}, g = {g}")));
    }
    check_time(t, horizon)?;
    let bi = *biases
        .get(i)
        .ok_or_else(|| Error::Invalid(format!("agent {} outside {} agents", i + 1, biases.len())))?;
    let n = biases.len() as f64;
    let avg = biases.iter().sum::<f64>() / n;
    let lam = f + n * g;
    Ok(avg + (f + n * g * cosh_ratio(lam, horizon, t)) / lam * (bi - avg))
}

/// `(f b_i + g Σ b_j) / (f + n g)`.
pub fn scalar_uniform_limit(f: f64, g: f64, biases: &[f64], i: usize) -> f64 {
    let n = biases.len() as f64;
    (f * biases[i] + g * biases.iter().sum::<f64>()) / (f + n * g)
}

impl LeaderSpec {
    pub fn new(
        leader_stubbornness: SquareMatrix,
        followers: Vec<(SquareMatrix, SquareMatrix)>,
        horizon: f64,
        biases: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let d = leader_stubbornness.order();
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Invalid(format!("horizon {horizon} must be positive and finite")));
        }
        if biases.len() != followers.len() + 1 {
            return Err(Error::Dimension(format!(
                "{} bias vectors for {} agents",
                biases.len(),
                followers.len() + 1
            )));
        }
        check_spd("W_{1,1}", &leader_stubbornness)?;
        for (k, (wii, wi1)) in followers.iter().enumerate() {
            if wii.order() != d || wi1.order() != d {
                return Err(Error::Dimension(format!("follower {} weights are not {d}x{d}", k + 2)));
            }
            check_spd(&format!("W_{{{0},{0}}}", k + 2), wii)?;
            check_nnd(&format!("W_{{{},1}}", k + 2), wi1)?;
        }
        let biases: Vec<_> = biases.into_iter().map(DVector::from_vec).collect();
        check_biases(&biases, d)?;
        Ok(Self {
            leader_stubbornness,
            followers,
            horizon,
            biases,
        })
    }

    pub fn agents(&self) -> usize {
        self.biases.len()
    }

    pub fn to_game_spec(&self) -> Result<GameSpec> {
        let mut stubbornness = vec![self.leader_stubbornness.clone()];
        let mut influence = Vec::new();
        for (k, (wii, wi1)) in self.followers.iter().enumerate() {
            stubbornness.push(wii.clone());
            influence.push(((k + 1, 0), wi1.clone()));
        }
        GameSpec::new(
            self.horizon,
            stubbornness,
            influence,
            self.biases.iter().map(|b| b.as_slice().to_vec()).collect(),
        )
    }

    /// True when `W_11` shares no eigenvalue with any `W_ii + W_i1`.
    pub fn eigenvalues_disjoint(&self) -> bool {
        let lead = SymmetricEigen::new(self.leader_stubbornness.as_matrix().clone()).eigenvalues;
        self.followers.iter().all(|(wii, wi1)| {
            let m = SymmetricEigen::new(wii.as_matrix() + wi1.as_matrix()).eigenvalues;
            lead.iter()
                .all(|a| m.iter().all(|b| (a - b).abs() > EIGEN_OVERLAP_TOL * (1.0 + a.abs().max(b.abs()))))
        })
    }

    fn follower_terms(&self, i: usize, phi: impl Fn(f64) -> f64) -> Result<DVector<f64>> {
        let (wii, wi1) = self
            .followers
            .get(i - 1)
            .ok_or_else(|| Error::Invalid(format!("agent {} outside {} agents", i + 1, self.agents())))?;
        let (b1, bi) = (&self.biases[0], &self.biases[i]);
        let eig = SymmetricEigen::new(wii.as_matrix() + wi1.as_matrix());
        let inv = sym_apply(&eig, f64::recip);
        let ratio = sym_apply(&eig, phi);
        let w1 = wi1.as_matrix();
        Ok(inv * (wii.as_matrix() * bi + w1 * b1 + ratio * w1 * (bi - b1)))
    }
}

pub fn leader_state(spec: &LeaderSpec, i: usize, t: f64) -> Result<DVector<f64>> {
    check_time(t, spec.horizon)?;
    if i == 0 {
        return Ok(spec.biases[0].clone());
    }
    if !spec.eigenvalues_disjoint() {
        log::warn!("W_11 shares an eigenvalue with a follower's W_ii + W_i1; evaluating the leader closed form anyway");
    }
    let horizon = spec.horizon;
    spec.follower_terms(i, |lam| cosh_ratio(lam, horizon, t))
}

pub fn leader_infinite_state(spec: &LeaderSpec, i: usize, t: f64) -> Result<DVector<f64>> {
    if !(t >= 0.0) {
        return Err(Error::Invalid(format!("time {t} must be >= 0")));
    }
    if i == 0 {
        return Ok(spec.biases[0].clone());
    }
    spec.follower_terms(i, |lam| (-lam.sqrt() * t).exp())
}

/// Long-run value `(W_ii + W_i1)⁻¹ (W_ii b_i + W_i1 b_1)`.
pub fn leader_limit(spec: &LeaderSpec, i: usize) -> Result<DVector<f64>> {
    if i == 0 {
        return Ok(spec.biases[0].clone());
    }
    spec.follower_terms(i, |_| 0.0)
}

pub fn scalar_leader_state(w_ii: f64, w_i1: f64, b_i: f64, b_1: f64, horizon: f64, t: f64) -> Result<f64> {
    if !(w_ii > 0.0 && w_i1 >= 0.0) {
        return Err(Error::Assumption(format!("need w_ii > 0 and w_i1 >= 0, got {w_ii}, {w_i1}")));
    }
    check_time(t, horizon)?;
    let lam = w_ii + w_i1;
    Ok((w_ii * b_i + w_i1 * b_1) / lam + w_i1 / lam * cosh_ratio(lam, horizon, t) * (b_i - b_1))
}

/// `X A - B X = C`.
#[derive(Debug, Clone)]
pub struct SylvesterProblem {
    pub a: SquareMatrix,
    pub b: SquareMatrix,
    pub c: DMatrix<f64>,
}

/// Bartels-Stewart on complex Schur forms of `A` and `B`.
pub fn sylvester_solve(p: &SylvesterProblem) -> Result<DMatrix<f64>> {
    let (m, k) = (p.b.order(), p.a.order());
    if p.c.nrows() != m || p.c.ncols() != k {
        return Err(Error::Dimension(format!(
            "C is {}x{}, expected {m}x{k}",
            p.c.nrows(),
            p.c.ncols()
        )));
    }
    let to_c = |x: &DMatrix<f64>| x.map(Complex64::from);
    let (ua, ta) = nalgebra::Schur::new(to_c(p.a.as_matrix())).unpack();
    let (ub, tb) = nalgebra::Schur::new(to_c(p.b.as_matrix())).unpack();
    let scale = 1.0 + ta.diagonal().iter().chain(tb.diagonal().iter()).map(|z| z.norm()).fold(0.0, f64::max);
    let d = ub.adjoint() * to_c(&p.c) * &ua;
    let mut y = DMatrix::<Complex64>::zeros(m, k);
    for j in 0..k {
        let mut rhs = d.column(j).into_owned();
        for l in 0..j {
            rhs -= y.column(l) * ta[(l, j)];
        }
        let lam = ta[(j, j)];
        // (λ I - T_b) y = rhs, upper triangular
        for r in (0..m).rev() {
            let mut acc = rhs[r];
            for s in r + 1..m {
                acc += tb[(r, s)] * y[(s, j)];
            }
            let piv = lam - tb[(r, r)];
            if piv.norm() <= EIGEN_OVERLAP_TOL * scale {
                return Err(Error::SharedEigenvalue(lam));
            }
            y[(r, j)] = acc / piv;
        }
    }
    Ok((ub * y * ua.adjoint()).map(|z| z.re))
}

/// Outcome of the positive-definiteness check on `Q` for pairwise-symmetric weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsdVerdict {
    pub positive_definite: bool,
    pub min_eigenvalue: f64,
}

pub fn theorem1_psd_check(spec: &GameSpec) -> Result<PsdVerdict> {
    if !spec.is_pairwise_symmetric() {
        return Err(Error::Invalid("influence weights are not pairwise symmetric".into()));
    }
    let q = assemble(spec).q;
    let lo = min_eigenvalue(q.as_matrix());
    Ok(PsdVerdict {
        positive_definite: lo > 0.0,
        min_eigenvalue: lo,
    })
}
