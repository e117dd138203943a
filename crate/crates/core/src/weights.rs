//! Influence and stubbornness weights built from agent profiles.
//!
//! An agent `i` listening to `j` builds a symmetric root matrix `V_ij`: the
//! diagonal gain on issue `k` is `γ_ij,k(a_i, a_j)` when the stage-initial
//! biases differ by at most `ε_i` on that issue, and 0 otherwise; the
//! off-diagonal entry `(k, l)` is `c_i r_i,kl` as soon as either diagonal gate
//! `k` or `l` is open. The weight itself is `W_ij = V_ij²`, which is symmetric
//! nonnegative definite for every symmetric `V_ij`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matfun::SquareMatrix;

/// Symmetry and eigenvalue-sign tolerance for the weight assumptions.
pub const ASSUMPTION_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentProfile {
    /// Attribute vector, e.g. `[social_status]`.
    #[serde(default)]
    pub attributes: Vec<f64>,
    /// Bounded-confidence threshold in opinion units.
    pub epsilon: f64,
    /// Issue correlations `r_kl` (symmetric, diagonal ignored).
    pub correlations: Vec<Vec<f64>>,
    /// Proportionality constant for the off-diagonal entries.
    pub c: f64,
    /// Diagonal seeds `v_ii,kk` of the stubbornness root.
    pub stubborn_diag: Vec<f64>,
}

impl AgentProfile {
    /// Profile on `d` issues with a single uniform correlation on every issue pair.
    pub fn uniform(attributes: Vec<f64>, epsilon: f64, correlation: f64, c: f64, stubborn_diag: Vec<f64>) -> Self {
        let d = stubborn_diag.len();
        let correlations = (0..d)
            .map(|k| (0..d).map(|l| if k == l { 1.0 } else { correlation }).collect())
            .collect();
        Self {
            attributes,
            epsilon,
            correlations,
            c,
            stubborn_diag,
        }
    }

    pub fn issues(&self) -> usize {
        self.stubborn_diag.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.issues();
        if d == 0 {
            return Err(Error::Invalid("profile has no issues".into()));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Invalid(format!("epsilon {} must be finite and >= 0", self.epsilon)));
        }
        if !(self.c >= 0.0 && self.c.is_finite()) {
            return Err(Error::Invalid(format!("c {} must be finite and >= 0", self.c)));
        }
        if let Some(v) = self.stubborn_diag.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::Invalid(format!("stubbornness seed {v} must be > 0")));
        }
        if self.attributes.iter().any(|a| !a.is_finite()) {
            return Err(Error::Invalid("non-finite attribute".into()));
        }
        if self.correlations.len() != d || self.correlations.iter().any(|r| r.len() != d) {
            return Err(Error::Dimension(format!("correlations must be {d}x{d}")));
        }
        for k in 0..d {
            for l in 0..d {
                if k == l {
                    continue;
                }
                let r = self.correlations[k][l];
                if !(-1.0..=1.0).contains(&r) {
                    return Err(Error::Invalid(format!("correlation r_{}{} = {r} outside [-1, 1]", k + 1, l + 1)));
                }
                if r != self.correlations[l][k] {
                    return Err(Error::NotSymmetric {
                        what: "correlations".into(),
                        asymmetry: (r - self.correlations[l][k]).abs(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Explicit per-pair gains for [`GammaRule::Table`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainEntry {
    /// Listening agent (0-based).
    pub agent: usize,
    /// Agent listened to (0-based).
    pub target: usize,
    pub gains: Vec<f64>,
}

/// Diagonal gain `γ_ij,k(a_i, a_j) ≥ 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum GammaRule {
    Constant { value: f64 },
    /// `alpha * a_j[attribute] + beta`.
    AffineInTargetStatus {
        alpha: f64,
        beta: f64,
        #[serde(default)]
        attribute: usize,
    },
    /// Table-driven gains; pairs not listed get 0.
    Table { entries: Vec<GainEntry> },
}

impl GammaRule {
    pub fn gain(&self, agent: usize, target: usize, target_profile: &AgentProfile, issue: usize) -> Result<f64> {
        let g = match self {
            GammaRule::Constant { value } => *value,
            GammaRule::AffineInTargetStatus { alpha, beta, attribute } => {
                let a = target_profile.attributes.get(*attribute).copied().ok_or_else(|| {
                    Error::Dimension(format!("agent {} has no attribute {}", target + 1, attribute))
                })?;
                alpha * a + beta
            }
            GammaRule::Table { entries } => entries
                .iter()
                .find(|e| e.agent == agent && e.target == target)
                .map(|e| e.gains.get(issue).copied().unwrap_or(0.0))
                .unwrap_or(0.0),
        };
        if !(g >= 0.0 && g.is_finite()) {
            return Err(Error::Invalid(format!(
                "gain {g} for pair ({}, {}) issue {} is not a nonnegative number",
                agent + 1,
                target + 1,
                issue + 1
            )));
        }
        Ok(g)
    }
}

/// Root matrix `V_ij` of agent `agent` listening to `target`, gated on the stage biases.
pub fn build_influence_root(
    agent: usize,
    target: usize,
    profile_i: &AgentProfile,
    profile_j: &AgentProfile,
    b_i: &[f64],
    b_j: &[f64],
    rule: &GammaRule,
) -> Result<SquareMatrix> {
    let d = profile_i.issues();
    if b_i.len() != d || b_j.len() != d || profile_j.issues() != d {
        return Err(Error::Dimension(format!("influence root expects {d} issues")));
    }
    let mut v = DMatrix::<f64>::zeros(d, d);
    for k in 0..d {
        if (b_i[k] - b_j[k]).abs() <= profile_i.epsilon {
            v[(k, k)] = rule.gain(agent, target, profile_j, k)?;
        }
    }
    for k in 0..d {
        for l in 0..d {
            if k != l && (v[(k, k)] != 0.0 || v[(l, l)] != 0.0) {
                v[(k, l)] = profile_i.c * profile_i.correlations[k][l];
            }
        }
    }
    SquareMatrix::new(v)
}

/// `W = V²` for a symmetric root `V`.
pub fn square_to_weight(v: &SquareMatrix) -> Result<SquareMatrix> {
    let asym = v.asymmetry();
    if asym > 0.0 {
        return Err(Error::NotSymmetric {
            what: "root V".into(),
            asymmetry: asym,
        });
    }
    let m = v.as_matrix();
    let w = m * m;
    SquareMatrix::new((&w + w.transpose()) * 0.5)
}

/// Stubbornness root with diagonal `stubborn_diag` and off-diagonals `c r_kl`.
pub fn stubbornness_root(profile: &AgentProfile) -> Result<SquareMatrix> {
    profile.validate()?;
    let d = profile.issues();
    let v = DMatrix::from_fn(d, d, |k, l| {
        if k == l {
            profile.stubborn_diag[k]
        } else {
            profile.c * profile.correlations[k][l]
        }
    });
    SquareMatrix::new(v)
}

/// `W_ii = V_ii²`, rejected unless positive definite.
pub fn build_stubbornness(profile: &AgentProfile) -> Result<SquareMatrix> {
    let w = square_to_weight(&stubbornness_root(profile)?)?;
    let min = min_eigenvalue(w.as_matrix());
    if min <= ASSUMPTION_TOL {
        return Err(Error::Assumption(format!(
            "stubbornness root is singular: W_ii = V_ii² has minimum eigenvalue {min:e}"
        )));
    }
    Ok(w)
}

pub(crate) fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.min()
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    NotSymmetric { asymmetry: f64 },
    /// Stubbornness matrix with minimum eigenvalue at or below the tolerance.
    NotPositiveDefinite { min_eigenvalue: f64 },
    /// Influence matrix with a negative eigenvalue beyond the tolerance.
    NotNonnegativeDefinite { min_eigenvalue: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    /// Agent (0-based).
    pub agent: usize,
    /// `Some(j)` for an influence matrix `W_ij`, `None` for the stubbornness matrix.
    pub other: Option<usize>,
    pub kind: ViolationKind,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self.other {
            Some(j) => format!("W_{{{},{}}}", self.agent + 1, j + 1),
            None => format!("W_{{{},{}}}", self.agent + 1, self.agent + 1),
        };
        match &self.kind {
            ViolationKind::NotSymmetric { asymmetry } => {
                write!(f, "agent {}: {name} not symmetric (asymmetry {asymmetry:e})", self.agent + 1)
            }
            ViolationKind::NotPositiveDefinite { min_eigenvalue } => write!(
                f,
                "agent {}: {name} not positive definite (eigenvalue {min_eigenvalue})",
                self.agent + 1
            ),
            ViolationKind::NotNonnegativeDefinite { min_eigenvalue } => write!(
                f,
                "agent {}: {name} not nonnegative definite (eigenvalue {min_eigenvalue})",
                self.agent + 1
            ),
        }
    }
}

/// Checks stubbornness matrices (symmetric positive definite) and influence
/// matrices (symmetric nonnegative definite).
pub fn check_weights<'a>(
    stubbornness: &[SquareMatrix],
    influence: impl IntoIterator<Item = (&'a (usize, usize), &'a SquareMatrix)>,
) -> Vec<Violation> {
    let mut out = Vec::new();
    for (i, w) in stubbornness.iter().enumerate() {
        let asym = w.asymmetry();
        if asym > ASSUMPTION_TOL {
            out.push(Violation {
                agent: i,
                other: None,
                kind: ViolationKind::NotSymmetric { asymmetry: asym },
            });
            continue;
        }
        let min = min_eigenvalue(w.as_matrix());
        if min <= ASSUMPTION_TOL {
            out.push(Violation {
                agent: i,
                other: None,
                kind: ViolationKind::NotPositiveDefinite { min_eigenvalue: min },
            });
        }
    }
    for (&(i, j), w) in influence {
        let asym = w.asymmetry();
        if asym > ASSUMPTION_TOL {
            out.push(Violation {
                agent: i,
                other: Some(j),
                kind: ViolationKind::NotSymmetric { asymmetry: asym },
            });
            continue;
        }
        let min = min_eigenvalue(w.as_matrix());
        if min < -ASSUMPTION_TOL {
            out.push(Violation {
                agent: i,
                other: Some(j),
                kind: ViolationKind::NotNonnegativeDefinite { min_eigenvalue: min },
            });
        }
    }
    out
}

/// All weight-assumption violations of a game.
pub fn validate_assumption1(spec: &crate::game::GameSpec) -> Vec<Violation> {
    check_weights(spec.stubbornness(), spec.influence())
}
