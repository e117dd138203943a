//! Numerical checks that do not go through the closed forms: cost quadrature,
//! unilateral perturbation of one agent's control, and a collocation solve of
//! the state/costate boundary-value problem.

use std::f64::consts::PI;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::game::{assemble, GameSpec, NashSolution, TrajectorySample};

/// Fewest intervals accepted by [`cost_quadrature`].
pub const MIN_COST_INTERVALS: usize = 64;

/// Relative change between grid levels above which a cost is flagged unconverged.
pub const COST_REFINE_TOL: f64 = 1e-6;

/// Intervals of the grid used by [`nash_perturbation_test`].
pub const PERTURBATION_INTERVALS: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostComponents {
    pub influence: f64,
    pub stubbornness: f64,
    pub control: f64,
}

impl CostComponents {
    pub fn total(&self) -> f64 {
        self.influence + self.stubbornness + self.control
    }
}

#[derive(Debug, Clone)]
pub struct CostReport {
    pub agent: usize,
    pub value: f64,
    pub components: CostComponents,
    /// Relative change against the coarser grid level.
    pub refinement_change: f64,
    pub converged: bool,
}

/// Pointwise integrand of agent `i`'s cost, each term already halved.
fn integrand(spec: &GameSpec, i: usize, x: &DVector<f64>, u_i: &[f64]) -> [f64; 3] {
    let d = spec.issues();
    let xi = x.rows(i * d, d);
    let mut influence = 0.0;
    for j in spec.neighbors(i) {
        let w = spec.influence_of(i, j).expect("neighbor has a weight").as_matrix();
        let diff = xi - x.rows(j * d, d);
        influence += diff.dot(&(w * &diff));
    }
    let dev = xi - &spec.biases()[i];
    let stubborn = dev.dot(&(spec.stubbornness()[i].as_matrix() * &dev));
    let control: f64 = u_i.iter().map(|v| v * v).sum();
    [0.5 * influence, 0.5 * stubborn, 0.5 * control]
}

/// Composite Simpson weights over `intervals` equal steps of width `h`; an
/// odd count closes with a Simpson 3/8 panel.
fn simpson_weights(intervals: usize, h: f64) -> Vec<f64> {
    let mut w = vec![0.0; intervals + 1];
    let even = if intervals % 2 == 0 { intervals } else { intervals - 3 };
    for k in (0..even).step_by(2) {
        w[k] += h / 3.0;
        w[k + 1] += 4.0 * h / 3.0;
        w[k + 2] += h / 3.0;
    }
    if even != intervals {
        let s = 3.0 * h / 8.0;
        w[even] += s;
        w[even + 1] += 3.0 * s;
        w[even + 2] += 3.0 * s;
        w[even + 3] += s;
    }
    w
}

fn integrate(values: &[[f64; 3]], weights: &[f64]) -> CostComponents {
    let mut acc = [0.0; 3];
    for (v, w) in values.iter().zip(weights) {
        for k in 0..3 {
            acc[k] += w * v[k];
        }
    }
    CostComponents {
        influence: acc[0],
        stubbornness: acc[1],
        control: acc[2],
    }
}

fn uniform_step(grid: &[f64]) -> Result<f64> {
    let intervals = grid.len().saturating_sub(1);
    if intervals < MIN_COST_INTERVALS {
        return Err(Error::Invalid(format!(
            "cost quadrature needs at least {MIN_COST_INTERVALS} intervals, got {intervals}"
        )));
    }
    let h = (grid[intervals] - grid[0]) / intervals as f64;
    let uneven = grid.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > 1e-9 * h.max(1e-300));
    if uneven {
        return Err(Error::Invalid("cost quadrature needs a uniform grid".into()));
    }
    Ok(h)
}

/// Cost of `agent` along sampled states and its own sampled control, with a
/// refinement estimate from the same samples on a grid of half the resolution.
fn cost_from_values(agent: usize, values: &[[f64; 3]], h: f64) -> CostReport {
    let intervals = values.len() - 1;
    let fine = integrate(values, &simpson_weights(intervals, h));
    let coarse = if intervals % 4 == 0 {
        let sub: Vec<_> = values.iter().step_by(2).copied().collect();
        integrate(&sub, &simpson_weights(intervals / 2, 2.0 * h))
    } else {
        // trapezoid on the same nodes
        let mut w = vec![h; intervals + 1];
        w[0] = 0.5 * h;
        w[intervals] = 0.5 * h;
        integrate(values, &w)
    };
    let value = fine.total();
    let change = (value - coarse.total()).abs() / value.abs().max(1e-300);
    let converged = value == coarse.total() || change < COST_REFINE_TOL || (value - coarse.total()).abs() < 1e-14;
    CostReport {
        agent,
        value,
        components: fine,
        refinement_change: if value == 0.0 { 0.0 } else { change },
        converged,
    }
}

pub fn cost_quadrature(spec: &GameSpec, trajectory: &TrajectorySample, agent: usize) -> Result<CostReport> {
    if agent >= spec.agents() {
        return Err(Error::Invalid(format!("agent {} outside {} agents", agent + 1, spec.agents())));
    }
    if trajectory.agents != spec.agents() || trajectory.issues != spec.issues() {
        return Err(Error::Dimension("trajectory does not match the game".into()));
    }
    let h = uniform_step(&trajectory.grid)?;
    let d = spec.issues();
    let values: Vec<_> = trajectory
        .states
        .iter()
        .zip(&trajectory.controls)
        .map(|(x, u)| integrand(spec, agent, x, &u.as_slice()[agent * d..(agent + 1) * d]))
        .collect();
    Ok(cost_from_values(agent, &values, h))
}

/// Time profile of a control perturbation, before scaling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Zero,
    /// Raised cosine centered at `center` with half-width `half_width`.
    Bump { center: f64, half_width: f64 },
    Constant,
    /// `t / T`.
    Linear,
}

impl Shape {
    fn value(&self, t: f64, horizon: f64) -> f64 {
        match *self {
            Shape::Zero => 0.0,
            Shape::Bump { center, half_width } => {
                let s = (t - center) / half_width;
                if s.abs() < 1.0 {
                    0.5 * (1.0 + (PI * s).cos())
                } else {
                    0.0
                }
            }
            Shape::Constant => 1.0,
            Shape::Linear => t / horizon,
        }
    }

    /// `∫_0^t` of the profile.
    fn integral(&self, t: f64, horizon: f64) -> f64 {
        match *self {
            Shape::Zero => 0.0,
            Shape::Bump { center, half_width } => {
                let lo = center - half_width;
                if t <= lo {
                    0.0
                } else if t >= center + half_width {
                    half_width
                } else {
                    0.5 * ((t - lo) + half_width / PI * (PI * (t - center) / half_width).sin())
                }
            }
            Shape::Constant => t,
            Shape::Linear => t * t / (2.0 * horizon),
        }
    }
}

/// `sign * shape(t)` added to one issue of one agent's control.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub label: String,
    pub shape: Shape,
    pub issue: usize,
    pub sign: f64,
}

/// Bumps centered at `mT/8` for `m = 1..7`, constant and linear profiles, on
/// every issue with both signs.
pub fn standard_family(horizon: f64, issues: usize) -> Vec<Perturbation> {
    let mut shapes: Vec<(String, Shape)> = (1..=7)
        .map(|m| {
            (
                format!("bump{m}"),
                Shape::Bump {
                    center: m as f64 * horizon / 8.0,
                    half_width: horizon / 8.0,
                },
            )
        })
        .collect();
    shapes.push(("constant".into(), Shape::Constant));
    shapes.push(("linear".into(), Shape::Linear));
    let mut out = Vec::new();
    for (name, shape) in shapes {
        for issue in 0..issues {
            for sign in [1.0, -1.0] {
                out.push(Perturbation {
                    label: format!("{name}/issue{}/{}", issue + 1, if sign > 0.0 { '+' } else { '-' }),
                    shape,
                    issue,
                    sign,
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct NashReport {
    pub agent: usize,
    pub epsilon: f64,
    pub baseline_cost: f64,
    /// `J_i(perturbed) - J_i(u*)` per family member at `epsilon`.
    pub differences: Vec<(String, f64)>,
    pub min_difference: f64,
    pub tolerance: f64,
    /// Ratio of the difference at `2 epsilon` to that at `epsilon`, over members with a
    /// difference above round-off; `(min, max)`.
    pub scaling: Option<(f64, f64)>,
    pub passed: bool,
}

/// Replaces agent `i`'s control by `u_i* + epsilon δ` for every `δ` in `family`,
/// holding the other agents on their equilibrium paths, and compares costs.
pub fn nash_perturbation_test(
    spec: &GameSpec,
    sol: &NashSolution,
    agent: usize,
    family: &[Perturbation],
    epsilon: f64,
) -> Result<NashReport> {
    if agent >= spec.agents() {
        return Err(Error::Invalid(format!("agent {} outside {} agents", agent + 1, spec.agents())));
    }
    let sample = sol.sample(PERTURBATION_INTERVALS + 1)?;
    let horizon = sol.horizon();
    let h = horizon / PERTURBATION_INTERVALS as f64;
    let d = spec.issues();
    let weights = simpson_weights(PERTURBATION_INTERVALS, h);

    let cost_of = |p: Option<(&Perturbation, f64)>| -> f64 {
        let values: Vec<_> = sample
            .grid
            .iter()
            .zip(sample.states.iter().zip(&sample.controls))
            .map(|(&t, (x, u))| {
                let mut u_i = u.as_slice()[agent * d..(agent + 1) * d].to_vec();
                match p {
                    None => integrand(spec, agent, x, &u_i),
                    Some((p, eps)) => {
                        let a = eps * p.sign;
                        u_i[p.issue] += a * p.shape.value(t, horizon);
                        let mut x = x.clone();
                        x[agent * d + p.issue] += a * p.shape.integral(t, horizon);
                        integrand(spec, agent, &x, &u_i)
                    }
                }
            })
            .collect();
        integrate(&values, &weights).total()
    };

    let baseline = cost_of(None);
    let tolerance = 1e-8 * (1.0 + baseline.abs());
    let mut differences = Vec::with_capacity(family.len());
    let mut ratios = Vec::new();
    for p in family {
        let one = cost_of(Some((p, epsilon))) - baseline;
        let two = cost_of(Some((p, 2.0 * epsilon))) - baseline;
        if one.abs() > 1e3 * f64::EPSILON * (1.0 + baseline.abs()) {
            ratios.push(two / one);
        }
        differences.push((p.label.clone(), one));
    }
    let min_difference = differences.iter().map(|(_, v)| *v).fold(f64::INFINITY, f64::min);
    let min_difference = if differences.is_empty() { 0.0 } else { min_difference };
    let scaling = if ratios.is_empty() {
        None
    } else {
        let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some((lo, hi))
    };
    Ok(NashReport {
        agent,
        epsilon,
        baseline_cost: baseline,
        differences,
        min_difference,
        tolerance,
        scaling,
        passed: min_difference >= -tolerance,
    })
}

/// Collocated state and costate on `N + 1` uniform nodes.
#[derive(Debug, Clone)]
pub struct BVPSolution {
    pub grid: Vec<f64>,
    pub x: Vec<DVector<f64>>,
    pub p: Vec<DVector<f64>>,
}

impl BVPSolution {
    /// Linear interpolation of the state at `t`.
    pub fn state_at(&self, t: f64) -> DVector<f64> {
        let n = self.grid.len() - 1;
        let horizon = self.grid[n];
        let s = (t / horizon * n as f64).clamp(0.0, n as f64);
        let k = (s.floor() as usize).min(n - 1);
        let a = s - k as f64;
        &self.x[k] * (1.0 - a) + &self.x[k + 1] * a
    }
}

/// LAPACK-style band storage with room for pivoting fill-in.
struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    ld: usize,
    data: Vec<f64>,
    pivots: Vec<usize>,
}

impl BandLu {
    fn new(n: usize, kl: usize, ku: usize) -> Self {
        let ld = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            ld,
            data: vec![0.0; ld * n],
            pivots: vec![0; n],
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i + self.kl + self.ku >= j && i <= j + self.kl);
        j * self.ld + (self.kl + self.ku + i - j)
    }

    fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    fn factor(&mut self) -> Result<()> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let scale = self.data.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for j in 0..n {
            let last = (j + kl).min(n - 1);
            let mut p = j;
            let mut best = self.data[self.idx(j, j)].abs();
            for i in j + 1..=last {
                let v = self.data[self.idx(i, j)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= 1e-14 * scale {
                return Err(Error::SingularCollocation { row: j, pivot: best });
            }
            self.pivots[j] = p;
            let right = (j + kl + ku).min(n - 1);
            if p != j {
                for c in j..=right {
                    let (a, b) = (self.idx(j, c), self.idx(p, c));
                    self.data.swap(a, b);
                }
            }
            let piv = self.data[self.idx(j, j)];
            for i in j + 1..=last {
                let li = self.idx(i, j);
                let l = self.data[li] / piv;
                self.data[li] = l;
                if l != 0.0 {
                    for c in j + 1..=right {
                        let u = self.data[self.idx(j, c)];
                        if u != 0.0 {
                            let k = self.idx(i, c);
                            self.data[k] -= l * u;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn solve(&self, rhs: &mut [f64]) {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        for j in 0..n {
            let p = self.pivots[j];
            if p != j {
                rhs.swap(j, p);
            }
            let last = (j + kl).min(n - 1);
            for i in j + 1..=last {
                rhs[i] -= self.data[self.idx(i, j)] * rhs[j];
            }
        }
        for j in (0..n).rev() {
            rhs[j] /= self.data[self.idx(j, j)];
            let first = j.saturating_sub(kl + ku);
            for i in first..j {
                rhs[i] -= self.data[self.idx(i, j)] * rhs[j];
            }
        }
    }
}

/// Trapezoidal collocation of `x' = -p`, `p' = -Qx + Wb`, `x(0) = b`, `p(T) = 0`.
pub fn bvp_solve(spec: &GameSpec, intervals: usize) -> Result<BVPSolution> {
    if intervals == 0 {
        return Err(Error::Invalid("collocation needs at least one interval".into()));
    }
    let a = assemble(spec);
    let m = a.q.order();
    let q = a.q.as_matrix();
    let wb = a.w.as_matrix() * &a.b;
    let horizon = spec.horizon();
    let h = horizon / intervals as f64;
    let size = 2 * m * (intervals + 1);
    let band = 3 * m - 1;
    let mut lu = BandLu::new(size, band, band);
    let mut rhs = vec![0.0; size];
    let xcol = |k: usize, r: usize| 2 * m * k + r;
    let pcol = |k: usize, r: usize| 2 * m * k + m + r;

    for r in 0..m {
        lu.add(r, xcol(0, r), 1.0);
        rhs[r] = a.b[r];
    }
    for k in 0..intervals {
        let base = m + 2 * m * k;
        for r in 0..m {
            // x_{k+1} - x_k + h/2 (p_k + p_{k+1}) = 0
            let row = base + r;
            lu.add(row, xcol(k + 1, r), 1.0);
            lu.add(row, xcol(k, r), -1.0);
            lu.add(row, pcol(k, r), 0.5 * h);
            lu.add(row, pcol(k + 1, r), 0.5 * h);
            // p_{k+1} - p_k + h/2 Q (x_k + x_{k+1}) = h W b
            let row = base + m + r;
            lu.add(row, pcol(k + 1, r), 1.0);
            lu.add(row, pcol(k, r), -1.0);
            for c in 0..m {
                let v = q[(r, c)];
                if v != 0.0 {
                    lu.add(row, xcol(k, c), 0.5 * h * v);
                    lu.add(row, xcol(k + 1, c), 0.5 * h * v);
                }
            }
            rhs[row] = h * wb[r];
        }
    }
    let base = m + 2 * m * intervals;
    for r in 0..m {
        lu.add(base + r, pcol(intervals, r), 1.0);
    }

    lu.factor()?;
    lu.solve(&mut rhs);

    let grid = (0..=intervals)
        .map(|k| if k == intervals { horizon } else { h * k as f64 })
        .collect();
    let x = (0..=intervals)
        .map(|k| DVector::from_column_slice(&rhs[xcol(k, 0)..xcol(k, 0) + m]))
        .collect();
    let p = (0..=intervals)
        .map(|k| DVector::from_column_slice(&rhs[pcol(k, 0)..pcol(k, 0) + m]))
        .collect();
    Ok(BVPSolution { grid, x, p })
}

/// One Richardson step on [`bvp_solve`]: `(4 x_{2N} - x_N) / 3` on the `N`-interval grid.
pub fn bvp_solve_extrapolated(spec: &GameSpec, intervals: usize) -> Result<BVPSolution> {
    let coarse = bvp_solve(spec, intervals)?;
    let fine = bvp_solve(spec, 2 * intervals)?;
    let mix = |c: &[DVector<f64>], f: &[DVector<f64>]| -> Vec<DVector<f64>> {
        c.iter()
            .enumerate()
            .map(|(k, v)| (&f[2 * k] * 4.0 - v) / 3.0)
            .collect()
    };
    Ok(BVPSolution {
        x: mix(&coarse.x, &fine.x),
        p: mix(&coarse.p, &fine.p),
        grid: coarse.grid,
    })
}
