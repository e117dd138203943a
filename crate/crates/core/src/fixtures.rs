//! Small games with known behavior, shared by tests and the command line.

use crate::game::GameSpec;
use crate::matfun::SquareMatrix;

fn m2(a: f64, b: f64, c: f64, d: f64) -> SquareMatrix {
    SquareMatrix::from_rows(&[[a, b], [c, d]]).expect("finite 2x2")
}

/// Dyad on two issues where agent 2 ignores agent 1 and agent 1 weighs
/// correlation `r` between the issues.
pub fn antagonistic_dyad(r: f64, horizon: f64) -> GameSpec {
    let v12 = m2(1.0, r, r, 1.0);
    let v11 = m2(0.1, r, r, 0.1);
    let sq = |v: &SquareMatrix| SquareMatrix::new(v.as_matrix() * v.as_matrix()).expect("finite");
    GameSpec::new(
        horizon,
        vec![sq(&v11), SquareMatrix::identity(2)],
        [((0, 1), sq(&v12))],
        vec![vec![0.3, 0.3], vec![0.5, -0.5]],
    )
    .expect("valid dyad")
}

/// Dyad with opposing conceptions of issue correlation; `Q` has one negative eigenvalue.
pub fn example2(biases: Vec<Vec<f64>>, horizon: f64) -> GameSpec {
    GameSpec::new(
        horizon,
        vec![m2(0.5, -1.0, -1.0, 2.5), m2(2.0, 2.5, 2.5, 3.25)],
        [
            ((0, 1), m2(1.25, -1.0, -1.0, 1.25)),
            ((1, 0), m2(2.0, 1.5, 1.5, 1.25)),
        ],
        biases,
    )
    .expect("valid oscillating dyad")
}

/// [`example2`] with its reference biases `b_1 = (-0.5, 0.5)`, `b_2 = (1, 1)`.
pub fn oscillating_dyad(horizon: f64) -> GameSpec {
    example2(vec![vec![-0.5, 0.5], vec![1.0, 1.0]], horizon)
}

/// Uniform-weight dyad with `F = G = [[5/4, 1], [1, 5/4]]`.
pub fn uniform_dyad(horizon: f64) -> GameSpec {
    let fg = m2(1.25, 1.0, 1.0, 1.25);
    GameSpec::new(
        horizon,
        vec![fg.clone(), fg.clone()],
        [((0, 1), fg.clone()), ((1, 0), fg)],
        vec![vec![0.3, 0.3], vec![0.5, -0.5]],
    )
    .expect("valid uniform dyad")
}

/// Random games for property checks. Weights are kept moderate so that
/// horizons up to a few time units stay well inside double precision.
pub mod random {
    use nalgebra::DMatrix;
    use rand::Rng;

    use crate::closedform::{LeaderSpec, UniformSpec};
    use crate::game::{assemble, check_existence, GameSpec};
    use crate::matfun::SquareMatrix;

    fn sym_root(rng: &mut impl Rng, d: usize, scale: f64) -> DMatrix<f64> {
        let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        (&a + a.transpose()) * (0.5 * scale)
    }

    /// Symmetric nonnegative definite `V²` with `‖V‖` of order `scale`.
    pub fn nnd(rng: &mut impl Rng, d: usize, scale: f64) -> SquareMatrix {
        let v = sym_root(rng, d, scale);
        SquareMatrix::new(&v * &v).expect("finite")
    }

    /// Symmetric positive definite with smallest eigenvalue at least `floor`.
    pub fn spd(rng: &mut impl Rng, d: usize, scale: f64, floor: f64) -> SquareMatrix {
        let v = sym_root(rng, d, scale);
        SquareMatrix::new(&v * &v + DMatrix::identity(d, d) * floor).expect("finite")
    }

    pub fn biases(rng: &mut impl Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
    }

    /// Agent and issue counts with `n d ≤ max_order`, `n ≥ 2`.
    pub fn shape(rng: &mut impl Rng, max_order: usize) -> (usize, usize) {
        loop {
            let n = rng.random_range(2..=4);
            let d = rng.random_range(1..=3);
            if n * d <= max_order {
                return (n, d);
            }
        }
    }

    /// Directed game with random neighborhoods, accepted once an equilibrium exists
    /// and `f(QT)` is comfortably invertible.
    pub fn solvable_spec(rng: &mut impl Rng, max_order: usize) -> GameSpec {
        loop {
            let (n, d) = shape(rng, max_order);
            let horizon = rng.random_range(0.5..1.5);
            let stubbornness = (0..n).map(|_| spd(rng, d, 0.6, 0.1)).collect();
            let mut influence = Vec::new();
            for i in 0..n {
                for j in 0..n {
                    if i != j && rng.random_bool(0.6) {
                        influence.push(((i, j), nnd(rng, d, 0.6)));
                    }
                }
            }
            let spec = GameSpec::new(horizon, stubbornness, influence, biases(rng, n, d)).expect("valid weights");
            let report = check_existence(&assemble(&spec), horizon).expect("spectrum");
            if report.exists() && report.condition < 1e4 {
                return spec;
            }
        }
    }

    /// Pairwise-symmetric influence (`W_ij = W_ji`).
    pub fn symmetric_spec(rng: &mut impl Rng, max_agents: usize, max_issues: usize) -> GameSpec {
        let n = rng.random_range(2..=max_agents);
        let d = rng.random_range(1..=max_issues);
        let stubbornness = (0..n).map(|_| spd(rng, d, 1.0, 0.05)).collect();
        let mut influence = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.random_bool(0.7) {
                    let w = nnd(rng, d, 1.0);
                    influence.push(((i, j), w.clone()));
                    influence.push(((j, i), w));
                }
            }
        }
        let horizon = rng.random_range(0.5..3.0);
        GameSpec::new(horizon, stubbornness, influence, biases(rng, n, d)).expect("valid weights")
    }

    pub fn uniform_spec(rng: &mut impl Rng, max_agents: usize, max_issues: usize) -> UniformSpec {
        let n = rng.random_range(2..=max_agents);
        let d = rng.random_range(1..=max_issues);
        let horizon = rng.random_range(0.5..3.0);
        UniformSpec::new(spd(rng, d, 0.8, 0.1), nnd(rng, d, 0.6), horizon, biases(rng, n, d)).expect("valid")
    }

    pub fn leader_spec(rng: &mut impl Rng, max_agents: usize, max_issues: usize) -> LeaderSpec {
        let n = rng.random_range(2..=max_agents);
        let d = rng.random_range(1..=max_issues);
        let horizon = rng.random_range(0.5..3.0);
        let followers = (1..n).map(|_| (spd(rng, d, 0.8, 0.1), nnd(rng, d, 0.8))).collect();
        LeaderSpec::new(spd(rng, d, 0.8, 0.1), followers, horizon, biases(rng, n, d)).expect("valid")
    }
}
