use nalgebra::{DMatrix, SymmetricEigen};
use opgame_core::closedform::{
    leader_infinite_state, leader_limit, leader_state, scalar_leader_state, scalar_uniform_state, sylvester_solve,
    theorem1_psd_check, uniform_difference, uniform_infinite_state, uniform_limit, uniform_state, LeaderSpec,
    SylvesterProblem, UniformSpec,
};
use opgame_core::fixtures::random;
use opgame_core::game::check_existence;
use opgame_core::{assemble, NashSolution, SquareMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn example3(horizon: f64) -> UniformSpec {
    let fg = SquareMatrix::from_rows(&[[1.25, 1.0], [1.0, 1.25]]).unwrap();
    UniformSpec::new(fg.clone(), fg, horizon, vec![vec![0.3, 0.3], vec![0.5, -0.5]]).unwrap()
}

#[test]
fn uniform_matches_general_solver() {
    let mut r = rng(21);
    for _ in 0..20 {
        let u = random::uniform_spec(&mut r, 8, 3);
        let sol = NashSolution::new(&u.to_game_spec().unwrap()).unwrap();
        let d = u.f.order();
        for _ in 0..10 {
            let t = r.random_range(0.0..=u.horizon);
            let x = sol.state_at(t).unwrap();
            for i in 0..u.agents() {
                let y = uniform_state(&u, i, t).unwrap();
                let xi = x.rows(i * d, d);
                assert!((&xi - &y).norm() <= 1e-8 * (1.0 + y.norm()));
            }
        }
    }
}

#[test]
fn leader_matches_general_solver() {
    let mut r = rng(22);
    for _ in 0..20 {
        let l = random::leader_spec(&mut r, 6, 3);
        let sol = NashSolution::new(&l.to_game_spec().unwrap()).unwrap();
        let d = l.leader_stubbornness.order();
        for _ in 0..5 {
            let t = r.random_range(0.0..=l.horizon);
            let x = sol.state_at(t).unwrap();
            assert_eq!(leader_state(&l, 0, t).unwrap(), l.biases[0]);
            for i in 0..l.agents() {
                let y = leader_state(&l, i, t).unwrap();
                assert!((x.rows(i * d, d) - &y).norm() <= 1e-8 * (1.0 + y.norm()));
            }
        }
    }
}

#[test]
fn leader_is_independent_of_leader_stubbornness() {
    let mut r = rng(23);
    for _ in 0..10 {
        let l = random::leader_spec(&mut r, 5, 3);
        let mut other = l.clone();
        other.leader_stubbornness = random::spd(&mut r, l.leader_stubbornness.order(), 2.0, 0.3);
        assert!(other.eigenvalues_disjoint());
        let (a, b) = (
            NashSolution::new(&l.to_game_spec().unwrap()).unwrap(),
            NashSolution::new(&other.to_game_spec().unwrap()).unwrap(),
        );
        for k in 0..=4 {
            let t = l.horizon * k as f64 / 4.0;
            let x = a.state_at(t).unwrap();
            assert!((&x - b.state_at(t).unwrap()).norm() <= 1e-10 * (1.0 + x.norm()));
            for i in 0..l.agents() {
                assert!((leader_state(&l, i, t).unwrap() - leader_state(&other, i, t).unwrap()).norm() <= 1e-12);
            }
        }
    }
}

#[test]
fn scalar_corollaries_match_parents() {
    let mut r = rng(24);
    for _ in 0..20 {
        let n = r.random_range(2..7);
        let (f, g) = (r.random_range(0.1..2.0), r.random_range(0.0..1.0));
        let b: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let horizon = r.random_range(0.5..4.0);
        let u = UniformSpec::new(
            SquareMatrix::from_rows(&[[f]]).unwrap(),
            SquareMatrix::from_rows(&[[g]]).unwrap(),
            horizon,
            b.iter().map(|v| vec![*v]).collect(),
        )
        .unwrap();
        let t = r.random_range(0.0..horizon);
        for i in 0..n {
            let s = scalar_uniform_state(f, g, &b, i, horizon, t).unwrap();
            assert!((s - uniform_state(&u, i, t).unwrap()[0]).abs() <= 1e-12);
        }
        let (w, v) = (r.random_range(0.1..2.0), r.random_range(0.0..2.0));
        let l = LeaderSpec::new(
            SquareMatrix::from_rows(&[[1.0]]).unwrap(),
            vec![(SquareMatrix::from_rows(&[[w]]).unwrap(), SquareMatrix::from_rows(&[[v]]).unwrap())],
            horizon,
            vec![vec![b[0]], vec![b[1]]],
        )
        .unwrap();
        let s = scalar_leader_state(w, v, b[1], b[0], horizon, t).unwrap();
        assert!((s - leader_state(&l, 1, t).unwrap()[0]).abs() <= 1e-12);
    }
}

#[test]
fn uniform_spectrum_is_f_and_f_plus_ng() {
    let mut r = rng(25);
    for _ in 0..10 {
        let u = random::uniform_spec(&mut r, 6, 3);
        let n = u.agents();
        let q = assemble(&u.to_game_spec().unwrap()).q;
        let mut got: Vec<f64> = SymmetricEigen::new(q.into_inner()).eigenvalues.iter().copied().collect();
        let big = SymmetricEigen::new(u.combined()).eigenvalues;
        let small = SymmetricEigen::new(u.f.as_matrix().clone()).eigenvalues;
        let mut want: Vec<f64> = small.iter().copied().collect();
        for _ in 1..n {
            want.extend(big.iter().copied());
        }
        got.sort_by(f64::total_cmp);
        want.sort_by(f64::total_cmp);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() <= 1e-8, "{got:?} vs {want:?}");
        }
    }
}

fn argmax_distance(u: &UniformSpec, infinite: bool) -> f64 {
    let steps = (u.horizon / 1e-4).round() as usize;
    let (mut best_t, mut best) = (0.0, f64::NEG_INFINITY);
    for k in 0..=steps {
        let t = k as f64 * 1e-4;
        let v = if infinite {
            (uniform_infinite_state(u, 0, t).unwrap() - uniform_infinite_state(u, 1, t).unwrap())[0].abs()
        } else {
            uniform_difference(u, 0, 1, t).unwrap()[0].abs()
        };
        if v > best {
            best = v;
            best_t = t;
        }
    }
    best_t
}

#[test]
fn example3_distance_has_interior_maximum() {
    // d/dt of (1/3)[-0.2 + 0.6 e^{-3√3t/2} - e^{-√3t/2}] vanishes at ln(9/5)/√3
    let t_inf = (9.0f64 / 5.0).ln() / 3f64.sqrt();
    let long = argmax_distance(&example3(10.0), false);
    let inf = argmax_distance(&example3(2.0), true);
    assert!((long - t_inf).abs() <= 1e-3, "{long}");
    assert!((inf - t_inf).abs() <= 1e-3, "{inf}");
    // shorter horizons push the peak later
    let short = argmax_distance(&example3(2.0), false);
    assert!(short > 0.0 && short < 2.0 && short > long + 0.03, "{short}");
}

#[test]
fn uniform_limits() {
    let u = example3(2.0);
    for i in 0..2 {
        assert_eq!(uniform_infinite_state(&u, i, 0.0).unwrap(), u.biases[i]);
        let far = uniform_infinite_state(&u, i, 60.0).unwrap();
        assert!((far - uniform_limit(&u, i).unwrap()).amax() <= 1e-8);
    }
    let long = UniformSpec {
        horizon: 50.0 * SymmetricEigen::new(u.root()).eigenvalues.min().recip(),
        ..u.clone()
    };
    for i in 0..2 {
        let a = uniform_state(&long, i, 1.0).unwrap();
        let b = uniform_infinite_state(&u, i, 1.0).unwrap();
        assert!((a - b).amax() <= 1e-6);
    }
    let same = UniformSpec::new(u.f.clone(), u.g.clone(), 2.0, vec![vec![0.1, 0.2]; 3]).unwrap();
    assert!(uniform_difference(&same, 0, 2, 0.7).unwrap().amax() == 0.0);
    assert!((uniform_state(&same, 1, 0.7).unwrap() - &same.biases[1]).amax() < 1e-15);
}

#[test]
fn leader_limits() {
    let mut r = rng(26);
    for _ in 0..10 {
        let l = random::leader_spec(&mut r, 5, 3);
        let a = assemble(&l.to_game_spec().unwrap());
        let general = opgame_core::game::long_run_limit(&a).unwrap();
        let d = l.leader_stubbornness.order();
        for i in 0..l.agents() {
            let lim = leader_limit(&l, i).unwrap();
            assert!((general.rows(i * d, d) - &lim).norm() <= 1e-8 * (1.0 + lim.norm()));
            let far = leader_infinite_state(&l, i, 200.0).unwrap();
            assert!((far - &lim).amax() <= 1e-6);
        }
        assert!((leader_state(&l, 1, 0.0).unwrap() - &l.biases[1]).amax() < 1e-12);
    }
    // an agent with almost no stubbornness ends at the leader's opinion
    let d = 2;
    let l = LeaderSpec::new(
        SquareMatrix::identity(d),
        vec![(
            SquareMatrix::new(DMatrix::identity(d, d) * 1e-6).unwrap(),
            SquareMatrix::from_rows(&[[1.0, 0.3], [0.3, 0.8]]).unwrap(),
        )],
        5.0,
        vec![vec![0.5, -0.5], vec![-1.0, 2.0]],
    )
    .unwrap();
    assert!((leader_limit(&l, 1).unwrap() - &l.biases[0]).amax() <= 1e-4);
}

#[test]
fn sylvester_random_residuals() {
    let mut r = rng(27);
    for _ in 0..30 {
        let (k, m) = (r.random_range(1..6), r.random_range(1..6));
        let a = DMatrix::from_fn(k, k, |_, _| r.random_range(-1.0..1.0)) + DMatrix::identity(k, k) * 3.0;
        let b = DMatrix::from_fn(m, m, |_, _| r.random_range(-1.0..1.0)) - DMatrix::identity(m, m) * 3.0;
        let c = DMatrix::from_fn(m, k, |_, _| r.random_range(-1.0..1.0));
        let p = SylvesterProblem {
            a: SquareMatrix::new(a.clone()).unwrap(),
            b: SquareMatrix::new(b.clone()).unwrap(),
            c: c.clone(),
        };
        let x = sylvester_solve(&p).unwrap();
        let res = &x * &a - &b * &x - c;
        assert!(res.norm() <= 1e-9 * (a.norm() + b.norm()) * x.norm() + 1e-12);
    }
}

#[test]
fn symmetric_weights_give_positive_definite_q() {
    let mut r = rng(28);
    for _ in 0..50 {
        let spec = random::symmetric_spec(&mut r, 6, 3);
        let v = theorem1_psd_check(&spec).unwrap();
        assert!(v.positive_definite && v.min_eigenvalue > 0.0);
        assert!(check_existence(&assemble(&spec), spec.horizon()).unwrap().exists());
    }
}
