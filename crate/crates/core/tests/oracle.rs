use opgame_core::closedform::UniformSpec;
use opgame_core::fixtures::{self, random};
use opgame_core::game::CoshForm;
use opgame_core::oracle::{bvp_solve, cost_quadrature, nash_perturbation_test, standard_family};
use opgame_core::{NashSolution, SquareMatrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn consensus_costs_nothing() {
    let spec = fixtures::oscillating_dyad(2.0).with_biases(vec![vec![0.7, 0.1]; 2]).unwrap();
    let s = NashSolution::new(&spec).unwrap().sample(129).unwrap();
    for i in 0..2 {
        let c = cost_quadrature(&spec, &s, i).unwrap();
        assert!(c.value.abs() < 1e-24, "{}", c.value);
        assert!(c.converged);
    }
}

#[test]
fn uninfluenced_agents_cost_nothing() {
    let u = UniformSpec::new(
        SquareMatrix::from_rows(&[[1.0, 0.1], [0.1, 2.0]]).unwrap(),
        SquareMatrix::zeros(2),
        3.0,
        vec![vec![1.0, -1.0], vec![0.0, 0.5]],
    )
    .unwrap();
    let spec = u.to_game_spec().unwrap();
    let s = NashSolution::new(&spec).unwrap().sample(65).unwrap();
    for i in 0..2 {
        assert!(cost_quadrature(&spec, &s, i).unwrap().value.abs() < 1e-28);
    }
}

#[test]
fn antagonistic_dyad_cost_is_pinned() {
    let spec = fixtures::antagonistic_dyad(1.0, 5.0);
    let sol = NashSolution::new(&spec).unwrap();
    let coarse = cost_quadrature(&spec, &sol.sample(513).unwrap(), 0).unwrap();
    let fine = cost_quadrature(&spec, &sol.sample(2049).unwrap(), 0).unwrap();
    assert!(coarse.converged && fine.converged);
    assert!((fine.value - 0.539131565).abs() < 1e-8, "{}", fine.value);
    assert!((coarse.value - fine.value).abs() < 1e-8);
    let c = fine.components;
    assert!(c.influence >= 0.0 && c.stubbornness >= 0.0 && c.control >= 0.0);
    assert!((c.total() - fine.value).abs() < 1e-15);
    let coarse_flag = cost_quadrature(&spec, &sol.sample(257).unwrap(), 0).unwrap();
    assert!(!coarse_flag.converged);
}

#[test]
fn collocation_converges_at_second_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..5 {
        let spec = random::solvable_spec(&mut rng, 12);
        let sol = NashSolution::new(&spec).unwrap();
        let err = |n: usize| {
            let b = bvp_solve(&spec, n).unwrap();
            b.grid
                .iter()
                .zip(&b.x)
                .map(|(&t, x)| (sol.state_at(t).unwrap() - x).amax())
                .fold(0.0, f64::max)
        };
        let (e256, e512) = (err(256), err(512));
        assert!(e512 <= 1e-6 * (1.0 + spec.stacked_biases().norm()));
        let ratio = e256 / e512;
        assert!((ratio - 4.0).abs() <= 0.8, "ratio {ratio}");
    }
}

#[test]
fn collocation_terminal_costate_vanishes() {
    let spec = fixtures::antagonistic_dyad(0.5, 2.0);
    let b = bvp_solve(&spec, 128).unwrap();
    assert_eq!(b.x[0], spec.stacked_biases());
    assert!(b.p.last().unwrap().amax() < 1e-14);
}

#[test]
fn perturbations_never_help() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for _ in 0..3 {
        let spec = random::solvable_spec(&mut rng, 12);
        let sol = NashSolution::new(&spec).unwrap();
        let family = standard_family(spec.horizon(), spec.issues());
        assert_eq!(family.len(), 9 * 2 * spec.issues());
        for i in 0..spec.agents() {
            let rep = nash_perturbation_test(&spec, &sol, i, &family, 1e-3).unwrap();
            assert!(rep.passed, "agent {i}: {}", rep.min_difference);
            let (lo, hi) = rep.scaling.unwrap();
            assert!(lo >= 3.8 && hi <= 4.2);
        }
    }
}

#[test]
fn closed_cosh_and_collocation_agree() {
    let spec = fixtures::antagonistic_dyad(1.0, 1.5);
    let sol = NashSolution::new(&spec).unwrap();
    let cosh = CoshForm::new(&sol).unwrap();
    let b = bvp_solve(&spec, 512).unwrap();
    for (k, &t) in b.grid.iter().enumerate().step_by(32) {
        let x = sol.state_at(t).unwrap();
        assert!((&x - cosh.state_at(t).unwrap()).amax() < 1e-8);
        assert!((&x - &b.x[k]).amax() < 1e-6 * (1.0 + spec.stacked_biases().norm()));
        assert!((&x - b.state_at(t)).amax() < 1e-6 * (1.0 + spec.stacked_biases().norm()));
    }
}
