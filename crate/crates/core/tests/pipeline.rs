use std::sync::Arc;

use freqstrat::field::{grid_field, ScalarField};
use freqstrat::frequency::{self, Quadrature};
use freqstrat::operator::EllipticOperator;
use freqstrat::polyharm::random_harmonic;
use freqstrat::solver::{self, DirichletProblem};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn solved_field_has_boundary_frequency() {
    let op = EllipticOperator::laplace(2);
    let g: Arc<solver::BoundaryFn> = Arc::new(|x: &[f64]| x[0] * x[0] - x[1] * x[1]);
    let (grid, stats) = solver::solve_grid(&DirichletProblem::new(op, g, 1.0 / 64.0)).unwrap();
    assert!(stats.residual < 1e-9);
    let u = grid_field(grid, None).unwrap();
    let q = Quadrature::new(2, 16).unwrap();
    for r in [0.1, 0.2, 0.3] {
        let n = frequency::normalized_nbar(&u, &[0.0, 0.0], r, &q).unwrap();
        assert!((n - 2.0).abs() < 1e-2, "r = {r}: {n}");
    }
}

#[test]
fn preset_and_polynomial_agree() {
    let a = ScalarField::from_spec("re-z3", 2).unwrap();
    let b = ScalarField::from_spec("poly:1 * x1^3; -3 * x1 x2^2", 2).unwrap();
    let q = Quadrature::auto(&a).unwrap();
    for r in [0.05, 0.4] {
        let na = frequency::almgren_n(&a, &[0.1, -0.2], r, &q).unwrap();
        let nb = frequency::almgren_n(&b, &[0.1, -0.2], r, &q).unwrap();
        assert!((na - nb).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn random_homogeneous_frequency_is_degree(seed in any::<u64>(), d in 1u32..5, r in 0.05f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_harmonic(3, d, &mut rng).unwrap().into_poly();
        let u = ScalarField::polynomial(p);
        let q = Quadrature::for_degree(3, d).unwrap();
        let n = frequency::almgren_n(&u, &[0.0; 3], r, &q).unwrap();
        prop_assert!((n - d as f64).abs() < 1e-9, "{}", n);
    }

    #[test]
    fn discrete_maximum_principle(a in -6.0f64..6.0, b in -6.0f64..6.0, s in 0.0f64..0.5) {
        let op = EllipticOperator::lipschitz_bump(s, &[0.0, 0.0]).unwrap();
        let g: Arc<solver::BoundaryFn> = Arc::new(move |x: &[f64]| (a * x[0] + b * x[1]).sin());
        let (grid, _) = solver::solve_grid(&DirichletProblem::new(op, g, 1.0 / 16.0)).unwrap();
        prop_assert!(grid.values.iter().all(|v| v.abs() <= 1.0 + 1e-9));
    }
}
