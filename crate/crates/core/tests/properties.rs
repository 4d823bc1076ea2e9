use std::sync::{Arc, OnceLock};

use ergodic_bsde::drivers::{
    ClosedFormBenchmark, ConstantDriver, ConstraintSet, Driver, ForwardPerformanceDriver, ThetaComponent, ThetaField,
};
use ergodic_bsde::ergodic::{vanishing_discount, ErgodicConfig, ErgodicSolution};
use ergodic_bsde::market::eval_forward_performance;
use ergodic_bsde::model::{truncate_scalar, truncate_vector, validate_rate_matrix, FactorModel, ModelSpec};
use ergodic_bsde::oracles::sup_search;
use ergodic_bsde::pde::{Grid1D, SchemeConfig};
use ergodic_bsde::vector::Vector;
use proptest::prelude::*;

fn interval() -> impl Strategy<Value = ConstraintSet> {
    (-2.5..2.5f64, 0.0..2.5f64).prop_map(|(lo, width)| ConstraintSet::interval(lo, lo + width).unwrap())
}

fn plane_box() -> impl Strategy<Value = ConstraintSet> {
    (-2.0..2.0f64, 0.0..2.0f64, -2.0..2.0f64, 0.0..2.0f64).prop_map(|(a, wa, b, wb)| {
        ConstraintSet::boxed(Vector::from_slice(&[a, b]), Vector::from_slice(&[a + wa, b + wb])).unwrap()
    })
}

fn one_regime_driver(delta: f64, theta: f64, set: ConstraintSet) -> ForwardPerformanceDriver {
    ForwardPerformanceDriver::new(delta, vec![ThetaField::scalar(ThetaComponent::constant(theta))], vec![set]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_is_nonexpansive_and_idempotent(
        set in plane_box(), x in (-5.0..5.0f64, -5.0..5.0f64), y in (-5.0..5.0f64, -5.0..5.0f64)
    ) {
        let (x, y) = (Vector::from_slice(&[x.0, x.1]), Vector::from_slice(&[y.0, y.1]));
        let (px, py) = (set.project(&x), set.project(&y));
        prop_assert!((px - py).norm() <= (x - y).norm() + 1e-12);
        prop_assert_eq!(set.project(&px), px);
        prop_assert!(set.contains(&px, 1e-12));
    }

    #[test]
    fn axis_subspace_projection_zeroes_fixed_coordinates(x in -5.0..5.0f64, y in -5.0..5.0f64) {
        let set = ConstraintSet::SubspaceAxis { free: vec![true, false] };
        prop_assert_eq!(set.project(&Vector::from_slice(&[x, y])), Vector::from_slice(&[x, 0.0]));
    }

    #[test]
    fn driver_is_the_supremum_over_strategies(
        delta in 0.1..0.9f64, theta in -1.0..1.0f64, z in -2.0..2.0f64, set in interval()
    ) {
        let drv = one_regime_driver(delta, theta, set.clone());
        let (v, zz) = (Vector::scalar(0.0), Vector::scalar(z));
        let (arg, sup) = sup_search(|pi| drv.eval_controlled(0, &v, &zz, pi), &set, 1e-3);
        let f = drv.eval(0, &v, &zz);
        prop_assert!(f >= sup - 1e-12, "closed form {f} below grid sup {sup}");
        prop_assert!(f - sup < 1e-5, "closed form {f} vs grid sup {sup}");
        let pi = drv.optimal_strategy(0, &v, &zz);
        if pi.x().abs() < 5.0 {
            prop_assert!((pi.x() - arg.x()).abs() < 2e-2, "argmax {} vs {}", pi.x(), arg.x());
        }
    }

    #[test]
    fn driver_gradient_matches_finite_difference(
        delta in 0.1..0.9f64, theta in -1.0..1.0f64, z in -2.0..2.0f64, set in interval()
    ) {
        let drv = one_regime_driver(delta, theta, set);
        let v = Vector::scalar(0.0);
        let h = 1e-6;
        let fd = (drv.eval(0, &v, &Vector::scalar(z + h)) - drv.eval(0, &v, &Vector::scalar(z - h))) / (2.0 * h);
        prop_assert!((drv.grad_z(0, &v, &Vector::scalar(z)).x() - fd).abs() < 1e-5);
    }

    #[test]
    fn truncations_are_bounded_and_nonexpansive(
        a in -10.0..10.0f64, b in -10.0..10.0f64, k in 0.1..5.0f64,
        z in (-10.0..10.0f64, -10.0..10.0f64), w in (-10.0..10.0f64, -10.0..10.0f64)
    ) {
        prop_assert!(truncate_scalar(a, k).abs() <= k);
        prop_assert!((truncate_scalar(a, k) - truncate_scalar(b, k)).abs() <= (a - b).abs());
        let (z, w) = (Vector::from_slice(&[z.0, z.1]), Vector::from_slice(&[w.0, w.1]));
        let (qz, qw) = (truncate_vector(&z, k), truncate_vector(&w, k));
        prop_assert!(qz.norm() <= k * (1.0 + 1e-12));
        prop_assert!((qz - qw).norm() <= (z - w).norm() + 1e-12);
        if z.norm() <= k {
            prop_assert_eq!(qz, z);
        }
    }
}

fn example1() -> &'static ErgodicSolution {
    static SOL: OnceLock<ErgodicSolution> = OnceLock::new();
    SOL.get_or_init(|| {
        let model = ClosedFormBenchmark::Example1.model().unwrap();
        let grid = Grid1D::new(-6.0, 6.0, 121).unwrap();
        vanishing_discount(
            &model,
            grid,
            &ErgodicConfig::default(),
            &SchemeConfig { dt: 0.5, ..SchemeConfig::default() },
        )
        .unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gauge_shift_rescales_performance_and_keeps_gradient(
        c in -2.0..2.0f64, x in 0.1..5.0f64, t in 0.0..3.0f64, v in -5.0..5.0f64
    ) {
        let sol = example1();
        let shifted = sol.regauged(c);
        prop_assert_eq!(&shifted.z, &sol.z);
        let (u, _) = eval_forward_performance(sol, x, t, 0, v, 0.5);
        let (us, _) = eval_forward_performance(&shifted, x, t, 0, v, 0.5);
        prop_assert!((us / u - c.exp()).abs() < 1e-12 * c.exp());
    }
}

fn two_regime_constant(values: [f64; 2], q01: f64, q10: f64) -> ModelSpec {
    ModelSpec::new(
        FactorModel::ornstein_uhlenbeck(1.0).unwrap(),
        validate_rate_matrix(vec![vec![-q01, q01], vec![q10, -q10]]).unwrap(),
        Arc::new(ConstantDriver::new(values.to_vec(), 1)),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn relabelling_regimes_permutes_the_solution(
        a in -0.5..0.5f64, b in -0.5..0.5f64, q01 in 0.2..1.5f64, q10 in 0.2..1.5f64
    ) {
        let grid = Grid1D::new(-3.0, 3.0, 31).unwrap();
        let scheme = SchemeConfig { dt: 0.1, stationarity_tol: 1e-10, ..SchemeConfig::default() };
        let ergodic = ErgodicConfig { reference_regime: Some(0), ..ErgodicConfig::default() };
        let swapped_ergodic = ErgodicConfig { reference_regime: Some(1), ..ErgodicConfig::default() };
        let base = vanishing_discount(&two_regime_constant([a, b], q01, q10), grid, &ergodic, &scheme).unwrap();
        let swapped = vanishing_discount(&two_regime_constant([b, a], q10, q01), grid, &swapped_ergodic, &scheme).unwrap();
        prop_assert!((base.lambda - swapped.lambda).abs() < 1e-8, "{} vs {}", base.lambda, swapped.lambda);
        for j in 0..grid.n {
            prop_assert!((base.y[0][j] - swapped.y[1][j]).abs() < 1e-7);
            prop_assert!((base.y[1][j] - swapped.y[0][j]).abs() < 1e-7);
        }
    }
}
