mod common;

use common::{oracle, oracle_lambda, profile_errors, solve_benchmark};
use ergodic_bsde::drivers::ClosedFormBenchmark;
use ergodic_bsde::oracles::fd_gradient_check;
use ergodic_bsde::pde::Grid1D;

const BENCHMARKS: [ClosedFormBenchmark; 2] = [ClosedFormBenchmark::Example1, ClosedFormBenchmark::Example2];

#[test]
fn vanishing_discount_recovers_closed_form_lambda() {
    for (b, tol) in BENCHMARKS.into_iter().zip([1e-3, 2e-3]) {
        let sol = solve_benchmark(b, 800);
        assert!((sol.lambda_vd - oracle_lambda(b)).abs() <= tol, "{b:?}: {}", sol.lambda_vd);
        assert!((sol.lambda - oracle_lambda(b)).abs() <= tol, "{b:?}: {}", sol.lambda);
    }
}

#[test]
fn profiles_converge_at_second_order() {
    for b in BENCHMARKS {
        let coarse = solve_benchmark(b, 400);
        let fine = solve_benchmark(b, 800);
        let (ey_c, ez_c, _) = profile_errors(b, &coarse);
        let (ey_f, ez_f, _) = profile_errors(b, &fine);
        for (sol, ey, ez) in [(&coarse, ey_c, ez_c), (&fine, ey_f, ez_f)] {
            let h2 = sol.grid.h().powi(2);
            assert!(ey <= 5.0 * h2, "{b:?} n={}: y error {ey:e} vs {:e}", sol.grid.n, 5.0 * h2);
            assert!(ez <= 2.0 * h2, "{b:?} n={}: z error {ez:e} vs {:e}", sol.grid.n, 2.0 * h2);
        }
        let ratio = ey_c / ey_f;
        assert!((3.0..=5.0).contains(&ratio), "{b:?}: refinement ratio {ratio}");
    }
}

#[test]
fn zero_curvature_boundary_error_stays_at_the_edges() {
    let b = ClosedFormBenchmark::Example2;
    let (_, ez_c, full_c) = profile_errors(b, &solve_benchmark(b, 400));
    let (_, ez_f, full_f) = profile_errors(b, &solve_benchmark(b, 800));
    assert!(full_c > 10.0 * ez_c && full_f > 10.0 * ez_f);
    assert!((ez_c / ez_f).log2() > 1.8);
    assert!((full_c / full_f).log2() < 0.5, "edge error should not refine away");
}

#[test]
fn closed_form_stencil_error_is_second_order() {
    let grid = Grid1D::new(-6.0, 6.0, 801).unwrap();
    let h = grid.h();
    for b in BENCHMARKS {
        let y: Vec<f64> = grid.nodes().iter().map(|&v| oracle(b, v).0).collect();
        let z: Vec<f64> = grid.nodes().iter().map(|&v| oracle(b, v).1).collect();
        let check = fd_gradient_check(&y, h, 1.0, &z);
        assert!(check.max_error_excluding(grid.nearest(0.0), 1) <= 2.0 * h * h, "{b:?}");
    }
}

#[test]
fn gauge_is_pinned_at_the_origin() {
    for b in BENCHMARKS {
        let sol = solve_benchmark(b, 801);
        assert!(sol.y_at(0, 0.0).0.abs() < 1e-14);
    }
}
