#![allow(dead_code)]

use std::path::PathBuf;

use ergodic_bsde::config::{Experiment, ExperimentConfig};
use ergodic_bsde::drivers::ClosedFormBenchmark;
use ergodic_bsde::ergodic::{vanishing_discount, ErgodicConfig, ErgodicSolution};
use ergodic_bsde::oracles::benchmarks;
use ergodic_bsde::pde::{Grid1D, SchemeConfig};

pub const SHIPPED: [&str; 4] = ["example1", "example2", "two_regime", "merton"];

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs").join(format!("{name}.json"))
}

pub fn shipped(name: &str) -> Experiment {
    let (cfg, _) = ExperimentConfig::load(&config_path(name)).expect("shipped config parses");
    cfg.validate().expect("shipped config validates")
}

pub fn benchmark_scheme() -> SchemeConfig {
    SchemeConfig { dt: 0.5, stationarity_tol: 1e-9, ..SchemeConfig::default() }
}

pub fn solve_benchmark(b: ClosedFormBenchmark, n: usize) -> ErgodicSolution {
    let model = b.model().unwrap();
    let grid = Grid1D::new(-6.0, 6.0, n).unwrap();
    vanishing_discount(&model, grid, &ErgodicConfig::default(), &benchmark_scheme()).unwrap()
}

/// Oracle y and z of a benchmark, y in the y(0) = 0 gauge.
pub fn oracle(b: ClosedFormBenchmark, v: f64) -> (f64, f64) {
    match b {
        ClosedFormBenchmark::Example1 => (benchmarks::example1_y(v), benchmarks::example1_z(v)),
        ClosedFormBenchmark::Example2 => (benchmarks::example2_y(v), benchmarks::example2_z(v)),
    }
}

pub fn oracle_lambda(b: ClosedFormBenchmark) -> f64 {
    match b {
        ClosedFormBenchmark::Example1 => benchmarks::example1_lambda(),
        ClosedFormBenchmark::Example2 => benchmarks::example2_lambda(),
    }
}

/// Sup errors against the closed forms: y on the central 80%, z on the
/// central 80% away from v = 0, and z on the whole grid away from v = 0.
pub fn profile_errors(b: ClosedFormBenchmark, sol: &ErgodicSolution) -> (f64, f64, f64) {
    let grid = sol.grid;
    let window = grid.central_window(0.8);
    let kink = grid.nearest(0.0);
    let (mut ey, mut ez, mut ez_full) = (0.0f64, 0.0f64, 0.0f64);
    for j in 0..grid.n {
        let (y, z) = oracle(b, grid.node(j));
        let dz = if j.abs_diff(kink) > 1 { (sol.z[0][j] - z).abs() } else { 0.0 };
        ez_full = ez_full.max(dz);
        if window.contains(&j) {
            ey = ey.max((sol.y[0][j] - y).abs());
            ez = ez.max(dz);
        }
    }
    (ey, ez, ez_full)
}
