//! Numerical form of the multidimensional comparison theorem on small
//! Markovian finite-horizon systems
//!
//! Y^i_t = ξ^i + ∫_t^T [F^i(V_s, Z^i_s) + G^i(V_s, Y_s)] ds − ∫_t^T Z^i_s dW_s,
//!
//! solved through their PDE representation.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::drivers::{Driver, DriverFn, FnDriver};
use crate::model::DriverConstants;
use crate::pde::{
    solve_finite_horizon, Coupling, FnCoupling, Grid1D, ParabolicSolution, PdeError, PdeProblem, SchemeConfig,
};
use crate::vector::Vector;

pub use crate::pde::CouplingFn;

pub type TerminalFn = Arc<dyn Fn(usize, f64) -> f64 + Send + Sync>;

/// One system (ξ^i, F^i, G^i).
#[derive(Clone)]
pub struct SystemSide {
    pub terminal: TerminalFn,
    pub f: DriverFn,
    pub g: CouplingFn,
}

impl SystemSide {
    pub fn new(terminal: TerminalFn, f: DriverFn, g: CouplingFn) -> Self {
        Self { terminal, f, g }
    }
}

/// The hypotheses of the comparison theorem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Hypothesis {
    /// ξ^i ≤ ξ̄^i.
    TerminalOrder,
    /// Lipschitz bounds C_f, C_g on (F, G).
    Lipschitz,
    /// G^i nondecreasing in y^k, k ≠ i.
    OffDiagonalMonotone,
    /// F^i ≤ F̄^i and G^i ≤ Ḡ^i along the dominating solution.
    OrderAtSolution,
}

impl fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Hypothesis::TerminalOrder => "i",
            Hypothesis::Lipschitz => "ii",
            Hypothesis::OffDiagonalMonotone => "iii",
            Hypothesis::OrderAtSolution => "iv",
        })
    }
}

#[derive(Clone)]
pub struct ComparisonInstance {
    pub id: usize,
    pub seed: u64,
    pub m0: usize,
    pub horizon: f64,
    /// OU factor dV = −a V dt + dW.
    pub ou_rate: f64,
    pub lower: SystemSide,
    pub upper: SystemSide,
    /// Claimed Lipschitz constants of the lower side.
    pub c_f: f64,
    pub c_g: f64,
}

impl fmt::Debug for ComparisonInstance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ComparisonInstance")
            .field("id", &self.id)
            .field("seed", &self.seed)
            .field("m0", &self.m0)
            .field("horizon", &self.horizon)
            .finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ComparisonVerdict {
    Ordered { max_violation: f64 },
    HypothesisFailed { hypothesis: Hypothesis, excess: f64 },
    Counterexample { max_violation: f64 },
}

impl ComparisonVerdict {
    pub fn label(&self) -> String {
        match self {
            ComparisonVerdict::Ordered { .. } => "ORDERED".into(),
            ComparisonVerdict::HypothesisFailed { hypothesis, .. } => format!("HYPOTHESIS_FAILED({hypothesis})"),
            ComparisonVerdict::Counterexample { .. } => "COUNTEREXAMPLE".into(),
        }
    }

    /// max over nodes and times of y − ȳ (0 when not solved).
    pub fn max_violation(&self) -> f64 {
        match self {
            ComparisonVerdict::Ordered { max_violation } | ComparisonVerdict::Counterexample { max_violation } => {
                *max_violation
            }
            ComparisonVerdict::HypothesisFailed { .. } => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub verdict: ComparisonVerdict,
    /// (t, min over regimes and nodes of ȳ − y) at each recorded time.
    pub gap_profile: Vec<(f64, f64)>,
    pub tolerance: f64,
}

/// Slack for sampled inequalities.
const SAMPLE_SLACK: f64 = 1e-10;
const SAMPLES: usize = 2000;

fn problem_for(inst: &ComparisonInstance, side: &SystemSide, grid: Grid1D) -> PdeProblem {
    let coupling: Arc<dyn Coupling> = Arc::new(FnCoupling::new(inst.m0, inst.c_g, side.g.clone()));
    let driver: Arc<dyn Driver> = Arc::new(FnDriver::new(
        "comparison-side",
        inst.m0,
        1,
        DriverConstants { c_v: 0.0, c_z: inst.c_f, k_f: 0.0 },
        side.f.clone(),
    ));
    PdeProblem {
        grid,
        kappa: 1.0,
        eta: grid.nodes().iter().map(|v| -inst.ou_rate * v).collect(),
        driver,
        coupling,
        rho: 0.0,
        lambda_shift: 0.0,
        z_bound: f64::INFINITY,
        advection_bound: inst.c_f,
        gradient_sensitivity: inst.c_f,
    }
}

/// Solves one side forward in PDE time from its terminal data, recording
/// `records` equally spaced times.
pub fn solve_small_system(
    inst: &ComparisonInstance,
    side: &SystemSide,
    grid: Grid1D,
    records: usize,
    cfg: &SchemeConfig,
) -> Result<ParabolicSolution, PdeError> {
    let problem = problem_for(inst, side, grid);
    let initial: Vec<Vec<f64>> =
        (0..inst.m0).map(|i| grid.nodes().iter().map(|&v| (side.terminal)(i, v)).collect()).collect();
    let marks: Vec<f64> = (1..records).map(|k| inst.horizon * k as f64 / records as f64).collect();
    solve_finite_horizon(&problem, &initial, inst.horizon, &marks, cfg)
}

fn sample_box(rng: &mut ChaCha8Rng, dims: usize) -> Vec<f64> {
    (0..dims).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Sampled checks of (i)–(iii); returns the first failure and its excess.
pub fn check_static_hypotheses(inst: &ComparisonInstance, grid: Grid1D) -> Option<(Hypothesis, f64)> {
    for i in 0..inst.m0 {
        for v in grid.nodes() {
            let excess = (inst.lower.terminal)(i, v) - (inst.upper.terminal)(i, v);
            if excess > SAMPLE_SLACK {
                return Some((Hypothesis::TerminalOrder, excess));
            }
        }
    }
    let m0 = inst.m0;
    let half = grid.v_max.abs().max(grid.v_min.abs());
    let mut rng = ChaCha8Rng::seed_from_u64(inst.seed);
    rng.set_stream(1);
    for _ in 0..SAMPLES {
        let u = sample_box(&mut rng, 3 + 2 * m0);
        let v = u[0] * half;
        let (z, zb) = (Vector::scalar(3.0 * u[1]), Vector::scalar(3.0 * u[2]));
        let y: Vec<f64> = u[3..3 + m0].iter().map(|x| 3.0 * x).collect();
        let yb: Vec<f64> = u[3 + m0..].iter().map(|x| 3.0 * x).collect();
        for i in 0..m0 {
            let vv = Vector::scalar(v);
            let excess = ((inst.lower.f)(i, &vv, &z) - (inst.lower.f)(i, &vv, &zb)).abs() - inst.c_f * (z - zb).norm();
            if excess > SAMPLE_SLACK {
                return Some((Hypothesis::Lipschitz, excess));
            }
            let dist = y.iter().zip(&yb).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let excess = ((inst.lower.g)(i, v, &y) - (inst.lower.g)(i, v, &yb)).abs() - inst.c_g * dist;
            if excess > SAMPLE_SLACK {
                return Some((Hypothesis::Lipschitz, excess));
            }
        }
    }
    for _ in 0..SAMPLES {
        let u = sample_box(&mut rng, 2 + m0);
        let v = u[0] * half;
        let bump = 0.5 * (u[1] + 1.0) + 1e-3;
        let y: Vec<f64> = u[2..].iter().map(|x| 3.0 * x).collect();
        for i in 0..m0 {
            for k in (0..m0).filter(|&k| k != i) {
                let mut up = y.clone();
                up[k] += bump;
                let excess = (inst.lower.g)(i, v, &y) - (inst.lower.g)(i, v, &up);
                if excess > SAMPLE_SLACK {
                    return Some((Hypothesis::OffDiagonalMonotone, excess));
                }
            }
        }
    }
    None
}

/// Checks (iv) along the computed dominating solution.
fn check_order_at_solution(inst: &ComparisonInstance, upper: &ParabolicSolution) -> Option<f64> {
    let grid = upper.grid;
    let mut worst = f64::NEG_INFINITY;
    let mut column = vec![0.0; inst.m0];
    for (y, z) in upper.y.iter().zip(&upper.z) {
        for j in 0..grid.n {
            let v = grid.node(j);
            let vv = Vector::scalar(v);
            for (k, c) in column.iter_mut().enumerate() {
                *c = y[k][j];
            }
            for (i, zi) in z.iter().enumerate() {
                let zz = Vector::scalar(zi[j]);
                worst = worst.max((inst.lower.f)(i, &vv, &zz) - (inst.upper.f)(i, &vv, &zz));
                worst = worst.max((inst.lower.g)(i, v, &column) - (inst.upper.g)(i, v, &column));
            }
        }
    }
    (worst > SAMPLE_SLACK).then_some(worst)
}

/// ORDERED, HYPOTHESIS_FAILED or COUNTEREXAMPLE, with ordering tolerance
/// 1e-8 + h².
pub fn check_comparison(
    inst: &ComparisonInstance,
    grid: Grid1D,
    records: usize,
    cfg: &SchemeConfig,
) -> Result<ComparisonReport, PdeError> {
    let tolerance = 1e-8 + grid.h() * grid.h();
    if let Some((hypothesis, excess)) = check_static_hypotheses(inst, grid) {
        return Ok(ComparisonReport {
            verdict: ComparisonVerdict::HypothesisFailed { hypothesis, excess },
            gap_profile: Vec::new(),
            tolerance,
        });
    }
    let lower = solve_small_system(inst, &inst.lower, grid, records, cfg)?;
    let upper = solve_small_system(inst, &inst.upper, grid, records, cfg)?;
    if let Some(excess) = check_order_at_solution(inst, &upper) {
        return Ok(ComparisonReport {
            verdict: ComparisonVerdict::HypothesisFailed { hypothesis: Hypothesis::OrderAtSolution, excess },
            gap_profile: Vec::new(),
            tolerance,
        });
    }
    let mut max_violation = f64::NEG_INFINITY;
    let mut gap_profile = Vec::new();
    for (k, &t) in lower.times.iter().enumerate() {
        let mut min_gap = f64::INFINITY;
        for (yl, yu) in lower.y[k].iter().zip(&upper.y[k]) {
            for (a, b) in yl.iter().zip(yu) {
                min_gap = min_gap.min(b - a);
            }
        }
        max_violation = max_violation.max(-min_gap);
        gap_profile.push((t, min_gap));
    }
    let verdict = if max_violation <= tolerance {
        ComparisonVerdict::Ordered { max_violation }
    } else {
        ComparisonVerdict::Counterexample { max_violation }
    };
    Ok(ComparisonReport { verdict, gap_profile, tolerance })
}

/// Random Markovian instance from a fixed family:
/// F^i(v, z) = a_i + b_i z + c_i sin(ω_i v) + e_i tanh(z),
/// G^i(v, y) = −ρ_i y^i + Σ_{k≠i} w_{ik}(y^k − y^i) + u_{ik} tanh(y^k − y^i),
/// ξ^i(v) = α_i + β_i tanh(v) + γ_i sin(v),
/// and the dominating side adds nonnegative perturbations to each.
/// With `break_monotonicity` some w_{ik} are negative.
pub fn random_instance(id: usize, seed: u64, break_monotonicity: bool) -> ComparisonInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m0 = rng.gen_range(1..=3usize);
    let m0 = if break_monotonicity { m0.max(2) } else { m0 };
    let mut uniform = |lo: f64, hi: f64| rng.gen_range(lo..hi);

    let a: Vec<f64> = (0..m0).map(|_| uniform(-0.5, 0.5)).collect();
    let b: Vec<f64> = (0..m0).map(|_| uniform(-0.5, 0.5)).collect();
    let c: Vec<f64> = (0..m0).map(|_| uniform(-0.3, 0.3)).collect();
    let omega: Vec<f64> = (0..m0).map(|_| uniform(0.5, 2.0)).collect();
    let e: Vec<f64> = (0..m0).map(|_| uniform(-0.5, 0.5)).collect();
    let rho: Vec<f64> = (0..m0).map(|_| uniform(0.0, 0.5)).collect();
    let mut w = vec![vec![0.0; m0]; m0];
    let mut u = vec![vec![0.0; m0]; m0];
    for i in 0..m0 {
        for k in 0..m0 {
            if i != k {
                w[i][k] = uniform(0.0, 1.0);
                u[i][k] = uniform(0.0, 0.5);
            }
        }
    }
    if break_monotonicity {
        w[0][1] = -uniform(0.5, 1.0);
        u[0][1] = 0.0;
    }
    let alpha: Vec<f64> = (0..m0).map(|_| uniform(-1.0, 1.0)).collect();
    let beta: Vec<f64> = (0..m0).map(|_| uniform(-1.0, 1.0)).collect();
    let gamma: Vec<f64> = (0..m0).map(|_| uniform(-0.5, 0.5)).collect();
    // About a third of the perturbations are switched off so some orderings are tight.
    let mut gap = |hi: f64| if uniform(0.0, 1.0) < 0.35 { 0.0 } else { uniform(0.0, hi) };
    let df: Vec<f64> = (0..m0).map(|_| gap(0.3)).collect();
    let dg: Vec<f64> = (0..m0).map(|_| gap(0.3)).collect();
    let dxi: Vec<f64> = (0..m0).map(|_| gap(0.5)).collect();
    let ou_rate = uniform(0.5, 1.5);

    let c_f = (0..m0).map(|i| b[i].abs() + e[i].abs()).fold(0.0, f64::max);
    let c_g = (0..m0)
        .map(|i| {
            let off: f64 = (0..m0).filter(|&k| k != i).map(|k| w[i][k].abs() + u[i][k]).sum();
            rho[i] + 2.0 * off
        })
        .fold(0.0, f64::max);

    let f_lower: DriverFn = {
        let (a, b, c, omega, e) = (a.clone(), b.clone(), c.clone(), omega.clone(), e.clone());
        Arc::new(move |i, v: &Vector, z: &Vector| {
            a[i] + b[i] * z.x() + c[i] * (omega[i] * v.x()).sin() + e[i] * z.x().tanh()
        })
    };
    let g_lower: CouplingFn = {
        let (rho, w, u) = (rho.clone(), w.clone(), u.clone());
        Arc::new(move |i, _v, y: &[f64]| {
            let mut total = -rho[i] * y[i];
            for k in 0..y.len() {
                if k != i {
                    let d = y[k] - y[i];
                    total += w[i][k] * d + u[i][k] * d.tanh();
                }
            }
            total
        })
    };
    let xi_lower: TerminalFn = {
        let (alpha, beta, gamma) = (alpha.clone(), beta.clone(), gamma.clone());
        Arc::new(move |i, v| alpha[i] + beta[i] * v.tanh() + gamma[i] * v.sin())
    };
    let f_upper: DriverFn = {
        let (f, df) = (f_lower.clone(), df.clone());
        Arc::new(move |i, v: &Vector, z: &Vector| f(i, v, z) + df[i] * (1.0 + v.x().cos()) * 0.5)
    };
    let g_upper: CouplingFn = {
        let (g, dg) = (g_lower.clone(), dg.clone());
        Arc::new(move |i, v, y: &[f64]| g(i, v, y) + dg[i])
    };
    let xi_upper: TerminalFn = {
        let (xi, dxi) = (xi_lower.clone(), dxi.clone());
        Arc::new(move |i, v| xi(i, v) + dxi[i] * (1.0 + (2.0 * v).sin()) * 0.5)
    };
    ComparisonInstance {
        id,
        seed,
        m0,
        horizon: 1.0,
        ou_rate,
        lower: SystemSide::new(xi_lower, f_lower, g_lower),
        upper: SystemSide::new(xi_upper, f_upper, g_upper),
        c_f,
        c_g,
    }
}

/// One line of the verdict table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchRow {
    pub instance_id: usize,
    pub seed: u64,
    /// Generated with hypothesis (iii) broken.
    pub broken: bool,
    pub verdict: String,
    pub max_violation: f64,
}

/// `instances` valid and `broken` invalid random instances, seeded
/// base_seed + k and base_seed + BROKEN_SEED_OFFSET + k, checked in parallel.
pub fn run_batch(
    instances: usize,
    broken: usize,
    base_seed: u64,
    grid: Grid1D,
    records: usize,
    cfg: &SchemeConfig,
) -> Result<Vec<BatchRow>, PdeError> {
    let jobs: Vec<(usize, u64, bool)> = (0..instances)
        .map(|k| (k, base_seed + k as u64, false))
        .chain((0..broken).map(|k| (instances + k, base_seed + BROKEN_SEED_OFFSET + k as u64, true)))
        .collect();
    jobs.par_iter()
        .map(|&(id, seed, is_broken)| {
            let inst = random_instance(id, seed, is_broken);
            let report = check_comparison(&inst, grid, records, cfg)?;
            Ok(BatchRow {
                instance_id: id,
                seed,
                broken: is_broken,
                verdict: report.verdict.label(),
                max_violation: report.verdict.max_violation(),
            })
        })
        .collect()
}

pub const BROKEN_SEED_OFFSET: u64 = 1_000_000;
