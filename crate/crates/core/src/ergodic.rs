//! Ergodic pair (y, λ) by vanishing discount, the long-time slope estimator,
//! and the large-time constant L with its exponential rate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, ModelSpec, SchemeBounds};
use crate::pde::{
    compute_z_profile, solve_discounted_stationary, solve_finite_horizon, Grid1D, PdeError, PdeProblem, Profile,
    SchemeConfig, StationarySolution, Stepper,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ErgodicError {
    #[error(transparent)]
    Pde(#[from] PdeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("rho sequence must be non-empty, positive and strictly decreasing")]
    InvalidRhoSequence,
    #[error("reference regime {0} out of range")]
    InvalidReferenceRegime(usize),
    #[error("reference point {0} lies outside the grid")]
    ReferenceOutsideGrid(f64),
    #[error("horizon too short: two-point slope {two_point} vs three-point slope {three_point}")]
    HorizonTooShort { two_point: f64, three_point: f64 },
    #[error("large-time residuals (max {max_residual:e}) are below the noise floor {floor:e}; fit skipped")]
    DegenerateFit { max_residual: f64, floor: f64 },
    #[error("invalid horizons: {0}")]
    InvalidHorizons(String),
    #[error("ergodic solution grid does not match the requested grid")]
    GridMismatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ErgodicConfig {
    pub rho_sequence: Vec<f64>,
    pub v0: f64,
    /// Defaults to the last regime.
    pub reference_regime: Option<usize>,
    /// Refine the extrapolated pair by the undiscounted relative-value flow.
    pub polish: bool,
}

impl Default for ErgodicConfig {
    fn default() -> Self {
        Self { rho_sequence: vec![0.1, 0.05, 0.025, 0.0125], v0: 0.0, reference_regime: None, polish: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RhoPoint {
    pub rho: f64,
    pub lambda_rho: f64,
    /// y^{i,ρ} − y^{m⁰,ρ}(v0).
    pub y_bar: Profile,
    /// sup|y^{i,ρ}|, sup|z^{i,ρ}| and sup|y^{i,ρ} − y^{j,ρ}| of the discounted solve.
    pub sup_y: f64,
    pub sup_z: f64,
    pub max_regime_gap: f64,
    pub steps: usize,
    pub clamp_hits_final: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaMethod {
    Richardson,
    SmallestRho,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErgodicDiagnostics {
    pub lambda_method: LambdaMethod,
    /// λ_ρ increments fail to contract over the last three ρ values.
    pub non_monotone_lambda: bool,
    pub k_z: f64,
    pub k_diff: f64,
    pub max_abs_z: f64,
    pub max_regime_gap: f64,
    /// Smallest C with |y^i(v)| ≤ C(1 + |v|) on the grid.
    pub c_y: f64,
    /// Clamp firings at convergence, summed over the ρ solves.
    pub clamp_hits_final: usize,
    pub polish_steps: usize,
    pub polish_residual: f64,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErgodicSolution {
    pub grid: Grid1D,
    pub kappa: f64,
    /// Gauge: y^{m⁰}(0) = 0, one constant for all regimes.
    pub y: Profile,
    pub z: Profile,
    /// Final ergodic constant (polished when enabled).
    pub lambda: f64,
    /// Extrapolated vanishing-discount estimate.
    pub lambda_vd: f64,
    pub rho_trace: Vec<RhoPoint>,
    pub reference_regime: usize,
    pub v0: f64,
    pub diagnostics: ErgodicDiagnostics,
}

impl ErgodicSolution {
    pub fn regimes(&self) -> usize {
        self.y.len()
    }

    /// Linear interpolation of y^i; flag set outside the grid.
    #[inline]
    pub fn y_at(&self, regime: usize, v: f64) -> (f64, bool) {
        self.grid.interpolate(&self.y[regime], v)
    }

    #[inline]
    pub fn z_at(&self, regime: usize, v: f64) -> (f64, bool) {
        self.grid.interpolate(&self.z[regime], v)
    }

    /// Rebuilds a solution from a stored profile. The ρ trace is empty and
    /// the solver counters are zero.
    #[allow(clippy::too_many_arguments)]
    pub fn from_profile(
        grid: Grid1D,
        kappa: f64,
        y: Profile,
        lambda: f64,
        lambda_vd: f64,
        lambda_method: LambdaMethod,
        reference_regime: usize,
        v0: f64,
        bounds: &SchemeBounds,
    ) -> Self {
        let z = compute_z_profile(&y, grid.h(), kappa);
        let (max_abs_z, max_regime_gap, c_y) = profile_measures(grid, &y, &z);
        let diagnostics = ErgodicDiagnostics {
            lambda_method,
            non_monotone_lambda: false,
            k_z: bounds.k_z,
            k_diff: bounds.k_diff,
            max_abs_z,
            max_regime_gap,
            c_y,
            clamp_hits_final: 0,
            polish_steps: 0,
            polish_residual: f64::NAN,
            dt: f64::NAN,
        };
        Self { grid, kappa, y, z, lambda, lambda_vd, rho_trace: Vec::new(), reference_regime, v0, diagnostics }
    }

    /// Adds `c` to every y^i.
    pub fn regauged(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.y.iter_mut().flatten().for_each(|y| *y += c);
        out
    }
}

/// λ at ρ = 0 from the line through two (ρ, λ_ρ) points.
fn linear_extrapolate(r1: f64, l1: f64, r2: f64, l2: f64) -> f64 {
    (r1 * l2 - r2 * l1) / (r1 - r2)
}

/// (sup|z|, sup|y^i − y^j|, smallest C with |y| ≤ C(1 + |v|)).
fn profile_measures(grid: Grid1D, y: &Profile, z: &Profile) -> (f64, f64, f64) {
    let max_abs_z = z.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let nodes = grid.nodes();
    let c_y =
        y.iter().flat_map(|row| row.iter().zip(&nodes).map(|(y, v)| y.abs() / (1.0 + v.abs()))).fold(0.0, f64::max);
    (max_abs_z, regime_gap(y), c_y)
}

fn regime_gap(y: &Profile) -> f64 {
    let mut gap = 0.0f64;
    for a in y {
        for b in y {
            gap = a.iter().zip(b).fold(gap, |g, (p, q)| g.max((p - q).abs()));
        }
    }
    gap
}

fn shift_profile(y: &mut Profile, c: f64) {
    y.iter_mut().flatten().for_each(|v| *v -= c);
}

pub fn vanishing_discount(
    model: &ModelSpec,
    grid: Grid1D,
    ergodic: &ErgodicConfig,
    cfg: &SchemeConfig,
) -> Result<ErgodicSolution, ErgodicError> {
    let rhos = &ergodic.rho_sequence;
    if rhos.is_empty() || rhos.iter().any(|r| !(*r > 0.0 && r.is_finite())) || rhos.windows(2).any(|w| w[1] >= w[0]) {
        return Err(ErgodicError::InvalidRhoSequence);
    }
    let m0 = model.m0();
    let reference = ergodic.reference_regime.unwrap_or(m0 - 1);
    if reference >= m0 {
        return Err(ErgodicError::InvalidReferenceRegime(reference));
    }
    if !grid.contains(ergodic.v0) {
        return Err(ErgodicError::ReferenceOutsideGrid(ergodic.v0));
    }

    let solves: Vec<StationarySolution> =
        rhos.par_iter().map(|&rho| solve_discounted_stationary(model, grid, rho, cfg)).collect::<Result<_, _>>()?;

    let trace: Vec<RhoPoint> = solves
        .into_iter()
        .map(|s| {
            let anchor = grid.interpolate(&s.y[reference], ergodic.v0).0;
            let sup_y = s.y.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
            let sup_z = s.z.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
            let max_regime_gap = regime_gap(&s.y);
            let mut y_bar = s.y;
            shift_profile(&mut y_bar, anchor);
            RhoPoint {
                rho: s.rho,
                lambda_rho: s.rho * anchor,
                y_bar,
                sup_y,
                sup_z,
                max_regime_gap,
                steps: s.steps,
                clamp_hits_final: s.clamp_hits_final,
            }
        })
        .collect();

    let last = trace.len() - 1;
    let (mut lambda_vd, mut y, mut method) =
        (trace[last].lambda_rho, trace[last].y_bar.clone(), LambdaMethod::SmallestRho);
    let mut non_monotone = false;
    if trace.len() >= 3 {
        let (a, b, c) = (&trace[last - 2], &trace[last - 1], &trace[last]);
        let r12 = linear_extrapolate(a.rho, a.lambda_rho, b.rho, b.lambda_rho);
        let r23 = linear_extrapolate(b.rho, b.lambda_rho, c.rho, c.lambda_rho);
        let spread = (a.lambda_rho - c.lambda_rho).abs();
        non_monotone = (c.lambda_rho - b.lambda_rho).abs() > (b.lambda_rho - a.lambda_rho).abs() + cfg.stationarity_tol;
        // Accept when both pairs predict the same limit, i.e. the O(ρ) ansatz holds.
        if (r23 - r12).abs() <= 0.1 * spread {
            lambda_vd = r23;
            method = LambdaMethod::Richardson;
            let w = b.rho / (b.rho - c.rho);
            y = b
                .y_bar
                .iter()
                .zip(&c.y_bar)
                .map(|(rb, rc)| rb.iter().zip(rc).map(|(yb, yc)| w * yc + (1.0 - w) * yb).collect())
                .collect();
        }
    }

    let mut lambda = lambda_vd;
    let mut polish_steps = 0;
    let mut polish_residual = f64::NAN;
    let problem = PdeProblem::from_model(model, grid, 0.0, lambda_vd)?;
    let dt = Stepper::new(&problem, cfg)?.dt();
    if ergodic.polish {
        let out = relative_value_flow(&problem, y, reference, ergodic.v0, cfg)?;
        y = out.0;
        lambda = lambda_vd + out.1;
        polish_steps = out.2;
        polish_residual = out.3;
    }

    let gauge_point = if grid.contains(0.0) { 0.0 } else { ergodic.v0 };
    let c = grid.interpolate(&y[reference], gauge_point).0;
    shift_profile(&mut y, c);
    let z = compute_z_profile(&y, grid.h(), problem.kappa);

    let bounds = model.scheme_bounds();
    let (max_abs_z, max_regime_gap, c_y) = profile_measures(grid, &y, &z);
    let diagnostics = ErgodicDiagnostics {
        lambda_method: method,
        non_monotone_lambda: non_monotone,
        k_z: bounds.k_z,
        k_diff: bounds.k_diff,
        max_abs_z,
        max_regime_gap,
        c_y,
        clamp_hits_final: trace.iter().map(|p| p.clamp_hits_final).sum(),
        polish_steps,
        polish_residual,
        dt,
    };
    Ok(ErgodicSolution {
        grid,
        kappa: problem.kappa,
        y,
        z,
        lambda,
        lambda_vd,
        rho_trace: trace,
        reference_regime: reference,
        v0: ergodic.v0,
        diagnostics,
    })
}

/// Undiscounted flow with the drift of y^{ref}(v0) removed after each step.
/// Returns (profile, λ correction, steps, residual).
fn relative_value_flow(
    problem: &PdeProblem,
    mut y: Profile,
    reference: usize,
    v0: f64,
    cfg: &SchemeConfig,
) -> Result<(Profile, f64, usize, f64), ErgodicError> {
    let grid = problem.grid;
    let anchor = grid.interpolate(&y[reference], v0).0;
    shift_profile(&mut y, anchor);
    let mut stepper = Stepper::new(problem, cfg)?;
    let dt = stepper.dt();
    let mut prev = y.clone();
    let mut residual = f64::INFINITY;
    for step in 1..=cfg.max_steps {
        stepper.step(&mut y);
        let drift = grid.interpolate(&y[reference], v0).0;
        shift_profile(&mut y, drift);
        let mut change = 0.0f64;
        for (a, b) in y.iter().flatten().zip(prev.iter().flatten()) {
            let d = (a - b).abs();
            change = if d.is_nan() { f64::NAN } else { change.max(d) };
        }
        if !change.is_finite() {
            return Err(PdeError::NonFiniteState { step, time: step as f64 * dt }.into());
        }
        residual = change / dt;
        if residual < cfg.stationarity_tol {
            return Ok((y, drift / dt, step, residual));
        }
        prev.clone_from(&y);
    }
    Err(PdeError::MaxStepsExceeded { steps: cfg.max_steps, residual }.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LongTimeLambda {
    pub lambda: f64,
    pub three_point: f64,
    pub t1: f64,
    pub t2: f64,
}

/// Slope in T of y(T, ·) started from h ≡ 0, averaged over regimes and the
/// central 20% of the grid.
pub fn long_time_lambda(
    model: &ModelSpec,
    grid: Grid1D,
    t1: f64,
    t2: f64,
    tol: f64,
    cfg: &SchemeConfig,
) -> Result<LongTimeLambda, ErgodicError> {
    if !(t1 > 0.0 && t2 > t1) {
        return Err(ErgodicError::InvalidHorizons(format!("need 0 < T1 < T2, got {t1}, {t2}")));
    }
    let problem = PdeProblem::from_model(model, grid, 0.0, 0.0)?;
    let tm = 0.5 * (t1 + t2);
    let sol = solve_finite_horizon(&problem, &vec![vec![0.0; grid.n]; model.m0()], t2, &[t1, tm], cfg)?;
    let window = grid.central_window(0.2);
    let mean_at = |k: usize| {
        let rows = &sol.y[k];
        let total: f64 = rows.iter().map(|r| r[window.clone()].iter().sum::<f64>()).sum();
        total / (rows.len() * window.len()) as f64
    };
    let (m1, mm, m2) = (mean_at(1), mean_at(2), mean_at(3));
    let lambda = (m2 - m1) / (t2 - t1);
    let ts = [t1, tm, t2];
    let ms = [m1, mm, m2];
    let t_bar = ts.iter().sum::<f64>() / 3.0;
    let m_bar = ms.iter().sum::<f64>() / 3.0;
    let num: f64 = ts.iter().zip(&ms).map(|(t, m)| (t - t_bar) * (m - m_bar)).sum();
    let den: f64 = ts.iter().map(|t| (t - t_bar).powi(2)).sum();
    let three_point = num / den;
    if (lambda - three_point).abs() > tol {
        return Err(ErgodicError::HorizonTooShort { two_point: lambda, three_point });
    }
    Ok(LongTimeLambda { lambda, three_point, t1, t2 })
}

/// Least-squares fit of log residual(T) ≈ log C − K_v T.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpFit {
    pub k_v: f64,
    pub c: f64,
    /// Coefficient of determination of the log-linear fit.
    pub r_squared: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LargeTimeReport {
    pub l: f64,
    pub times: Vec<f64>,
    /// δY(T) at the probe node, per horizon and regime.
    pub delta_y: Vec<Vec<f64>>,
    /// max over regimes of |δY^i(T) − L| at the probe node.
    pub residuals: Vec<f64>,
    pub fit: Option<ExpFit>,
    pub probe: usize,
    /// max_{i,k} |L^i − L^k| at the probe node.
    pub l_spread_regimes: f64,
    /// max over regimes of the spread of L^i(v) across the central window.
    pub l_spread_nodes: f64,
    /// Residual at the second-largest horizon: how far from converged L is.
    pub fit_noise: f64,
    pub noise_floor: f64,
}

impl LargeTimeReport {
    pub fn require_fit(&self) -> Result<ExpFit, ErgodicError> {
        self.fit.ok_or(ErgodicError::DegenerateFit {
            max_residual: self.residuals.iter().fold(0.0, |m, r| m.max(*r)),
            floor: self.noise_floor,
        })
    }
}

/// Runs the flow from `initial`, records δY(T, v) = y(T, v) − λT − y(v) for
/// each horizon, sets L to its value at the largest horizon and fits the
/// exponential approach on the earlier horizons.
pub fn large_time_report(
    model: &ModelSpec,
    ergodic: &ErgodicSolution,
    initial: &Profile,
    t_list: &[f64],
    noise_floor: f64,
    cfg: &SchemeConfig,
) -> Result<LargeTimeReport, ErgodicError> {
    let grid = ergodic.grid;
    if t_list.len() < 3 || t_list.windows(2).any(|w| w[1] <= w[0]) || t_list[0] <= 0.0 {
        return Err(ErgodicError::InvalidHorizons("need at least three increasing positive horizons".into()));
    }
    let problem = PdeProblem::from_model(model, grid, 0.0, 0.0)?;
    let t_max = *t_list.last().expect("non-empty");
    let sol = solve_finite_horizon(&problem, initial, t_max, t_list, cfg)?;
    let m0 = model.m0();
    let probe = grid.nearest(0.5 * (grid.v_min + grid.v_max));
    let delta = |k: usize, i: usize, j: usize| sol.y[k][i][j] - ergodic.lambda * sol.times[k] - ergodic.y[i][j];

    // sol.times = [0, t_list...]
    let last = sol.times.len() - 1;
    let l_regimes: Vec<f64> = (0..m0).map(|i| delta(last, i, probe)).collect();
    let l = l_regimes.iter().sum::<f64>() / m0 as f64;
    let l_spread_regimes = l_regimes.iter().fold(f64::NEG_INFINITY, |m, x| m.max(*x))
        - l_regimes.iter().fold(f64::INFINITY, |m, x| m.min(*x));
    let window = grid.central_window(0.2);
    let mut l_spread_nodes = 0.0f64;
    for i in 0..m0 {
        let vals: Vec<f64> = window.clone().map(|j| delta(last, i, j)).collect();
        let hi = vals.iter().fold(f64::NEG_INFINITY, |m, x| m.max(*x));
        let lo = vals.iter().fold(f64::INFINITY, |m, x| m.min(*x));
        l_spread_nodes = l_spread_nodes.max(hi - lo);
    }

    let mut delta_y = Vec::new();
    let mut residuals = Vec::new();
    for k in 1..=last {
        let row: Vec<f64> = (0..m0).map(|i| delta(k, i, probe)).collect();
        residuals.push(row.iter().fold(0.0f64, |m, d| m.max((d - l).abs())));
        delta_y.push(row);
    }
    let fit_set = &residuals[..residuals.len() - 1];
    let fit_noise = fit_set[fit_set.len() - 1];
    let usable: Vec<(f64, f64)> = t_list[..fit_set.len()]
        .iter()
        .zip(fit_set)
        .filter(|(_, r)| **r > noise_floor)
        .map(|(t, r)| (*t, r.ln()))
        .collect();
    let fit = (usable.len() >= 2).then(|| {
        let n = usable.len() as f64;
        let tb = usable.iter().map(|p| p.0).sum::<f64>() / n;
        let lb = usable.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = usable.iter().map(|(t, r)| (t - tb) * (r - lb)).sum();
        let sxx: f64 = usable.iter().map(|(t, _)| (t - tb).powi(2)).sum();
        let syy: f64 = usable.iter().map(|(_, r)| (r - lb).powi(2)).sum();
        let slope = sxy / sxx;
        let intercept = lb - slope * tb;
        let sse: f64 = usable.iter().map(|(t, r)| (r - intercept - slope * t).powi(2)).sum();
        let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 0.0 };
        ExpFit { k_v: -slope, c: intercept.exp(), r_squared }
    });
    Ok(LargeTimeReport {
        l,
        times: t_list.to_vec(),
        delta_y,
        residuals,
        fit,
        probe,
        l_spread_regimes,
        l_spread_nodes,
        fit_noise,
        noise_floor,
    })
}
