//! Finite-difference solver for the coupled semilinear parabolic system
//!
//! ∂_t y^i = ½κ²∂²_v y^i + η ∂_v y^i + f^i(v, κ∂_v y^i) + G^i(v, y) − ρ y^i − λ
//!
//! in one space dimension, and its discounted stationary limit.
//!
//! Each step is implicit in the diffusion, in the advection by η + κ∂_z f
//! (gradient lagged) and in ρ; the Hamiltonian remainder and the coupling G
//! are explicit. Advection uses central differences where the cell Péclet
//! number allows and upwinding elsewhere, so the interior matrix is an
//! M-matrix. Fixed points do not depend on the time step.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::drivers::Driver;
use crate::model::{ModelError, ModelSpec, RateMatrix};
use crate::vector::Vector;

/// Values per regime and node: `y[regime][node]`.
pub type Profile = Vec<Vec<f64>>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PdeError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid scheme configuration: {0}")]
    InvalidScheme(String),
    #[error("the PDE solver handles one-dimensional factors only (got d = {0})")]
    UnsupportedDimension(usize),
    #[error("non-finite state at step {step} (t = {time}); reduce dt")]
    NonFiniteState { step: usize, time: f64 },
    #[error("no stationary state after {steps} steps (residual {residual:e})")]
    MaxStepsExceeded { steps: usize, residual: f64 },
    #[error("state has {got} regimes/nodes, expected {expected}")]
    ShapeMismatch { got: usize, expected: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Uniform grid on [v_min, v_max].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub v_min: f64,
    pub v_max: f64,
    pub n: usize,
}

impl Grid1D {
    pub fn new(v_min: f64, v_max: f64, n: usize) -> Result<Self, PdeError> {
        if !(v_min.is_finite() && v_max.is_finite() && v_min < v_max) {
            return Err(PdeError::InvalidGrid(format!("need v_min < v_max, got [{v_min}, {v_max}]")));
        }
        if n < 5 {
            return Err(PdeError::InvalidGrid(format!("need at least 5 nodes, got {n}")));
        }
        Ok(Self { v_min, v_max, n })
    }

    #[inline]
    pub fn h(&self) -> f64 {
        (self.v_max - self.v_min) / (self.n - 1) as f64
    }

    #[inline]
    pub fn node(&self, j: usize) -> f64 {
        if j == self.n - 1 {
            self.v_max
        } else {
            self.v_min + j as f64 * self.h()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.node(j)).collect()
    }

    pub fn nearest(&self, v: f64) -> usize {
        let j = ((v - self.v_min) / self.h()).round();
        j.clamp(0.0, (self.n - 1) as f64) as usize
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.v_min && v <= self.v_max
    }

    /// Linear interpolation; outside the grid the edge value is returned and
    /// the flag is set.
    #[inline]
    pub fn interpolate(&self, values: &[f64], v: f64) -> (f64, bool) {
        if v <= self.v_min {
            return (values[0], v < self.v_min);
        }
        if v >= self.v_max {
            return (values[self.n - 1], v > self.v_max);
        }
        let s = (v - self.v_min) / self.h();
        let j = (s.floor() as usize).min(self.n - 2);
        let w = s - j as f64;
        (values[j] * (1.0 - w) + values[j + 1] * w, false)
    }

    /// Node indices of the central `fraction` of the grid.
    pub fn central_window(&self, fraction: f64) -> std::ops::Range<usize> {
        let half = 0.5 * fraction * (self.v_max - self.v_min);
        let mid = 0.5 * (self.v_min + self.v_max);
        let lo = ((mid - half - self.v_min) / self.h() - 1e-9).ceil().max(0.0) as usize;
        let hi = ((mid + half - self.v_min) / self.h() + 1e-9).floor() as usize;
        lo..(hi.min(self.n - 1) + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    /// Zero curvature: y_0 = 2y_1 − y_2.
    LinearExtrapolation,
    /// y_0 = y_1 − h·s with s the lagged interior slope clamped to |κs| ≤ K_z.
    ClampedGradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchemeConfig {
    pub dt: f64,
    /// Implicitness weight of the linear operator, in [0.5, 1].
    pub theta_scheme: f64,
    pub boundary: BoundaryKind,
    pub stationarity_tol: f64,
    pub max_steps: usize,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        Self {
            dt: 0.05,
            theta_scheme: 1.0,
            boundary: BoundaryKind::LinearExtrapolation,
            stationarity_tol: 1e-8,
            max_steps: 2_000_000,
        }
    }
}

impl SchemeConfig {
    pub fn validate(&self) -> Result<(), PdeError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(PdeError::InvalidScheme(format!("dt = {} must be positive", self.dt)));
        }
        if !(0.5..=1.0).contains(&self.theta_scheme) {
            return Err(PdeError::InvalidScheme(format!("theta_scheme = {} not in [0.5, 1]", self.theta_scheme)));
        }
        if !(self.stationarity_tol > 0.0) {
            return Err(PdeError::InvalidScheme("stationarity_tol must be positive".into()));
        }
        if self.max_steps == 0 {
            return Err(PdeError::InvalidScheme("max_steps must be positive".into()));
        }
        Ok(())
    }
}

/// Value of G^i at one node and whether a clamp was applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingValue {
    pub value: f64,
    pub clamped: bool,
}

/// Explicit zeroth-order coupling G^i(v, y^1, …, y^{m0}).
pub trait Coupling: Send + Sync {
    fn regimes(&self) -> usize;
    fn eval(&self, regime: usize, v: f64, y: &[f64]) -> CouplingValue;
    /// Bound on |∂G^i/∂y^i|, used for the explicit step restriction.
    fn diagonal_bound(&self) -> f64;
}

/// G^i(y) = Σ_k q^{ik}(e^{y^k − y^i} − 1) with |y^k − y^i| clamped.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpCoupling {
    rates: RateMatrix,
    clamp: f64,
}

impl ExpCoupling {
    pub fn new(rates: RateMatrix, clamp: f64) -> Self {
        Self { rates, clamp }
    }

    pub fn clamp(&self) -> f64 {
        self.clamp
    }
}

impl Coupling for ExpCoupling {
    fn regimes(&self) -> usize {
        self.rates.m0()
    }

    #[inline]
    fn eval(&self, regime: usize, _v: f64, y: &[f64]) -> CouplingValue {
        let mut value = 0.0;
        let mut clamped = false;
        for (k, &yk) in y.iter().enumerate() {
            if k == regime {
                continue;
            }
            let q = self.rates.rate(regime, k);
            if q == 0.0 {
                continue;
            }
            let mut diff = yk - y[regime];
            if diff.abs() > self.clamp {
                diff = diff.clamp(-self.clamp, self.clamp);
                clamped = true;
            }
            value += q * diff.exp_m1();
        }
        CouplingValue { value, clamped }
    }

    fn diagonal_bound(&self) -> f64 {
        let growth = if self.clamp.is_finite() { self.clamp.exp() } else { 1.0 };
        (0..self.rates.m0()).map(|i| self.rates.exit_rate(i) * growth).fold(0.0, f64::max)
    }
}

pub type CouplingFn = Arc<dyn Fn(usize, f64, &[f64]) -> f64 + Send + Sync>;

/// Coupling from a closure, for test instances.
#[derive(Clone)]
pub struct FnCoupling {
    regimes: usize,
    lipschitz: f64,
    f: CouplingFn,
}

impl FnCoupling {
    pub fn new(regimes: usize, lipschitz: f64, f: CouplingFn) -> Self {
        Self { regimes, lipschitz, f }
    }
}

impl fmt::Debug for FnCoupling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnCoupling").field("regimes", &self.regimes).field("lipschitz", &self.lipschitz).finish()
    }
}

impl Coupling for FnCoupling {
    fn regimes(&self) -> usize {
        self.regimes
    }
    fn eval(&self, regime: usize, v: f64, y: &[f64]) -> CouplingValue {
        CouplingValue { value: (self.f)(regime, v, y), clamped: false }
    }
    fn diagonal_bound(&self) -> f64 {
        self.lipschitz
    }
}

/// Everything a solve needs besides the scheme parameters.
#[derive(Clone)]
pub struct PdeProblem {
    pub grid: Grid1D,
    pub kappa: f64,
    /// η at the grid nodes.
    pub eta: Vec<f64>,
    pub driver: Arc<dyn Driver>,
    pub coupling: Arc<dyn Coupling>,
    pub rho: f64,
    pub lambda_shift: f64,
    /// Gradient bound used by the clamped-gradient boundary.
    pub z_bound: f64,
    /// Bound on |∂_z f| over the gradients the solution can reach.
    pub advection_bound: f64,
    /// Bound on |∂²_z f|·|z| over those gradients: how strongly the lagged
    /// advection coefficient reacts to the state.
    pub gradient_sensitivity: f64,
}

impl fmt::Debug for PdeProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PdeProblem")
            .field("grid", &self.grid)
            .field("kappa", &self.kappa)
            .field("driver", &self.driver.name())
            .field("rho", &self.rho)
            .field("lambda_shift", &self.lambda_shift)
            .finish()
    }
}

impl PdeProblem {
    /// The discounted (ρ > 0) or ergodic (ρ = 0, λ shift) system of a model,
    /// with the coupling clamped at K_diff + 1.
    pub fn from_model(model: &ModelSpec, grid: Grid1D, rho: f64, lambda_shift: f64) -> Result<Self, PdeError> {
        let d = model.factor.dim();
        if d != 1 {
            return Err(PdeError::UnsupportedDimension(d));
        }
        let bounds = model.scheme_bounds();
        let eta = grid.nodes().iter().map(|&v| model.factor.eta(&Vector::scalar(v)).x()).collect();
        let c_z = bounds.constants.c_z;
        let (advection_bound, gradient_sensitivity) =
            if c_z == 0.0 { (0.0, 0.0) } else { (c_z * (1.0 + 2.0 * bounds.k_z), c_z * bounds.k_z) };
        Ok(Self {
            grid,
            kappa: model.factor.kappa().get(0, 0),
            eta,
            driver: model.driver.clone(),
            coupling: Arc::new(ExpCoupling::new(model.rates.clone(), bounds.k_diff + 1.0)),
            rho,
            lambda_shift,
            z_bound: bounds.k_z,
            advection_bound,
            gradient_sensitivity,
        })
    }

    pub fn regimes(&self) -> usize {
        self.driver.regimes()
    }

    pub fn with_rho(&self, rho: f64) -> Self {
        Self { rho, ..self.clone() }
    }

    pub fn with_lambda_shift(&self, lambda_shift: f64) -> Self {
        Self { lambda_shift, ..self.clone() }
    }

    /// Largest admissible step:
    /// dt ≤ h/(2·gradient_sensitivity) for the lagged advection coefficient,
    /// dt·sup|∂G^i/∂y^i| ≤ 1 for the explicit coupling, and for θ < 1
    /// dt ≤ h²/((1−θ)(κ² + h·sup|b|)) for the explicit part of the linear operator.
    /// The explicit Hamiltonian remainder f(z) − ∂_z f(z)·z has no first-order
    /// dependence on the lagged gradient and adds no restriction.
    pub fn stability_bound(&self, theta_scheme: f64) -> f64 {
        let h = self.grid.h();
        let mut bound = f64::INFINITY;
        if self.gradient_sensitivity > 0.0 {
            bound = bound.min(h / (2.0 * self.gradient_sensitivity));
        }
        let g = self.coupling.diagonal_bound();
        if g > 0.0 {
            bound = bound.min(1.0 / g);
        }
        if theta_scheme < 1.0 {
            let b = self.eta.iter().fold(0.0f64, |m, e| m.max(e.abs())) + self.kappa * self.advection_bound;
            bound = bound.min(h * h / ((1.0 - theta_scheme) * (self.kappa * self.kappa + h * b)));
        }
        bound
    }

    fn check_state(&self, y: &Profile) -> Result<(), PdeError> {
        if y.len() != self.regimes() {
            return Err(PdeError::ShapeMismatch { got: y.len(), expected: self.regimes() });
        }
        if let Some(row) = y.iter().find(|r| r.len() != self.grid.n) {
            return Err(PdeError::ShapeMismatch { got: row.len(), expected: self.grid.n });
        }
        if self.coupling.regimes() != self.regimes() {
            return Err(PdeError::ShapeMismatch { got: self.coupling.regimes(), expected: self.regimes() });
        }
        Ok(())
    }
}

/// κ·∂_v y: central differences inside, second-order one-sided at the ends.
pub fn compute_z(y: &[f64], h: f64, kappa: f64) -> Vec<f64> {
    let n = y.len();
    let mut z = vec![0.0; n];
    for j in 1..n - 1 {
        z[j] = kappa * (y[j + 1] - y[j - 1]) / (2.0 * h);
    }
    z[0] = kappa * (-3.0 * y[0] + 4.0 * y[1] - y[2]) / (2.0 * h);
    z[n - 1] = kappa * (3.0 * y[n - 1] - 4.0 * y[n - 2] + y[n - 3]) / (2.0 * h);
    z
}

pub fn compute_z_profile(y: &Profile, h: f64, kappa: f64) -> Profile {
    y.iter().map(|row| compute_z(row, h, kappa)).collect()
}

/// Outcome of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    /// sup over regimes and nodes of |y^{n+1} − y^n|.
    pub max_change: f64,
    /// Number of (regime, node) pairs where the coupling clamp fired.
    pub clamp_hits: usize,
}

/// Reusable stepping workspace.
pub struct Stepper<'a> {
    problem: &'a PdeProblem,
    dt: f64,
    theta: f64,
    boundary: BoundaryKind,
    next: Profile,
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
    rhs: Vec<f64>,
    column: Vec<f64>,
    scratch: Vec<f64>,
}

/// Boundary closure y_edge = α·y_near + β·y_next + γ.
#[derive(Debug, Clone, Copy)]
struct Closure {
    alpha: f64,
    beta: f64,
    gamma: f64,
}

impl<'a> Stepper<'a> {
    /// Uses dt = min(cfg.dt, stability bound).
    pub fn new(problem: &'a PdeProblem, cfg: &SchemeConfig) -> Result<Self, PdeError> {
        cfg.validate()?;
        let dt = cfg.dt.min(problem.stability_bound(cfg.theta_scheme));
        Self::with_dt(problem, cfg, dt)
    }

    /// Uses exactly `dt` (callers are responsible for the stability bound).
    pub fn with_dt(problem: &'a PdeProblem, cfg: &SchemeConfig, dt: f64) -> Result<Self, PdeError> {
        cfg.validate()?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(PdeError::InvalidScheme(format!("effective dt = {dt} is not usable")));
        }
        let n = problem.grid.n;
        let m0 = problem.regimes();
        Ok(Self {
            problem,
            dt,
            theta: cfg.theta_scheme,
            boundary: cfg.boundary,
            next: vec![vec![0.0; n]; m0],
            lower: vec![0.0; n],
            diag: vec![0.0; n],
            upper: vec![0.0; n],
            rhs: vec![0.0; n],
            column: vec![0.0; m0],
            scratch: vec![0.0; n],
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn set_dt(&mut self, dt: f64) {
        self.dt = dt;
    }

    fn closures(&self, y: &[f64]) -> (Closure, Closure) {
        let h = self.problem.grid.h();
        let n = y.len();
        match self.boundary {
            BoundaryKind::LinearExtrapolation => {
                let c = Closure { alpha: 2.0, beta: -1.0, gamma: 0.0 };
                (c, c)
            }
            BoundaryKind::ClampedGradient => {
                let cap = self.problem.z_bound / self.problem.kappa;
                let s_left = ((y[2] - y[1]) / h).clamp(-cap, cap);
                let s_right = ((y[n - 2] - y[n - 3]) / h).clamp(-cap, cap);
                (
                    Closure { alpha: 1.0, beta: 0.0, gamma: -h * s_left },
                    Closure { alpha: 1.0, beta: 0.0, gamma: h * s_right },
                )
            }
        }
    }

    /// Advances `y` by one step in place.
    pub fn step(&mut self, y: &mut Profile) -> StepInfo {
        let p = self.problem;
        let n = p.grid.n;
        let h = p.grid.h();
        let m0 = p.regimes();
        let dt = self.dt;
        let theta = self.theta;
        let k2 = p.kappa * p.kappa;
        let diffusion = 0.5 * k2 / (h * h);
        let mut clamp_hits = 0;

        for i in 0..m0 {
            let yi = &y[i];
            for j in 1..n - 1 {
                let v = p.grid.node(j);
                let vv = Vector::scalar(v);
                let slope = (yi[j + 1] - yi[j - 1]) / (2.0 * h);
                let z = Vector::scalar(p.kappa * slope);
                let (f, grad) = p.driver.eval_with_grad(i, &vv, &z);
                let fz = grad.x();
                let b = p.eta[j] + p.kappa * fz;
                let (lo, up, d_hyb) = if b.abs() * h <= k2 {
                    (diffusion - 0.5 * b / h, diffusion + 0.5 * b / h, slope)
                } else if b > 0.0 {
                    (diffusion, diffusion + b / h, (yi[j + 1] - yi[j]) / h)
                } else {
                    (diffusion - b / h, diffusion, (yi[j] - yi[j - 1]) / h)
                };
                let ly = lo * yi[j - 1] + up * yi[j + 1] - (lo + up) * yi[j];
                for (k, c) in self.column.iter_mut().enumerate() {
                    *c = y[k][j];
                }
                let g = p.coupling.eval(i, v, &self.column);
                clamp_hits += g.clamped as usize;
                let explicit = (1.0 - theta) * ly - p.kappa * fz * d_hyb + f + g.value - p.lambda_shift;
                self.rhs[j] = yi[j] + dt * explicit;
                self.lower[j] = -theta * dt * lo;
                self.upper[j] = -theta * dt * up;
                self.diag[j] = 1.0 + theta * dt * (lo + up) + dt * p.rho;
            }
            let (left, right) = self.closures(yi);
            let a = self.lower[1];
            self.diag[1] += a * left.alpha;
            self.upper[1] += a * left.beta;
            self.rhs[1] -= a * left.gamma;
            self.lower[1] = 0.0;
            let c = self.upper[n - 2];
            self.diag[n - 2] += c * right.alpha;
            self.lower[n - 2] += c * right.beta;
            self.rhs[n - 2] -= c * right.gamma;
            self.upper[n - 2] = 0.0;

            let out = &mut self.next[i];
            thomas(
                &self.lower[1..n - 1],
                &self.diag[1..n - 1],
                &self.upper[1..n - 1],
                &self.rhs[1..n - 1],
                &mut self.scratch[1..n - 1],
                &mut out[1..n - 1],
            );
            out[0] = left.alpha * out[1] + left.beta * out[2] + left.gamma;
            out[n - 1] = right.alpha * out[n - 2] + right.beta * out[n - 3] + right.gamma;
        }

        let mut max_change = 0.0f64;
        for (old, new) in y.iter_mut().zip(self.next.iter()) {
            for (o, nv) in old.iter_mut().zip(new) {
                let change = (nv - *o).abs();
                // NaN propagates through max as the other operand, so test explicitly.
                max_change = if change.is_nan() { f64::NAN } else { max_change.max(change) };
                *o = *nv;
            }
        }
        StepInfo { max_change, clamp_hits }
    }
}

/// Tridiagonal solve; `lower[0]` and `upper[last]` are ignored.
fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64], c_prime: &mut [f64], out: &mut [f64]) {
    let n = diag.len();
    let mut denom = diag[0];
    c_prime[0] = upper[0] / denom;
    out[0] = rhs[0] / denom;
    for j in 1..n {
        denom = diag[j] - lower[j] * c_prime[j - 1];
        c_prime[j] = if j + 1 < n { upper[j] / denom } else { 0.0 };
        out[j] = (rhs[j] - lower[j] * out[j - 1]) / denom;
    }
    for j in (0..n - 1).rev() {
        out[j] -= c_prime[j] * out[j + 1];
    }
}

/// One step from `state` with the given dt.
pub fn step_parabolic(
    problem: &PdeProblem,
    state: &Profile,
    dt: f64,
    cfg: &SchemeConfig,
) -> Result<(Profile, StepInfo), PdeError> {
    problem.check_state(state)?;
    let mut stepper = Stepper::with_dt(problem, cfg, dt)?;
    let mut next = state.clone();
    let info = stepper.step(&mut next);
    if !info.max_change.is_finite() || next.iter().flatten().any(|x| !x.is_finite()) {
        return Err(PdeError::NonFiniteState { step: 1, time: dt });
    }
    Ok((next, info))
}

/// y^i(t, ·) on a time mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct ParabolicSolution {
    pub grid: Grid1D,
    pub kappa: f64,
    pub times: Vec<f64>,
    /// `y[time][regime][node]`.
    pub y: Vec<Profile>,
    pub z: Vec<Profile>,
    pub scheme: SchemeConfig,
    /// Step actually used (≤ scheme.dt).
    pub dt: f64,
    pub steps: usize,
    pub clamp_hits: usize,
}

impl ParabolicSolution {
    /// Rows (t, regime, v, y, z).
    pub fn snapshot_rows(&self) -> Vec<(f64, usize, f64, f64, f64)> {
        let mut rows = Vec::new();
        for (k, &t) in self.times.iter().enumerate() {
            for (i, (yr, zr)) in self.y[k].iter().zip(&self.z[k]).enumerate() {
                for j in 0..self.grid.n {
                    rows.push((t, i, self.grid.node(j), yr[j], zr[j]));
                }
            }
        }
        rows
    }

    pub fn last(&self) -> &Profile {
        self.y.last().expect("at least the initial state")
    }
}

/// Integrates forward in PDE time from `initial` up to `horizon`, recording
/// the state at t = 0, at every time in `record_times` and at `horizon`.
/// Steps are shortened so the recorded times fall on the mesh.
pub fn solve_finite_horizon(
    problem: &PdeProblem,
    initial: &Profile,
    horizon: f64,
    record_times: &[f64],
    cfg: &SchemeConfig,
) -> Result<ParabolicSolution, PdeError> {
    problem.check_state(initial)?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(PdeError::InvalidScheme(format!("horizon {horizon} must be positive")));
    }
    let mut stepper = Stepper::new(problem, cfg)?;
    let dt_max = stepper.dt();
    let mut marks: Vec<f64> = record_times.iter().copied().filter(|&t| t > 0.0 && t < horizon).collect();
    marks.push(horizon);
    marks.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
    marks.dedup();

    let h = problem.grid.h();
    let mut state = initial.clone();
    let mut times = vec![0.0];
    let mut ys = vec![state.clone()];
    let mut zs = vec![compute_z_profile(&state, h, problem.kappa)];
    let mut t = 0.0;
    let mut steps = 0;
    let mut clamp_hits = 0;
    for &mark in &marks {
        let span = mark - t;
        let count = (span / dt_max * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        stepper.set_dt(span / count as f64);
        for _ in 0..count {
            let info = stepper.step(&mut state);
            steps += 1;
            clamp_hits += info.clamp_hits;
            if !info.max_change.is_finite() {
                return Err(PdeError::NonFiniteState { step: steps, time: t });
            }
        }
        t = mark;
        times.push(t);
        ys.push(state.clone());
        zs.push(compute_z_profile(&state, h, problem.kappa));
    }
    Ok(ParabolicSolution {
        grid: problem.grid,
        kappa: problem.kappa,
        times,
        y: ys,
        z: zs,
        scheme: *cfg,
        dt: dt_max,
        steps,
        clamp_hits,
    })
}

/// Fixed point of the discounted flow.
#[derive(Debug, Clone, PartialEq)]
pub struct StationarySolution {
    pub grid: Grid1D,
    pub rho: f64,
    pub y: Profile,
    pub z: Profile,
    pub steps: usize,
    /// Final sup|Δy|/dt.
    pub residual: f64,
    pub dt: f64,
    /// Clamp firings in the final step.
    pub clamp_hits_final: usize,
    pub clamp_hits_total: usize,
}

/// Runs the flow from `initial` until sup|Δy|/dt < stationarity_tol.
pub fn solve_stationary_from(
    problem: &PdeProblem,
    initial: Profile,
    cfg: &SchemeConfig,
) -> Result<StationarySolution, PdeError> {
    problem.check_state(&initial)?;
    let mut stepper = Stepper::new(problem, cfg)?;
    let dt = stepper.dt();
    let mut state = initial;
    let mut total = 0;
    let mut residual = f64::INFINITY;
    for step in 1..=cfg.max_steps {
        let info = stepper.step(&mut state);
        total += info.clamp_hits;
        if !info.max_change.is_finite() {
            return Err(PdeError::NonFiniteState { step, time: step as f64 * dt });
        }
        residual = info.max_change / dt;
        if residual < cfg.stationarity_tol {
            let z = compute_z_profile(&state, problem.grid.h(), problem.kappa);
            return Ok(StationarySolution {
                grid: problem.grid,
                rho: problem.rho,
                y: state,
                z,
                steps: step,
                residual,
                dt,
                clamp_hits_final: info.clamp_hits,
                clamp_hits_total: total,
            });
        }
    }
    Err(PdeError::MaxStepsExceeded { steps: cfg.max_steps, residual })
}

/// Discounted stationary solution y^{i,ρ}, started from y ≡ 0.
pub fn solve_discounted_stationary(
    model: &ModelSpec,
    grid: Grid1D,
    rho: f64,
    cfg: &SchemeConfig,
) -> Result<StationarySolution, PdeError> {
    if !(rho > 0.0) {
        return Err(ModelError::ZeroDiscount.into());
    }
    let problem = PdeProblem::from_model(model, grid, rho, 0.0)?;
    solve_stationary_from(&problem, vec![vec![0.0; grid.n]; model.m0()], cfg)
}
