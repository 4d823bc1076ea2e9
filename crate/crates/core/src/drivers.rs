//! Driver families f^i(v, z): the power-utility forward-performance driver
//! with convex trading constraints, two closed-form single-regime
//! benchmarks, constant drivers, and closure-backed drivers for tests.

use std::f64::consts::PI;
use std::fmt;
use std::sync::{Arc, OnceLock};

use statrs::function::erf::{erf, erfc};

use crate::model::{validate_rate_matrix, DriverConstants, FactorModel, ModelError, ModelSpec, RateMatrix};
use crate::vector::Vector;

/// A Hamiltonian family indexed by regime.
pub trait Driver: Send + Sync {
    fn name(&self) -> String;
    fn regimes(&self) -> usize;
    fn dim(&self) -> usize;
    fn eval(&self, regime: usize, v: &Vector, z: &Vector) -> f64;

    /// ∇_z f. The default is a central difference.
    fn grad_z(&self, regime: usize, v: &Vector, z: &Vector) -> Vector {
        let mut g = Vector::zeros(z.dim());
        for k in 0..z.dim() {
            let step = 1e-6 * (1.0 + z.as_slice()[k].abs());
            let mut up = *z;
            let mut down = *z;
            up.as_mut_slice()[k] += step;
            down.as_mut_slice()[k] -= step;
            g.as_mut_slice()[k] = (self.eval(regime, v, &up) - self.eval(regime, v, &down)) / (2.0 * step);
        }
        g
    }

    /// (f, ∇_z f) in one call.
    fn eval_with_grad(&self, regime: usize, v: &Vector, z: &Vector) -> (f64, Vector) {
        (self.eval(regime, v, z), self.grad_z(regime, v, z))
    }

    fn constants(&self) -> DriverConstants;
}

/// Closed convex trading-constraint sets with exact projections.
#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintSet {
    FullSpace {
        dim: usize,
    },
    /// Axis-aligned box; a one-dimensional box is an interval. Bounds may be infinite.
    Box {
        lower: Vector,
        upper: Vector,
    },
    /// Coordinates with `free[k] == false` are forced to zero, e.g. ℝ×{0}.
    SubspaceAxis {
        free: Vec<bool>,
    },
}

impl ConstraintSet {
    pub fn interval(lower: f64, upper: f64) -> Result<Self, ModelError> {
        Self::boxed(Vector::scalar(lower), Vector::scalar(upper))
    }

    pub fn boxed(lower: Vector, upper: Vector) -> Result<Self, ModelError> {
        if lower.dim() != upper.dim() {
            return Err(ModelError::DimensionMismatch {
                what: "box upper bound",
                got: upper.dim(),
                expected: lower.dim(),
            });
        }
        for (l, u) in lower.as_slice().iter().zip(upper.as_slice()) {
            if l.is_nan() || u.is_nan() || l > u {
                return Err(ModelError::InvalidParameter {
                    name: "constraint bounds",
                    reason: format!("lower {l} must not exceed upper {u}"),
                });
            }
        }
        Ok(ConstraintSet::Box { lower, upper })
    }

    pub fn dim(&self) -> usize {
        match self {
            ConstraintSet::FullSpace { dim } => *dim,
            ConstraintSet::Box { lower, .. } => lower.dim(),
            ConstraintSet::SubspaceAxis { free } => free.len(),
        }
    }

    /// Euclidean projection.
    pub fn project(&self, x: &Vector) -> Vector {
        match self {
            ConstraintSet::FullSpace { .. } => *x,
            ConstraintSet::Box { lower, upper } => {
                let mut out = *x;
                for (k, c) in out.as_mut_slice().iter_mut().enumerate() {
                    *c = c.max(lower.as_slice()[k]).min(upper.as_slice()[k]);
                }
                out
            }
            ConstraintSet::SubspaceAxis { free } => {
                let mut out = *x;
                for (c, &keep) in out.as_mut_slice().iter_mut().zip(free) {
                    if !keep {
                        *c = 0.0;
                    }
                }
                out
            }
        }
    }

    pub fn dist_sq(&self, x: &Vector) -> f64 {
        (*x - self.project(x)).norm_sq()
    }

    pub fn contains(&self, x: &Vector, tol: f64) -> bool {
        self.dist_sq(x) <= tol * tol
    }

    /// sup{|π| : π ∈ Π}, infinite for unbounded sets.
    pub fn radius(&self) -> f64 {
        match self {
            ConstraintSet::Box { lower, upper } => lower
                .as_slice()
                .iter()
                .zip(upper.as_slice())
                .map(|(l, u)| l.abs().max(u.abs()).powi(2))
                .sum::<f64>()
                .sqrt(),
            _ => f64::INFINITY,
        }
    }

    /// Intersection with [−r, r]^d as explicit per-axis ranges (for grid searches).
    pub fn clipped_ranges(&self, r: f64) -> Vec<(f64, f64)> {
        match self {
            ConstraintSet::FullSpace { dim } => vec![(-r, r); *dim],
            ConstraintSet::Box { lower, upper } => {
                lower.as_slice().iter().zip(upper.as_slice()).map(|(l, u)| (l.max(-r), u.min(r))).collect()
            }
            ConstraintSet::SubspaceAxis { free } => {
                free.iter().map(|&f| if f { (-r, r) } else { (0.0, 0.0) }).collect()
            }
        }
    }
}

/// Shape of one component of the market price of risk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThetaShape {
    Constant,
    Tanh,
    Sine,
}

/// θ_k(v) = level + amplitude · s(scale · v_axis), s ∈ {0, tanh, sin}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaComponent {
    pub shape: ThetaShape,
    pub level: f64,
    pub amplitude: f64,
    pub scale: f64,
    pub axis: usize,
}

impl ThetaComponent {
    pub fn constant(level: f64) -> Self {
        Self { shape: ThetaShape::Constant, level, amplitude: 0.0, scale: 0.0, axis: 0 }
    }

    pub fn tanh(level: f64, amplitude: f64, scale: f64) -> Self {
        Self { shape: ThetaShape::Tanh, level, amplitude, scale, axis: 0 }
    }

    pub fn sine(level: f64, amplitude: f64, scale: f64) -> Self {
        Self { shape: ThetaShape::Sine, level, amplitude, scale, axis: 0 }
    }

    #[inline]
    fn eval(&self, v: &Vector) -> f64 {
        let x = self.scale * v.as_slice()[self.axis];
        match self.shape {
            ThetaShape::Constant => self.level,
            ThetaShape::Tanh => self.level + self.amplitude * x.tanh(),
            ThetaShape::Sine => self.level + self.amplitude * x.sin(),
        }
    }

    fn sup(&self) -> f64 {
        match self.shape {
            ThetaShape::Constant => self.level.abs(),
            _ => self.level.abs() + self.amplitude.abs(),
        }
    }

    fn lipschitz(&self) -> f64 {
        match self.shape {
            ThetaShape::Constant => 0.0,
            _ => (self.amplitude * self.scale).abs(),
        }
    }
}

/// Bounded Lipschitz market price of risk θ^i: ℝ^d → ℝ^d for one regime.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaField {
    pub components: Vec<ThetaComponent>,
}

impl ThetaField {
    pub fn scalar(c: ThetaComponent) -> Self {
        Self { components: vec![c] }
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    #[inline]
    pub fn eval(&self, v: &Vector) -> Vector {
        let mut out = Vector::zeros(self.components.len());
        for (o, c) in out.as_mut_slice().iter_mut().zip(&self.components) {
            *o = c.eval(v);
        }
        out
    }

    pub fn sup_norm(&self) -> f64 {
        self.components.iter().map(|c| c.sup().powi(2)).sum::<f64>().sqrt()
    }

    pub fn lipschitz(&self) -> f64 {
        self.components.iter().map(|c| c.lipschitz().powi(2)).sum::<f64>().sqrt()
    }
}

/// Power-utility forward-performance driver with risk exponent δ ∈ (0,1),
/// market price of risk θ^i and constraint sets Π^i.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPerformanceDriver {
    delta: f64,
    theta: Vec<ThetaField>,
    constraints: Vec<ConstraintSet>,
}

impl ForwardPerformanceDriver {
    pub fn new(delta: f64, theta: Vec<ThetaField>, constraints: Vec<ConstraintSet>) -> Result<Self, ModelError> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(ModelError::InvalidParameter { name: "delta", reason: format!("{delta} not in (0,1)") });
        }
        if theta.is_empty() || theta.len() != constraints.len() {
            return Err(ModelError::InvalidParameter {
                name: "theta/constraints",
                reason: format!("{} theta fields for {} constraint sets", theta.len(), constraints.len()),
            });
        }
        let d = theta[0].dim();
        for (t, c) in theta.iter().zip(&constraints) {
            if t.dim() != d || c.dim() != d {
                return Err(ModelError::DimensionMismatch {
                    what: "theta/constraint",
                    got: t.dim().max(c.dim()),
                    expected: d,
                });
            }
            if t.components.iter().any(|c| c.axis >= d) {
                return Err(ModelError::InvalidParameter { name: "theta axis", reason: "axis out of range".into() });
            }
            if !(t.sup_norm().is_finite() && t.lipschitz().is_finite()) {
                return Err(ModelError::InvalidParameter {
                    name: "theta",
                    reason: "must be bounded and Lipschitz".into(),
                });
            }
        }
        Ok(Self { delta, theta, constraints })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn constraint(&self, regime: usize) -> &ConstraintSet {
        &self.constraints[regime]
    }

    pub fn theta_field(&self, regime: usize) -> &ThetaField {
        &self.theta[regime]
    }

    #[inline]
    pub fn theta(&self, regime: usize, v: &Vector) -> Vector {
        self.theta[regime].eval(v)
    }

    /// Proj_{Π^i}((z + θ^i(v))/(1 − δ)).
    #[inline]
    pub fn optimal_strategy(&self, regime: usize, v: &Vector, z: &Vector) -> Vector {
        let w = (*z + self.theta(regime, v)) * (1.0 / (1.0 - self.delta));
        self.constraints[regime].project(&w)
    }

    /// f^i(v, z; π) = ½δ(δ−1)|π|² + δπᵀθ^i(v) + δπᵀz + ½|z|².
    pub fn eval_controlled(&self, regime: usize, v: &Vector, z: &Vector, pi: &Vector) -> f64 {
        cost_functional(self.delta, &self.theta(regime, v), pi) + self.delta * pi.dot(z) + 0.5 * z.norm_sq()
    }

    /// L^i(v; π) = ½δ(δ−1)|π|² + δπᵀθ^i(v).
    pub fn cost(&self, regime: usize, v: &Vector, pi: &Vector) -> f64 {
        cost_functional(self.delta, &self.theta(regime, v), pi)
    }

    /// Upper bound on |π*| over all regimes, states and |z| ≤ z_bound.
    pub fn strategy_bound(&self, z_bound: f64) -> f64 {
        self.constraints
            .iter()
            .zip(&self.theta)
            .map(|(c, t)| {
                let p0 = c.project(&Vector::zeros(c.dim())).norm();
                c.radius().min(p0 + (z_bound + t.sup_norm()) / (1.0 - self.delta))
            })
            .fold(0.0, f64::max)
    }
}

#[inline]
pub fn cost_functional(delta: f64, theta: &Vector, pi: &Vector) -> f64 {
    0.5 * delta * (delta - 1.0) * pi.norm_sq() + delta * pi.dot(theta)
}

impl Driver for ForwardPerformanceDriver {
    fn name(&self) -> String {
        format!("forward_performance(delta={}, regimes={})", self.delta, self.theta.len())
    }

    fn regimes(&self) -> usize {
        self.theta.len()
    }

    fn dim(&self) -> usize {
        self.theta[0].dim()
    }

    #[inline]
    fn eval(&self, regime: usize, v: &Vector, z: &Vector) -> f64 {
        let d = self.delta;
        let w = *z + self.theta(regime, v);
        let dist_sq = self.constraints[regime].dist_sq(&(w * (1.0 / (1.0 - d))));
        0.5 * d * (d - 1.0) * dist_sq + d / (2.0 * (1.0 - d)) * w.norm_sq() + 0.5 * z.norm_sq()
    }

    /// ∇_z f = δ π* + z (envelope formula).
    #[inline]
    fn grad_z(&self, regime: usize, v: &Vector, z: &Vector) -> Vector {
        self.optimal_strategy(regime, v, z) * self.delta + *z
    }

    #[inline]
    fn eval_with_grad(&self, regime: usize, v: &Vector, z: &Vector) -> (f64, Vector) {
        let d = self.delta;
        let w = *z + self.theta(regime, v);
        let target = w * (1.0 / (1.0 - d));
        let pi = self.constraints[regime].project(&target);
        let f = 0.5 * d * (d - 1.0) * (target - pi).norm_sq() + d / (2.0 * (1.0 - d)) * w.norm_sq() + 0.5 * z.norm_sq();
        (f, pi * d + *z)
    }

    /// With P₀ = |Proj(0)|, Θ = sup|θ| and ℓ = Lip(θ):
    /// C_v = δℓ·max(P₀ + Θ/(1−δ), 1/(1−δ)), C_z = max(δP₀ + δΘ/(1−δ), 1/(1−δ)),
    /// K_f = max(δΘ²/(2(1−δ)), δ(P₀Θ + (1−δ)P₀²/2)), maximized over regimes.
    fn constants(&self) -> DriverConstants {
        let d = self.delta;
        let mut out = DriverConstants { c_v: 0.0, c_z: 0.0, k_f: 0.0 };
        for (t, c) in self.theta.iter().zip(&self.constraints) {
            let p0 = c.project(&Vector::zeros(c.dim())).norm();
            let big_theta = t.sup_norm();
            let lip = t.lipschitz();
            let c_v = d * lip * (p0 + big_theta / (1.0 - d)).max(1.0 / (1.0 - d));
            let c_z = (d * p0 + d * big_theta / (1.0 - d)).max(1.0 / (1.0 - d));
            let k_f =
                (d * big_theta * big_theta / (2.0 * (1.0 - d))).max(d * (p0 * big_theta + 0.5 * (1.0 - d) * p0 * p0));
            out.c_v = out.c_v.max(c_v);
            out.c_z = out.c_z.max(c_z);
            out.k_f = out.k_f.max(k_f);
        }
        out
    }
}

/// f^i ≡ c_i: the ergodic constant is c when all c_i agree.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantDriver {
    values: Vec<f64>,
    dim: usize,
}

impl ConstantDriver {
    pub fn new(values: Vec<f64>, dim: usize) -> Self {
        Self { values, dim }
    }
}

impl Driver for ConstantDriver {
    fn name(&self) -> String {
        format!("constant({:?})", self.values)
    }
    fn regimes(&self) -> usize {
        self.values.len()
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, regime: usize, _v: &Vector, _z: &Vector) -> f64 {
        self.values[regime]
    }
    fn grad_z(&self, _regime: usize, _v: &Vector, z: &Vector) -> Vector {
        Vector::zeros(z.dim())
    }
    fn constants(&self) -> DriverConstants {
        DriverConstants { c_v: 0.0, c_z: 0.0, k_f: self.values.iter().fold(0.0, |m, c| m.max(c.abs())) }
    }
}

pub type DriverFn = Arc<dyn Fn(usize, &Vector, &Vector) -> f64 + Send + Sync>;

/// Driver backed by a closure with declared constants.
#[derive(Clone)]
pub struct FnDriver {
    name: String,
    regimes: usize,
    dim: usize,
    constants: DriverConstants,
    f: DriverFn,
}

impl fmt::Debug for FnDriver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnDriver").field("name", &self.name).field("regimes", &self.regimes).finish()
    }
}

impl FnDriver {
    pub fn new(name: impl Into<String>, regimes: usize, dim: usize, constants: DriverConstants, f: DriverFn) -> Self {
        Self { name: name.into(), regimes, dim, constants, f }
    }
}

impl Driver for FnDriver {
    fn name(&self) -> String {
        self.name.clone()
    }
    fn regimes(&self) -> usize {
        self.regimes
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, regime: usize, v: &Vector, z: &Vector) -> f64 {
        (self.f)(regime, v, z)
    }
    fn constants(&self) -> DriverConstants {
        self.constants
    }
}

/// The two single-regime examples with explicit Markovian solutions
/// (d = 1, η(v) = −v/2, κ = 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClosedFormBenchmark {
    /// f(v, z) = (v/2)e^{−v²/2}; λ = 0.
    Example1,
    /// f(v, z) = (|v|/2)e^{−v²/2}; λ = 1/(2√(2π)).
    Example2,
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

fn gauss_legendre_16() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(16))
}

/// Gauss–Legendre nodes and weights on [−1, 1] by Newton iteration on P_n.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for k in 0..n {
        let mut x = (PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=n {
                let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[k] = x;
        weights[k] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// ∫_a^b g by composite 16-point Gauss–Legendre on panels of width ≤ `panel`.
pub fn integrate(g: impl Fn(f64) -> f64, a: f64, b: f64, panel: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let (nodes, weights) = gauss_legendre_16();
    let panels = ((b - a).abs() / panel).ceil().max(1.0) as usize;
    let width = (b - a) / panels as f64;
    (0..panels)
        .map(|p| {
            let mid = a + (p as f64 + 0.5) * width;
            let half = 0.5 * width;
            nodes.iter().zip(weights).map(|(x, w)| w * g(mid + half * x)).sum::<f64>() * half
        })
        .sum()
}

impl ClosedFormBenchmark {
    pub fn lambda(&self) -> f64 {
        match self {
            ClosedFormBenchmark::Example1 => 0.0,
            ClosedFormBenchmark::Example2 => 1.0 / (2.0 * (2.0 * PI).sqrt()),
        }
    }

    pub fn f(&self, v: f64) -> f64 {
        match self {
            ClosedFormBenchmark::Example1 => 0.5 * v * (-0.5 * v * v).exp(),
            ClosedFormBenchmark::Example2 => 0.5 * v.abs() * (-0.5 * v * v).exp(),
        }
    }

    /// z(v) = y′(v).
    pub fn z(&self, v: f64) -> f64 {
        match self {
            ClosedFormBenchmark::Example1 => 0.5 * (-0.5 * v * v).exp(),
            ClosedFormBenchmark::Example2 => {
                // v ≥ 0: e^{v²/2}[½e^{−v²} + N(v) − 1]; odd in v. The tail
                // e^{v²/2}(1 − N(v)) is evaluated through erfc to avoid cancellation.
                let a = v.abs();
                let tail = 0.5 * (0.5 * a * a).exp() * erfc(a / std::f64::consts::SQRT_2);
                let value = 0.5 * (-0.5 * a * a).exp() - tail;
                if v < 0.0 {
                    -value
                } else {
                    value
                }
            }
        }
    }

    /// z′(v), analytic.
    pub fn z_prime(&self, v: f64) -> f64 {
        match self {
            ClosedFormBenchmark::Example1 => -0.5 * v * (-0.5 * v * v).exp(),
            ClosedFormBenchmark::Example2 => {
                // From the stationary equation: ½z′ − (v/2)z + f − λ = 0.
                2.0 * (self.lambda() - self.f(v)) + v * self.z(v)
            }
        }
    }

    /// y(v) − y(0).
    pub fn y(&self, v: f64) -> f64 {
        match self {
            ClosedFormBenchmark::Example1 => {
                // ½∫_{−∞}^v e^{−u²/2}du = ½√(2π)N(v); minus its value at 0.
                0.25 * (2.0 * PI).sqrt() * erf(v / std::f64::consts::SQRT_2)
            }
            ClosedFormBenchmark::Example2 => {
                let me = *self;
                integrate(move |u| me.z(u), 0.0, v.abs(), 0.125)
            }
        }
    }

    /// (y(v) − y(0), z(v), λ).
    pub fn solution(&self, v: f64) -> (f64, f64, f64) {
        (self.y(v), self.z(v), self.lambda())
    }

    /// The model the closed forms solve: OU factor with rate ½, one regime.
    pub fn model(&self) -> Result<ModelSpec, ModelError> {
        Ok(ModelSpec { factor: FactorModel::ornstein_uhlenbeck(0.5)?, rates: single_regime(), driver: Arc::new(*self) })
    }
}

pub fn single_regime() -> RateMatrix {
    validate_rate_matrix(vec![vec![0.0]]).expect("valid")
}

impl Driver for ClosedFormBenchmark {
    fn name(&self) -> String {
        format!("{self:?}").to_lowercase()
    }
    fn regimes(&self) -> usize {
        1
    }
    fn dim(&self) -> usize {
        1
    }
    fn eval(&self, _regime: usize, v: &Vector, _z: &Vector) -> f64 {
        self.f(v.x())
    }
    fn grad_z(&self, _regime: usize, _v: &Vector, z: &Vector) -> Vector {
        Vector::zeros(z.dim())
    }
    /// |f′| ≤ ½ (attained at 0), f independent of z, sup|f| = e^{−1/2}/2.
    fn constants(&self) -> DriverConstants {
        DriverConstants { c_v: 0.5, c_z: 0.0, k_f: 0.5 * (-0.5f64).exp() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_driver, SampleConfig};

    fn v1(x: f64) -> Vector {
        Vector::scalar(x)
    }

    fn fp(constraint: ConstraintSet) -> ForwardPerformanceDriver {
        ForwardPerformanceDriver::new(0.5, vec![ThetaField::scalar(ThetaComponent::constant(0.4))], vec![constraint])
            .unwrap()
    }

    #[test]
    fn projections() {
        let full = ConstraintSet::FullSpace { dim: 2 };
        let x = Vector::from_slice(&[3.0, -2.0]);
        assert_eq!(full.project(&x), x);
        assert_eq!(ConstraintSet::interval(0.0, 1.0).unwrap().project(&v1(3.0)).x(), 1.0);
        let sub = ConstraintSet::SubspaceAxis { free: vec![true, false] };
        assert_eq!(sub.project(&Vector::from_slice(&[2.0, 5.0])).as_slice(), &[2.0, 0.0]);
        assert!(ConstraintSet::interval(1.0, 0.0).is_err());
    }

    #[test]
    fn fp_driver_examples() {
        let full = fp(ConstraintSet::FullSpace { dim: 1 });
        assert!((full.eval(0, &v1(0.0), &v1(0.0)) - 0.08).abs() < 1e-15);
        // z = −θ: only the ½|z|² term survives when 0 ∈ Π.
        assert!((full.eval(0, &v1(1.0), &v1(-0.4)) - 0.08).abs() < 1e-15);
        // Forced zero strategy: the three terms are −0.08, 0.08 and 0.
        let zero = fp(ConstraintSet::interval(0.0, 0.0).unwrap());
        let d: f64 = 0.5;
        let term1 = 0.5 * d * (d - 1.0) * (0.4 / 0.5f64).powi(2);
        let term2 = d / (2.0 * (1.0 - d)) * 0.16;
        assert!((term1 + 0.08).abs() < 1e-15 && (term2 - 0.08).abs() < 1e-15);
        assert!(zero.eval(0, &v1(0.0), &v1(0.0)).abs() < 1e-15);
    }

    #[test]
    fn optimal_strategy_examples() {
        let full = fp(ConstraintSet::FullSpace { dim: 1 });
        assert!((full.optimal_strategy(0, &v1(0.0), &v1(0.0)).x() - 0.8).abs() < 1e-15);
        let capped = fp(ConstraintSet::interval(0.0, 0.5).unwrap());
        assert_eq!(capped.optimal_strategy(0, &v1(0.0), &v1(0.0)).x(), 0.5);
    }

    #[test]
    fn controlled_driver_identities() {
        let full = fp(ConstraintSet::FullSpace { dim: 1 });
        let (v, z) = (v1(0.3), v1(-0.2));
        assert!((full.eval_controlled(0, &v, &z, &v1(0.0)) - 0.02).abs() < 1e-15);
        let pi = full.optimal_strategy(0, &v, &z);
        assert!((full.eval_controlled(0, &v, &z, &pi) - full.eval(0, &v, &z)).abs() < 1e-12);
    }

    #[test]
    fn cost_functional_examples() {
        let th = v1(0.4);
        assert_eq!(cost_functional(0.5, &th, &v1(0.0)), 0.0);
        assert!((cost_functional(0.5, &th, &v1(0.8)) - 0.08).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let drv = ForwardPerformanceDriver::new(
            0.5,
            vec![ThetaField::scalar(ThetaComponent::tanh(0.4, 0.1, 1.0))],
            vec![ConstraintSet::interval(-0.2, 0.9).unwrap()],
        )
        .unwrap();
        for &(v, z) in &[(0.1, 0.05), (-1.0, 0.3), (2.0, -0.7)] {
            let analytic = drv.grad_z(0, &v1(v), &v1(z)).x();
            let h = 1e-6;
            let fd = (drv.eval(0, &v1(v), &v1(z + h)) - drv.eval(0, &v1(v), &v1(z - h))) / (2.0 * h);
            assert!((analytic - fd).abs() < 1e-7, "{analytic} vs {fd}");
        }
    }

    #[test]
    fn fp_constants_pass_sampled_validation() {
        let drv = ForwardPerformanceDriver::new(
            0.5,
            vec![
                ThetaField::scalar(ThetaComponent::tanh(0.4, 0.1, 1.0)),
                ThetaField::scalar(ThetaComponent::sine(0.1, 0.1, 1.0)),
            ],
            vec![ConstraintSet::interval(0.0, 1.5).unwrap(), ConstraintSet::interval(-0.2, 0.35).unwrap()],
        )
        .unwrap();
        validate_driver(&drv, &SampleConfig::default()).unwrap();
        let two_d = ForwardPerformanceDriver::new(
            0.3,
            vec![ThetaField {
                components: vec![
                    ThetaComponent::tanh(0.2, 0.1, 1.0),
                    ThetaComponent { axis: 1, ..ThetaComponent::sine(0.0, 0.2, 0.5) },
                ],
            }],
            vec![ConstraintSet::SubspaceAxis { free: vec![true, false] }],
        )
        .unwrap();
        validate_driver(&two_d, &SampleConfig::default()).unwrap();
    }

    #[test]
    fn understated_constants_are_rejected() {
        let drv = FnDriver::new(
            "quadratic",
            1,
            1,
            DriverConstants { c_v: 0.0, c_z: 0.1, k_f: 0.0 },
            Arc::new(|_, _, z: &Vector| z.norm_sq()),
        );
        assert!(validate_driver(&drv, &SampleConfig::default()).is_err());
    }

    #[test]
    fn benchmark_values() {
        let (_, z, lambda) = ClosedFormBenchmark::Example1.solution(0.0);
        assert_eq!(z, 0.5);
        assert_eq!(lambda, 0.0);
        let l2 = ClosedFormBenchmark::Example2.lambda();
        assert!((l2 - 0.1994711402).abs() < 1e-10);
        assert_eq!(ClosedFormBenchmark::Example1.y(0.0), 0.0);
        assert_eq!(ClosedFormBenchmark::Example2.y(0.0), 0.0);
    }

    #[test]
    fn example2_branches_match_written_formula() {
        // Both branches evaluated literally with N(v), away from the tails.
        let b = ClosedFormBenchmark::Example2;
        for v in [-2.0f64, -0.7, -0.01, 0.0, 0.01, 0.5, 1.5] {
            let literal = if v >= 0.0 {
                (0.5 * v * v).exp() * (0.5 * (-v * v).exp() + normal_cdf(v) - 1.0)
            } else {
                (0.5 * v * v).exp() * (-0.5 * (-v * v).exp() + normal_cdf(v))
            };
            assert!((b.z(v) - literal).abs() < 1e-12, "v={v}: {} vs {literal}", b.z(v));
        }
    }

    #[test]
    fn benchmark_stationary_residuals() {
        // −y′(v)(v/2) + ½y″(v) + f(v) − λ with analytic derivatives.
        for b in [ClosedFormBenchmark::Example1, ClosedFormBenchmark::Example2] {
            for k in 0..=800 {
                let v = -4.0 + 0.01 * k as f64;
                let r = -b.z(v) * v / 2.0 + 0.5 * b.z_prime(v) + b.f(v) - b.lambda();
                assert!(r.abs() < 1e-10, "{b:?} v={v} residual {r}");
            }
        }
    }

    #[test]
    fn example1_residual_independent_of_stationary_identity() {
        // z′ written out by hand rather than via the equation.
        let b = ClosedFormBenchmark::Example1;
        for k in 0..=80 {
            let v = -4.0 + 0.1 * k as f64;
            let zp = -0.5 * v * (-0.5 * v * v).exp();
            let r = -b.z(v) * v / 2.0 + 0.5 * zp + b.f(v);
            assert!(r.abs() < 1e-15);
        }
    }

    #[test]
    fn example2_z_prime_against_differentiated_formula() {
        // For v ≥ 0: z′ = v z + e^{v²/2}(−v e^{−v²} + φ(v)); mirrored for v < 0.
        let b = ClosedFormBenchmark::Example2;
        for k in 0..=60 {
            let v = -3.0 + 0.1 * k as f64;
            let e = (0.5 * v * v).exp();
            let manual = if v >= 0.0 {
                v * b.z(v) + e * (-v * (-v * v).exp() + normal_pdf(v))
            } else {
                v * b.z(v) + e * (v * (-v * v).exp() + normal_pdf(v))
            };
            assert!((b.z_prime(v) - manual).abs() < 1e-12, "v={v}");
        }
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        assert!((integrate(|x| x.powi(7) - 3.0 * x * x, -1.0, 2.0, 0.5) - (255.0 / 8.0 - 9.0)).abs() < 1e-12);
        assert!((integrate(f64::exp, 0.0, 1.0, 0.25) - (1f64.exp() - 1.0)).abs() < 1e-14);
    }
}
