//! Slow, independent reference computations: closed forms, finite
//! differences, grid searches and ODE quadrature. Nothing here calls into
//! the solvers.

use serde::Serialize;
use sha2::{Digest, Sha256};
use statrs::function::erf::{erf, erfc};

use crate::drivers::ConstraintSet;
use crate::vector::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMethod {
    ClosedForm,
    GridSearch,
    FiniteDifference,
    OdeQuadrature,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub name: String,
    pub inputs_digest: String,
    pub reference: Vec<f64>,
    pub method: OracleMethod,
    pub tolerance: f64,
}

impl OracleReport {
    pub fn new(
        name: impl Into<String>,
        inputs: &impl Serialize,
        reference: Vec<f64>,
        method: OracleMethod,
        tolerance: f64,
    ) -> Self {
        let bytes = serde_json::to_vec(inputs).expect("oracle inputs serialize");
        Self { name: name.into(), inputs_digest: hex::encode(Sha256::digest(&bytes)), reference, method, tolerance }
    }

    /// Largest |computed − reference|.
    pub fn max_error(&self, computed: &[f64]) -> f64 {
        assert_eq!(computed.len(), self.reference.len(), "oracle length mismatch");
        computed.iter().zip(&self.reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn accepts(&self, computed: &[f64]) -> bool {
        self.max_error(computed) <= self.tolerance
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdCheck {
    pub errors: Vec<f64>,
    pub max_error: f64,
    pub worst_node: usize,
}

impl FdCheck {
    /// Max error over nodes farther than `radius` nodes from `node`.
    pub fn max_error_excluding(&self, node: usize, radius: usize) -> f64 {
        self.errors.iter().enumerate().filter(|(j, _)| j.abs_diff(node) > radius).map(|(_, e)| *e).fold(0.0, f64::max)
    }
}

/// Node-wise |κ D y − z| with the second-order stencil: central inside,
/// three-point one-sided at the ends.
pub fn fd_gradient_check(y: &[f64], h: f64, kappa: f64, analytic_z: &[f64]) -> FdCheck {
    let n = y.len();
    assert!(n >= 3 && analytic_z.len() == n, "grids must be aligned");
    let mut errors = Vec::with_capacity(n);
    for j in 0..n {
        let d = if j == 0 {
            (-3.0 * y[0] + 4.0 * y[1] - y[2]) / (2.0 * h)
        } else if j == n - 1 {
            (3.0 * y[n - 1] - 4.0 * y[n - 2] + y[n - 3]) / (2.0 * h)
        } else {
            (y[j + 1] - y[j - 1]) / (2.0 * h)
        };
        errors.push((kappa * d - analytic_z[j]).abs());
    }
    let (worst_node, max_error) =
        errors.iter().copied().enumerate().fold((0, 0.0), |acc, (j, e)| if e > acc.1 { (j, e) } else { acc });
    FdCheck { errors, max_error, worst_node }
}

/// Dense-grid maximiser of `payoff` over the set intersected with [−5, 5]^d.
pub fn sup_search(payoff: impl Fn(&Vector) -> f64, set: &ConstraintSet, resolution: f64) -> (Vector, f64) {
    assert!(resolution > 0.0);
    let axes: Vec<Vec<f64>> = set
        .clipped_ranges(5.0)
        .into_iter()
        .map(|(lo, hi)| {
            let count = ((hi - lo) / resolution).ceil() as usize;
            let mut pts: Vec<f64> = (0..count).map(|k| lo + k as f64 * resolution).collect();
            pts.push(hi);
            pts
        })
        .collect();
    let mut best = (Vector::zeros(axes.len()), f64::NEG_INFINITY);
    let mut visit = |p: Vector| {
        let value = payoff(&p);
        if value > best.1 {
            best = (p, value);
        }
    };
    match axes.as_slice() {
        [a] => a.iter().for_each(|&x| visit(Vector::scalar(x))),
        [a, b] => {
            for &x in a {
                for &y in b {
                    visit(Vector::from_slice(&[x, y]));
                }
            }
        }
        _ => panic!("sup_search supports dimension 1 or 2"),
    }
    best
}

/// (K_f/ρ)(1 − e^{−ρ(m−t)}), solution of Ȳ_t = ∫_t^m (K_f − ρȲ_s) ds.
pub fn discounted_ode_bound(k_f: f64, rho: f64, m: f64, t: f64) -> f64 {
    assert!(0.0 <= t && t <= m);
    k_f / rho * (1.0 - (-rho * (m - t)).exp())
}

/// RK4 integration of the same ODE backwards from Ȳ_m = 0.
pub fn discounted_ode_rk4(k_f: f64, rho: f64, m: f64, t: f64, steps: usize) -> f64 {
    let h = (m - t) / steps as f64;
    let rhs = |y: f64| k_f - rho * y;
    let mut y = 0.0;
    for _ in 0..steps {
        let k1 = rhs(y);
        let k2 = rhs(y + 0.5 * h * k1);
        let k3 = rhs(y + 0.5 * h * k2);
        let k4 = rhs(y + h * k3);
        y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    y
}

/// Adaptive Simpson quadrature.
pub fn adaptive_simpson(g: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn step(
        g: &impl Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (g(lm), g(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            left + right + (left + right - whole) / 15.0
        } else {
            step(g, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                + step(g, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    if a == b {
        return 0.0;
    }
    let (fa, fb, fm) = (g(a), g(b), g(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(g, a, b, fa, fm, fb, whole, tol, 40)
}

/// Closed-form y, z and λ of the two single-regime benchmarks with
/// η(v) = −v/2, κ = 1.
pub mod benchmarks {
    use super::*;

    pub fn example1_lambda() -> f64 {
        0.0
    }

    pub fn example1_z(v: f64) -> f64 {
        0.5 * (-0.5 * v * v).exp()
    }

    pub fn example1_y(v: f64) -> f64 {
        (2.0 * std::f64::consts::PI).sqrt() / 4.0 * erf(v / std::f64::consts::SQRT_2)
    }

    pub fn example2_lambda() -> f64 {
        1.0 / (2.0 * (2.0 * std::f64::consts::PI).sqrt())
    }

    pub fn example2_z(v: f64) -> f64 {
        let a = v.abs();
        let value = 0.5 * (-0.5 * a * a).exp() - 0.5 * (0.5 * a * a).exp() * erfc(a / std::f64::consts::SQRT_2);
        if v < 0.0 {
            -value
        } else {
            value
        }
    }

    pub fn example2_y(v: f64) -> f64 {
        adaptive_simpson(&|s| example2_z(s), 0.0, v.abs(), 1e-14)
    }
}

/// Long-run growth with constant θ, unconstrained strategies and no
/// regime switching: δθ²/(2(1−δ)).
pub fn merton_growth_rate(delta: f64, theta: f64) -> f64 {
    delta * theta * theta / (2.0 * (1.0 - delta))
}

/// Expected fraction of [0, T] spent in state 0 for a two-state chain with
/// rates a = q01, b = q10 started in `i0`.
pub fn two_state_occupation(a: f64, b: f64, i0: usize, t: f64) -> f64 {
    let s = a + b;
    let stationary = b / s;
    let start = if i0 == 0 { 1.0 } else { 0.0 };
    stationary + (start - stationary) * (1.0 - (-s * t).exp()) / (s * t)
}

/// Mean and variance of dV = −aV dt + dW at time t from v0.
pub fn ou_moments(a: f64, v0: f64, t: f64) -> (f64, f64) {
    (v0 * (-a * t).exp(), (1.0 - (-2.0 * a * t).exp()) / (2.0 * a))
}
