//! Model data: regime rates, the dissipative factor, the a priori constants
//! of the discounted system, and executable versions of the structural
//! assumptions (checked on quasi-random samples).

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::drivers::Driver;
use crate::vector::{Matrix, Vector};

/// Absolute tolerance for exact linear constraints (row sums, |κ| = 1).
pub const LINEAR_TOL: f64 = 1e-12;
/// Slack granted to sampled nonlinear inequalities.
pub const SAMPLED_SLACK: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("rate matrix is empty")]
    EmptyRates,
    #[error("rate matrix row {row} has {len} entries, expected {expected}")]
    RaggedRates { row: usize, len: usize, expected: usize },
    #[error("rate matrix entry ({row}, {col}) is not finite")]
    NonFiniteRate { row: usize, col: usize },
    #[error("rate matrix row {row} sums to {sum:e}, not zero")]
    RowSumViolation { row: usize, sum: f64 },
    #[error("off-diagonal rate ({row}, {col}) = {value} is negative")]
    NegativeOffDiagonal { row: usize, col: usize, value: f64 },
    #[error("dissipativity constant {c_eta} does not exceed the driver's v-Lipschitz constant {c_v}")]
    DegenerateDissipativity { c_eta: f64, c_v: f64 },
    #[error("the bound K_y = K_f/rho needs rho > 0")]
    ZeroDiscount,
    #[error("the regime-difference bound needs q_min > 0 and at least two regimes")]
    NotIrreducible,
    #[error("volatility matrix norm is {norm}, expected 1")]
    KappaNotNormalized { norm: f64 },
    #[error("volatility matrix is not positive definite")]
    KappaNotPositiveDefinite,
    #[error("factor dimension {0} is not supported (expected 1 or 2)")]
    UnsupportedDimension(usize),
    #[error("dimension mismatch: {what} has dimension {got}, expected {expected}")]
    DimensionMismatch { what: &'static str, got: usize, expected: usize },
    #[error("regime count mismatch: driver has {driver}, rates have {rates}")]
    RegimeMismatch { driver: usize, rates: usize },
    #[error("dissipativity fails at sample {index}: excess {excess:e}")]
    DissipativityViolated { index: usize, excess: f64 },
    #[error("driver assumption {which} fails in regime {regime} at sample {index}: excess {excess:e}")]
    DriverAssumptionViolated { which: DriverAssumption, regime: usize, index: usize, excess: f64 },
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
}

/// Which of the three driver inequalities a sample violated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriverAssumption {
    LipschitzV,
    LipschitzZ,
    BoundAtZero,
}

impl fmt::Display for DriverAssumption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DriverAssumption::LipschitzV => "lipschitz-v",
            DriverAssumption::LipschitzZ => "lipschitz-z",
            DriverAssumption::BoundAtZero => "bound-at-zero",
        })
    }
}

/// Transition-rate matrix of the regime chain.
#[derive(Debug, Clone, PartialEq)]
pub struct RateMatrix {
    q: Vec<Vec<f64>>,
    q_min: f64,
    q_max: f64,
}

/// Checks row sums and signs and computes q_min / q_max.
///
/// For a single regime `q_min` is `+∞` and the chain is reported as not
/// irreducible, so bounds that need `q_min > 0` are marked inapplicable.
pub fn validate_rate_matrix(q: Vec<Vec<f64>>) -> Result<RateMatrix, ModelError> {
    let m0 = q.len();
    if m0 == 0 {
        return Err(ModelError::EmptyRates);
    }
    for (i, row) in q.iter().enumerate() {
        if row.len() != m0 {
            return Err(ModelError::RaggedRates { row: i, len: row.len(), expected: m0 });
        }
        if let Some(col) = row.iter().position(|x| !x.is_finite()) {
            return Err(ModelError::NonFiniteRate { row: i, col });
        }
    }
    for (i, row) in q.iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if sum.abs() > LINEAR_TOL {
            return Err(ModelError::RowSumViolation { row: i, sum });
        }
        for (k, &value) in row.iter().enumerate() {
            if k != i && value < 0.0 {
                return Err(ModelError::NegativeOffDiagonal { row: i, col: k, value });
            }
        }
    }
    let mut q_min = f64::INFINITY;
    let mut q_max = f64::NEG_INFINITY;
    for (i, row) in q.iter().enumerate() {
        for (k, &value) in row.iter().enumerate() {
            q_max = q_max.max(value);
            if k != i {
                q_min = q_min.min(value);
            }
        }
    }
    Ok(RateMatrix { q, q_min, q_max })
}

impl RateMatrix {
    pub fn m0(&self) -> usize {
        self.q.len()
    }

    #[inline]
    pub fn rate(&self, i: usize, k: usize) -> f64 {
        self.q[i][k]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.q
    }

    /// Smallest off-diagonal rate; `+∞` for a single regime.
    pub fn q_min(&self) -> f64 {
        self.q_min
    }

    pub fn q_max(&self) -> f64 {
        self.q_max
    }

    /// Every off-diagonal rate strictly positive (and at least two regimes).
    pub fn is_irreducible(&self) -> bool {
        self.m0() > 1 && self.q_min > 0.0
    }

    /// Total jump intensity −q^{ii} out of regime `i`.
    #[inline]
    pub fn exit_rate(&self, i: usize) -> f64 {
        -self.q[i][i]
    }

    /// Transition probabilities exp(Q t).
    pub fn transition_probabilities(&self, t: f64) -> Vec<Vec<f64>> {
        let m0 = self.m0();
        let q = DMatrix::from_fn(m0, m0, |i, k| self.q[i][k] * t);
        let p = q.exp();
        (0..m0).map(|i| (0..m0).map(|k| p[(i, k)]).collect()).collect()
    }

    /// Relabels regimes: new regime `a` is old regime `perm[a]`.
    pub fn permuted(&self, perm: &[usize]) -> RateMatrix {
        let q = perm.iter().map(|&i| perm.iter().map(|&k| self.q[i][k]).collect()).collect();
        validate_rate_matrix(q).expect("permutation preserves validity")
    }
}

/// Drift η of the factor process dV = η(V)dt + κ dW.
#[derive(Clone)]
pub enum Drift {
    /// η(v) = −A (v − μ).
    Linear { matrix: Matrix, mean: Vector },
    /// Arbitrary drift with a user-declared dissipativity constant.
    Custom { label: String, f: Arc<dyn Fn(&Vector) -> Vector + Send + Sync> },
}

impl fmt::Debug for Drift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Drift::Linear { matrix, mean } => {
                f.debug_struct("Linear").field("matrix", matrix).field("mean", mean).finish()
            }
            Drift::Custom { label, .. } => f.debug_struct("Custom").field("label", label).finish(),
        }
    }
}

impl Drift {
    #[inline]
    pub fn eval(&self, v: &Vector) -> Vector {
        match self {
            Drift::Linear { matrix, mean } => -matrix.mul_vec(&(*v - *mean)),
            Drift::Custom { f, .. } => f(v),
        }
    }
}

/// Quasi-random sampling used by the assumption validators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleConfig {
    pub count: usize,
    /// Half-width of the box [−w, w]^d the state samples are drawn from.
    pub v_half_width: f64,
    /// Half-width of the box the gradient samples are drawn from.
    pub z_half_width: f64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self { count: 10_000, v_half_width: 8.0, z_half_width: 3.0 }
    }
}

const HALTON_BASES: [u64; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

/// Radical inverse of `index` in `base` (the Halton coordinate).
pub fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut scale = inv;
    let mut out = 0.0;
    while index > 0 {
        out += (index % base) as f64 * scale;
        index /= base;
        scale *= inv;
    }
    out
}

/// Point `index` of the Halton sequence in [0,1)^dims (dims ≤ 8).
pub fn halton_point(index: usize, dims: usize) -> Vec<f64> {
    HALTON_BASES[..dims].iter().map(|&b| radical_inverse(index as u64 + 1, b)).collect()
}

fn to_box(u: &[f64], half_width: f64) -> Vector {
    Vector::from_slice(&u.iter().map(|x| (2.0 * x - 1.0) * half_width).collect::<Vec<_>>())
}

/// The dissipative factor: drift, normalized volatility and C_η.
#[derive(Debug, Clone)]
pub struct FactorModel {
    drift: Drift,
    kappa: Matrix,
    c_eta: f64,
}

impl FactorModel {
    /// Validates |κ| = 1 (Frobenius), κ positive definite, C_η > 0, and the
    /// dissipativity inequality on a quasi-random sample of pairs.
    pub fn new(drift: Drift, kappa: Matrix, c_eta: f64, sample: &SampleConfig) -> Result<Self, ModelError> {
        let d = kappa.dim();
        if !(1..=2).contains(&d) {
            return Err(ModelError::UnsupportedDimension(d));
        }
        let norm = kappa.frobenius_norm();
        if (norm - 1.0).abs() > LINEAR_TOL {
            return Err(ModelError::KappaNotNormalized { norm });
        }
        if kappa.min_symmetric_eigenvalue() <= 0.0 {
            return Err(ModelError::KappaNotPositiveDefinite);
        }
        if let Drift::Linear { matrix, mean } = &drift {
            if matrix.dim() != d {
                return Err(ModelError::DimensionMismatch { what: "drift matrix", got: matrix.dim(), expected: d });
            }
            if mean.dim() != d {
                return Err(ModelError::DimensionMismatch { what: "drift mean", got: mean.dim(), expected: d });
            }
        }
        if !(c_eta > 0.0 && c_eta.is_finite()) {
            return Err(ModelError::InvalidParameter { name: "c_eta", reason: format!("{c_eta} must be positive") });
        }
        let model = Self { drift, kappa, c_eta };
        model.check_dissipativity(sample)?;
        Ok(model)
    }

    /// η(v) = −a·v with κ = 1 in one dimension; C_η = a.
    pub fn ornstein_uhlenbeck(rate: f64) -> Result<Self, ModelError> {
        Self::linear(Matrix::scalar(rate), Vector::scalar(0.0), Matrix::scalar(1.0))
    }

    /// η(v) = −A(v − μ); C_η is the smallest eigenvalue of sym(A).
    pub fn linear(matrix: Matrix, mean: Vector, kappa: Matrix) -> Result<Self, ModelError> {
        let c_eta = matrix.min_symmetric_eigenvalue();
        Self::new(Drift::Linear { matrix, mean }, kappa, c_eta, &SampleConfig::default())
    }

    pub fn dim(&self) -> usize {
        self.kappa.dim()
    }

    pub fn drift(&self) -> &Drift {
        &self.drift
    }

    #[inline]
    pub fn eta(&self, v: &Vector) -> Vector {
        self.drift.eval(v)
    }

    pub fn kappa(&self) -> &Matrix {
        &self.kappa
    }

    pub fn c_eta(&self) -> f64 {
        self.c_eta
    }

    fn check_dissipativity(&self, sample: &SampleConfig) -> Result<(), ModelError> {
        let d = self.dim();
        for n in 0..sample.count {
            let u = halton_point(n, 2 * d);
            let v = to_box(&u[..d], sample.v_half_width);
            let w = to_box(&u[d..], sample.v_half_width);
            let diff = v - w;
            let lhs = (self.eta(&v) - self.eta(&w)).dot(&diff);
            let excess = lhs + self.c_eta * diff.norm_sq();
            if excess > SAMPLED_SLACK {
                return Err(ModelError::DissipativityViolated { index: n, excess });
            }
        }
        Ok(())
    }
}

/// Constants (C_v, C_z, K_f) of the driver growth/regularity assumptions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriverConstants {
    pub c_v: f64,
    pub c_z: f64,
    pub k_f: f64,
}

/// Samples the three driver inequalities for every regime.
pub fn validate_driver(driver: &dyn Driver, sample: &SampleConfig) -> Result<(), ModelError> {
    let d = driver.dim();
    let DriverConstants { c_v, c_z, k_f } = driver.constants();
    for regime in 0..driver.regimes() {
        for n in 0..sample.count {
            let u = halton_point(n, 4 * d);
            let v = to_box(&u[..d], sample.v_half_width);
            let w = to_box(&u[d..2 * d], sample.v_half_width);
            let z = to_box(&u[2 * d..3 * d], sample.z_half_width);
            let zb = to_box(&u[3 * d..], sample.z_half_width);

            let lhs = (driver.eval(regime, &v, &z) - driver.eval(regime, &w, &z)).abs();
            let excess = lhs - c_v * (1.0 + z.norm()) * (v - w).norm();
            if excess > SAMPLED_SLACK {
                return Err(ModelError::DriverAssumptionViolated {
                    which: DriverAssumption::LipschitzV,
                    regime,
                    index: n,
                    excess,
                });
            }
            let lhs = (driver.eval(regime, &v, &z) - driver.eval(regime, &v, &zb)).abs();
            let excess = lhs - c_z * (1.0 + z.norm() + zb.norm()) * (z - zb).norm();
            if excess > SAMPLED_SLACK {
                return Err(ModelError::DriverAssumptionViolated {
                    which: DriverAssumption::LipschitzZ,
                    regime,
                    index: n,
                    excess,
                });
            }
            let excess = driver.eval(regime, &v, &Vector::zeros(d)).abs() - k_f;
            if excess > SAMPLED_SLACK {
                return Err(ModelError::DriverAssumptionViolated {
                    which: DriverAssumption::BoundAtZero,
                    regime,
                    index: n,
                    excess,
                });
            }
        }
    }
    Ok(())
}

/// A priori bounds of the discounted system and the regime-difference bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AprioriConstants {
    pub rho: f64,
    /// K_f/ρ; `None` when ρ = 0.
    pub k_y: Option<f64>,
    /// C_v/(C_η − C_v).
    pub k_z: f64,
    /// (1/q_min)(K_f + C_v C_η C_z/(C_η − C_v)²); `None` without irreducibility.
    pub k_diff: Option<f64>,
}

impl AprioriConstants {
    pub fn k_y(&self) -> Result<f64, ModelError> {
        self.k_y.ok_or(ModelError::ZeroDiscount)
    }

    pub fn k_diff(&self) -> Result<f64, ModelError> {
        self.k_diff.ok_or(ModelError::NotIrreducible)
    }
}

pub fn apriori_constants(
    constants: &DriverConstants,
    c_eta: f64,
    rates: &RateMatrix,
    rho: f64,
) -> Result<AprioriConstants, ModelError> {
    let DriverConstants { c_v, c_z, k_f } = *constants;
    if !(rho >= 0.0 && rho.is_finite()) {
        return Err(ModelError::InvalidParameter { name: "rho", reason: format!("{rho} must be finite and >= 0") });
    }
    if c_eta <= c_v {
        return Err(ModelError::DegenerateDissipativity { c_eta, c_v });
    }
    let gap = c_eta - c_v;
    let k_y = (rho > 0.0).then(|| k_f / rho);
    let k_z = c_v / gap;
    let k_diff = rates.is_irreducible().then(|| (k_f + c_v * c_eta * c_z / (gap * gap)) / rates.q_min());
    Ok(AprioriConstants { rho, k_y, k_z, k_diff })
}

/// p(y) = max{−K_y, min{y, K_y}}.
#[inline]
pub fn truncate_scalar(y: f64, k_y: f64) -> f64 {
    y.clamp(-k_y, k_y)
}

/// q(z) = z·min{|z|, K_z}/|z|, with q(0) = 0.
#[inline]
pub fn truncate_vector(z: &Vector, k_z: f64) -> Vector {
    let norm = z.norm();
    if norm == 0.0 || norm <= k_z {
        *z
    } else {
        *z * (k_z / norm)
    }
}

/// Factor, regime chain and driver family, cross-validated.
#[derive(Clone)]
pub struct ModelSpec {
    pub factor: FactorModel,
    pub rates: RateMatrix,
    pub driver: Arc<dyn Driver>,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("factor", &self.factor)
            .field("rates", &self.rates)
            .field("driver", &self.driver.name())
            .finish()
    }
}

/// Bounds the solvers rely on, with infinities where a bound is inapplicable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeBounds {
    pub constants: DriverConstants,
    pub k_z: f64,
    pub k_diff: f64,
}

impl ModelSpec {
    /// Checks dimensions and regime counts, then samples the driver inequalities.
    pub fn new(factor: FactorModel, rates: RateMatrix, driver: Arc<dyn Driver>) -> Result<Self, ModelError> {
        Self::with_sampling(factor, rates, driver, &SampleConfig::default())
    }

    pub fn with_sampling(
        factor: FactorModel,
        rates: RateMatrix,
        driver: Arc<dyn Driver>,
        sample: &SampleConfig,
    ) -> Result<Self, ModelError> {
        if driver.regimes() != rates.m0() {
            return Err(ModelError::RegimeMismatch { driver: driver.regimes(), rates: rates.m0() });
        }
        if driver.dim() != factor.dim() {
            return Err(ModelError::DimensionMismatch { what: "driver", got: driver.dim(), expected: factor.dim() });
        }
        validate_driver(driver.as_ref(), sample)?;
        Ok(Self { factor, rates, driver })
    }

    pub fn m0(&self) -> usize {
        self.rates.m0()
    }

    /// Strict a priori constants; fails unless C_η > C_v.
    pub fn apriori(&self, rho: f64) -> Result<AprioriConstants, ModelError> {
        apriori_constants(&self.driver.constants(), self.factor.c_eta(), &self.rates, rho)
    }

    /// Lenient version for the solvers: K_z = ∞ when C_η ≤ C_v, K_diff = ∞
    /// when the chain is not irreducible.
    pub fn scheme_bounds(&self) -> SchemeBounds {
        let constants = self.driver.constants();
        match self.apriori(0.0) {
            Ok(a) => SchemeBounds { constants, k_z: a.k_z, k_diff: a.k_diff.unwrap_or(f64::INFINITY) },
            Err(_) => SchemeBounds { constants, k_z: f64::INFINITY, k_diff: f64::INFINITY },
        }
    }
}
