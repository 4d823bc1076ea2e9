//! Experiment configuration: one JSON document, validated into solver types
//! with field-path errors.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::drivers::{
    ClosedFormBenchmark, ConstantDriver, ConstraintSet, Driver, ForwardPerformanceDriver, ThetaComponent, ThetaField,
    ThetaShape,
};
use crate::ergodic::ErgodicConfig;
use crate::market::{BiasBudget, MarketSpec, Strategy};
use crate::model::{validate_rate_matrix, FactorModel, ModelError, ModelSpec};
use crate::pde::{Grid1D, SchemeConfig};
use crate::vector::{Matrix, Vector};

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{path}: {message}")]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self { path: path.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub model: ModelBlock,
    pub grid: GridBlock,
    #[serde(default)]
    pub scheme: SchemeConfig,
    #[serde(default)]
    pub ergodic: ErgodicConfig,
    #[serde(default)]
    pub large_time: LargeTimeBlock,
    #[serde(default)]
    pub mc: Option<McBlock>,
    #[serde(default)]
    pub comparison: ComparisonBlock,
    #[serde(default)]
    pub outputs: OutputsBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub factor: FactorBlock,
    pub rates: Vec<Vec<f64>>,
    pub driver: DriverBlock,
}

/// One-dimensional factor with κ = 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FactorBlock {
    /// η(v) = −rate·v.
    OrnsteinUhlenbeck { rate: f64 },
    /// η(v) = −rate·(v − mean).
    Linear { rate: f64, mean: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkName {
    Example1,
    Example2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriverBlock {
    Benchmark { example: BenchmarkName },
    Constant { values: Vec<f64> },
    ForwardPerformance { delta: f64, theta: Vec<Vec<ThetaBlock>>, constraints: Vec<ConstraintBlock> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeName {
    Constant,
    Tanh,
    Sine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaBlock {
    pub shape: ShapeName,
    pub level: f64,
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

/// Missing interval bounds are infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConstraintBlock {
    FullSpace,
    Interval {
        #[serde(default)]
        lower: Option<f64>,
        #[serde(default)]
        upper: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub v_min: f64,
    pub v_max: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialCondition {
    /// h ≡ 0.
    Zero,
    /// h = the ergodic profile.
    Ergodic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LargeTimeBlock {
    pub times: Vec<f64>,
    pub initial: InitialCondition,
    pub noise_floor: f64,
    /// Horizons of the long-time slope estimate of λ.
    pub slope_horizons: [f64; 2],
    /// Solve the ergodic problem when no ergodic input file is given.
    pub inline_ergodic: bool,
}

impl Default for LargeTimeBlock {
    fn default() -> Self {
        Self {
            times: (4..=20).map(f64::from).collect(),
            initial: InitialCondition::Zero,
            noise_floor: 1e-10,
            slope_horizons: [10.0, 20.0],
            inline_ergodic: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StrategyBlock {
    Optimal,
    Zero,
    Perturbed { shift: f64 },
    Constant { value: f64 },
}

impl StrategyBlock {
    pub fn to_strategy(self) -> Strategy {
        match self {
            StrategyBlock::Optimal => Strategy::Optimal,
            StrategyBlock::Zero => Strategy::Zero,
            StrategyBlock::Perturbed { shift } => Strategy::PerturbedOptimal { shift },
            StrategyBlock::Constant { value } => Strategy::Constant(Vector::scalar(value)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McBlock {
    pub horizon: f64,
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<StrategyBlock>,
    #[serde(default)]
    pub i0: usize,
    #[serde(default = "one")]
    pub x0: f64,
    #[serde(default)]
    pub v0: f64,
    /// Martingale test times t < s; s defaults to the horizon.
    #[serde(default)]
    pub t: f64,
    #[serde(default)]
    pub s: Option<f64>,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default)]
    pub bias: BiasBudget,
}

fn default_strategies() -> Vec<StrategyBlock> {
    vec![StrategyBlock::Optimal]
}

fn default_record_every() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComparisonBlock {
    pub instances: usize,
    pub broken_instances: usize,
    pub base_seed: u64,
    pub n: usize,
    pub dt: f64,
    pub records: usize,
}

impl Default for ComparisonBlock {
    fn default() -> Self {
        Self { instances: 100, broken_instances: 10, base_seed: 2024, n: 161, dt: 0.01, records: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct OutputsBlock {
    /// Ergodic profile CSV written by solve-ergodic; used instead of an
    /// inline solve when present.
    pub ergodic_input: Option<String>,
    /// Write path-level CSV in `simulate`.
    pub paths_csv: bool,
}

/// Validated configuration.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub digest: String,
    pub model: ModelSpec,
    pub grid: Grid1D,
    /// Present for forward-performance drivers.
    pub fp_driver: Option<Arc<ForwardPerformanceDriver>>,
}

impl Experiment {
    pub fn market(&self) -> Result<MarketSpec, ConfigError> {
        let mc = self.config.mc.as_ref().ok_or_else(|| ConfigError::new("mc", "missing Monte Carlo block"))?;
        let driver = self
            .fp_driver
            .clone()
            .ok_or_else(|| ConfigError::new("model.driver", "Monte Carlo needs a forward_performance driver"))?;
        MarketSpec::new(
            self.model.factor.clone(),
            self.model.rates.clone(),
            driver,
            mc.i0,
            mc.x0,
            Vector::scalar(mc.v0),
        )
        .map_err(|e| ConfigError::new("mc", e.to_string()))
    }
}

fn model_error_path(e: &ModelError) -> String {
    match e {
        ModelError::EmptyRates => "model.rates".into(),
        ModelError::RaggedRates { row, .. }
        | ModelError::NonFiniteRate { row, .. }
        | ModelError::RowSumViolation { row, .. }
        | ModelError::NegativeOffDiagonal { row, .. } => format!("model.rates[{row}]"),
        ModelError::KappaNotNormalized { .. }
        | ModelError::KappaNotPositiveDefinite
        | ModelError::UnsupportedDimension(_)
        | ModelError::DissipativityViolated { .. } => "model.factor".into(),
        _ => "model.driver".into(),
    }
}

fn model_err(e: ModelError) -> ConfigError {
    ConfigError::new(model_error_path(&e), e.to_string())
}

fn build_constraint(block: ConstraintBlock, path: &str) -> Result<ConstraintSet, ConfigError> {
    match block {
        ConstraintBlock::FullSpace => Ok(ConstraintSet::FullSpace { dim: 1 }),
        ConstraintBlock::Interval { lower, upper } => {
            ConstraintSet::interval(lower.unwrap_or(f64::NEG_INFINITY), upper.unwrap_or(f64::INFINITY))
                .map_err(|e| ConfigError::new(path, e.to_string()))
        }
    }
}

type BuiltDriver = (Arc<dyn Driver>, Option<Arc<ForwardPerformanceDriver>>);

fn build_driver(block: &DriverBlock) -> Result<BuiltDriver, ConfigError> {
    match block {
        DriverBlock::Benchmark { example } => {
            let b = match example {
                BenchmarkName::Example1 => ClosedFormBenchmark::Example1,
                BenchmarkName::Example2 => ClosedFormBenchmark::Example2,
            };
            Ok((Arc::new(b), None))
        }
        DriverBlock::Constant { values } => {
            if values.iter().any(|v| !v.is_finite()) {
                return Err(ConfigError::new("model.driver.values", "values must be finite"));
            }
            Ok((Arc::new(ConstantDriver::new(values.clone(), 1)), None))
        }
        DriverBlock::ForwardPerformance { delta, theta, constraints } => {
            let fields = theta
                .iter()
                .enumerate()
                .map(|(i, comps)| {
                    let comp = match comps.as_slice() {
                        [c] => c,
                        _ => {
                            return Err(ConfigError::new(
                                format!("model.driver.theta[{i}]"),
                                "expected exactly one component for a one-dimensional factor",
                            ))
                        }
                    };
                    let shape = match comp.shape {
                        ShapeName::Constant => ThetaShape::Constant,
                        ShapeName::Tanh => ThetaShape::Tanh,
                        ShapeName::Sine => ThetaShape::Sine,
                    };
                    Ok(ThetaField::scalar(ThetaComponent {
                        shape,
                        level: comp.level,
                        amplitude: comp.amplitude,
                        scale: comp.scale,
                        axis: 0,
                    }))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let sets = constraints
                .iter()
                .enumerate()
                .map(|(i, c)| build_constraint(*c, &format!("model.driver.constraints[{i}]")))
                .collect::<Result<Vec<_>, _>>()?;
            let drv = ForwardPerformanceDriver::new(*delta, fields, sets)
                .map_err(|e| ConfigError::new("model.driver", e.to_string()))?;
            let drv = Arc::new(drv);
            Ok((drv.clone(), Some(drv)))
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ConfigError::new(if path == "." { String::new() } else { path }, e.inner().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<(Self, String), ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("", format!("cannot read {}: {e}", path.display())))?;
        Ok((Self::from_json(&text)?, text))
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn validate(self) -> Result<Experiment, ConfigError> {
        let grid = Grid1D::new(self.grid.v_min, self.grid.v_max, self.grid.n)
            .map_err(|e| ConfigError::new("grid", e.to_string()))?;
        self.scheme.validate().map_err(|e| ConfigError::new("scheme", e.to_string()))?;
        let factor = match self.model.factor {
            FactorBlock::OrnsteinUhlenbeck { rate } => FactorModel::ornstein_uhlenbeck(rate),
            FactorBlock::Linear { rate, mean } => {
                FactorModel::linear(Matrix::scalar(rate), Vector::scalar(mean), Matrix::scalar(1.0))
            }
        }
        .map_err(|e| ConfigError::new("model.factor", e.to_string()))?;
        let rates = validate_rate_matrix(self.model.rates.clone()).map_err(model_err)?;
        if rates.m0() > 1 && !rates.is_irreducible() {
            return Err(ConfigError::new("model.rates", "the regime chain must be irreducible"));
        }
        let (driver, fp_driver) = build_driver(&self.model.driver)?;
        let model = ModelSpec::new(factor, rates, driver).map_err(model_err)?;
        if let Some(r) = self.ergodic.reference_regime {
            if r >= model.m0() {
                return Err(ConfigError::new("ergodic.reference_regime", format!("{r} out of range")));
            }
        }
        if let Some(mc) = &self.mc {
            if mc.i0 >= model.m0() {
                return Err(ConfigError::new("mc.i0", format!("{} out of range", mc.i0)));
            }
            if mc.n_paths == 0 || mc.n_steps == 0 {
                return Err(ConfigError::new("mc", "n_paths and n_steps must be positive"));
            }
            if mc.strategies.is_empty() {
                return Err(ConfigError::new("mc.strategies", "at least one strategy is required"));
            }
        }
        let digest = self.digest();
        Ok(Experiment { config: self, digest, model, grid, fp_driver })
    }
}
