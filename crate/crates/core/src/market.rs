//! Monte Carlo for the regime-switching market: chain, factor and wealth
//! paths, the forward-performance (super)martingale test and the
//! risk-sensitive growth rate.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::drivers::{Driver, ForwardPerformanceDriver};
use crate::ergodic::ErgodicSolution;
use crate::model::{FactorModel, ModelError, RateMatrix};
use crate::vector::Vector;

pub use crate::drivers::cost_functional;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarketError {
    #[error("invalid market specification: {0}")]
    InvalidSpec(String),
    #[error("time step {dt} exceeds the wealth positivity threshold {threshold}")]
    StepTooLarge { dt: f64, threshold: f64 },
    #[error("this operation needs a one-dimensional ergodic solution matching the market")]
    MissingErgodic,
    #[error("invalid simulation times: {0}")]
    InvalidTimes(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Factor, chain, forward-performance driver and initial state.
#[derive(Debug, Clone)]
pub struct MarketSpec {
    pub factor: FactorModel,
    pub rates: RateMatrix,
    pub driver: Arc<ForwardPerformanceDriver>,
    pub i0: usize,
    pub x0: f64,
    pub v0: Vector,
}

impl MarketSpec {
    pub fn new(
        factor: FactorModel,
        rates: RateMatrix,
        driver: Arc<ForwardPerformanceDriver>,
        i0: usize,
        x0: f64,
        v0: Vector,
    ) -> Result<Self, MarketError> {
        if !(x0 > 0.0 && x0.is_finite()) {
            return Err(MarketError::InvalidSpec(format!("x0 = {x0} must be positive")));
        }
        if i0 >= rates.m0() {
            return Err(MarketError::InvalidSpec(format!("i0 = {i0} but there are {} regimes", rates.m0())));
        }
        if driver.regimes() != rates.m0() {
            return Err(ModelError::RegimeMismatch { driver: driver.regimes(), rates: rates.m0() }.into());
        }
        if driver.dim() != factor.dim() || v0.dim() != factor.dim() {
            return Err(
                ModelError::DimensionMismatch { what: "market", got: driver.dim(), expected: factor.dim() }.into()
            );
        }
        Ok(Self { factor, rates, driver, i0, x0, v0 })
    }

    pub fn dim(&self) -> usize {
        self.factor.dim()
    }
}

pub type StrategyFn = Arc<dyn Fn(usize, &Vector, &Vector) -> Vector + Send + Sync>;

/// Trading strategy π(i, v, z); every value is projected onto Π^i.
#[derive(Clone)]
pub enum Strategy {
    Optimal,
    Zero,
    /// Optimal strategy shifted by `shift` in every coordinate, then projected.
    PerturbedOptimal {
        shift: f64,
    },
    Constant(Vector),
    Custom {
        label: String,
        f: StrategyFn,
        bound: f64,
    },
}

impl fmt::Debug for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl Strategy {
    pub fn label(&self) -> String {
        match self {
            Strategy::Optimal => "optimal".into(),
            Strategy::Zero => "zero".into(),
            Strategy::PerturbedOptimal { shift } => format!("perturbed({shift})"),
            Strategy::Constant(c) => format!("constant({:?})", c.as_slice()),
            Strategy::Custom { label, .. } => label.clone(),
        }
    }

    fn needs_gradient(&self) -> bool {
        matches!(self, Strategy::Optimal | Strategy::PerturbedOptimal { .. } | Strategy::Custom { .. })
    }

    #[inline]
    fn eval(&self, driver: &ForwardPerformanceDriver, i: usize, v: &Vector, z: &Vector) -> Vector {
        let set = driver.constraint(i);
        match self {
            Strategy::Optimal => driver.optimal_strategy(i, v, z),
            Strategy::Zero => set.project(&Vector::zeros(v.dim())),
            Strategy::PerturbedOptimal { shift } => {
                set.project(&(driver.optimal_strategy(i, v, z) + Vector::filled(v.dim(), *shift)))
            }
            Strategy::Constant(c) => set.project(c),
            Strategy::Custom { f, .. } => set.project(&f(i, v, z)),
        }
    }

    /// Upper bound on |π| along any path.
    pub fn bound(&self, driver: &ForwardPerformanceDriver, regimes: usize, z_max: f64) -> f64 {
        let radius = (0..regimes).map(|i| driver.constraint(i).radius()).fold(0.0, f64::max);
        let d = driver.dim() as f64;
        match self {
            Strategy::Optimal => driver.strategy_bound(z_max),
            Strategy::Zero => (0..regimes)
                .map(|i| driver.constraint(i).project(&Vector::zeros(driver.dim())).norm())
                .fold(0.0, f64::max),
            Strategy::PerturbedOptimal { shift } => radius.min(driver.strategy_bound(z_max) + shift.abs() * d.sqrt()),
            Strategy::Constant(c) => (0..regimes).map(|i| driver.constraint(i).project(c).norm()).fold(0.0, f64::max),
            Strategy::Custom { bound, .. } => radius.min(*bound),
        }
    }
}

/// U^i(x, t) = (x^δ/δ)·exp(y^i(v) − λt); the flag reports v outside the grid.
#[inline]
pub fn eval_forward_performance(
    ergodic: &ErgodicSolution,
    x: f64,
    t: f64,
    i: usize,
    v: f64,
    delta: f64,
) -> (f64, bool) {
    let (y, out) = ergodic.y_at(i, v);
    (x.powf(delta) / delta * (y - ergodic.lambda * t).exp(), out)
}

/// dt must stay below 1/(sup|π|·(sup|θ| + 3))².
pub fn positivity_threshold(pi_bound: f64, theta_bound: f64) -> f64 {
    if pi_bound == 0.0 {
        f64::INFINITY
    } else {
        1.0 / (pi_bound * (theta_bound + 3.0)).powi(2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub step: usize,
    pub t: f64,
    pub v: Vector,
    pub regime: usize,
    pub x: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpEvent {
    pub t: f64,
    pub from: usize,
    pub to: usize,
    pub v: Vector,
    pub x: f64,
}

enum Event {
    Step(Observation),
    Jump(JumpEvent),
}

struct PathContext<'a> {
    spec: &'a MarketSpec,
    ergodic: Option<&'a ErgodicSolution>,
    strategy: &'a Strategy,
    dt: f64,
    n_steps: usize,
    seed: u64,
}

/// Counter-based stream for one path: the master seed selects the key and
/// the path index the stream, so adding paths never reshuffles earlier ones.
pub fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

/// Simulates one path and returns the number of out-of-grid lookups.
fn run_path(ctx: &PathContext<'_>, path: u64, mut observe: impl FnMut(Event)) -> usize {
    let spec = ctx.spec;
    let drv = spec.driver.as_ref();
    let d = spec.dim();
    let kappa = spec.factor.kappa();
    let mut rng = path_rng(ctx.seed, path);
    let mut out_of_grid = 0;

    let draw_clock = |rng: &mut ChaCha8Rng, i: usize| {
        let rate = spec.rates.exit_rate(i);
        if rate > 0.0 {
            let e: f64 = rng.sample(Exp1);
            e / rate
        } else {
            f64::INFINITY
        }
    };

    let mut t = 0.0;
    let mut v = spec.v0;
    let mut i = spec.i0;
    let mut log_x = spec.x0.ln();
    let mut next_jump = draw_clock(&mut rng, i);
    observe(Event::Step(Observation { step: 0, t, v, regime: i, x: spec.x0 }));

    let mut advance = |rng: &mut ChaCha8Rng, v: &mut Vector, log_x: &mut f64, i: usize, span: f64| {
        if span <= 0.0 {
            return;
        }
        let mut xi = Vector::zeros(d);
        for c in xi.as_mut_slice() {
            *c = rng.sample(StandardNormal);
        }
        let dw = xi * span.sqrt();
        let z = if ctx.strategy.needs_gradient() {
            let erg = ctx.ergodic.expect("checked before simulation");
            let (z, out) = erg.z_at(i, v.x());
            out_of_grid += out as usize;
            Vector::scalar(z)
        } else {
            Vector::zeros(d)
        };
        let theta = drv.theta(i, v);
        let pi = ctx.strategy.eval(drv, i, v, &z);
        *log_x += (pi.dot(&theta) - 0.5 * pi.norm_sq()) * span + pi.dot(&dw);
        *v = *v + spec.factor.eta(v) * span + kappa.mul_vec(&dw);
    };

    for step in 0..ctx.n_steps {
        let t_end = (step + 1) as f64 * ctx.dt;
        while next_jump < t_end {
            advance(&mut rng, &mut v, &mut log_x, i, next_jump - t);
            t = next_jump;
            let rate = spec.rates.exit_rate(i);
            let u: f64 = rng.gen::<f64>() * rate;
            let mut acc = 0.0;
            let mut to = i;
            for k in 0..spec.rates.m0() {
                if k == i {
                    continue;
                }
                acc += spec.rates.rate(i, k);
                to = k;
                if u < acc {
                    break;
                }
            }
            observe(Event::Jump(JumpEvent { t, from: i, to, v, x: log_x.exp() }));
            i = to;
            next_jump = t + draw_clock(&mut rng, i);
        }
        advance(&mut rng, &mut v, &mut log_x, i, t_end - t);
        t = t_end;
        observe(Event::Step(Observation { step: step + 1, t, v, regime: i, x: log_x.exp() }));
    }
    out_of_grid
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    /// Observations every `record_every` steps (always including both ends).
    pub observations: Vec<Observation>,
    pub jumps: Vec<JumpEvent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    pub seed: u64,
    pub n_paths: usize,
    pub n_steps: usize,
    pub dt: f64,
    pub record_every: usize,
    pub paths: Vec<PathRecord>,
    pub strategy: String,
    pub pi_bound: f64,
    pub positivity_threshold: f64,
    pub out_of_grid: usize,
}

fn prepare<'a>(
    spec: &'a MarketSpec,
    ergodic: Option<&'a ErgodicSolution>,
    strategy: &'a Strategy,
    horizon: f64,
    n_steps: usize,
    seed: u64,
) -> Result<(PathContext<'a>, f64, f64), MarketError> {
    if !(horizon > 0.0 && horizon.is_finite()) || n_steps == 0 {
        return Err(MarketError::InvalidTimes(format!("horizon {horizon} with {n_steps} steps")));
    }
    if let Some(e) = ergodic {
        if e.regimes() != spec.rates.m0() || spec.dim() != 1 {
            return Err(MarketError::MissingErgodic);
        }
    } else if strategy.needs_gradient() {
        return Err(MarketError::MissingErgodic);
    }
    let dt = horizon / n_steps as f64;
    let z_max = ergodic.map_or(0.0, |e| e.z.iter().flatten().fold(0.0f64, |m, z| m.max(z.abs())));
    let pi_bound = strategy.bound(&spec.driver, spec.rates.m0(), z_max);
    let theta_bound = (0..spec.rates.m0()).map(|i| spec.driver.theta_field(i).sup_norm()).fold(0.0, f64::max);
    let threshold = positivity_threshold(pi_bound, theta_bound);
    if dt >= threshold {
        return Err(MarketError::StepTooLarge { dt, threshold });
    }
    Ok((PathContext { spec, ergodic, strategy, dt, n_steps, seed }, pi_bound, threshold))
}

pub fn simulate_paths(
    spec: &MarketSpec,
    strategy: &Strategy,
    ergodic: Option<&ErgodicSolution>,
    horizon: f64,
    n_paths: usize,
    n_steps: usize,
    record_every: usize,
    seed: u64,
) -> Result<PathBundle, MarketError> {
    let (ctx, pi_bound, threshold) = prepare(spec, ergodic, strategy, horizon, n_steps, seed)?;
    let every = record_every.max(1);
    let results: Vec<(PathRecord, usize)> = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut record = PathRecord { observations: Vec::new(), jumps: Vec::new() };
            let out = run_path(&ctx, p, |e| match e {
                Event::Step(o) if o.step % every == 0 || o.step == n_steps => record.observations.push(o),
                Event::Step(_) => {}
                Event::Jump(j) => record.jumps.push(j),
            });
            (record, out)
        })
        .collect();
    let out_of_grid = results.iter().map(|r| r.1).sum();
    Ok(PathBundle {
        seed,
        n_paths,
        n_steps,
        dt: ctx.dt,
        record_every: every,
        paths: results.into_iter().map(|r| r.0).collect(),
        strategy: strategy.label(),
        pi_bound,
        positivity_threshold: threshold,
        out_of_grid,
    })
}

/// Order-fixed pairwise summation.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        xs.iter().sum()
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

/// (mean, standard error of the mean).
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = pairwise_sum(xs) / n;
    let dev: Vec<f64> = xs.iter().map(|x| (x - mean).powi(2)).collect();
    let var = if xs.len() > 1 { pairwise_sum(&dev) / (n - 1.0) } else { 0.0 };
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    MartingaleConsistent,
    MartingaleRejected,
    SupermartingaleConsistent,
    SupermartingaleRejected,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::MartingaleConsistent => "MARTINGALE_CONSISTENT",
            Verdict::MartingaleRejected => "MARTINGALE_REJECTED",
            Verdict::SupermartingaleConsistent => "SUPERMARTINGALE_CONSISTENT",
            Verdict::SupermartingaleRejected => "SUPERMARTINGALE_REJECTED",
        })
    }
}

/// Discretization allowance (c₁·dt + c₂·h²)·|E U_t|.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasBudget {
    pub c1: f64,
    pub c2: f64,
}

impl Default for BiasBudget {
    fn default() -> Self {
        Self { c1: 1.0, c2: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleReport {
    pub strategy: String,
    pub t: f64,
    pub s: f64,
    pub mean_u_t: f64,
    pub mean_u_s: f64,
    pub delta: f64,
    pub stderr: f64,
    pub bias_budget: f64,
    pub verdict: Verdict,
    /// The bias budget exceeds five standard errors.
    pub inconclusive_bias: bool,
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    /// Fraction of y/z lookups that fell outside the grid.
    pub out_of_grid_rate: f64,
}

/// Paired estimate of E[U(X_s, s)] − E[U(X_t, t)] on common paths.
pub fn martingale_test(
    spec: &MarketSpec,
    ergodic: &ErgodicSolution,
    strategy: &Strategy,
    t: f64,
    s: f64,
    n_steps: usize,
    n_paths: usize,
    seed: u64,
    budget: BiasBudget,
) -> Result<MartingaleReport, MarketError> {
    if !(0.0 <= t && t < s) {
        return Err(MarketError::InvalidTimes(format!("need 0 <= t < s, got t={t}, s={s}")));
    }
    let (ctx, _, _) = prepare(spec, Some(ergodic), strategy, s, n_steps, seed)?;
    let t_step = (t / ctx.dt).round() as usize;
    if ((t_step as f64) * ctx.dt - t).abs() > 1e-9 * s {
        return Err(MarketError::InvalidTimes(format!("t = {t} is not on the time mesh (dt = {})", ctx.dt)));
    }
    let delta_exp = spec.driver.delta();
    let per_path: Vec<(f64, f64, usize, usize)> = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut u_t = 0.0;
            let mut u_s = 0.0;
            let mut lookups = 0;
            let mut outside = 0;
            let gradient_outside = run_path(&ctx, p, |e| {
                if let Event::Step(o) = e {
                    if o.step == t_step || o.step == n_steps {
                        let (u, out) = eval_forward_performance(ergodic, o.x, o.t, o.regime, o.v.x(), delta_exp);
                        lookups += 1;
                        outside += out as usize;
                        if o.step == t_step {
                            u_t = u;
                        }
                        if o.step == n_steps {
                            u_s = u;
                        }
                    }
                }
            });
            outside += gradient_outside;
            lookups += if strategy.needs_gradient() { n_steps } else { 0 };
            (u_t, u_s, lookups, outside)
        })
        .collect();
    let u_t: Vec<f64> = per_path.iter().map(|p| p.0).collect();
    let u_s: Vec<f64> = per_path.iter().map(|p| p.1).collect();
    let diffs: Vec<f64> = per_path.iter().map(|p| p.1 - p.0).collect();
    let (mean_u_t, _) = mean_stderr(&u_t);
    let (mean_u_s, _) = mean_stderr(&u_s);
    let (delta, stderr) = mean_stderr(&diffs);
    let h = ergodic.grid.h();
    let bias_budget = (budget.c1 * ctx.dt + budget.c2 * h * h) * mean_u_t.abs();
    let verdict = match strategy {
        Strategy::Optimal if delta.abs() <= 3.0 * stderr + bias_budget => Verdict::MartingaleConsistent,
        Strategy::Optimal => Verdict::MartingaleRejected,
        _ if delta <= 3.0 * stderr + bias_budget => Verdict::SupermartingaleConsistent,
        _ => Verdict::SupermartingaleRejected,
    };
    let lookups: usize = per_path.iter().map(|p| p.2).sum();
    let outside: usize = per_path.iter().map(|p| p.3).sum();
    Ok(MartingaleReport {
        strategy: strategy.label(),
        t,
        s,
        mean_u_t,
        mean_u_s,
        delta,
        stderr,
        bias_budget,
        verdict,
        inconclusive_bias: bias_budget > 5.0 * stderr,
        n_paths,
        dt: ctx.dt,
        seed,
        out_of_grid_rate: if lookups > 0 { outside as f64 / lookups as f64 } else { 0.0 },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthReport {
    pub strategy: String,
    pub horizon: f64,
    pub estimate: f64,
    pub stderr: f64,
    /// Share of the total weight carried by the top 1% of paths.
    pub top_share: f64,
    pub heavy_tail: bool,
    pub n_paths: usize,
    pub seed: u64,
}

/// (1/T)·ln(mean of X_T^δ/δ) with a delta-method standard error.
pub fn risk_sensitive_growth_rate(
    spec: &MarketSpec,
    ergodic: Option<&ErgodicSolution>,
    strategy: &Strategy,
    horizon: f64,
    n_steps: usize,
    n_paths: usize,
    seed: u64,
) -> Result<GrowthReport, MarketError> {
    let (ctx, _, _) = prepare(spec, ergodic, strategy, horizon, n_steps, seed)?;
    let delta = spec.driver.delta();
    let weights: Vec<f64> = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut x_end = spec.x0;
            run_path(&ctx, p, |e| {
                if let Event::Step(o) = e {
                    if o.step == n_steps {
                        x_end = o.x;
                    }
                }
            });
            x_end.powf(delta) / delta
        })
        .collect();
    let (mean, se) = mean_stderr(&weights);
    let mut sorted = weights.clone();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite weights"));
    let top = ((n_paths as f64) * 0.01).ceil().max(1.0) as usize;
    let top_share = pairwise_sum(&sorted[..top.min(n_paths)]) / pairwise_sum(&sorted);
    Ok(GrowthReport {
        strategy: strategy.label(),
        horizon,
        estimate: mean.ln() / horizon,
        stderr: se / mean / horizon,
        top_share,
        heavy_tail: top_share > 0.5,
        n_paths,
        seed,
    })
}
