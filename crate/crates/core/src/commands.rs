//! Subcommand implementations behind the command-line front end.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::comparison::{run_batch, BatchRow};
use crate::config::{ConfigError, Experiment, ExperimentConfig, InitialCondition, StrategyBlock};
use crate::ergodic::{large_time_report, long_time_lambda, vanishing_discount, ErgodicError, ErgodicSolution};
use crate::io::{fmt_f64, profile_rows, read_ergodic_profile, write_csv, write_json, Metadata, PROFILE_HEADER};
use crate::market::{
    martingale_test, mean_stderr, risk_sensitive_growth_rate, simulate_paths, MarketError, MartingaleReport, Verdict,
};
use crate::model::ModelError;
use crate::pde::{Grid1D, PdeError};

/// Below this many paths Monte Carlo outputs carry an undersized-sample warning.
pub const MIN_PATHS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    SolveErgodic,
    LargeTime,
    Simulate,
    MartingaleTest,
    GrowthRate,
    Compare,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub config: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub strict: bool,
}

#[derive(Debug, Error)]
pub enum CommandError {
    #[error("invalid configuration at {}: {}", .0.path, .0.message)]
    Config(ConfigError),
    #[error("solver did not converge: {message}")]
    NonConvergence { message: String, residual: Option<f64> },
    #[error("{0}")]
    DegenerateFit(String),
    #[error("strict mode: {}", .0.join("; "))]
    Strict(Vec<String>),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CommandError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Io(_) => 1,
            CommandError::Config(_) => 2,
            CommandError::NonConvergence { .. } => 3,
            CommandError::DegenerateFit(_) => 4,
            CommandError::Strict(_) => 5,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut v = json!({ "exit_code": self.exit_code(), "message": self.to_string() });
        match self {
            CommandError::Config(e) => {
                v["kind"] = json!("model_validation");
                v["path"] = json!(e.path);
            }
            CommandError::NonConvergence { residual, .. } => {
                v["kind"] = json!("non_convergence");
                v["residual"] = json!(residual);
            }
            CommandError::DegenerateFit(_) => v["kind"] = json!("degenerate_fit"),
            CommandError::Strict(w) => {
                v["kind"] = json!("strict_warnings");
                v["warnings"] = json!(w);
            }
            CommandError::Io(_) => v["kind"] = json!("io"),
        }
        v
    }
}

impl From<ConfigError> for CommandError {
    fn from(e: ConfigError) -> Self {
        CommandError::Config(e)
    }
}

impl From<std::io::Error> for CommandError {
    fn from(e: std::io::Error) -> Self {
        CommandError::Io(e.to_string())
    }
}

fn from_model(e: ModelError) -> CommandError {
    CommandError::Config(ConfigError::new("model", e.to_string()))
}

impl From<PdeError> for CommandError {
    fn from(e: PdeError) -> Self {
        match e {
            PdeError::MaxStepsExceeded { residual, .. } => {
                CommandError::NonConvergence { message: e.to_string(), residual: Some(residual) }
            }
            PdeError::NonFiniteState { .. } => CommandError::NonConvergence { message: e.to_string(), residual: None },
            PdeError::Model(m) => from_model(m),
            PdeError::InvalidGrid(_) => CommandError::Config(ConfigError::new("grid", e.to_string())),
            _ => CommandError::Config(ConfigError::new("scheme", e.to_string())),
        }
    }
}

impl From<ErgodicError> for CommandError {
    fn from(e: ErgodicError) -> Self {
        match e {
            ErgodicError::Pde(p) => p.into(),
            ErgodicError::Model(m) => from_model(m),
            ErgodicError::DegenerateFit { .. } => CommandError::DegenerateFit(e.to_string()),
            ErgodicError::HorizonTooShort { .. } => {
                CommandError::NonConvergence { message: e.to_string(), residual: None }
            }
            ErgodicError::InvalidHorizons(_) => CommandError::Config(ConfigError::new("large_time", e.to_string())),
            _ => CommandError::Config(ConfigError::new("ergodic", e.to_string())),
        }
    }
}

impl From<MarketError> for CommandError {
    fn from(e: MarketError) -> Self {
        match e {
            MarketError::Model(m) => from_model(m),
            _ => CommandError::Config(ConfigError::new("mc", e.to_string())),
        }
    }
}

/// Loads and validates the config, applying the seed override.
pub fn load_experiment(opts: &RunOptions) -> Result<Experiment, CommandError> {
    let (mut cfg, _) = ExperimentConfig::load(&opts.config)?;
    if let Some(seed) = opts.seed {
        if let Some(mc) = cfg.mc.as_mut() {
            mc.seed = seed;
        }
        cfg.comparison.base_seed = seed;
    }
    Ok(cfg.validate()?)
}

/// Runs one subcommand and returns the files written.
pub fn run(cmd: Command, opts: &RunOptions) -> Result<Vec<PathBuf>, CommandError> {
    let exp = load_experiment(opts)?;
    fs::create_dir_all(&opts.out)?;
    let mut ctx = Context { exp: &exp, out: &opts.out, written: Vec::new(), warnings: Vec::new() };
    match cmd {
        Command::SolveErgodic => ctx.solve_ergodic()?,
        Command::LargeTime => ctx.large_time()?,
        Command::Simulate => ctx.simulate()?,
        Command::MartingaleTest => ctx.martingale()?,
        Command::GrowthRate => ctx.growth()?,
        Command::Compare => ctx.compare()?,
    }
    if opts.strict && !ctx.warnings.is_empty() {
        return Err(CommandError::Strict(ctx.warnings));
    }
    Ok(ctx.written)
}

struct Context<'a> {
    exp: &'a Experiment,
    out: &'a Path,
    written: Vec<PathBuf>,
    warnings: Vec<String>,
}

#[derive(Debug, Serialize)]
struct BoundCheck {
    rho: f64,
    sup_y: f64,
    k_y: f64,
    sup_z: f64,
    k_z: f64,
    max_regime_gap: f64,
    k_diff: f64,
    clamp_hits_final: usize,
    holds: bool,
}

/// Slack of the a priori bound checks.
const BOUND_SLACK: f64 = 1e-3;

impl Context<'_> {
    fn meta(&self, seed: Option<u64>) -> Metadata {
        Metadata::for_experiment(self.exp, seed)
    }

    fn csv(&mut self, name: &str, meta: &Metadata, header: &[&str], rows: &[Vec<String>]) -> Result<(), CommandError> {
        let path = self.out.join(name);
        write_csv(&path, meta, header, rows)?;
        self.written.push(path);
        Ok(())
    }

    fn json(&mut self, name: &str, meta: &Metadata, value: &impl Serialize) -> Result<(), CommandError> {
        let path = self.out.join(name);
        write_json(&path, meta, value)?;
        self.written.push(path);
        Ok(())
    }

    fn grid(&self) -> Grid1D {
        self.exp.grid
    }

    fn solve(&self) -> Result<ErgodicSolution, CommandError> {
        let c = &self.exp.config;
        Ok(vanishing_discount(&self.exp.model, self.grid(), &c.ergodic, &c.scheme)?)
    }

    /// Ergodic input file if configured, else an inline solve if allowed.
    fn ergodic(&self) -> Result<ErgodicSolution, CommandError> {
        let c = &self.exp.config;
        if let Some(path) = &c.outputs.ergodic_input {
            let bounds = self.exp.model.scheme_bounds();
            let kappa = self.exp.model.factor.kappa().get(0, 0);
            return read_ergodic_profile(Path::new(path), self.grid(), kappa, &bounds)
                .map_err(|e| ConfigError::new("outputs.ergodic_input", e.to_string()).into());
        }
        if !c.large_time.inline_ergodic {
            return Err(
                ConfigError::new("outputs.ergodic_input", "no ergodic input and inline solving is disabled").into()
            );
        }
        self.solve()
    }

    fn solve_ergodic(&mut self) -> Result<(), CommandError> {
        let sol = self.solve()?;
        let model = &self.exp.model;
        let bounds = model.scheme_bounds();
        let k_f = bounds.constants.k_f;
        let mut meta = self.meta(None);
        meta.push("lambda", fmt_f64(sol.lambda));
        meta.push("lambda_vd", fmt_f64(sol.lambda_vd));
        meta.push(
            "lambda_method",
            serde_json::to_value(sol.diagnostics.lambda_method).expect("enum").as_str().unwrap_or(""),
        );
        meta.push("reference_regime", sol.reference_regime);
        meta.push("v0", fmt_f64(sol.v0));
        self.csv("ergodic_profile.csv", &meta, &PROFILE_HEADER, &profile_rows(sol.grid, &sol.y, &sol.z))?;

        let checks: Vec<BoundCheck> = sol
            .rho_trace
            .iter()
            .map(|p| {
                let k_y = k_f / p.rho;
                BoundCheck {
                    rho: p.rho,
                    sup_y: p.sup_y,
                    k_y,
                    sup_z: p.sup_z,
                    k_z: bounds.k_z,
                    max_regime_gap: p.max_regime_gap,
                    k_diff: bounds.k_diff,
                    clamp_hits_final: p.clamp_hits_final,
                    holds: p.sup_y <= k_y + BOUND_SLACK
                        && p.sup_z <= bounds.k_z + BOUND_SLACK
                        && p.max_regime_gap <= bounds.k_diff + BOUND_SLACK
                        && p.clamp_hits_final == 0,
                }
            })
            .collect();
        let rows: Vec<Vec<String>> = sol
            .rho_trace
            .iter()
            .zip(&checks)
            .map(|(p, c)| {
                vec![
                    fmt_f64(p.rho),
                    fmt_f64(p.lambda_rho),
                    fmt_f64(p.sup_y),
                    fmt_f64(c.k_y),
                    fmt_f64(p.sup_z),
                    fmt_f64(p.max_regime_gap),
                    p.steps.to_string(),
                    p.clamp_hits_final.to_string(),
                ]
            })
            .collect();
        self.csv(
            "lambda_trace.csv",
            &meta,
            &["rho", "lambda_rho", "sup_y", "k_y", "sup_z", "max_regime_gap", "steps", "clamp_hits_final"],
            &rows,
        )?;
        let diag = json!({
            "lambda": sol.lambda,
            "lambda_vd": sol.lambda_vd,
            "diagnostics": sol.diagnostics,
            "constants": {
                "c_v": bounds.constants.c_v,
                "c_z": bounds.constants.c_z,
                "k_f": k_f,
                "c_eta": model.factor.c_eta(),
                "k_z": bounds.k_z,
                "k_diff": bounds.k_diff,
            },
            "bound_checks": checks,
            "all_bounds_hold": checks.iter().all(|c| c.holds),
        });
        self.json("diagnostics.json", &meta, &diag)
    }

    fn large_time(&mut self) -> Result<(), CommandError> {
        let erg = self.ergodic()?;
        let c = &self.exp.config;
        let lt = &c.large_time;
        let initial = match lt.initial {
            InitialCondition::Zero => vec![vec![0.0; erg.grid.n]; erg.regimes()],
            InitialCondition::Ergodic => erg.y.clone(),
        };
        let report = large_time_report(&self.exp.model, &erg, &initial, &lt.times, lt.noise_floor, &c.scheme)?;
        let mut meta = self.meta(None);
        meta.push("lambda", fmt_f64(erg.lambda));
        meta.push("initial", format!("{:?}", lt.initial));
        let header: Vec<String> = ["T", "residual"]
            .iter()
            .map(|s| s.to_string())
            .chain((0..erg.regimes()).map(|i| format!("delta_y_{i}")))
            .collect();
        let rows: Vec<Vec<String>> = report
            .times
            .iter()
            .enumerate()
            .map(|(k, t)| {
                let mut row = vec![fmt_f64(*t), fmt_f64(report.residuals[k])];
                row.extend(report.delta_y[k].iter().map(|d| fmt_f64(*d)));
                row
            })
            .collect();
        let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
        self.csv("large_time.csv", &meta, &header_refs, &rows)?;

        let [t1, t2] = lt.slope_horizons;
        let slope = long_time_lambda(&self.exp.model, erg.grid, t1, t2, f64::INFINITY, &c.scheme)?;
        let monotone = report.residuals.windows(2).all(|w| w[1] <= w[0]);
        let fit = json!({
            "L": report.l,
            "C_fit": report.fit.map(|f| f.c),
            "K_v_fit": report.fit.map(|f| f.k_v),
            "fit_quality": report.fit.map(|f| f.r_squared),
            "residuals_monotone": monotone,
            "l_spread_regimes": report.l_spread_regimes,
            "l_spread_nodes": report.l_spread_nodes,
            "fit_noise": report.fit_noise,
            "probe_v": erg.grid.node(report.probe),
            "lambda": erg.lambda,
            "lambda_vd": erg.lambda_vd,
            "lambda_long_time": slope.lambda,
            "lambda_long_time_three_point": slope.three_point,
            "estimator_gap": (erg.lambda_vd - slope.lambda).abs(),
        });
        self.json("fit.json", &meta, &fit)?;
        report.require_fit()?;
        Ok(())
    }

    fn strategies(&self) -> Result<Vec<StrategyBlock>, CommandError> {
        Ok(self
            .exp
            .config
            .mc
            .as_ref()
            .ok_or_else(|| ConfigError::new("mc", "missing Monte Carlo block"))?
            .strategies
            .clone())
    }

    fn ergodic_if_needed(&self, strategies: &[StrategyBlock]) -> Result<Option<ErgodicSolution>, CommandError> {
        if strategies.iter().any(|s| matches!(s, StrategyBlock::Optimal | StrategyBlock::Perturbed { .. })) {
            self.ergodic().map(Some)
        } else {
            Ok(None)
        }
    }

    fn check_sample_size(&mut self, n_paths: usize) {
        if n_paths < MIN_PATHS {
            self.warnings.push(format!("UNDERSIZED_SAMPLE: n_paths = {n_paths} < {MIN_PATHS}"));
        }
    }

    fn simulate(&mut self) -> Result<(), CommandError> {
        let spec = self.exp.market()?;
        let strategies = self.strategies()?;
        let erg = self.ergodic_if_needed(&strategies)?;
        let mc = self.exp.config.mc.clone().expect("checked by market()");
        self.check_sample_size(mc.n_paths);
        let m0 = spec.rates.m0();
        let mut rows = Vec::new();
        let mut path_rows = Vec::new();
        for block in &strategies {
            let strategy = block.to_strategy();
            let bundle = simulate_paths(
                &spec,
                &strategy,
                erg.as_ref(),
                mc.horizon,
                mc.n_paths,
                mc.n_steps,
                mc.record_every,
                mc.seed,
            )?;
            let n_obs = bundle.paths.first().map_or(0, |p| p.observations.len());
            for k in 0..n_obs {
                let obs: Vec<_> = bundle.paths.iter().map(|p| p.observations[k]).collect();
                let v: Vec<f64> = obs.iter().map(|o| o.v.x()).collect();
                let (mean_v, se_v) = mean_stderr(&v);
                let var_v = se_v * se_v * v.len() as f64;
                let log_x: Vec<f64> = obs.iter().map(|o| o.x.ln()).collect();
                let (mean_log_x, _) = mean_stderr(&log_x);
                let mut row = vec![
                    bundle.strategy.clone(),
                    obs[0].step.to_string(),
                    fmt_f64(obs[0].t),
                    fmt_f64(mean_v),
                    fmt_f64(var_v),
                    fmt_f64(mean_log_x),
                ];
                for i in 0..m0 {
                    let ind: Vec<f64> = obs.iter().map(|o| f64::from(u8::from(o.regime == i))).collect();
                    row.push(fmt_f64(mean_stderr(&ind).0));
                }
                let jumps: usize =
                    bundle.paths.iter().map(|p| p.jumps.iter().filter(|j| j.t <= obs[0].t).count()).sum();
                row.push(jumps.to_string());
                rows.push(row);
            }
            if self.exp.config.outputs.paths_csv {
                for (p, rec) in bundle.paths.iter().enumerate() {
                    for o in &rec.observations {
                        path_rows.push(vec![
                            bundle.strategy.clone(),
                            p.to_string(),
                            o.step.to_string(),
                            fmt_f64(o.t),
                            o.regime.to_string(),
                            fmt_f64(o.v.x()),
                            fmt_f64(o.x),
                        ]);
                    }
                }
            }
            if bundle.out_of_grid > 0 {
                self.warnings.push(format!("OUT_OF_GRID: {} lookups for {}", bundle.out_of_grid, bundle.strategy));
            }
        }
        let mut meta = self.meta(Some(mc.seed));
        meta.push("n_paths", mc.n_paths);
        meta.push("n_steps", mc.n_steps);
        meta.push("horizon", fmt_f64(mc.horizon));
        let mut header: Vec<String> =
            ["strategy", "step", "t", "mean_v", "var_v", "mean_log_x"].iter().map(|s| s.to_string()).collect();
        header.extend((0..m0).map(|i| format!("fraction_regime_{i}")));
        header.push("jumps".into());
        let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
        self.csv("simulation_summary.csv", &meta, &header_refs, &rows)?;
        if self.exp.config.outputs.paths_csv {
            self.csv("paths.csv", &meta, &["strategy", "path", "step", "t", "regime", "v", "x"], &path_rows)?;
        }
        Ok(())
    }

    fn martingale(&mut self) -> Result<(), CommandError> {
        let spec = self.exp.market()?;
        let strategies = self.strategies()?;
        let erg = self.ergodic()?;
        let mc = self.exp.config.mc.clone().expect("checked by market()");
        self.check_sample_size(mc.n_paths);
        let s = mc.s.unwrap_or(mc.horizon);
        let mut reports: Vec<MartingaleReport> = Vec::new();
        for block in &strategies {
            let r =
                martingale_test(&spec, &erg, &block.to_strategy(), mc.t, s, mc.n_steps, mc.n_paths, mc.seed, mc.bias)?;
            if r.inconclusive_bias {
                self.warnings.push(format!("INCONCLUSIVE_BIAS: {}", r.strategy));
            }
            if matches!(r.verdict, Verdict::MartingaleRejected | Verdict::SupermartingaleRejected) {
                self.warnings.push(format!("{}: {}", r.verdict, r.strategy));
            }
            reports.push(r);
        }
        let mut meta = self.meta(Some(mc.seed));
        meta.push("lambda", fmt_f64(erg.lambda));
        let rows: Vec<Vec<String>> = reports
            .iter()
            .map(|r| {
                vec![
                    r.strategy.clone(),
                    fmt_f64(r.t),
                    fmt_f64(r.s),
                    fmt_f64(r.mean_u_t),
                    fmt_f64(r.mean_u_s),
                    fmt_f64(r.delta),
                    fmt_f64(r.stderr),
                    fmt_f64(r.bias_budget),
                    r.verdict.to_string(),
                    r.inconclusive_bias.to_string(),
                    r.n_paths.to_string(),
                    fmt_f64(r.dt),
                    r.seed.to_string(),
                    fmt_f64(r.out_of_grid_rate),
                ]
            })
            .collect();
        self.csv(
            "martingale.csv",
            &meta,
            &[
                "strategy",
                "t",
                "s",
                "mean_u_t",
                "mean_u_s",
                "delta",
                "stderr",
                "bias_budget",
                "verdict",
                "inconclusive_bias",
                "n_paths",
                "dt",
                "seed",
                "out_of_grid_rate",
            ],
            &rows,
        )?;
        self.json("martingale.json", &meta, &reports)
    }

    fn growth(&mut self) -> Result<(), CommandError> {
        let spec = self.exp.market()?;
        let strategies = self.strategies()?;
        let erg = self.ergodic_if_needed(&strategies)?;
        let lambda = match &erg {
            Some(e) => e.lambda,
            None => self.solve()?.lambda,
        };
        let mc = self.exp.config.mc.clone().expect("checked by market()");
        self.check_sample_size(mc.n_paths);
        let mut reports = Vec::new();
        for block in &strategies {
            let r = risk_sensitive_growth_rate(
                &spec,
                erg.as_ref(),
                &block.to_strategy(),
                mc.horizon,
                mc.n_steps,
                mc.n_paths,
                mc.seed,
            )?;
            if r.heavy_tail {
                self.warnings.push(format!("HEAVY_TAIL: {}", r.strategy));
            }
            reports.push(r);
        }
        let mut meta = self.meta(Some(mc.seed));
        meta.push("lambda", fmt_f64(lambda));
        let rows: Vec<Vec<String>> = reports
            .iter()
            .map(|r| {
                vec![
                    r.strategy.clone(),
                    fmt_f64(r.horizon),
                    fmt_f64(r.estimate),
                    fmt_f64(r.stderr),
                    fmt_f64(r.estimate - lambda),
                    fmt_f64(r.top_share),
                    r.heavy_tail.to_string(),
                    r.n_paths.to_string(),
                    r.seed.to_string(),
                ]
            })
            .collect();
        self.csv(
            "growth.csv",
            &meta,
            &[
                "strategy",
                "horizon",
                "estimate",
                "stderr",
                "estimate_minus_lambda",
                "top_share",
                "heavy_tail",
                "n_paths",
                "seed",
            ],
            &rows,
        )?;
        self.json("growth.json", &meta, &json!({ "lambda": lambda, "reports": reports }))
    }

    fn compare(&mut self) -> Result<(), CommandError> {
        let c = &self.exp.config.comparison;
        let grid = Grid1D::new(-4.0, 4.0, c.n).map_err(|e| ConfigError::new("comparison.n", e.to_string()))?;
        let scheme = crate::pde::SchemeConfig { dt: c.dt, ..self.exp.config.scheme };
        let rows: Vec<BatchRow> = run_batch(c.instances, c.broken_instances, c.base_seed, grid, c.records, &scheme)?;
        for r in rows.iter().filter(|r| r.verdict == "COUNTEREXAMPLE") {
            self.warnings.push(format!("COUNTEREXAMPLE: instance {} seed {}", r.instance_id, r.seed));
        }
        let mut meta = self.meta(Some(c.base_seed));
        meta.push("comparison_grid_n", c.n);
        meta.push("comparison_dt", fmt_f64(c.dt));
        let table: Vec<Vec<String>> = rows
            .iter()
            .map(|r| vec![r.instance_id.to_string(), r.seed.to_string(), r.verdict.clone(), fmt_f64(r.max_violation)])
            .collect();
        self.csv("comparison.csv", &meta, &["instance_id", "seed", "verdict", "max_violation"], &table)
    }
}
