//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the test
//! harness (`cargo test --test acceptance`) and exits nonzero on any failure.

mod common;

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use common::{config_path, oracle_lambda, profile_errors, shipped, solve_benchmark, SHIPPED};
use ergodic_bsde::comparison::run_batch;
use ergodic_bsde::config::InitialCondition;
use ergodic_bsde::drivers::ClosedFormBenchmark;
use ergodic_bsde::ergodic::{large_time_report, long_time_lambda, vanishing_discount};
use ergodic_bsde::io::read_csv;
use ergodic_bsde::pde::{Grid1D, SchemeConfig};
use tempfile::TempDir;

const LAMBDA_TOL: [f64; 2] = [1e-3, 2e-3];
const LAMBDA_RUNTIME: Duration = Duration::from_secs(60);
const Y_ERROR_H2: f64 = 5.0;
const Z_ERROR_H2: f64 = 2.0;
const REFINEMENT_RATIO: (f64, f64) = (3.0, 5.0);
const BOUND_SLACK: f64 = 1e-3;
const COMPARISON_INSTANCES: usize = 100;
const COMPARISON_BROKEN: usize = 10;
const COMPARISON_RUNTIME: Duration = Duration::from_secs(300);
const FIT_QUALITY: f64 = 0.9;
const L_SPREAD_H2: f64 = 5.0;
const ESTIMATOR_GAP: f64 = 3e-3;
const MARTINGALE_PATHS: usize = 200_000;
const PERTURBED_SIGMAS: f64 = 3.0;
const MARTINGALE_RUNTIME: Duration = Duration::from_secs(600);
const GROWTH_TOL: f64 = 0.02;
const GROWTH_HORIZON: f64 = 40.0;
const GROWTH_PATHS: usize = 100_000;
const SUBOPTIMAL_SIGMAS: f64 = 3.0;

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_ergodic-bsde"))
}

fn cli(cmd: &str, config: &Path, out: &Path, threads: usize) -> Result<Duration, String> {
    let start = Instant::now();
    let o = Command::new(bin())
        .arg(cmd)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .arg("--threads")
        .arg(threads.to_string())
        .output()
        .map_err(|e| e.to_string())?;
    if !o.status.success() {
        return Err(format!("{cmd} exited with {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr).trim()));
    }
    Ok(start.elapsed())
}

/// Data rows of a CSV keyed by header name.
fn table(path: &Path) -> Vec<std::collections::BTreeMap<String, String>> {
    let (_, header, rows) = read_csv(path).expect("readable csv");
    rows.into_iter().map(|r| header.iter().cloned().zip(r).collect()).collect()
}

fn num(row: &std::collections::BTreeMap<String, String>, key: &str) -> f64 {
    row[key].parse().expect("numeric field")
}

fn criterion_1() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (b, tol) in [ClosedFormBenchmark::Example1, ClosedFormBenchmark::Example2].into_iter().zip(LAMBDA_TOL) {
        let start = Instant::now();
        let sol = solve_benchmark(b, 800);
        let elapsed = start.elapsed();
        let err = (sol.lambda_vd - oracle_lambda(b)).abs();
        ok &= err <= tol && elapsed < LAMBDA_RUNTIME;
        parts.push(format!(
            "{b:?} lambda={:.7} |err|={err:.2e} (tol {tol:.0e}) in {:.1}s",
            sol.lambda_vd,
            elapsed.as_secs_f64()
        ));
    }
    check(ok, parts.join("; "))
}

fn criterion_2() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for b in [ClosedFormBenchmark::Example1, ClosedFormBenchmark::Example2] {
        let mut ey = Vec::new();
        for n in [400, 800] {
            let sol = solve_benchmark(b, n);
            let h2 = sol.grid.h().powi(2);
            let (e_y, e_z, e_z_full) = profile_errors(b, &sol);
            ok &= e_y <= Y_ERROR_H2 * h2 && e_z <= Z_ERROR_H2 * h2;
            parts.push(format!(
                "{b:?} n={n}: y {:.2}h² z {:.2}h² (z incl. edge nodes {:.2}h²)",
                e_y / h2,
                e_z / h2,
                e_z_full / h2
            ));
            ey.push(e_y);
        }
        let ratio = ey[0] / ey[1];
        ok &= (REFINEMENT_RATIO.0..=REFINEMENT_RATIO.1).contains(&ratio);
        parts.push(format!("{b:?} ratio {ratio:.2}"));
    }
    check(ok, parts.join("; "))
}

fn criterion_3() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for name in SHIPPED {
        let exp = shipped(name);
        let sol = vanishing_discount(&exp.model, exp.grid, &exp.config.ergodic, &exp.config.scheme)
            .map_err(|e| format!("{name}: {e}"))?;
        let bounds = exp.model.scheme_bounds();
        let k_f = bounds.constants.k_f;
        let mut worst_y = f64::NEG_INFINITY;
        let mut worst_z = f64::NEG_INFINITY;
        let mut worst_gap = f64::NEG_INFINITY;
        let mut clamps = 0;
        for p in &sol.rho_trace {
            worst_y = worst_y.max(p.sup_y - k_f / p.rho);
            worst_z = worst_z.max(p.sup_z - bounds.k_z);
            worst_gap = worst_gap.max(p.max_regime_gap - bounds.k_diff);
            clamps += p.clamp_hits_final;
        }
        ok &= worst_y <= BOUND_SLACK && worst_z <= BOUND_SLACK && worst_gap <= BOUND_SLACK && clamps == 0;
        parts.push(format!(
            "{name}: max(sup|y|−K_f/ρ)={worst_y:.3e} K_z={:.3} max(sup|z|−K_z)={worst_z:.3e} max(gap−K_diff)={worst_gap:.3e} clamps={clamps}",
            bounds.k_z
        ));
    }
    check(ok, parts.join("; "))
}

fn criterion_4() -> Outcome {
    let exp = shipped("two_regime");
    let c = &exp.config.comparison;
    let grid = Grid1D::new(exp.grid.v_min, exp.grid.v_max, c.n).map_err(|e| e.to_string())?;
    let scheme = SchemeConfig { dt: c.dt, ..exp.config.scheme };
    let start = Instant::now();
    let rows = run_batch(COMPARISON_INSTANCES, COMPARISON_BROKEN, c.base_seed, grid, c.records, &scheme)
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let valid: Vec<_> = rows.iter().filter(|r| !r.broken).collect();
    let broken: Vec<_> = rows.iter().filter(|r| r.broken).collect();
    let ordered = valid.iter().filter(|r| r.verdict == "ORDERED").count();
    let counterexamples = rows.iter().filter(|r| r.verdict == "COUNTEREXAMPLE").count();
    let caught = broken.iter().filter(|r| r.verdict == "HYPOTHESIS_FAILED(iii)").count();
    let worst = valid.iter().map(|r| r.max_violation).fold(f64::NEG_INFINITY, f64::max);
    check(
        ordered == COMPARISON_INSTANCES
            && counterexamples == 0
            && caught == COMPARISON_BROKEN
            && elapsed < COMPARISON_RUNTIME,
        format!(
            "ORDERED {ordered}/{COMPARISON_INSTANCES}, COUNTEREXAMPLE {counterexamples}, HYPOTHESIS_FAILED(iii) {caught}/{COMPARISON_BROKEN}, worst violation {worst:.2e}, {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_5() -> Outcome {
    let exp = shipped("two_regime");
    let lt = &exp.config.large_time;
    if lt.initial != InitialCondition::Zero {
        return Err("shipped two-regime large-time run must start from h ≡ 0".into());
    }
    let sol =
        vanishing_discount(&exp.model, exp.grid, &exp.config.ergodic, &exp.config.scheme).map_err(|e| e.to_string())?;
    let initial = vec![vec![0.0; exp.grid.n]; exp.model.m0()];
    let report = large_time_report(&exp.model, &sol, &initial, &lt.times, lt.noise_floor, &exp.config.scheme)
        .map_err(|e| e.to_string())?;
    let fit = report.require_fit().map_err(|e| e.to_string())?;
    let monotone = report.residuals.windows(2).all(|w| w[1] <= w[0]);
    let allowance = L_SPREAD_H2 * exp.grid.h().powi(2) + report.fit_noise;
    check(
        monotone
            && fit.r_squared > FIT_QUALITY
            && fit.k_v > 0.0
            && report.l_spread_regimes <= allowance
            && report.l_spread_nodes <= allowance,
        format!(
            "T={:?} monotone={monotone} R²={:.4} K_v={:.3} L={:.6} spread regimes {:.2e} nodes {:.2e} (allow {allowance:.2e})",
            lt.times, fit.r_squared, fit.k_v, report.l, report.l_spread_regimes, report.l_spread_nodes
        ),
    )
}

fn criterion_6() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for name in SHIPPED {
        let exp = shipped(name);
        let sol = vanishing_discount(&exp.model, exp.grid, &exp.config.ergodic, &exp.config.scheme)
            .map_err(|e| format!("{name}: {e}"))?;
        let [t1, t2] = exp.config.large_time.slope_horizons;
        let slope = long_time_lambda(&exp.model, exp.grid, t1, t2, f64::INFINITY, &exp.config.scheme)
            .map_err(|e| format!("{name}: {e}"))?;
        let gap = (sol.lambda_vd - slope.lambda).abs();
        ok &= gap <= ESTIMATOR_GAP;
        parts.push(format!("{name}: vd {:.6} slope {:.6} gap {gap:.2e}", sol.lambda_vd, slope.lambda));
    }
    check(ok, parts.join("; "))
}

fn criterion_7(out: &Path) -> Outcome {
    let exp = shipped("two_regime");
    let mc = exp.config.mc.as_ref().ok_or("two_regime has no mc block")?;
    if mc.n_paths != MARTINGALE_PATHS || mc.t != 0.0 || mc.s != Some(1.0) {
        return Err(format!("shipped config runs {} paths on ({}, {:?})", mc.n_paths, mc.t, mc.s));
    }
    let elapsed = cli("martingale-test", &config_path("two_regime"), out, 1)?;
    let rows = table(&out.join("martingale.csv"));
    let find = |prefix: &str| rows.iter().find(|r| r["strategy"].starts_with(prefix)).ok_or(format!("no {prefix} row"));
    let (optimal, zero, perturbed) = (find("optimal")?, find("zero")?, find("perturbed")?);
    let p_delta = num(perturbed, "delta");
    let p_se = num(perturbed, "stderr");
    let ok = optimal["verdict"] == "MARTINGALE_CONSISTENT"
        && zero["verdict"] == "SUPERMARTINGALE_CONSISTENT"
        && perturbed["verdict"] == "SUPERMARTINGALE_CONSISTENT"
        && p_delta < -PERTURBED_SIGMAS * p_se
        && elapsed < MARTINGALE_RUNTIME;
    check(
        ok,
        format!(
            "optimal {} Δ={:.2e}±{:.1e}; zero {} Δ={:.2e}; {} {} Δ={p_delta:.2e} ({:.1} stderr); {:.1}s",
            optimal["verdict"],
            num(optimal, "delta"),
            num(optimal, "stderr"),
            zero["verdict"],
            num(zero, "delta"),
            perturbed["strategy"],
            perturbed["verdict"],
            p_delta / p_se,
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_8(out: &Path) -> Outcome {
    let exp = shipped("merton");
    let mc = exp.config.mc.as_ref().ok_or("merton has no mc block")?;
    if mc.n_paths != GROWTH_PATHS || mc.horizon != GROWTH_HORIZON {
        return Err(format!("shipped config runs {} paths to T={}", mc.n_paths, mc.horizon));
    }
    let elapsed = cli("growth-rate", &config_path("merton"), out, 1)?;
    let rows = table(&out.join("growth.csv"));
    let optimal = rows.iter().find(|r| r["strategy"] == "optimal").ok_or("no optimal row")?;
    let (est, se) = (num(optimal, "estimate"), num(optimal, "stderr"));
    let lambda = est - num(optimal, "estimate_minus_lambda");
    let mut ok = (est - lambda).abs() <= GROWTH_TOL;
    let mut parts = vec![format!("λ={lambda:.6} optimal {est:.5}±{se:.1e} |diff|={:.4}", (est - lambda).abs())];
    for r in rows.iter().filter(|r| r["strategy"] != "optimal") {
        let (e, s) = (num(r, "estimate"), num(r, "stderr"));
        let excess = e - est;
        let allowed = SUBOPTIMAL_SIGMAS * (se * se + s * s).sqrt();
        ok &= excess <= allowed;
        parts.push(format!("{} {e:.5} (excess {excess:.4} vs {allowed:.4})", r["strategy"]));
    }
    parts.push(format!("{:.1}s", elapsed.as_secs_f64()));
    check(ok, parts.join("; "))
}

fn csv_files(dir: &Path) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map(|d| {
            d.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.extension().is_some_and(|x| x == "csv")).collect()
        })
        .unwrap_or_default();
    files.sort();
    files
}

fn identical(a: &Path, b: &Path) -> Result<usize, String> {
    let (fa, fb) = (csv_files(a), csv_files(b));
    if fa.is_empty() || fa.len() != fb.len() {
        return Err(format!("{} vs {} CSV files in {}", fa.len(), fb.len(), a.display()));
    }
    for (x, y) in fa.iter().zip(&fb) {
        if fs::read(x).map_err(|e| e.to_string())? != fs::read(y).map_err(|e| e.to_string())? {
            return Err(format!("{} differs", x.display()));
        }
    }
    Ok(fa.len())
}

fn criterion_9(root: &Path, martingale_out: &Path, growth_out: &Path) -> Outcome {
    let mut compared = 0;
    for name in SHIPPED {
        let (one, two) = (root.join(format!("{name}-t1")), root.join(format!("{name}-t2")));
        cli("solve-ergodic", &config_path(name), &one, 1)?;
        cli("solve-ergodic", &config_path(name), &two, 2)?;
        compared += identical(&one, &two)?;
    }
    let cmp = (root.join("compare-t1"), root.join("compare-t2"));
    cli("compare", &config_path("two_regime"), &cmp.0, 1)?;
    cli("compare", &config_path("two_regime"), &cmp.1, 2)?;
    compared += identical(&cmp.0, &cmp.1)?;
    let m2 = root.join("martingale-t2");
    cli("martingale-test", &config_path("two_regime"), &m2, 2)?;
    compared += identical(martingale_out, &m2)?;
    let g2 = root.join("growth-t2");
    cli("growth-rate", &config_path("merton"), &g2, 2)?;
    compared += identical(growth_out, &g2)?;
    Ok(format!("{compared} CSV files byte-identical between --threads 1 and --threads 2"))
}

fn main() -> ExitCode {
    panic::set_hook(Box::new(|_| {}));
    let dir = TempDir::new().expect("temp dir");
    let martingale_out = dir.path().join("martingale-t1");
    let growth_out = dir.path().join("growth-t1");
    let criteria: Vec<Criterion> = vec![
        ("closed-form ergodic constants", Box::new(criterion_1)),
        ("closed-form profiles", Box::new(criterion_2)),
        ("a priori bounds", Box::new(criterion_3)),
        ("comparison harness", Box::new(criterion_4)),
        ("large-time behaviour", Box::new(criterion_5)),
        ("estimator agreement", Box::new(criterion_6)),
        ("martingale suite", Box::new(|| criterion_7(&martingale_out))),
        ("risk-sensitive growth rate", Box::new(|| criterion_8(&growth_out))),
        ("reproducibility", Box::new(|| criterion_9(dir.path(), &martingale_out, &growth_out))),
    ];
    let mut failures = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let outcome = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match outcome {
            Ok(detail) => println!("PASS criterion {} ({name}): {detail}", k + 1),
            Err(detail) => {
                failures += 1;
                println!("FAIL criterion {} ({name}): {detail}", k + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
