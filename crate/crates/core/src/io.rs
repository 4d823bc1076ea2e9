//! CSV and JSON outputs with embedded reproducibility metadata.
//!
//! CSV files start with `# key=value` lines, then a header row. Floats are
//! written with 17 significant digits so doubles round-trip exactly.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::config::Experiment;
use crate::ergodic::{ErgodicSolution, LambdaMethod};
use crate::pde::{Grid1D, Profile};

pub const VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

/// Ordered key/value metadata.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metadata(Vec<(String, String)>);

impl Metadata {
    /// Version, config digest, seed, grid and scheme parameters.
    pub fn for_experiment(exp: &Experiment, seed: Option<u64>) -> Self {
        let s = &exp.config.scheme;
        let mut m = Self::default();
        m.push("version", VERSION);
        m.push("experiment", &exp.config.name);
        m.push("config_sha256", &exp.digest);
        m.push("seed", seed.map_or_else(|| "none".to_string(), |s| s.to_string()));
        m.push("grid_v_min", fmt_f64(exp.grid.v_min));
        m.push("grid_v_max", fmt_f64(exp.grid.v_max));
        m.push("grid_n", exp.grid.n);
        m.push("scheme_dt", fmt_f64(s.dt));
        m.push("scheme_theta", fmt_f64(s.theta_scheme));
        m.push("scheme_boundary", format!("{:?}", s.boundary));
        m.push("scheme_stationarity_tol", fmt_f64(s.stationarity_tol));
        m
    }

    pub fn push(&mut self, key: &str, value: impl ToString) {
        self.0.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_json(&self) -> Value {
        Value::Object(self.0.iter().map(|(k, v)| (k.clone(), Value::String(v.clone()))).collect::<Map<_, _>>())
    }
}

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes metadata comment lines, the header and the rows.
pub fn write_csv(path: &Path, meta: &Metadata, header: &[&str], rows: &[Vec<String>]) -> io::Result<()> {
    let mut buf = Vec::new();
    for (k, v) in &meta.0 {
        writeln!(buf, "# {k}={v}")?;
    }
    {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(&mut buf);
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        w.flush()?;
    }
    fs::write(path, buf)
}

/// Writes `{"metadata": ..., "result": ...}` pretty-printed.
pub fn write_json(path: &Path, meta: &Metadata, result: &impl Serialize) -> io::Result<()> {
    let doc = json!({ "metadata": meta.to_json(), "result": result });
    let mut text = serde_json::to_string_pretty(&doc).map_err(io::Error::other)?;
    text.push('\n');
    fs::write(path, text)
}

/// Metadata and data rows of a CSV written by [`write_csv`].
pub fn read_csv(path: &Path) -> io::Result<(Metadata, Vec<String>, Vec<Vec<String>>)> {
    let text = fs::read_to_string(path)?;
    let mut meta = Metadata::default();
    let mut body = String::new();
    for line in text.lines() {
        match line.strip_prefix("# ") {
            Some(kv) => {
                let (k, v) = kv.split_once('=').unwrap_or((kv, ""));
                meta.push(k, v);
            }
            None => {
                body.push_str(line);
                body.push('\n');
            }
        }
    }
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let header = r.headers()?.iter().map(str::to_string).collect();
    let rows = r.records().map(|rec| rec.map(|r| r.iter().map(str::to_string).collect())).collect::<Result<_, _>>()?;
    Ok((meta, header, rows))
}

pub const PROFILE_HEADER: [&str; 4] = ["regime", "v", "y", "z"];

/// Rows of the ergodic profile file.
pub fn profile_rows(grid: Grid1D, y: &Profile, z: &Profile) -> Vec<Vec<String>> {
    let mut rows = Vec::with_capacity(y.len() * grid.n);
    for (i, (yr, zr)) in y.iter().zip(z).enumerate() {
        for j in 0..grid.n {
            rows.push(vec![i.to_string(), fmt_f64(grid.node(j)), fmt_f64(yr[j]), fmt_f64(zr[j])]);
        }
    }
    rows
}

fn invalid(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

fn meta_f64(meta: &Metadata, key: &str) -> io::Result<f64> {
    meta.get(key).ok_or_else(|| invalid(format!("missing metadata {key}")))?.parse().map_err(|_| invalid(key))
}

/// Reads a profile written by solve-ergodic and checks it lives on `grid`.
pub fn read_ergodic_profile(
    path: &Path,
    grid: Grid1D,
    kappa: f64,
    bounds: &crate::model::SchemeBounds,
) -> io::Result<ErgodicSolution> {
    let (meta, header, rows) = read_csv(path)?;
    if header != PROFILE_HEADER {
        return Err(invalid("unexpected ergodic profile header"));
    }
    let stored = Grid1D::new(
        meta_f64(&meta, "grid_v_min")?,
        meta_f64(&meta, "grid_v_max")?,
        meta_f64(&meta, "grid_n")? as usize,
    )
    .map_err(|e| invalid(e.to_string()))?;
    if stored != grid {
        return Err(invalid("ergodic profile grid differs from the configured grid"));
    }
    let mut y: Profile = Vec::new();
    for row in &rows {
        let i: usize = row[0].parse().map_err(|_| invalid("regime"))?;
        let value: f64 = row[2].parse().map_err(|_| invalid("y"))?;
        if i == y.len() {
            y.push(Vec::with_capacity(grid.n));
        }
        y.get_mut(i).ok_or_else(|| invalid("regimes out of order"))?.push(value);
    }
    if y.is_empty() || y.iter().any(|r| r.len() != grid.n) {
        return Err(invalid("ergodic profile has the wrong number of rows"));
    }
    let method: LambdaMethod = serde_json::from_value(Value::String(meta.get("lambda_method").unwrap_or("").into()))
        .map_err(|_| invalid("lambda_method"))?;
    Ok(ErgodicSolution::from_profile(
        grid,
        kappa,
        y,
        meta_f64(&meta, "lambda")?,
        meta_f64(&meta, "lambda_vd")?,
        method,
        meta_f64(&meta, "reference_regime")? as usize,
        meta_f64(&meta, "v0")?,
        bounds,
    ))
}
