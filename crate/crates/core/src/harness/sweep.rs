use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

use super::experiment::{run_experiment, run_ipc, ExperimentConfig};
use super::{config_hash, set_path};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    Log,
    Linear,
}

impl Spacing {
    /// Log for rates and coefficients, linear for counts and durations.
    pub fn for_path(path: &str) -> Self {
        let leaf = path.rsplit('.').next().unwrap_or(path);
        if leaf.starts_with("k_on") || leaf == "k_off" || leaf == "diffusion_coefficient" {
            Spacing::Log
        } else {
            Spacing::Linear
        }
    }
}

/// One swept parameter, given either as explicit values or as a range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AxisSpec {
    Values {
        path: String,
        values: Vec<f64>,
    },
    Range {
        path: String,
        lo: f64,
        hi: f64,
        count: usize,
        #[serde(default)]
        spacing: Option<Spacing>,
    },
}

impl AxisSpec {
    pub fn path(&self) -> &str {
        match self {
            AxisSpec::Values { path, .. } | AxisSpec::Range { path, .. } => path,
        }
    }

    pub fn values(&self) -> Result<Vec<f64>> {
        match self {
            AxisSpec::Values { values, .. } => {
                if values.is_empty() {
                    return Err(Error::config(format!("axis '{}' has no values", self.path())));
                }
                Ok(values.clone())
            }
            AxisSpec::Range {
                path,
                lo,
                hi,
                count,
                spacing,
            } => {
                if *count == 0 {
                    return Err(Error::config(format!("axis '{path}' has no values")));
                }
                let spacing = spacing.unwrap_or_else(|| Spacing::for_path(path));
                if spacing == Spacing::Log && !(*lo > 0.0 && *hi > 0.0) {
                    return Err(Error::config(format!("log axis '{path}' needs positive bounds")));
                }
                if *count == 1 {
                    return Ok(vec![*lo]);
                }
                let f = |i: usize| i as f64 / (*count - 1) as f64;
                Ok((0..*count)
                    .map(|i| match spacing {
                        Spacing::Linear => lo + (hi - lo) * f(i),
                        Spacing::Log => (lo.ln() + (hi.ln() - lo.ln()) * f(i)).exp(),
                    })
                    .map(tidy)
                    .collect())
            }
        }
    }
}

/// Rounds to 12 significant digits so generated grid values print cleanly.
fn tidy(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    format!("{v:.11e}").parse().unwrap_or(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Nrmse,
    IpcTotal,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Nrmse => "nrmse",
            Metric::IpcTotal => "ipc_total",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    #[serde(default)]
    pub base: ExperimentConfig,
    pub param1: AxisSpec,
    pub param2: AxisSpec,
    pub metrics: Vec<Metric>,
    /// Largest number of cell evaluations (cells × metrics) allowed.
    #[serde(default = "default_budget")]
    pub budget: usize,
    /// Worker threads; 0 uses all available cores.
    #[serde(default)]
    pub workers: usize,
}

fn default_budget() -> usize {
    400
}

impl SweepGrid {
    /// Parameter pairs of the three studied planes, spanning two decades
    /// either side of the defaults (or a comparable linear span).
    pub fn preset(name: &str, count: usize, metric: Metric) -> Result<Self> {
        let range = |path: &str, lo: f64, hi: f64| AxisSpec::Range {
            path: path.into(),
            lo,
            hi,
            count,
            spacing: None,
        };
        let (param1, param2) = match name {
            "kon_koff" => (
                range("model.receptor.k_on_molar", 6.022e6, 6.022e10),
                range("model.receptor.k_off", 1e-2, 1e2),
            ),
            "nmax_t" => (
                range("model.encoding.n_max", 500.0, 6000.0),
                range("model.encoding.symbol_duration", 0.5, 5.0),
            ),
            "d_dist" => (
                range("model.channel.diffusion_coefficient", 1e-13, 1e-9),
                range("model.channel.distance", 5e-6, 30e-6),
            ),
            other => {
                return Err(Error::config(format!(
                    "unknown sweep preset '{other}' (kon_koff, nmax_t, d_dist)"
                )))
            }
        };
        Ok(Self {
            base: ExperimentConfig::default(),
            param1,
            param2,
            metrics: vec![metric],
            budget: default_budget(),
            workers: 0,
        })
    }

    fn validate(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        if self.param1.path() == self.param2.path() {
            return Err(Error::config("swept parameters must be distinct"));
        }
        if self.metrics.is_empty() {
            return Err(Error::config("sweep needs at least one metric"));
        }
        let a = self.param1.values()?;
        let b = self.param2.values()?;
        let evaluations = a.len() * b.len() * self.metrics.len();
        if evaluations > self.budget {
            return Err(Error::Budget(format!(
                "{evaluations} cell evaluations exceed the budget of {}",
                self.budget
            )));
        }
        Ok((a, b))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param1: f64,
    pub param2: f64,
    pub metric: Metric,
    /// NaN for failed cells.
    pub value: f64,
    /// `ok` or `failed: <reason>`.
    pub status: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CachedCell {
    value: Option<f64>,
    status: String,
}

fn cell_config(base: &Value, grid: &SweepGrid, v1: f64, v2: f64) -> Result<ExperimentConfig> {
    let mut doc = base.clone();
    set_path(&mut doc, grid.param1.path(), Value::from(v1))?;
    set_path(&mut doc, grid.param2.path(), Value::from(v2))?;
    Ok(serde_json::from_value(doc)?)
}

fn evaluate(config: &ExperimentConfig, metric: Metric) -> Result<f64> {
    match metric {
        Metric::Nrmse => Ok(run_experiment(config)?.nrmse),
        Metric::IpcTotal => Ok(run_ipc(config)?.breakdown.total),
    }
}

fn one_line(text: &str) -> String {
    text.replace([',', '\n', '\r'], ";")
}

/// Evaluates every (param1, param2, metric) cell. A failing cell is
/// recorded with status `failed: …` rather than aborting the sweep. With a
/// cache directory, each finished cell is stored under its config hash and
/// reused on later runs. Rows come back in grid order regardless of the
/// worker count.
pub fn run_sweep(grid: &SweepGrid, cache_dir: Option<&Path>) -> Result<Vec<SweepRow>> {
    let (values1, values2) = grid.validate()?;
    let base = serde_json::to_value(&grid.base)?;
    if let Some(dir) = cache_dir {
        fs::create_dir_all(dir)?;
    }
    let mut cells = Vec::new();
    for &v1 in &values1 {
        for &v2 in &values2 {
            for &metric in &grid.metrics {
                cells.push((v1, v2, metric));
            }
        }
    }
    let job = |&(v1, v2, metric): &(f64, f64, Metric)| -> Result<SweepRow> {
        let row = |value: f64, status: String| SweepRow {
            param1: v1,
            param2: v2,
            metric,
            value,
            status,
        };
        let config = match cell_config(&base, grid, v1, v2) {
            Ok(c) => c,
            Err(e) => return Ok(row(f64::NAN, format!("failed: {}", one_line(&e.to_string())))),
        };
        let key = config_hash(&(&config, metric))?;
        let cache_file = cache_dir.map(|d| d.join(format!("{key}.json")));
        if let Some(path) = cache_file.as_ref().filter(|p| p.exists()) {
            let cached: CachedCell = serde_json::from_slice(&fs::read(path)?)?;
            return Ok(row(cached.value.unwrap_or(f64::NAN), cached.status));
        }
        let (value, status) = match evaluate(&config, metric) {
            Ok(v) => (Some(v), "ok".to_string()),
            Err(e) => (None, format!("failed: {}", one_line(&e.to_string()))),
        };
        if let Some(path) = cache_file {
            let tmp = path.with_extension("tmp");
            fs::write(&tmp, serde_json::to_vec(&CachedCell { value, status: status.clone() })?)?;
            fs::rename(&tmp, &path)?;
        }
        Ok(row(value.unwrap_or(f64::NAN), status))
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(grid.workers)
        .build()
        .map_err(|e| Error::config(format!("worker pool: {e}")))?;
    pool.install(|| cells.par_iter().map(job).collect())
}

/// Long-form CSV preceded by a comment naming the swept paths.
pub fn write_sweep_csv<W: Write>(grid: &SweepGrid, rows: &[SweepRow], mut out: W) -> Result<()> {
    writeln!(out, "# param1={} param2={}", grid.param1.path(), grid.param2.path())?;
    writeln!(out, "param1,param2,metric,value,status")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.param1,
            r.param2,
            r.metric.name(),
            r.value,
            r.status
        )?;
    }
    Ok(())
}

/// Axis names (when the comment line is present) and rows.
pub fn read_sweep_csv<R: BufRead>(input: R) -> Result<(Option<(String, String)>, Vec<SweepRow>)> {
    let mut names = None;
    let mut rows = Vec::new();
    let mut header_seen = false;
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let mut p1 = None;
            let mut p2 = None;
            for part in comment.split_whitespace() {
                if let Some(v) = part.strip_prefix("param1=") {
                    p1 = Some(v.to_string());
                } else if let Some(v) = part.strip_prefix("param2=") {
                    p2 = Some(v.to_string());
                }
            }
            if let (Some(a), Some(b)) = (p1, p2) {
                names = Some((a, b));
            }
            continue;
        }
        if !header_seen {
            if line != "param1,param2,metric,value,status" {
                return Err(Error::Format(format!("line {}: unexpected header '{line}'", i + 1)));
            }
            header_seen = true;
            continue;
        }
        let fields: Vec<&str> = line.splitn(5, ',').collect();
        if fields.len() != 5 {
            return Err(Error::Format(format!("line {}: expected 5 fields", i + 1)));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::Format(format!("line {}: '{s}' is not a number", i + 1)))
        };
        let metric = match fields[2] {
            "nrmse" => Metric::Nrmse,
            "ipc_total" => Metric::IpcTotal,
            other => return Err(Error::Format(format!("line {}: unknown metric '{other}'", i + 1))),
        };
        rows.push(SweepRow {
            param1: num(fields[0])?,
            param2: num(fields[1])?,
            metric,
            value: num(fields[3])?,
            status: fields[4].to_string(),
        });
    }
    if !header_seen {
        return Err(Error::Format("missing header".into()));
    }
    Ok((names, rows))
}
