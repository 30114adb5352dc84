use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, StageExt};
use crate::ipc::{ipc_input, total_ipc, IpcBreakdown, IpcOptions};
use crate::params::{ModelConfig, UniformTrace};
use crate::particle::{
    calibrate_binding_probability, Calibration, CalibrationOptions, ParticleOptions, ParticleSim,
    GENERATOR_NAME,
};
use crate::readout::{fit_ridge, moving_average, nrmse, predict, FilterAlignment};
use crate::receptor::{encode_input, round_counts, sample_virtual_nodes, simulate_mean_field, StateMatrix};
use crate::tasks::{
    generate_mackey_glass, make_dataset, make_narma10_dataset, narma10_series, DatasetPair,
    MackeyGlassParams, MinMaxScaler,
};

use super::config_hash;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    #[default]
    Deterministic,
    Stochastic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum Task {
    /// Predict `x[k + horizon]` from the state at symbol k.
    MackeyGlass { horizon: usize },
    /// One-step NARMA10.
    Narma10,
}

impl Default for Task {
    fn default() -> Self {
        Task::MackeyGlass { horizon: 6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    /// Moving-average window, s; `None` leaves the trace unfiltered.
    pub window: Option<f64>,
    pub alignment: FilterAlignment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub train: usize,
    pub test: usize,
}

impl SplitConfig {
    /// 500 symbols with the default washout of 50.
    pub const REDUCED: SplitConfig = SplitConfig {
        train: 300,
        test: 150,
    };
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train: 2000,
            test: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StochasticConfig {
    /// Calibrated when absent.
    pub binding_probability: Option<f64>,
    pub calibration: CalibrationOptions,
    pub particle: ParticleOptions,
    /// Independent streams whose traces are averaged.
    pub replicates: usize,
}

impl Default for StochasticConfig {
    fn default() -> Self {
        Self {
            binding_probability: None,
            calibration: CalibrationOptions::default(),
            particle: ParticleOptions::default(),
            replicates: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IpcConfig {
    pub options: IpcOptions,
    /// Symbols scored after the washout.
    pub symbols: usize,
}

impl Default for IpcConfig {
    fn default() -> Self {
        Self {
            options: IpcOptions::default(),
            symbols: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub task: Task,
    pub engine: Engine,
    pub filter: FilterConfig,
    pub split: SplitConfig,
    /// Particle seed, NARMA10 drive seed and IPC input seed.
    pub seed: u64,
    pub mackey_glass: MackeyGlassParams,
    pub stochastic: StochasticConfig,
    pub ipc: IpcConfig,
    /// Also write the (filtered) bound-fraction trace.
    pub write_trace: bool,
}

impl ExperimentConfig {
    /// Validated copy with derived fields filled in.
    pub fn resolved(&self) -> Result<Self> {
        let mut out = self.clone();
        out.model = self.model.clone().validate()?;
        out.mackey_glass.validate()?;
        if out.stochastic.replicates == 0 {
            return Err(Error::config("stochastic replicates must be at least 1"));
        }
        if let Some(w) = out.filter.window {
            if !(w > 0.0) {
                return Err(Error::config("filter window must be positive"));
            }
        }
        if out.engine == Engine::Stochastic {
            out.model
                .reservoir
                .offset_indices(out.model.encoding.symbol_duration, out.model.reservoir.stoch_timestep)?;
            out.model.steps_per_symbol(out.model.reservoir.stoch_timestep)?;
        }
        Ok(out)
    }

    pub fn trace_step(&self) -> f64 {
        match self.engine {
            Engine::Deterministic => self.model.reservoir.det_timestep,
            Engine::Stochastic => self.model.reservoir.stoch_timestep,
        }
    }
}

/// Occupancy trace produced by either engine for one drive.
#[derive(Debug, Clone)]
pub struct ReservoirDrive {
    pub trace: UniformTrace,
    pub calibration: Option<Calibration>,
}

fn calibration_cache() -> &'static Mutex<HashMap<String, Calibration>> {
    static CACHE: OnceLock<Mutex<HashMap<String, Calibration>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Calibration for this configuration, computed once per process.
fn calibration_for(config: &ExperimentConfig) -> Result<Calibration> {
    let m = &config.model;
    let dt = m.reservoir.stoch_timestep;
    let key = config_hash(&(&m.channel, &m.receptor, dt, &config.stochastic.calibration))?;
    if let Some(c) = calibration_cache().lock().expect("cache lock").get(&key) {
        return Ok(*c);
    }
    let c = calibrate_binding_probability(&m.receptor, &m.channel, dt, &config.stochastic.calibration)?;
    calibration_cache().lock().expect("cache lock").insert(key, c);
    Ok(c)
}

/// Drives the reservoir with encoder-range inputs `u` and returns the raw
/// (unfiltered) occupancy trace. `config` must be resolved.
pub fn drive_reservoir(config: &ExperimentConfig, u: &[f64]) -> Result<ReservoirDrive> {
    let m = &config.model;
    match config.engine {
        Engine::Deterministic => {
            let run = simulate_mean_field(m, u, m.reservoir.det_timestep)?;
            Ok(ReservoirDrive {
                trace: run.bound_fraction,
                calibration: None,
            })
        }
        Engine::Stochastic => {
            let dt = m.reservoir.stoch_timestep;
            let calibration = match config.stochastic.binding_probability {
                Some(_) => None,
                None => Some(calibration_for(config).stage("calibrate")?),
            };
            let p = config
                .stochastic
                .binding_probability
                .or(calibration.map(|c| c.binding_probability))
                .expect("probability or calibration");
            let mut options = config.stochastic.particle.clone();
            let n_r = m.receptor.receptor_count as f64;
            options.initial_bound = (m.reservoir.initial_bound_fraction * n_r).round() as u32;
            let sim = ParticleSim::new(m.channel, m.receptor, dt, p, options)?;
            let schedule = round_counts(&encode_input(u, &m.encoding)?);
            let duration = u.len() as f64 * m.encoding.symbol_duration;
            let replicates = config.stochastic.replicates;
            let mut acc: Option<UniformTrace> = None;
            for stream in 0..replicates as u64 {
                let run = sim.run(&schedule, duration, config.seed, stream)?;
                match acc.as_mut() {
                    None => acc = Some(run.trace),
                    Some(a) => a
                        .values
                        .iter_mut()
                        .zip(&run.trace.values)
                        .for_each(|(x, y)| *x += y),
                }
            }
            let mut trace = acc.expect("at least one replicate");
            if replicates > 1 {
                trace.values.iter_mut().for_each(|v| *v /= replicates as f64);
            }
            Ok(ReservoirDrive { trace, calibration })
        }
    }
}

fn filtered(config: &ExperimentConfig, trace: UniformTrace) -> Result<UniformTrace> {
    match config.filter.window {
        Some(w) => moving_average(&trace, w, config.filter.alignment),
        None => Ok(trace),
    }
}

fn states_from(config: &ExperimentConfig, trace: &UniformTrace, n_symbols: usize) -> Result<StateMatrix> {
    let m = &config.model;
    let t = m.encoding.symbol_duration;
    sample_virtual_nodes(trace, t, &m.reservoir.offsets(t), n_symbols, m.reservoir.bias)
}

/// Task dataset plus the drive mapped into the encoder range, and the
/// number of washout/test inputs clamped by the train-split normalisation.
pub fn encode_task_input(config: &ExperimentConfig) -> Result<(DatasetPair, Vec<f64>, usize, Option<u64>)> {
    let washout = config.model.reservoir.washout_symbols;
    let SplitConfig { train, test } = config.split;
    let enc = &config.model.encoding;
    let to_range = |v: f64| enc.input_lo + (enc.input_hi - enc.input_lo) * v;
    match config.task {
        Task::MackeyGlass { horizon } => {
            let series = generate_mackey_glass(&config.mackey_glass, washout + train + test + horizon)?;
            let data = make_dataset(&series, horizon, train, test, washout)?;
            let scaler = MinMaxScaler::fit(&data.inputs[data.train_range()])?;
            let (unit, clamped) = scaler.apply_clamped(&data.inputs);
            let u = unit.into_iter().map(to_range).collect();
            Ok((data, u, clamped, None))
        }
        Task::Narma10 => {
            let series = narma10_series(config.seed, washout + train + test)?;
            let data = make_narma10_dataset(&series, train, test, washout)?;
            // the drive is uniform on [0, 0.5] by construction
            let u = data.inputs.iter().map(|&v| to_range((v / 0.5).clamp(0.0, 1.0))).collect();
            Ok((data, u, 0, Some(series.seed)))
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub nrmse: f64,
    pub train_nrmse: f64,
    pub config_hash: String,
    pub seed: u64,
    /// Seed of the accepted NARMA10 draw, when the task is NARMA10.
    pub task_seed: Option<u64>,
    pub engine: Engine,
    pub task: Task,
    pub binding_probability: Option<f64>,
    pub calibration: Option<Calibration>,
    pub clamped_inputs: usize,
    pub condition_estimate: f64,
    pub normal_residual: f64,
    pub washout: usize,
    pub train: usize,
    pub test: usize,
    #[serde(skip)]
    pub runtime_s: f64,
    /// `(k, y, ŷ)` over the test split, k the symbol index.
    #[serde(skip)]
    pub predictions: Vec<(usize, f64, f64)>,
    /// Occupancy trace after filtering.
    #[serde(skip)]
    pub trace: UniformTrace,
}

/// generate → encode → channel and receptor (or particles) → filter →
/// sample → fit → predict → score.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let started = Instant::now();
    let config = config.resolved().stage("validate")?;
    let (data, u, clamped, task_seed) = encode_task_input(&config).stage("generate")?;
    let drive = drive_reservoir(&config, &u).stage("simulate")?;
    let trace = filtered(&config, drive.trace).stage("filter")?;
    let states = states_from(&config, &trace, u.len()).stage("sample")?;

    let lambda = config.model.reservoir.ridge_lambda;
    let train_x = states.slice_rows(data.train_range());
    let train_y = &data.targets[data.train_range()];
    let weights = fit_ridge(&train_x, train_y, lambda).stage("fit")?;
    let test_x = states.slice_rows(data.test_range());
    let test_y = &data.targets[data.test_range()];
    let y_hat = predict(&test_x, &weights).stage("predict")?;
    let score = nrmse(test_y, &y_hat).stage("score")?;
    let train_score = nrmse(train_y, &predict(&train_x, &weights)?).stage("score")?;

    let predictions = data
        .test_range()
        .zip(test_y.iter().zip(&y_hat))
        .map(|(k, (&y, &yh))| (k, y, yh))
        .collect();
    Ok(ExperimentReport {
        nrmse: score,
        train_nrmse: train_score,
        config_hash: config_hash(&config)?,
        seed: config.seed,
        task_seed,
        engine: config.engine,
        task: config.task,
        binding_probability: config
            .stochastic
            .binding_probability
            .or(drive.calibration.map(|c| c.binding_probability))
            .filter(|_| config.engine == Engine::Stochastic),
        calibration: drive.calibration,
        clamped_inputs: clamped,
        condition_estimate: weights.condition_estimate,
        normal_residual: weights.normal_residual,
        washout: data.washout,
        train: data.train_len,
        test: data.test_len,
        runtime_s: started.elapsed().as_secs_f64(),
        predictions,
        trace,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn write_metadata(dir: &Path, runtime_s: f64, extra: serde_json::Value) -> Result<()> {
    let mut meta = serde_json::json!({
        "runtime_s": runtime_s,
        "crate_version": env!("CARGO_PKG_VERSION"),
    });
    super::merge_json(&mut meta, extra);
    write_json(&dir.join("metadata.json"), &meta)
}

fn write_trace(dir: &Path, config: &ExperimentConfig, hash: &str, trace: &UniformTrace) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(dir.join("trace.csv"))?);
    trace.write_csv(&mut out, "bound_fraction")?;
    out.flush()?;
    let generator = match config.engine {
        Engine::Stochastic => GENERATOR_NAME,
        Engine::Deterministic => "none (mean-field)",
    };
    write_json(
        &dir.join("trace.meta.json"),
        &serde_json::json!({
            "config_hash": hash,
            "seed": config.seed,
            "replicates": config.stochastic.replicates,
            "generator": generator,
        }),
    )
}

/// Writes `config.json` (resolved), `predictions.csv`, `report.json`,
/// `metadata.json` (runtime) and, if configured, the trace with its
/// metadata sidecar. Everything except `metadata.json` is a pure function
/// of the configuration.
pub fn write_experiment_outputs(
    config: &ExperimentConfig,
    report: &ExperimentReport,
    dir: &Path,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let config = config.resolved()?;
    write_json(&dir.join("config.json"), &config)?;
    let mut out = BufWriter::new(fs::File::create(dir.join("predictions.csv"))?);
    writeln!(out, "k,y,yhat")?;
    for (k, y, yh) in &report.predictions {
        writeln!(out, "{k},{y},{yh}")?;
    }
    out.flush()?;
    write_json(&dir.join("report.json"), report)?;
    write_metadata(dir, report.runtime_s, serde_json::json!({}))?;
    if config.write_trace {
        write_trace(dir, &config, &report.config_hash, &report.trace)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct IpcReport {
    pub breakdown: IpcBreakdown,
    pub config_hash: String,
    pub seed: u64,
    pub binding_probability: Option<f64>,
    #[serde(skip)]
    pub runtime_s: f64,
    #[serde(skip)]
    pub trace: UniformTrace,
}

/// IPC of the configured reservoir for i.i.d. uniform input on [-1, 1],
/// mapped affinely into the encoder range for the physical drive.
pub fn run_ipc(config: &ExperimentConfig) -> Result<IpcReport> {
    let started = Instant::now();
    let config = config.resolved().stage("validate")?;
    let washout = config.model.reservoir.washout_symbols;
    let raw = ipc_input(config.seed, washout + config.ipc.symbols);
    let enc = &config.model.encoding;
    let u: Vec<f64> = raw
        .iter()
        .map(|v| enc.input_lo + (enc.input_hi - enc.input_lo) * 0.5 * (v + 1.0))
        .collect();
    let drive = drive_reservoir(&config, &u).stage("simulate")?;
    let trace = filtered(&config, drive.trace).stage("filter")?;
    let states = states_from(&config, &trace, u.len()).stage("sample")?;
    let options = IpcOptions {
        washout,
        ..config.ipc.options
    };
    let breakdown = total_ipc(&states, &raw, &options).stage("ipc")?;
    Ok(IpcReport {
        breakdown,
        config_hash: config_hash(&config)?,
        seed: config.seed,
        binding_probability: drive.calibration.map(|c| c.binding_probability),
        runtime_s: started.elapsed().as_secs_f64(),
        trace,
    })
}

/// Writes `config.json`, `ipc_breakdown.csv`, `ipc_summary.json` and
/// `metadata.json`.
pub fn write_ipc_outputs(config: &ExperimentConfig, report: &IpcReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let config = config.resolved()?;
    write_json(&dir.join("config.json"), &config)?;
    let mut out = BufWriter::new(fs::File::create(dir.join("ipc_breakdown.csv"))?);
    report.breakdown.write_csv(&mut out)?;
    out.flush()?;
    let mut summary = report.breakdown.summary_json();
    super::merge_json(
        &mut summary,
        serde_json::json!({
            "config_hash": report.config_hash,
            "seed": report.seed,
            "binding_probability": report.binding_probability,
        }),
    );
    write_json(&dir.join("ipc_summary.json"), &summary)?;
    write_metadata(dir, report.runtime_s, serde_json::json!({}))?;
    if config.write_trace {
        write_trace(dir, &config, &report.config_hash, &report.trace)?;
    }
    Ok(())
}
