//! Benchmark series and supervised datasets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mackey–Glass delay differential equation
/// `dx/dt = β x(t-τ) / (1 + x(t-τ)^n) - γ x(t)`, integrated with RK4.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MackeyGlassParams {
    pub beta: f64,
    pub gamma: f64,
    pub exponent: f64,
    pub delay: f64,
    /// Integration step in model time units.
    pub step: f64,
    /// Integration steps per emitted sample.
    pub sample_stride: usize,
    /// Constant history on `[-τ, 0]`.
    pub history_init: f64,
    /// Model time discarded before the first emitted sample.
    pub transient: f64,
}

impl Default for MackeyGlassParams {
    fn default() -> Self {
        Self {
            beta: 0.2,
            gamma: 0.1,
            exponent: 10.0,
            delay: 17.0,
            step: 0.1,
            sample_stride: 10,
            history_init: 1.2,
            transient: 1000.0,
        }
    }
}

impl MackeyGlassParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.gamma >= 0.0) {
            return Err(Error::config("Mackey-Glass rates must be non-negative"));
        }
        if !(self.delay > 0.0) || !(self.step > 0.0) || self.sample_stride == 0 {
            return Err(Error::config(
                "Mackey-Glass delay, step and sample stride must be positive",
            ));
        }
        if !(self.transient >= 0.0) || !self.history_init.is_finite() {
            return Err(Error::config("Mackey-Glass transient and history must be finite"));
        }
        Ok(())
    }
}

/// Uniform-step history of the integrated state with cubic interpolation
/// for off-grid delayed lookups. Times before zero return the initial history.
struct DelayHistory {
    step: f64,
    init: f64,
    values: Vec<f64>,
}

impl DelayHistory {
    fn point(&self, index: i64) -> f64 {
        if index < 0 {
            self.init
        } else {
            self.values[index as usize]
        }
    }

    fn at(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return self.init;
        }
        let pos = t / self.step;
        let k = pos.floor();
        let frac = pos - k;
        let k = k as i64;
        if frac < 1e-12 {
            return self.point(k);
        }
        let last = self.values.len() as i64 - 1;
        if k + 2 > last {
            // not enough points ahead; linear between the two newest samples
            let (a, b) = (self.point(k), self.point((k + 1).min(last)));
            return a + frac * (b - a);
        }
        let (p0, p1, p2, p3) = (
            self.point(k - 1),
            self.point(k),
            self.point(k + 1),
            self.point(k + 2),
        );
        // cubic Lagrange through k-1, k, k+1, k+2
        let s = frac;
        p0 * (-s * (s - 1.0) * (s - 2.0) / 6.0)
            + p1 * ((s + 1.0) * (s - 1.0) * (s - 2.0) / 2.0)
            + p2 * (-(s + 1.0) * s * (s - 2.0) / 2.0)
            + p3 * ((s + 1.0) * s * (s - 1.0) / 6.0)
    }
}

/// Emits `length` samples, one every `sample_stride` integration steps,
/// after discarding the transient.
pub fn generate_mackey_glass(params: &MackeyGlassParams, length: usize) -> Result<Vec<f64>> {
    params.validate()?;
    if length == 0 {
        return Err(Error::config("series length must be positive"));
    }
    let h = params.step;
    let transient_steps = (params.transient / h).round() as usize;
    let total_steps = transient_steps + (length - 1) * params.sample_stride;
    let field = |x: f64, delayed: f64| {
        params.beta * delayed / (1.0 + delayed.powf(params.exponent)) - params.gamma * x
    };

    let mut history = DelayHistory {
        step: h,
        init: params.history_init,
        values: Vec::with_capacity(total_steps + 1),
    };
    history.values.push(params.history_init);
    let mut x = params.history_init;
    for j in 0..total_steps {
        let t = j as f64 * h;
        let d0 = history.at(t - params.delay);
        let dm = history.at(t + 0.5 * h - params.delay);
        let d1 = history.at(t + h - params.delay);
        let k1 = field(x, d0);
        let k2 = field(x + 0.5 * h * k1, dm);
        let k3 = field(x + 0.5 * h * k2, dm);
        let k4 = field(x + h * k3, d1);
        x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if !x.is_finite() {
            return Err(Error::Divergence {
                what: "Mackey-Glass integration",
                step: j + 1,
            });
        }
        history.values.push(x);
    }
    Ok(history.values[transient_steps..]
        .iter()
        .step_by(params.sample_stride)
        .copied()
        .collect())
}

/// NARMA10 response to the drive `u`:
/// `y(k+1) = 0.3 y(k) + 0.05 y(k) Σ_{i=0..9} y(k-i) + 1.5 u(k-9) u(k) + 0.1`
/// with zero history. Returns `u.len() + 1` values, `y[0] = 0`.
pub fn generate_narma10(u: &[f64]) -> Result<Vec<f64>> {
    if u.len() <= 10 {
        return Err(Error::TooShort {
            what: "NARMA10 input",
            required: 11,
            available: u.len(),
        });
    }
    if let Some(index) = u.iter().position(|v| !(0.0..=0.5).contains(v)) {
        return Err(Error::InputOutOfRange {
            index,
            value: u[index],
            lo: 0.0,
            hi: 0.5,
        });
    }
    let mut y = vec![0.0; u.len() + 1];
    for k in 0..u.len() {
        let window: f64 = y[k.saturating_sub(9)..=k].iter().sum();
        let delayed_u = if k >= 9 { u[k - 9] } else { 0.0 };
        let next = 0.3 * y[k] + 0.05 * y[k] * window + 1.5 * delayed_u * u[k] + 0.1;
        if !(next.abs() <= 1.0) {
            return Err(Error::Divergence {
                what: "NARMA10 recursion",
                step: k + 1,
            });
        }
        y[k + 1] = next;
    }
    Ok(y)
}

/// i.i.d. uniform drive on [0, 0.5].
pub fn narma10_input(seed: u64, length: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..length).map(|_| rng.random_range(0.0..=0.5)).collect()
}

/// A NARMA10 drive and response, with the seed that produced a bounded run.
#[derive(Debug, Clone, PartialEq)]
pub struct Narma10Series {
    pub input: Vec<f64>,
    pub output: Vec<f64>,
    pub seed: u64,
}

pub const NARMA10_MAX_ATTEMPTS: u64 = 10;

/// Draws a drive and evaluates the recursion; a divergent draw is replaced
/// by one from the next seed, up to [`NARMA10_MAX_ATTEMPTS`] times.
pub fn narma10_series(seed: u64, length: usize) -> Result<Narma10Series> {
    let mut last_err = None;
    for attempt in 0..NARMA10_MAX_ATTEMPTS {
        let s = seed.wrapping_add(attempt);
        let input = narma10_input(s, length);
        match generate_narma10(&input) {
            Ok(output) => {
                return Ok(Narma10Series {
                    input,
                    output,
                    seed: s,
                })
            }
            Err(e @ Error::Divergence { .. }) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.expect("at least one attempt"))
}

/// Inputs, targets and a contiguous washout / train / test split.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetPair {
    /// Drive sequence, including the washout prefix.
    pub inputs: Vec<f64>,
    /// `targets[k]` is the value to predict from the state at symbol `k`.
    pub targets: Vec<f64>,
    pub horizon: usize,
    pub washout: usize,
    pub train_len: usize,
    pub test_len: usize,
}

impl DatasetPair {
    pub fn train_range(&self) -> std::ops::Range<usize> {
        self.washout..self.washout + self.train_len
    }

    pub fn test_range(&self) -> std::ops::Range<usize> {
        let start = self.washout + self.train_len;
        start..start + self.test_len
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

fn check_split(train_len: usize, test_len: usize) -> Result<()> {
    if train_len == 0 || test_len == 0 {
        return Err(Error::config("train and test lengths must be positive"));
    }
    Ok(())
}

/// Forecasting dataset: input `series[k]`, target `series[k + horizon]`.
pub fn make_dataset(
    series: &[f64],
    horizon: usize,
    train_len: usize,
    test_len: usize,
    washout: usize,
) -> Result<DatasetPair> {
    check_split(train_len, test_len)?;
    let driven = washout + train_len + test_len;
    let required = driven + horizon;
    if series.len() < required {
        return Err(Error::TooShort {
            what: "series",
            required,
            available: series.len(),
        });
    }
    Ok(DatasetPair {
        inputs: series[..driven].to_vec(),
        targets: series[horizon..required].to_vec(),
        horizon,
        washout,
        train_len,
        test_len,
    })
}

/// One-step NARMA10 dataset: input `u[k]`, target `y[k + 1]`.
pub fn make_narma10_dataset(
    series: &Narma10Series,
    train_len: usize,
    test_len: usize,
    washout: usize,
) -> Result<DatasetPair> {
    check_split(train_len, test_len)?;
    let driven = washout + train_len + test_len;
    if series.input.len() < driven || series.output.len() < driven + 1 {
        return Err(Error::TooShort {
            what: "NARMA10 series",
            required: driven,
            available: series.input.len().min(series.output.len().saturating_sub(1)),
        });
    }
    Ok(DatasetPair {
        inputs: series.input[..driven].to_vec(),
        targets: series.output[1..=driven].to_vec(),
        horizon: 1,
        washout,
        train_len,
        test_len,
    })
}

/// Affine map fitted on one split and reused on others.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub lo: f64,
    pub hi: f64,
}

impl MinMaxScaler {
    pub fn fit(values: &[f64]) -> Result<Self> {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(hi > lo) {
            return Err(Error::Degenerate(
                "cannot normalise a constant or empty series".into(),
            ));
        }
        Ok(Self { lo, hi })
    }

    /// Maps `[lo, hi]` to `[0, 1]`.
    pub fn apply(&self, x: f64) -> f64 {
        (x - self.lo) / (self.hi - self.lo)
    }

    /// Like [`apply`](Self::apply) but clamped to `[0, 1]`; returns the
    /// mapped values and how many fell outside.
    pub fn apply_clamped(&self, values: &[f64]) -> (Vec<f64>, usize) {
        let mut clamped = 0;
        let mapped = values
            .iter()
            .map(|&x| {
                let v = self.apply(x);
                if !(0.0..=1.0).contains(&v) {
                    clamped += 1;
                }
                v.clamp(0.0, 1.0)
            })
            .collect();
        (mapped, clamped)
    }
}

/// Single-column CSV with a header; an optional `# seed: N` comment first.
pub fn write_series_csv<W: std::io::Write>(
    mut out: W,
    column: &str,
    values: &[f64],
    seed: Option<u64>,
) -> std::io::Result<()> {
    if let Some(seed) = seed {
        writeln!(out, "# seed: {seed}")?;
    }
    writeln!(out, "{column}")?;
    for v in values {
        writeln!(out, "{v}")?;
    }
    Ok(())
}

/// Reads a series written by [`write_series_csv`]; returns values and seed.
pub fn read_series_csv<R: std::io::BufRead>(input: R) -> Result<(Vec<f64>, Option<u64>)> {
    let mut seed = None;
    let mut values = Vec::new();
    let mut header_seen = false;
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(s) = comment.trim().strip_prefix("seed:") {
                seed = s.trim().parse().ok();
            }
            continue;
        }
        if !header_seen {
            header_seen = true;
            continue;
        }
        let v: f64 = line
            .parse()
            .map_err(|_| Error::Format(format!("line {}: not a number: {line}", lineno + 1)))?;
        values.push(v);
    }
    if !header_seen {
        return Err(Error::Format("series CSV has no header".into()));
    }
    Ok((values, seed))
}
