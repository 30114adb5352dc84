//! Mean-field receptor occupancy, input encoding and virtual-node sampling.

use nalgebra::DMatrix;

use crate::channel::{concentration_trace, Grid};
use crate::error::{Error, Result};
use crate::params::{EncodingParams, ModelConfig, ReceptorParams, ReleaseSchedule, UniformTrace};

/// How far outside [0, 1] the integrated occupancy may drift before the
/// step is declared unstable.
const OCCUPANCY_SLACK: f64 = 1e-9;

/// One release per input sample at `n * T`, count given by the affine encoder.
pub fn encode_input(u: &[f64], encoding: &EncodingParams) -> Result<ReleaseSchedule> {
    let mut schedule = ReleaseSchedule::new();
    for (index, &value) in u.iter().enumerate() {
        if !(value >= encoding.input_lo && value <= encoding.input_hi) {
            return Err(Error::InputOutOfRange {
                index,
                value,
                lo: encoding.input_lo,
                hi: encoding.input_hi,
            });
        }
        schedule.push(index as f64 * encoding.symbol_duration, encoding.molecules(value))?;
    }
    Ok(schedule)
}

/// Same schedule with counts rounded to whole molecules.
pub fn round_counts(schedule: &ReleaseSchedule) -> ReleaseSchedule {
    let mut rounded = ReleaseSchedule::new();
    for r in schedule.releases() {
        rounded
            .push(r.time, r.count.round())
            .expect("rounding preserves schedule invariants");
    }
    rounded
}

/// RK4 integration of `db/dt = k_on c (1 - b) - k_off b` on the grid of
/// `c_trace`, with the concentration linearly interpolated at half steps.
pub fn integrate_bound_fraction(
    c_trace: &UniformTrace,
    receptor: &ReceptorParams,
    b0: f64,
) -> Result<UniformTrace> {
    if !(0.0..=1.0).contains(&b0) {
        return Err(Error::config("initial bound fraction must lie in [0, 1]"));
    }
    let k_on = receptor.k_on();
    let k_off = receptor.k_off;
    let h = c_trace.step;
    let c = &c_trace.values;
    let rate = |b: f64, c: f64| k_on * c * (1.0 - b) - k_off * b;

    let mut values = Vec::with_capacity(c.len());
    let mut b = b0;
    values.push(b);
    for i in 0..c.len().saturating_sub(1) {
        let (c0, c1) = (c[i], c[i + 1]);
        let cm = 0.5 * (c0 + c1);
        let k1 = rate(b, c0);
        let k2 = rate(b + 0.5 * h * k1, cm);
        let k3 = rate(b + 0.5 * h * k2, cm);
        let k4 = rate(b + h * k3, c1);
        b += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if !(b >= -OCCUPANCY_SLACK && b <= 1.0 + OCCUPANCY_SLACK) {
            return Err(Error::Unstable {
                time: c_trace.time(i + 1),
                value: b,
            });
        }
        values.push(b);
    }
    UniformTrace::new(c_trace.start_time, h, values)
}

/// Virtual-node states, one row per symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct StateMatrix {
    data: DMatrix<f64>,
    offsets: Vec<f64>,
    bias: bool,
}

impl StateMatrix {
    /// Wraps an arbitrary design matrix; the bias column, if requested, is
    /// appended here. Offsets label the node columns.
    pub fn from_columns(nodes: DMatrix<f64>, offsets: Vec<f64>, bias: bool) -> Result<Self> {
        if offsets.len() != nodes.ncols() {
            return Err(Error::Shape(format!(
                "{} offsets for {} node columns",
                offsets.len(),
                nodes.ncols()
            )));
        }
        let data = if bias {
            nodes.insert_column(offsets.len(), 1.0)
        } else {
            nodes
        };
        Ok(Self {
            data,
            offsets,
            bias,
        })
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    /// Columns including the bias column.
    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    /// Virtual-node columns only.
    pub fn node_count(&self) -> usize {
        self.offsets.len()
    }

    pub fn has_bias(&self) -> bool {
        self.bias
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    /// The node columns without the bias column.
    pub fn nodes(&self) -> DMatrix<f64> {
        self.data.columns(0, self.node_count()).into_owned()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[(row, col)]
    }

    /// Rows `range` as a new matrix.
    pub fn slice_rows(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            data: self.data.rows(range.start, range.len()).into_owned(),
            offsets: self.offsets.clone(),
            bias: self.bias,
        }
    }

    pub fn with_bias(&self, bias: bool) -> Self {
        Self::from_columns(self.nodes(), self.offsets.clone(), bias)
            .expect("offsets match node columns")
    }

    /// Row-major CSV with a header naming each column by its offset.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut header: Vec<String> = self.offsets.iter().map(|t| format!("tau_{t}")).collect();
        if self.bias {
            header.push("bias".into());
        }
        writeln!(out, "{}", header.join(","))?;
        for r in 0..self.rows() {
            let row: Vec<String> = (0..self.cols()).map(|c| self.data[(r, c)].to_string()).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Reads `b(nT + τ_i)` for every symbol `n` and offset `τ_i`.
pub fn sample_virtual_nodes(
    b_trace: &UniformTrace,
    symbol_duration: f64,
    offsets: &[f64],
    n_symbols: usize,
    with_bias: bool,
) -> Result<StateMatrix> {
    let steps_per_symbol = crate::params::grid_index(symbol_duration, b_trace.step)
        .filter(|&k| k > 0)
        .ok_or_else(|| Error::config("symbol duration must be a multiple of the trace step"))?;
    let indices: Vec<usize> = offsets
        .iter()
        .map(|&tau| {
            crate::params::grid_index(tau, b_trace.step).ok_or_else(|| {
                Error::config(format!("offset {tau} s does not fall on the trace grid"))
            })
        })
        .collect::<Result<_>>()?;
    let last = indices.iter().copied().max().unwrap_or(0);
    let required = if n_symbols == 0 {
        0
    } else {
        (n_symbols - 1) * steps_per_symbol + last + 1
    };
    if b_trace.len() < required {
        return Err(Error::TooShort {
            what: "bound-fraction trace",
            required,
            available: b_trace.len(),
        });
    }
    let nodes = DMatrix::from_fn(n_symbols, indices.len(), |n, i| {
        b_trace.values[n * steps_per_symbol + indices[i]]
    });
    StateMatrix::from_columns(nodes, offsets.to_vec(), with_bias)
}

/// Concentration and occupancy traces for an encoded input under the
/// mean-field model, on the deterministic grid.
#[derive(Debug, Clone)]
pub struct MeanFieldRun {
    pub concentration: UniformTrace,
    pub bound_fraction: UniformTrace,
}

/// Encodes `u`, superposes the releases and integrates the receptor ODE
/// up to the end of the last symbol.
pub fn simulate_mean_field(config: &ModelConfig, u: &[f64], step: f64) -> Result<MeanFieldRun> {
    let schedule = encode_input(u, &config.encoding)?;
    simulate_mean_field_schedule(config, &schedule, u.len(), step)
}

pub fn simulate_mean_field_schedule(
    config: &ModelConfig,
    schedule: &ReleaseSchedule,
    n_symbols: usize,
    step: f64,
) -> Result<MeanFieldRun> {
    let sps = config.steps_per_symbol(step)?;
    let grid = Grid::new(0.0, step, n_symbols * sps + 1);
    let concentration = concentration_trace(
        schedule,
        &config.channel,
        grid,
        config.reservoir.isi_truncation_horizon,
    )?;
    let bound_fraction = integrate_bound_fraction(
        &concentration,
        &config.receptor,
        config.reservoir.initial_bound_fraction,
    )?;
    Ok(MeanFieldRun {
        concentration,
        bound_fraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ModelConfig;

    fn cfg() -> ModelConfig {
        ModelConfig::default().validate().unwrap()
    }

    fn constant_trace(c: f64, step: f64, n: usize) -> UniformTrace {
        UniformTrace::new(0.0, step, vec![c; n]).unwrap()
    }

    #[test]
    fn encoder_endpoints_and_midpoint() {
        let e = EncodingParams::default();
        let s = encode_input(&[0.0, 1.0, 0.5], &e).unwrap();
        let counts: Vec<f64> = s.releases().iter().map(|r| r.count).collect();
        assert_eq!(counts, vec![100.0, 3000.0, 1550.0]);
        let times: Vec<f64> = s.releases().iter().map(|r| r.time).collect();
        assert_eq!(times, vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn encoder_rejects_out_of_range() {
        let e = EncodingParams::default();
        match encode_input(&[0.2, 1.3], &e) {
            Err(Error::InputOutOfRange { index, .. }) => assert_eq!(index, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn pure_decay_without_ligand() {
        let r = ReceptorParams::default();
        let trace = integrate_bound_fraction(&constant_trace(0.0, 1e-3, 3001), &r, 0.5).unwrap();
        for (i, b) in trace.values.iter().enumerate() {
            let exact = 0.5 * (-trace.time(i)).exp();
            assert!((b - exact).abs() < 1e-12, "{i}: {b} vs {exact}");
        }
    }

    #[test]
    fn zero_stays_zero() {
        let r = ReceptorParams::default();
        let trace = integrate_bound_fraction(&constant_trace(0.0, 1e-3, 1000), &r, 0.0).unwrap();
        assert!(trace.values.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn steady_state_matches_closed_form() {
        let mut r = ReceptorParams::default();
        r.validate().unwrap();
        let c = 2.21e17;
        let closed = r.k_on() * c / (r.k_on() * c + r.k_off);
        assert!((closed - 0.181).abs() < 5e-4, "{closed}");
        let trace = integrate_bound_fraction(&constant_trace(c, 1e-3, 30_001), &r, 0.0).unwrap();
        assert!((trace.values.last().unwrap() - closed).abs() < 1e-6);
        assert!((r.steady_state(c) - closed).abs() < 1e-15);
    }

    #[test]
    fn huge_step_is_reported_unstable() {
        let r = ReceptorParams {
            k_off: 1e4,
            ..ReceptorParams::default()
        };
        let err = integrate_bound_fraction(&constant_trace(1e18, 1e-3, 100), &r, 0.5).unwrap_err();
        assert!(matches!(err, Error::Unstable { .. }), "{err}");
    }

    #[test]
    fn constant_trace_samples_constant() {
        let b = constant_trace(0.3, 1e-3, 5001);
        let offsets = crate::params::equidistant_offsets(1.0, 100);
        let x = sample_virtual_nodes(&b, 1.0, &offsets, 5, false).unwrap();
        assert_eq!((x.rows(), x.cols()), (5, 100));
        assert!(x.matrix().iter().all(|&v| v == 0.3));
        let xb = sample_virtual_nodes(&b, 1.0, &offsets, 5, true).unwrap();
        assert_eq!(xb.cols(), 101);
        assert!(xb.matrix().column(100).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn single_node_reads_end_of_symbol() {
        let values: Vec<f64> = (0..=4000).map(|i| i as f64).collect();
        let b = UniformTrace::new(0.0, 1e-3, values).unwrap();
        let x = sample_virtual_nodes(&b, 1.0, &[1.0], 4, false).unwrap();
        let col: Vec<f64> = x.matrix().column(0).iter().copied().collect();
        assert_eq!(col, vec![1000.0, 2000.0, 3000.0, 4000.0]);
    }

    #[test]
    fn default_offsets_hit_every_tenth_index() {
        let values: Vec<f64> = (0..=2000).map(|i| i as f64).collect();
        let b = UniformTrace::new(0.0, 1e-3, values).unwrap();
        let c = cfg();
        let x = sample_virtual_nodes(&b, 1.0, &c.reservoir.offsets(1.0), 2, false).unwrap();
        for i in 0..100 {
            assert_eq!(x.get(0, i), (10 * (i + 1)) as f64);
            assert_eq!(x.get(1, i), (1000 + 10 * (i + 1)) as f64);
        }
    }

    #[test]
    fn short_trace_reports_lengths() {
        let b = constant_trace(0.1, 1e-3, 1500);
        let offsets = crate::params::equidistant_offsets(1.0, 100);
        match sample_virtual_nodes(&b, 1.0, &offsets, 2, false) {
            Err(Error::TooShort {
                required,
                available,
                ..
            }) => assert_eq!((required, available), (2001, 1500)),
            other => panic!("{other:?}"),
        }
    }

    fn pseudo_random_input(n: usize) -> Vec<f64> {
        // deterministic low-discrepancy sequence in [0, 1)
        (0..n).map(|k| (k as f64 * 0.618_033_988_749_895).fract()).collect()
    }

    #[test]
    fn echo_state_property() {
        let mut a = cfg();
        let u = pseudo_random_input(60);
        let run_a = simulate_mean_field(&a, &u, 1e-3).unwrap();
        a.reservoir.initial_bound_fraction = 1.0;
        let run_b = simulate_mean_field(&a, &u, 1e-3).unwrap();
        let idx = 50 * 1000;
        let gap = (run_a.bound_fraction.values[idx] - run_b.bound_fraction.values[idx]).abs();
        assert!(gap < 1e-6, "{gap}");
    }

    #[test]
    fn saturation_keeps_occupancy_below_one() {
        let c = cfg();
        let u = pseudo_random_input(40);
        let run = simulate_mean_field(&c, &u, 1e-3).unwrap();
        let mut scaled = run.concentration.clone();
        scaled.values.iter_mut().for_each(|v| *v *= 1000.0);
        let b = integrate_bound_fraction(&scaled, &c.receptor, 0.0).unwrap();
        assert!(b.values.iter().all(|&v| v < 1.0 && v >= 0.0));
    }

    #[test]
    fn halving_the_step_changes_states_little() {
        let c = cfg();
        let u = pseudo_random_input(80);
        let offsets = c.reservoir.offsets(1.0);
        let coarse = simulate_mean_field(&c, &u, 1e-3).unwrap();
        let fine = simulate_mean_field(&c, &u, 5e-4).unwrap();
        let xc = sample_virtual_nodes(&coarse.bound_fraction, 1.0, &offsets, 80, false).unwrap();
        let xf = sample_virtual_nodes(&fine.bound_fraction, 1.0, &offsets, 80, false).unwrap();
        let worst = (xc.matrix() - xf.matrix()).amax();
        assert!(worst < 1e-6, "{worst}");
    }
}
