//! Physical and reservoir parameter records, their defaults and validation.
//!
//! Everything is stored in SI units (metres, seconds) with molecule counts
//! instead of moles. The only unit conversion performed is the association
//! rate, which is supplied in M⁻¹s⁻¹ and converted once to m³·s⁻¹ per
//! molecule during validation.
//!
//! | Symbol | Field | Default |
//! |--------|-------|---------|
//! | D | `ChannelParams::diffusion_coefficient` | 1e-11 m²/s |
//! | d | `ChannelParams::distance` | 10 µm |
//! | r_rx | `ChannelParams::receiver_radius` | 3 µm |
//! | k_on | `ReceptorParams::k_on_molar` | 6.022e8 M⁻¹s⁻¹ |
//! | k_off | `ReceptorParams::k_off` | 1 s⁻¹ |
//! | N_max, N_min | `EncodingParams::{n_max, n_min}` | 3000, 100 |
//! | T | `EncodingParams::symbol_duration` | 1 s |
//! | M | `ReservoirParams::virtual_node_count` | 100 |
//! | Δt_d, Δt_s | `ReservoirParams::{det_timestep, stoch_timestep}` | 1 ms, 10 ms |

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const AVOGADRO: f64 = 6.022e23;
pub const LITRES_PER_CUBIC_METRE: f64 = 1000.0;

/// Relative slack allowed when checking that a time lies on a grid.
const GRID_ALIGNMENT_TOL: f64 = 1e-6;

/// Converts an association rate from M⁻¹s⁻¹ to m³·s⁻¹·molecule⁻¹.
pub fn molar_to_si(k_on_molar: f64) -> f64 {
    k_on_molar / (AVOGADRO * LITRES_PER_CUBIC_METRE)
}

/// Inverse of [`molar_to_si`].
pub fn si_to_molar(k_on_si: f64) -> f64 {
    k_on_si * (AVOGADRO * LITRES_PER_CUBIC_METRE)
}

/// Free-diffusion channel between a point transmitter and the receiver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelParams {
    /// m²/s
    pub diffusion_coefficient: f64,
    /// Transmitter to receiver-centre distance, m.
    pub distance: f64,
    /// m
    pub receiver_radius: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            diffusion_coefficient: 1e-11,
            distance: 10e-6,
            receiver_radius: 3e-6,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        positive("diffusion coefficient", self.diffusion_coefficient)?;
        positive("distance", self.distance)?;
        positive("receiver radius", self.receiver_radius)?;
        if self.distance <= self.receiver_radius {
            return Err(Error::config(format!(
                "distance ({} m) must exceed receiver radius ({} m)",
                self.distance, self.receiver_radius
            )));
        }
        Ok(())
    }
}

/// Reversible ligand-receptor kinetics at the receiver surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReceptorParams {
    /// Association rate as quoted, M⁻¹s⁻¹.
    pub k_on_molar: f64,
    /// Association rate per molecule, m³/s. Derived from `k_on_molar` during
    /// validation; if supplied it must agree with the conversion.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_on_si: Option<f64>,
    /// s⁻¹
    pub k_off: f64,
    /// Number of surface receptors N_R.
    pub receptor_count: u32,
}

/// Receptor count used when none is configured. Only the particle simulator
/// depends on it; the mean-field model works with fractions.
pub const DEFAULT_RECEPTOR_COUNT: u32 = 200;

impl Default for ReceptorParams {
    fn default() -> Self {
        Self {
            k_on_molar: 6.022e8,
            k_on_si: None,
            k_off: 1.0,
            receptor_count: DEFAULT_RECEPTOR_COUNT,
        }
    }
}

impl ReceptorParams {
    pub fn validate(&mut self) -> Result<()> {
        non_negative_finite("k_on", self.k_on_molar)?;
        if self.k_on_molar == 0.0 {
            return Err(Error::config("k_on must be positive"));
        }
        positive("k_off", self.k_off)?;
        if self.receptor_count == 0 {
            return Err(Error::config("receptor count must be at least 1"));
        }
        let converted = molar_to_si(self.k_on_molar);
        if let Some(given) = self.k_on_si {
            if ((given - converted) / converted).abs() > 1e-12 {
                return Err(Error::config(format!(
                    "k_on_si ({given}) disagrees with k_on_molar conversion ({converted})"
                )));
            }
        }
        self.k_on_si = Some(converted);
        Ok(())
    }

    /// Per-molecule association rate in m³/s.
    pub fn k_on(&self) -> f64 {
        self.k_on_si.unwrap_or_else(|| molar_to_si(self.k_on_molar))
    }

    /// Dissociation constant K_D = k_off / k_on, molecules/m³.
    pub fn dissociation_constant(&self) -> f64 {
        self.k_off / self.k_on()
    }

    /// Mean-field steady-state occupancy under a constant concentration.
    pub fn steady_state(&self, concentration: f64) -> f64 {
        let rate = self.k_on() * concentration;
        rate / (rate + self.k_off)
    }
}

/// Mapping from raw input values to released molecule counts.
///
/// `I(n) = n_min + (n_max - n_min) * (u(n) - input_lo) / (input_hi - input_lo)`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodingParams {
    pub n_max: f64,
    pub n_min: f64,
    /// Symbol interval T, s.
    pub symbol_duration: f64,
    pub input_lo: f64,
    pub input_hi: f64,
}

impl Default for EncodingParams {
    fn default() -> Self {
        Self {
            n_max: 3000.0,
            n_min: 100.0,
            symbol_duration: 1.0,
            input_lo: 0.0,
            input_hi: 1.0,
        }
    }
}

impl EncodingParams {
    pub fn validate(&self) -> Result<()> {
        non_negative_finite("n_min", self.n_min)?;
        non_negative_finite("n_max", self.n_max)?;
        if self.n_max <= self.n_min {
            return Err(Error::config("n_max must exceed n_min"));
        }
        positive("symbol duration", self.symbol_duration)?;
        if !(self.input_hi > self.input_lo) || !self.input_lo.is_finite() || !self.input_hi.is_finite()
        {
            return Err(Error::config("input_hi must exceed input_lo"));
        }
        Ok(())
    }

    /// Molecules per unit input (the scaling factor α).
    pub fn slope(&self) -> f64 {
        (self.n_max - self.n_min) / (self.input_hi - self.input_lo)
    }

    pub fn molecules(&self, u: f64) -> f64 {
        self.n_min + self.slope() * (u - self.input_lo)
    }
}

/// Time-multiplexing, integration and readout settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReservoirParams {
    /// M
    pub virtual_node_count: usize,
    /// Sampling offsets τ_1 < … < τ_M within a symbol, s. Defaults to
    /// `i * T / M` for `i = 1..=M`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_offsets: Option<Vec<f64>>,
    /// Mean-field integration step, s.
    pub det_timestep: f64,
    /// Particle simulation step, s.
    pub stoch_timestep: f64,
    /// Releases older than this no longer contribute to the concentration, s.
    pub isi_truncation_horizon: f64,
    pub ridge_lambda: f64,
    #[serde(default = "default_washout")]
    pub washout_symbols: usize,
    #[serde(default)]
    pub initial_bound_fraction: f64,
    /// Append a constant column to the state matrix before fitting.
    #[serde(default = "default_true")]
    pub bias: bool,
}

fn default_washout() -> usize {
    50
}

fn default_true() -> bool {
    true
}

impl Default for ReservoirParams {
    fn default() -> Self {
        Self {
            virtual_node_count: 100,
            node_offsets: None,
            det_timestep: 1e-3,
            stoch_timestep: 1e-2,
            isi_truncation_horizon: 30.0,
            ridge_lambda: 1e-6,
            washout_symbols: default_washout(),
            initial_bound_fraction: 0.0,
            bias: true,
        }
    }
}

impl ReservoirParams {
    /// Offsets after validation; falls back to the equidistant layout.
    pub fn offsets(&self, symbol_duration: f64) -> Vec<f64> {
        match &self.node_offsets {
            Some(offsets) => offsets.clone(),
            None => equidistant_offsets(symbol_duration, self.virtual_node_count),
        }
    }

    /// Grid index of every node offset for a trace with the given step.
    pub fn offset_indices(&self, symbol_duration: f64, step: f64) -> Result<Vec<usize>> {
        self.offsets(symbol_duration)
            .iter()
            .map(|&tau| grid_index(tau, step).ok_or_else(|| {
                Error::config(format!(
                    "node offset {tau} s is not a multiple of the timestep {step} s"
                ))
            }))
            .collect()
    }

    fn validate(&mut self, symbol_duration: f64) -> Result<()> {
        if self.virtual_node_count == 0 {
            return Err(Error::config("virtual node count must be at least 1"));
        }
        positive("deterministic timestep", self.det_timestep)?;
        positive("stochastic timestep", self.stoch_timestep)?;
        positive("ISI truncation horizon", self.isi_truncation_horizon)?;
        non_negative_finite("ridge lambda", self.ridge_lambda)?;
        if !(0.0..=1.0).contains(&self.initial_bound_fraction) {
            return Err(Error::config("initial bound fraction must lie in [0, 1]"));
        }
        if grid_index(symbol_duration, self.det_timestep).is_none() {
            return Err(Error::config(
                "symbol duration must be a multiple of the deterministic timestep",
            ));
        }

        let offsets = self.offsets(symbol_duration);
        if offsets.len() != self.virtual_node_count {
            return Err(Error::config(format!(
                "{} node offsets given for {} virtual nodes",
                offsets.len(),
                self.virtual_node_count
            )));
        }
        let slack = GRID_ALIGNMENT_TOL * self.det_timestep;
        let mut previous = 0.0;
        for &tau in &offsets {
            if !(tau > previous) {
                return Err(Error::config(
                    "node offsets must be positive and strictly increasing",
                ));
            }
            if tau > symbol_duration + slack {
                return Err(Error::config(format!(
                    "node offsets must lie within symbol (τ = {tau} s > T = {symbol_duration} s)"
                )));
            }
            previous = tau;
        }
        self.offset_indices(symbol_duration, self.det_timestep)?;
        self.node_offsets = Some(offsets);
        Ok(())
    }
}

pub fn equidistant_offsets(symbol_duration: f64, count: usize) -> Vec<f64> {
    (1..=count)
        .map(|i| i as f64 * symbol_duration / count as f64)
        .collect()
}

/// `Some(k)` when `time ≈ k * step`.
pub fn grid_index(time: f64, step: f64) -> Option<usize> {
    let ratio = time / step;
    let k = ratio.round();
    if k >= 0.0 && (ratio - k).abs() <= GRID_ALIGNMENT_TOL * k.max(1.0) {
        Some(k as usize)
    } else {
        None
    }
}

/// The four parameter records together.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub channel: ChannelParams,
    #[serde(default)]
    pub receptor: ReceptorParams,
    #[serde(default)]
    pub encoding: EncodingParams,
    #[serde(default)]
    pub reservoir: ReservoirParams,
}

impl ModelConfig {
    /// Checks every invariant and fills the derived fields.
    pub fn validate(mut self) -> Result<Self> {
        self.channel.validate()?;
        self.receptor.validate()?;
        self.encoding.validate()?;
        self.reservoir.validate(self.encoding.symbol_duration)?;
        Ok(self)
    }

    /// Grid points per symbol for a trace with the given step.
    pub fn steps_per_symbol(&self, step: f64) -> Result<usize> {
        grid_index(self.encoding.symbol_duration, step)
            .filter(|&k| k > 0)
            .ok_or_else(|| Error::config("symbol duration must be a multiple of the timestep"))
    }
}

pub fn validate_config(
    channel: ChannelParams,
    receptor: ReceptorParams,
    encoding: EncodingParams,
    reservoir: ReservoirParams,
) -> Result<ModelConfig> {
    ModelConfig {
        channel,
        receptor,
        encoding,
        reservoir,
    }
    .validate()
}

/// A single instantaneous release.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Release {
    /// s
    pub time: f64,
    pub count: f64,
}

/// Releases in strictly increasing time order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReleaseSchedule {
    releases: Vec<Release>,
}

impl ReleaseSchedule {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a schedule from arbitrary releases; equal times are merged.
    pub fn from_releases(releases: impl IntoIterator<Item = Release>) -> Result<Self> {
        let mut schedule = Self::new();
        for r in releases {
            schedule.push(r.time, r.count)?;
        }
        Ok(schedule)
    }

    /// Appends a release. A release at the same time as the last one is merged
    /// into it; an earlier time is rejected.
    pub fn push(&mut self, time: f64, count: f64) -> Result<()> {
        if !time.is_finite() {
            return Err(Error::config("release time must be finite"));
        }
        if !count.is_finite() || count < 0.0 {
            return Err(Error::config(format!(
                "release count must be finite and non-negative, got {count}"
            )));
        }
        match self.releases.last_mut() {
            Some(last) if last.time == time => last.count += count,
            Some(last) if last.time > time => {
                return Err(Error::config("release times must be increasing"))
            }
            _ => self.releases.push(Release { time, count }),
        }
        Ok(())
    }

    pub fn releases(&self) -> &[Release] {
        &self.releases
    }

    pub fn len(&self) -> usize {
        self.releases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.releases.is_empty()
    }

    pub fn last_time(&self) -> Option<f64> {
        self.releases.last().map(|r| r.time)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            releases: self
                .releases
                .iter()
                .map(|r| Release {
                    time: r.time,
                    count: r.count * factor,
                })
                .collect(),
        }
    }

    pub fn shifted(&self, delta: f64) -> Self {
        Self {
            releases: self
                .releases
                .iter()
                .map(|r| Release {
                    time: r.time + delta,
                    count: r.count,
                })
                .collect(),
        }
    }
}

/// Samples on a uniform time grid `start_time + i * step`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformTrace {
    pub start_time: f64,
    pub step: f64,
    pub values: Vec<f64>,
}

impl UniformTrace {
    pub fn new(start_time: f64, step: f64, values: Vec<f64>) -> Result<Self> {
        positive("trace step", step)?;
        Ok(Self {
            start_time,
            step,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time(&self, index: usize) -> f64 {
        self.start_time + index as f64 * self.step
    }

    pub fn end_time(&self) -> f64 {
        self.time(self.values.len().saturating_sub(1))
    }

    /// Keeps every `stride`-th sample.
    pub fn downsample(&self, stride: usize) -> Self {
        Self {
            start_time: self.start_time,
            step: self.step * stride as f64,
            values: self.values.iter().step_by(stride.max(1)).copied().collect(),
        }
    }

    /// Writes `time_s,<column>` rows.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W, column: &str) -> std::io::Result<()> {
        writeln!(out, "time_s,{column}")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(out, "{},{}", self.time(i), v)?;
        }
        Ok(())
    }
}

fn positive(name: &str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("{name} must be positive")))
    }
}

fn non_negative_finite(name: &str, value: f64) -> Result<()> {
    if value >= 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("{name} must be finite and non-negative")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_convert_k_on() {
        let cfg = ModelConfig::default().validate().unwrap();
        let k_on = cfg.receptor.k_on();
        assert!((k_on - 1.0e-18).abs() / 1.0e-18 < 1e-12, "{k_on}");
        assert_eq!(cfg.reservoir.node_offsets.as_ref().unwrap().len(), 100);
        // validation is idempotent on its own output
        assert_eq!(cfg.clone().validate().unwrap(), cfg);
    }

    #[test]
    fn unit_round_trip() {
        for k in [1.0, 6.022e8, 3.3e5, 1e12] {
            let back = si_to_molar(molar_to_si(k));
            assert!(((back - k) / k).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_distance_rejected() {
        let mut cfg = ModelConfig::default();
        cfg.channel.distance = 0.0;
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("distance must be positive"), "{err}");
    }

    #[test]
    fn offsets_beyond_symbol_rejected() {
        let mut cfg = ModelConfig::default();
        cfg.reservoir.virtual_node_count = 2;
        cfg.reservoir.node_offsets = Some(vec![0.5, 1.5]);
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("offsets must lie within symbol"), "{err}");
    }

    #[test]
    fn misaligned_offsets_rejected() {
        let mut cfg = ModelConfig::default();
        cfg.reservoir.virtual_node_count = 2;
        cfg.reservoir.node_offsets = Some(vec![0.5, 0.7505]);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn receiver_must_be_smaller_than_distance() {
        let mut cfg = ModelConfig::default();
        cfg.channel.receiver_radius = 20e-6;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn inconsistent_k_on_si_rejected() {
        let mut cfg = ModelConfig::default();
        cfg.receptor.k_on_si = Some(2e-18);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn json_rejects_unknown_keys() {
        let text = r#"{"channel": {"diffusion_coefficient": 1e-11, "distance": 1e-5,
            "receiver_radius": 3e-6, "colour": 1}}"#;
        assert!(serde_json::from_str::<ModelConfig>(text).is_err());
        let ok = r#"{"channel": {"diffusion_coefficient": 1e-11, "distance": 1e-5,
            "receiver_radius": 3e-6}}"#;
        let cfg: ModelConfig = serde_json::from_str(ok).unwrap();
        assert_eq!(cfg.encoding, EncodingParams::default());
    }

    #[test]
    fn resolved_config_round_trips_through_json() {
        let cfg = ModelConfig::default().validate().unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ModelConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back.validate().unwrap(), cfg);
    }

    #[test]
    fn schedule_merges_equal_times_and_rejects_backwards() {
        let mut s = ReleaseSchedule::new();
        s.push(0.0, 1.0).unwrap();
        s.push(0.0, 1.0).unwrap();
        assert_eq!(s.releases(), &[Release { time: 0.0, count: 2.0 }]);
        assert!(s.push(-1.0, 1.0).is_err());
        assert!(s.push(2.0, -1.0).is_err());
    }

    #[test]
    fn encoding_endpoints() {
        let e = EncodingParams::default();
        assert_eq!(e.molecules(0.0), 100.0);
        assert_eq!(e.molecules(1.0), 3000.0);
        assert_eq!(e.molecules(0.5), 1550.0);
    }
}
