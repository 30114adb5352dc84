//! Free 3D diffusion from a point source and superposition of releases.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::params::{grid_index, ChannelParams, ReleaseSchedule, UniformTrace};

/// Concentration at the receiver per released molecule, m⁻³, `t` seconds
/// after an instantaneous release. Zero for `t <= 0`.
pub fn impulse_response(channel: &ChannelParams, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let four_dt = 4.0 * channel.diffusion_coefficient * t;
    (PI * four_dt).powf(-1.5) * (-(channel.distance * channel.distance) / four_dt).exp()
}

/// Maximiser of [`impulse_response`] over `t > 0`: `d² / (6D)`.
pub fn kernel_peak_time(channel: &ChannelParams) -> f64 {
    channel.distance * channel.distance / (6.0 * channel.diffusion_coefficient)
}

/// Sampling grid for a concentration trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub start: f64,
    pub step: f64,
    pub count: usize,
}

impl Grid {
    pub fn new(start: f64, step: f64, count: usize) -> Self {
        Self { start, step, count }
    }

    fn check(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::config("concentration grid is empty"));
        }
        if !(self.step > 0.0) {
            return Err(Error::config("grid step must be positive"));
        }
        Ok(())
    }
}

/// Receiver concentration `Σ I(n) h(t - t_n)` over releases with
/// `0 < t - t_n <= horizon`, evaluating the kernel directly for every term.
///
/// The truncated kernel jumps to zero at the horizon; a release sitting
/// exactly at that lag contributes the mean of the two one-sided limits, half
/// its kernel value, so that integrators sampling the trace at grid nodes
/// stay second-order accurate across the jump.
pub fn superpose_concentration(
    schedule: &ReleaseSchedule,
    channel: &ChannelParams,
    grid: Grid,
    truncation_horizon: f64,
) -> Result<UniformTrace> {
    grid.check()?;
    if !(truncation_horizon > 0.0) {
        return Err(Error::config("truncation horizon must be positive"));
    }
    let releases = schedule.releases();
    // tolerate rounding in `t - t_n` so a lag of exactly one horizon is kept
    let cutoff = truncation_horizon * (1.0 + 1e-9);
    let edge = truncation_horizon * (1.0 - 1e-9);
    let mut values = Vec::with_capacity(grid.count);
    // releases[first..] are the candidates not yet older than the horizon
    let mut first = 0;
    for j in 0..grid.count {
        let t = grid.start + j as f64 * grid.step;
        while first < releases.len() && t - releases[first].time > cutoff {
            first += 1;
        }
        let mut c = 0.0;
        for r in &releases[first..] {
            let lag = t - r.time;
            if lag <= 0.0 {
                break;
            }
            let term = r.count * impulse_response(channel, lag);
            c += if lag >= edge { 0.5 * term } else { term };
        }
        values.push(c);
    }
    UniformTrace::new(grid.start, grid.step, values)
}

/// Same sum as [`superpose_concentration`], using a kernel table indexed by
/// lag. Requires every release time and the grid start to lie on the grid;
/// returns `None` otherwise so callers can fall back to the direct path.
pub fn superpose_concentration_cached(
    schedule: &ReleaseSchedule,
    channel: &ChannelParams,
    grid: Grid,
    truncation_horizon: f64,
) -> Result<Option<UniformTrace>> {
    grid.check()?;
    if !(truncation_horizon > 0.0) {
        return Err(Error::config("truncation horizon must be positive"));
    }
    let origin = grid.start;
    let mut release_index = Vec::with_capacity(schedule.len());
    for r in schedule.releases() {
        let offset = r.time - origin;
        // releases before the grid start sit at negative indices
        let k = (offset / grid.step).round();
        if ((offset / grid.step) - k).abs() > 1e-6 * k.abs().max(1.0) {
            return Ok(None);
        }
        release_index.push((k as i64, r.count));
    }
    let Some(horizon_steps) = grid_index(truncation_horizon, grid.step) else {
        return Ok(None);
    };
    let mut table: Vec<f64> = (0..=horizon_steps)
        .map(|k| impulse_response(channel, k as f64 * grid.step))
        .collect();
    table[horizon_steps] *= 0.5;

    let mut values = Vec::with_capacity(grid.count);
    let mut first = 0;
    for j in 0..grid.count as i64 {
        while first < release_index.len() && j - release_index[first].0 > horizon_steps as i64 {
            first += 1;
        }
        let mut c = 0.0;
        for &(idx, count) in &release_index[first..] {
            let lag = j - idx;
            if lag <= 0 {
                break;
            }
            c += count * table[lag as usize];
        }
        values.push(c);
    }
    Ok(Some(UniformTrace::new(grid.start, grid.step, values)?))
}

/// Uses the cached kernel whenever the schedule is grid-aligned.
pub fn concentration_trace(
    schedule: &ReleaseSchedule,
    channel: &ChannelParams,
    grid: Grid,
    truncation_horizon: f64,
) -> Result<UniformTrace> {
    match superpose_concentration_cached(schedule, channel, grid, truncation_horizon)? {
        Some(trace) => Ok(trace),
        None => superpose_concentration(schedule, channel, grid, truncation_horizon),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn defaults() -> ChannelParams {
        ChannelParams::default()
    }

    #[test]
    fn kernel_at_peak_matches_hand_value() {
        // (4π·1e-11·t)^(-3/2)·exp(-1.5) at t = 1/0.6 s, evaluated by hand.
        let ch = defaults();
        let t = kernel_peak_time(&ch);
        assert!((t - 1.0e-10 / 6.0e-11).abs() < 1e-12);
        let h = impulse_response(&ch, t);
        let expected = (4.0 * PI * 1e-11 / 0.6f64).powf(-1.5) * (-1.5f64).exp();
        assert!((h - expected).abs() / expected < 1e-14);
        assert!((h - 7.36e13).abs() / 7.36e13 < 2e-3, "{h:e}");
    }

    #[test]
    fn kernel_is_causal() {
        let ch = defaults();
        assert_eq!(impulse_response(&ch, 0.0), 0.0);
        assert_eq!(impulse_response(&ch, -1.0), 0.0);
    }

    #[test]
    fn peak_time_scaling() {
        let ch = defaults();
        let base = kernel_peak_time(&ch);
        let farther = ChannelParams {
            distance: 2.0 * ch.distance,
            ..ch
        };
        let faster = ChannelParams {
            diffusion_coefficient: 2.0 * ch.diffusion_coefficient,
            ..ch
        };
        assert!((kernel_peak_time(&farther) / base - 4.0).abs() < 1e-12);
        assert!((kernel_peak_time(&faster) / base - 0.5).abs() < 1e-12);
    }

    #[test]
    fn peak_is_a_maximum() {
        let ch = defaults();
        let tp = kernel_peak_time(&ch);
        let hp = impulse_response(&ch, tp);
        for f in [0.5, 0.9, 0.99, 1.01, 1.1, 2.0] {
            assert!(impulse_response(&ch, tp * f) < hp);
        }
    }

    #[test]
    fn single_release_sampled_at_peak() {
        let ch = defaults();
        let tp = kernel_peak_time(&ch);
        let schedule = ReleaseSchedule::from_releases([crate::params::Release {
            time: 0.0,
            count: 1.0,
        }])
        .unwrap();
        let trace = superpose_concentration(&schedule, &ch, Grid::new(tp, 1.0, 1), 30.0).unwrap();
        assert_eq!(trace.values[0], impulse_response(&ch, tp));

        let big = schedule.scaled(3000.0);
        let trace = superpose_concentration(&big, &ch, Grid::new(tp, 1.0, 1), 30.0).unwrap();
        assert!((trace.values[0] - 2.21e17).abs() / 2.21e17 < 2e-3);
    }

    #[test]
    fn merged_releases_match_double_release() {
        let ch = defaults();
        let mut a = ReleaseSchedule::new();
        a.push(0.0, 1.0).unwrap();
        a.push(0.0, 1.0).unwrap();
        let mut b = ReleaseSchedule::new();
        b.push(0.0, 2.0).unwrap();
        let g = Grid::new(0.0, 0.01, 500);
        assert_eq!(
            superpose_concentration(&a, &ch, g, 30.0).unwrap(),
            superpose_concentration(&b, &ch, g, 30.0).unwrap()
        );
    }

    #[test]
    fn empty_grid_rejected() {
        let s = ReleaseSchedule::new();
        assert!(superpose_concentration(&s, &defaults(), Grid::new(0.0, 0.1, 0), 30.0).is_err());
    }

    #[test]
    fn discrete_argmax_near_peak() {
        let ch = defaults();
        let mut s = ReleaseSchedule::new();
        s.push(0.0, 1.0).unwrap();
        let step = 1e-3;
        let trace = superpose_concentration(&s, &ch, Grid::new(0.0, step, 5000), 30.0).unwrap();
        let (argmax, _) = trace
            .values
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        assert!((trace.time(argmax) - kernel_peak_time(&ch)).abs() <= step);
    }

    fn random_schedule(counts: &[f64], period: f64) -> ReleaseSchedule {
        let mut s = ReleaseSchedule::new();
        for (n, &c) in counts.iter().enumerate() {
            s.push(n as f64 * period, c).unwrap();
        }
        s
    }

    #[test]
    fn cached_path_agrees_with_direct_path() {
        let ch = defaults();
        let counts: Vec<f64> = (0..60).map(|n| 100.0 + ((n * 37) % 29) as f64 * 100.0).collect();
        let s = random_schedule(&counts, 1.0);
        let g = Grid::new(0.0, 1e-3, 62_000);
        let direct = superpose_concentration(&s, &ch, g, 30.0).unwrap();
        let cached = superpose_concentration_cached(&s, &ch, g, 30.0).unwrap().unwrap();
        for (a, b) in direct.values.iter().zip(&cached.values) {
            let scale = a.abs().max(1e-300);
            assert!((a - b).abs() / scale <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn misaligned_schedule_falls_back() {
        let ch = defaults();
        let mut s = ReleaseSchedule::new();
        s.push(0.0005, 1.0).unwrap();
        let g = Grid::new(0.0, 1e-3, 10);
        assert!(superpose_concentration_cached(&s, &ch, g, 30.0).unwrap().is_none());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn superposition_is_linear(
            counts in prop::collection::vec(0.0f64..3000.0, 1..12),
            a in 0.0f64..10.0,
        ) {
            let ch = defaults();
            let s = random_schedule(&counts, 1.0);
            let g = Grid::new(0.0, 0.05, 400);
            let base = superpose_concentration(&s, &ch, g, 30.0).unwrap();
            let scaled = superpose_concentration(&s.scaled(a), &ch, g, 30.0).unwrap();
            for (x, y) in base.values.iter().zip(&scaled.values) {
                prop_assert!((a * x - y).abs() <= 1e-12 * (a * x).abs().max(1.0));
                prop_assert!(*y >= 0.0);
            }
        }

        #[test]
        fn superposition_is_time_invariant(
            counts in prop::collection::vec(0.0f64..3000.0, 1..8),
            shift_steps in 0usize..50,
        ) {
            let ch = defaults();
            let step = 0.05;
            let s = random_schedule(&counts, 1.0);
            let shifted = s.shifted(shift_steps as f64 * step);
            let g = Grid::new(0.0, step, 300);
            let base = superpose_concentration_cached(&s, &ch, g, 30.0).unwrap().unwrap();
            let moved = superpose_concentration_cached(&shifted, &ch, g, 30.0).unwrap().unwrap();
            for j in 0..(300 - shift_steps) {
                prop_assert_eq!(base.values[j], moved.values[j + shift_steps]);
            }
        }

        #[test]
        fn longer_horizon_never_decreases(
            counts in prop::collection::vec(0.0f64..3000.0, 1..40),
            h1 in 1.0f64..20.0,
            extra in 0.0f64..20.0,
        ) {
            let ch = defaults();
            let s = random_schedule(&counts, 1.0);
            let g = Grid::new(0.0, 0.1, 450);
            let short = superpose_concentration(&s, &ch, g, h1).unwrap();
            let long = superpose_concentration(&s, &ch, g, h1 + extra).unwrap();
            for (a, b) in short.values.iter().zip(&long.values) {
                prop_assert!(b >= a);
            }
        }
    }
}
