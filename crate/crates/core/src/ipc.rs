//! Information processing capacity.
//!
//! A factor set `{(s_1, n_1), …}` defines the target
//! `y(t) = Π P_{n_i}(u(t - s_i))` with `P_n` the Legendre polynomials and u
//! i.i.d. uniform on [-1, 1]. Its capacity is the squared correlation
//! between y and the best linear estimate of y from the reservoir states.
//! Capacities below a null threshold are zeroed before summing.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::readout::{predict_matrix, RidgeSolver};
use crate::receptor::StateMatrix;

/// Largest enumeration accepted by [`enumerate_factor_sets`].
pub const ENUMERATION_CAP: usize = 1_000_000;

/// Largest `sets × rows` held in memory for target orthogonalisation.
pub const TARGET_BUFFER_CAP: usize = 250_000_000;

/// Legendre polynomial `P_n(x)` by the three-term recurrence.
pub fn legendre(n: u32, x: f64) -> f64 {
    match n {
        0 => 1.0,
        1 => x,
        _ => {
            let (mut prev, mut cur) = (1.0, x);
            for k in 1..n {
                let k = k as f64;
                let next = ((2.0 * k + 1.0) * x * cur - k * prev) / (k + 1.0);
                prev = cur;
                cur = next;
            }
            cur
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Factor {
    pub delay: usize,
    pub degree: u32,
}

/// Factors with strictly increasing delays.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FactorSet {
    factors: Vec<Factor>,
}

impl FactorSet {
    pub fn new(mut factors: Vec<Factor>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::config("factor set must not be empty"));
        }
        if factors.iter().any(|f| f.degree == 0) {
            return Err(Error::config("factor degrees must be at least 1"));
        }
        factors.sort();
        if factors.windows(2).any(|w| w[0].delay == w[1].delay) {
            return Err(Error::config("factor delays must be distinct"));
        }
        Ok(Self { factors })
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn total_degree(&self) -> u32 {
        self.factors.iter().map(|f| f.degree).sum()
    }

    pub fn max_delay(&self) -> usize {
        self.factors.last().map(|f| f.delay).unwrap_or(0)
    }

    pub fn is_univariate(&self) -> bool {
        self.factors.len() == 1
    }

    /// Target values for rows `rows` of an input sequence `u`; needs
    /// `rows.start >= max_delay`.
    pub fn target(&self, u: &[f64], rows: Range<usize>) -> Vec<f64> {
        rows.map(|t| {
            self.factors
                .iter()
                .map(|f| legendre(f.degree, u[t - f.delay]))
                .product()
        })
        .collect()
    }

    pub fn delays_label(&self) -> String {
        join(self.factors.iter().map(|f| f.delay))
    }

    pub fn orders_label(&self) -> String {
        join(self.factors.iter().map(|f| f.degree))
    }
}

fn join<T: ToString>(items: impl Iterator<Item = T>) -> String {
    items.map(|v| v.to_string()).collect::<Vec<_>>().join(";")
}

impl fmt::Display for FactorSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .factors
            .iter()
            .map(|x| format!("P{}(u[t-{}])", x.degree, x.delay))
            .collect();
        write!(f, "{}", parts.join("·"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IpcLimits {
    pub max_total_degree: u32,
    pub max_delay: usize,
    pub max_factors: usize,
}

impl Default for IpcLimits {
    fn default() -> Self {
        Self {
            max_total_degree: 2,
            max_delay: 15,
            max_factors: 2,
        }
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Number of sets [`enumerate_factor_sets`] would return.
pub fn factor_set_count(limits: &IpcLimits) -> f64 {
    let slots = limits.max_delay + 1;
    let mut total = 0.0;
    for degree in 1..=limits.max_total_degree as usize {
        for count in 1..=degree.min(limits.max_factors) {
            // delay choices times compositions of the degree into `count` parts
            total += binomial(slots, count) * binomial(degree - 1, count - 1);
        }
    }
    total
}

/// Every canonical factor set within the limits, ordered by total degree,
/// then factor count, then delay tuple, then degree tuple (lexicographic).
pub fn enumerate_factor_sets(limits: &IpcLimits) -> Result<Vec<FactorSet>> {
    if limits.max_total_degree == 0 || limits.max_factors == 0 {
        return Err(Error::config("IPC limits must be at least 1"));
    }
    let count = factor_set_count(limits);
    if count > ENUMERATION_CAP as f64 {
        return Err(Error::Budget(format!(
            "{count:.0} factor sets exceed the enumeration cap of {ENUMERATION_CAP}"
        )));
    }
    let mut out = Vec::with_capacity(count as usize);
    for degree in 1..=limits.max_total_degree {
        for n_factors in 1..=(degree as usize).min(limits.max_factors) {
            let mut delays = Vec::with_capacity(n_factors);
            each_delay_tuple(&mut delays, 0, n_factors, limits.max_delay, &mut |delays| {
                let mut degrees = Vec::with_capacity(n_factors);
                each_composition(&mut degrees, degree, n_factors, &mut |degrees| {
                    let factors = delays
                        .iter()
                        .zip(degrees)
                        .map(|(&delay, &degree)| Factor { delay, degree })
                        .collect();
                    out.push(FactorSet { factors });
                });
            });
        }
    }
    Ok(out)
}

fn each_delay_tuple(
    prefix: &mut Vec<usize>,
    from: usize,
    len: usize,
    max_delay: usize,
    visit: &mut dyn FnMut(&[usize]),
) {
    if prefix.len() == len {
        visit(prefix);
        return;
    }
    let remaining = len - prefix.len();
    for d in from..=max_delay {
        if max_delay - d + 1 < remaining {
            break;
        }
        prefix.push(d);
        each_delay_tuple(prefix, d + 1, len, max_delay, visit);
        prefix.pop();
    }
}

fn each_composition(prefix: &mut Vec<u32>, total: u32, parts: usize, visit: &mut dyn FnMut(&[u32])) {
    let used: u32 = prefix.iter().sum();
    let left = parts - prefix.len();
    if left == 1 {
        prefix.push(total - used);
        visit(prefix);
        prefix.pop();
        return;
    }
    for n in 1..=(total - used - (left as u32 - 1)) {
        prefix.push(n);
        each_composition(prefix, total, parts, visit);
        prefix.pop();
    }
}

/// How the estimator of each target is fitted and scored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapacityMode {
    /// Fit on the leading `fit_fraction` of rows, score on the rest.
    HeldOut { fit_fraction: f64 },
    InSample,
}

impl Default for CapacityMode {
    fn default() -> Self {
        CapacityMode::HeldOut { fit_fraction: 0.7 }
    }
}

/// Squared Pearson correlation; 0 when either side is constant.
pub fn squared_correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    // relative floor so rounding noise on a constant vector counts as constant
    let tiny = |s: f64, m: f64| s <= 1e-24 * n * (1.0 + m * m);
    if tiny(saa, ma) || tiny(sbb, mb) {
        return 0.0;
    }
    ((sab * sab) / (saa * sbb)).min(1.0)
}

/// One factorisation of a state matrix, scored against many targets.
pub struct CapacityEstimator {
    solver: RidgeSolver,
    eval: Option<DMatrix<f64>>,
    fit_matrix: DMatrix<f64>,
    fit_rows: usize,
    rows: usize,
    mode: CapacityMode,
}

impl CapacityEstimator {
    pub fn new(states: &StateMatrix, lambda: f64, mode: CapacityMode) -> Result<Self> {
        let rows = states.rows();
        let fit_rows = match mode {
            CapacityMode::InSample => rows,
            CapacityMode::HeldOut { fit_fraction } => {
                if !(fit_fraction > 0.0 && fit_fraction < 1.0) {
                    return Err(Error::config("fit fraction must lie in (0, 1)"));
                }
                (rows as f64 * fit_fraction).round() as usize
            }
        };
        if fit_rows < 2 || rows - fit_rows < 2 && mode != CapacityMode::InSample {
            return Err(Error::TooShort {
                what: "capacity state rows".into(),
                required: 4,
                available: rows,
            });
        }
        let fit_matrix = states.matrix().rows(0, fit_rows).into_owned();
        let solver = RidgeSolver::from_matrix(&fit_matrix, states.has_bias(), lambda)?;
        let eval = match mode {
            CapacityMode::InSample => None,
            CapacityMode::HeldOut { .. } => {
                Some(states.matrix().rows(fit_rows, rows - fit_rows).into_owned())
            }
        };
        Ok(Self {
            solver,
            eval,
            fit_matrix,
            fit_rows,
            rows,
            mode,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn mode(&self) -> CapacityMode {
        self.mode
    }

    /// Rows the score is computed on.
    pub fn scored_rows(&self) -> usize {
        match self.eval {
            Some(ref e) => e.nrows(),
            None => self.rows,
        }
    }

    /// Squared correlation between `target` and its linear estimate.
    pub fn capacity(&self, target: &[f64]) -> Result<f64> {
        if target.len() != self.rows {
            return Err(Error::Shape(format!(
                "{} targets for {} state rows",
                target.len(),
                self.rows
            )));
        }
        let (fit, scored) = target.split_at(self.fit_rows);
        let w = self.solver.solve(fit)?;
        match self.eval {
            Some(ref eval) => Ok(squared_correlation(scored, &predict_matrix(eval, &w)?)),
            None => Ok(squared_correlation(fit, &predict_matrix(&self.fit_matrix, &w)?)),
        }
    }
}

/// Capacity of `states` for `target`, held-out 70/30 with λ = 1e-6.
pub fn capacity(states: &StateMatrix, target: &[f64]) -> Result<f64> {
    let spread = target.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b))
        - target.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    if !(spread > 0.0) {
        return Err(Error::Degenerate("capacity target is constant".into()));
    }
    CapacityEstimator::new(states, 1e-6, CapacityMode::default())?.capacity(target)
}

/// `(1 - p)` quantile of `χ²(dof) / n_samples`, the large-sample null
/// distribution of a squared correlation carrying `dof` fitted degrees of
/// freedom: the state dimension for in-sample capacities, 1 for held-out
/// capacities, whose estimator is fixed before it meets the scored rows.
pub fn significance_threshold(n_samples: usize, dof: usize, p: f64) -> Result<f64> {
    if n_samples <= dof || dof == 0 {
        return Err(Error::Degenerate(format!(
            "significance threshold needs samples ({n_samples}) > dimensions ({dof}) > 0"
        )));
    }
    scaled_chi_squared_quantile(1.0 / n_samples as f64, dof as f64, p)
}

fn scaled_chi_squared_quantile(scale: f64, dof: f64, p: f64) -> Result<f64> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::config("false-positive rate must lie in (0, 1]"));
    }
    if p == 1.0 {
        return Ok(0.0);
    }
    let dist = ChiSquared::new(dof)
        .map_err(|e| Error::Degenerate(format!("chi-squared with {dof} dof: {e}")))?;
    Ok(scale * dist.inverse_cdf(1.0 - p))
}

/// Null distribution of capacities fitted as `scale · χ²(dof)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NullModel {
    pub scale: f64,
    pub dof: f64,
    pub p: f64,
    pub threshold: f64,
    pub surrogates: usize,
}

/// Calibrates the null from capacities of `targets` circularly shifted
/// against the states. Shifts are spread evenly over [n/4, 3n/4] and cycle
/// through the targets; the scaled χ² form is fitted by moments and its
/// `(1 - p)` quantile becomes the threshold.
pub fn calibrate_null(
    estimator: &CapacityEstimator,
    targets: &[Vec<f64>],
    surrogates: usize,
    p: f64,
) -> Result<NullModel> {
    if targets.is_empty() || surrogates < 2 {
        return Err(Error::config("null calibration needs targets and at least 2 surrogates"));
    }
    let n = estimator.rows();
    let lo = n / 4;
    let span = (n / 2).max(1);
    let values: Vec<f64> = (0..surrogates)
        .into_par_iter()
        .map(|k| {
            let shift = lo + (k * span) / surrogates;
            let target = &targets[k % targets.len()];
            let shifted: Vec<f64> = (0..n).map(|i| target[(i + shift) % n]).collect();
            estimator.capacity(&shifted)
        })
        .collect::<Result<_>>()?;
    let m = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
    if !(m > 0.0 && var > 0.0) {
        return Err(Error::Degenerate("surrogate capacities have no spread".into()));
    }
    let scale = var / (2.0 * m);
    let dof = 2.0 * m * m / var;
    Ok(NullModel {
        scale,
        dof,
        p,
        threshold: scaled_chi_squared_quantile(scale, dof, p)?,
        surrogates,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMethod {
    /// Cyclic-shift surrogates with a fitted scaled χ².
    Surrogate { count: usize },
    /// [`significance_threshold`] with the degrees of freedom of the mode.
    Analytic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IpcOptions {
    pub limits: IpcLimits,
    pub mode: CapacityMode,
    pub lambda: f64,
    pub p: f64,
    pub threshold: ThresholdMethod,
    /// Leading rows excluded from scoring; raised to `max_delay` if smaller.
    pub washout: usize,
}

impl Default for IpcOptions {
    fn default() -> Self {
        Self {
            limits: IpcLimits::default(),
            mode: CapacityMode::default(),
            lambda: 1e-6,
            p: 1e-4,
            threshold: ThresholdMethod::Surrogate { count: 200 },
            washout: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityRecord {
    pub set: FactorSet,
    pub capacity: f64,
    pub significant: bool,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpcBreakdown {
    pub records: Vec<CapacityRecord>,
    /// Significant capacity per total degree, over all sets.
    pub per_degree: BTreeMap<u32, f64>,
    /// Significant capacity of single-factor sets per degree.
    pub univariate_per_degree: BTreeMap<u32, f64>,
    /// Significant capacity per largest delay of the set.
    pub per_delay: BTreeMap<usize, f64>,
    pub total: f64,
    pub threshold: f64,
    pub null_model: Option<NullModel>,
    pub state_columns: usize,
    pub scored_rows: usize,
}

impl IpcBreakdown {
    /// Significant capacity of the single-factor set `(delay, degree)`.
    pub fn univariate(&self, degree: u32, delay: usize) -> f64 {
        self.records
            .iter()
            .find(|r| {
                r.set.is_univariate()
                    && r.set.factors()[0] == Factor { delay, degree }
            })
            .map(|r| if r.significant { r.capacity } else { 0.0 })
            .unwrap_or(0.0)
    }

    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "degree,delays,orders,capacity,significant")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{:e},{}",
                r.set.total_degree(),
                r.set.delays_label(),
                r.set.orders_label(),
                r.capacity,
                r.significant
            )?;
        }
        Ok(())
    }

    /// Totals without the per-set records.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "total": self.total,
            "per_degree": self.per_degree,
            "univariate_per_degree": self.univariate_per_degree,
            "per_delay": self.per_delay,
            "threshold": self.threshold,
            "null_model": self.null_model,
            "state_columns": self.state_columns,
            "scored_rows": self.scored_rows,
            "sets": self.records.len(),
        })
    }
}

/// Capacities of every factor set within the limits for states driven by
/// `u` (row t of `states` aligned with `u[t]`).
pub fn total_ipc(states: &StateMatrix, u: &[f64], options: &IpcOptions) -> Result<IpcBreakdown> {
    if states.rows() != u.len() {
        return Err(Error::Shape(format!(
            "{} state rows for {} inputs",
            states.rows(),
            u.len()
        )));
    }
    if u.iter().any(|&x| !(-1.0..=1.0).contains(&x)) {
        return Err(Error::config("IPC input must lie in [-1, 1]"));
    }
    let sets = enumerate_factor_sets(&options.limits)?;
    let start = options.washout.max(options.limits.max_delay);
    if start + 8 > u.len() {
        return Err(Error::TooShort {
            what: "IPC input".into(),
            required: start + 8,
            available: u.len(),
        });
    }
    let rows = start..u.len();
    let scored_states = states.slice_rows(rows.clone());
    let estimator = CapacityEstimator::new(&scored_states, options.lambda, options.mode)?;

    let (threshold, null_model) = match options.threshold {
        ThresholdMethod::Analytic => {
            let dof = match options.mode {
                CapacityMode::HeldOut { .. } => 1,
                CapacityMode::InSample => states.cols(),
            };
            (significance_threshold(estimator.scored_rows(), dof, options.p)?, None)
        }
        ThresholdMethod::Surrogate { count } => {
            let pool: Vec<Vec<f64>> = (1..=options.limits.max_total_degree)
                .map(|degree| FactorSet {
                    factors: vec![Factor { delay: 0, degree }],
                }
                .target(u, rows.clone()))
                .collect();
            match calibrate_null(&estimator, &pool, count, options.p) {
                Ok(null) => (null.threshold, Some(null)),
                // states without usable variance: every surrogate scores 0
                Err(Error::Degenerate(_)) => {
                    (significance_threshold(estimator.scored_rows(), 1, options.p)?, None)
                }
                Err(e) => return Err(e),
            }
        }
    };

    if sets.len() * rows.len() > TARGET_BUFFER_CAP {
        return Err(Error::Budget(format!(
            "{} factor sets over {} rows exceed the target buffer of {TARGET_BUFFER_CAP} values",
            sets.len(),
            rows.len()
        )));
    }
    let mut targets: Vec<Vec<f64>> = sets.par_iter().map(|set| set.target(u, rows.clone())).collect();
    let scored = estimator.rows() - estimator.scored_rows()..estimator.rows();
    orthonormalize_targets(&mut targets, scored);
    let capacities: Vec<f64> = targets
        .par_iter()
        .map(|target| estimator.capacity(target))
        .collect::<Result<_>>()?;

    let mut per_degree = BTreeMap::new();
    let mut univariate_per_degree = BTreeMap::new();
    let mut per_delay = BTreeMap::new();
    let mut total = 0.0;
    let mut records = Vec::with_capacity(sets.len());
    for (set, capacity) in sets.into_iter().zip(capacities) {
        let significant = capacity >= threshold;
        let counted = if significant { capacity } else { 0.0 };
        *per_degree.entry(set.total_degree()).or_insert(0.0) += counted;
        if set.is_univariate() {
            *univariate_per_degree.entry(set.total_degree()).or_insert(0.0) += counted;
        }
        *per_delay.entry(set.max_delay()).or_insert(0.0) += counted;
        total += counted;
        records.push(CapacityRecord {
            set,
            capacity,
            significant,
            threshold,
        });
    }
    Ok(IpcBreakdown {
        records,
        per_degree,
        univariate_per_degree,
        per_delay,
        total,
        threshold,
        null_model,
        state_columns: states.node_count(),
        scored_rows: estimator.scored_rows(),
    })
}

/// Gram–Schmidt over `targets` in order, with inner products taken over the
/// `scored` rows after centring. On a finite sample the Legendre products
/// are only orthogonal in expectation; once they are exactly orthonormal the
/// capacities can sum to at most the state dimension. A target that is
/// linearly dependent on earlier ones is zeroed.
pub fn orthonormalize_targets(targets: &mut [Vec<f64>], scored: Range<usize>) {
    let n = scored.len() as f64;
    for k in 0..targets.len() {
        let (done, rest) = targets.split_at_mut(k);
        let y = &mut rest[0];
        let mean = y[scored.clone()].iter().sum::<f64>() / n;
        y.iter_mut().for_each(|v| *v -= mean);
        let original = y[scored.clone()].iter().map(|v| v * v).sum::<f64>().sqrt();
        // two passes keep the result orthogonal to rounding level
        for _ in 0..2 {
            let coefficients: Vec<f64> = done
                .par_iter()
                .map(|q| q[scored.clone()].iter().zip(&y[scored.clone()]).map(|(a, b)| a * b).sum())
                .collect();
            for (q, c) in done.iter().zip(coefficients) {
                if c != 0.0 {
                    y.iter_mut().zip(q).for_each(|(v, qv)| *v -= c * qv);
                }
            }
        }
        let norm = y[scored.clone()].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-8 * original && norm > 0.0 {
            y.iter_mut().for_each(|v| *v /= norm);
        } else {
            y.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// I.i.d. uniform input on [-1, 1].
pub fn ipc_input(seed: u64, length: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..length).map(|_| rng.random_range(-1.0..=1.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn legendre_values() {
        assert_eq!(legendre(0, 0.3), 1.0);
        assert_eq!(legendre(1, 0.5), 0.5);
        assert!((legendre(2, 1.0) - 1.0).abs() < 1e-15);
        assert!((legendre(3, 0.6) + 0.36).abs() < 1e-14);
        for n in 0..8 {
            for i in 0..=100 {
                let x = -1.0 + 0.02 * i as f64;
                assert!(legendre(n, x).abs() <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn linear_enumeration() {
        let sets = enumerate_factor_sets(&IpcLimits {
            max_total_degree: 1,
            max_delay: 2,
            max_factors: 1,
        })
        .unwrap();
        let delays: Vec<_> = sets.iter().map(|s| s.delays_label()).collect();
        assert_eq!(delays, ["0", "1", "2"]);
    }

    #[test]
    fn quadratic_enumeration_by_hand() {
        let sets = enumerate_factor_sets(&IpcLimits {
            max_total_degree: 2,
            max_delay: 1,
            max_factors: 2,
        })
        .unwrap();
        let labels: Vec<_> = sets
            .iter()
            .map(|s| format!("{}|{}", s.delays_label(), s.orders_label()))
            .collect();
        assert_eq!(labels, ["0|1", "1|1", "0|2", "1|2", "0;1|1;1"]);
    }

    fn brute_force(limits: &IpcLimits) -> HashSet<Vec<Factor>> {
        // all assignments of a degree in 0..=max to each delay, kept if valid
        let slots = limits.max_delay + 1;
        let base = limits.max_total_degree as usize + 1;
        let mut out = HashSet::new();
        for code in 0..base.pow(slots as u32) {
            let mut c = code;
            let mut factors = Vec::new();
            for delay in 0..slots {
                let degree = (c % base) as u32;
                c /= base;
                if degree > 0 {
                    factors.push(Factor { delay, degree });
                }
            }
            let total: u32 = factors.iter().map(|f| f.degree).sum();
            if !factors.is_empty()
                && total <= limits.max_total_degree
                && factors.len() <= limits.max_factors
            {
                out.insert(factors);
            }
        }
        out
    }

    #[test]
    fn enumeration_matches_brute_force() {
        for limits in [
            IpcLimits { max_total_degree: 3, max_delay: 3, max_factors: 3 },
            IpcLimits { max_total_degree: 4, max_delay: 2, max_factors: 2 },
            IpcLimits { max_total_degree: 2, max_delay: 5, max_factors: 1 },
        ] {
            let sets = enumerate_factor_sets(&limits).unwrap();
            let unique: HashSet<Vec<Factor>> = sets.iter().map(|s| s.factors().to_vec()).collect();
            assert_eq!(unique.len(), sets.len(), "duplicates for {limits:?}");
            assert_eq!(unique, brute_force(&limits), "{limits:?}");
            assert_eq!(factor_set_count(&limits) as usize, sets.len());
        }
    }

    #[test]
    fn enumeration_cap() {
        let err = enumerate_factor_sets(&IpcLimits {
            max_total_degree: 6,
            max_delay: 200,
            max_factors: 6,
        })
        .unwrap_err();
        assert!(matches!(err, Error::Budget(_)));
    }

    #[test]
    fn threshold_limits() {
        assert_eq!(significance_threshold(1000, 1, 1.0).unwrap(), 0.0);
        let a = significance_threshold(1000, 3, 1e-4).unwrap();
        let b = significance_threshold(2000, 3, 1e-4).unwrap();
        assert!(b < a);
        // χ²₁ quantile at 1 - 1e-4 is 15.137
        let c = significance_threshold(1000, 1, 1e-4).unwrap();
        assert!((c * 1000.0 - 15.137).abs() < 0.01, "{c}");
        assert!(significance_threshold(5, 5, 0.01).is_err());
    }

    fn matrix_from(columns: &[Vec<f64>], bias: bool) -> StateMatrix {
        let n = columns[0].len();
        let m = DMatrix::from_fn(n, columns.len(), |i, j| columns[j][i]);
        StateMatrix::from_columns(m, (1..=columns.len()).map(|i| i as f64).collect(), bias).unwrap()
    }

    #[test]
    fn identity_capacity() {
        let u = ipc_input(1, 2000);
        let x = matrix_from(&[u.clone()], true);
        assert!((capacity(&x, &u).unwrap() - 1.0).abs() < 1e-9);
        let p1: Vec<f64> = u.iter().map(|&v| legendre(1, v)).collect();
        assert!((capacity(&x, &p1).unwrap() - 1.0).abs() < 1e-9);
        assert!(capacity(&x, &vec![0.5; 2000]).is_err());
    }

    #[test]
    fn capacity_is_affine_invariant() {
        let u = ipc_input(2, 1500);
        let v = ipc_input(3, 1500);
        let y: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a * a + 0.3 * b).collect();
        let x = matrix_from(&[u.clone(), v.clone()], true);
        let base = capacity(&x, &y).unwrap();
        let y2: Vec<f64> = y.iter().map(|t| 4.0 * t - 7.0).collect();
        let x2 = matrix_from(&[u.iter().map(|a| 3.0 * a + 1.0).collect(), v.clone()], true);
        assert!((capacity(&x, &y2).unwrap() - base).abs() < 1e-9);
        assert!((capacity(&x2, &y).unwrap() - base).abs() < 1e-6);
    }

    #[test]
    fn perfect_linear_memory() {
        let u = ipc_input(4, 3000);
        let lag: Vec<f64> = std::iter::once(0.0).chain(u[..u.len() - 1].iter().copied()).collect();
        let x = matrix_from(&[u.clone(), lag], true);
        let options = IpcOptions {
            limits: IpcLimits { max_total_degree: 1, max_delay: 1, max_factors: 1 },
            ..IpcOptions::default()
        };
        let b = total_ipc(&x, &u, &options).unwrap();
        assert!((b.univariate(1, 0) - 1.0).abs() < 1e-6);
        assert!((b.univariate(1, 1) - 1.0).abs() < 1e-6);
        assert!((b.total - 2.0).abs() < 1e-5);
        assert!(b.total <= 2.0 + 1e-9);
    }

    #[test]
    fn zero_states_have_no_capacity() {
        let u = ipc_input(5, 1000);
        let x = matrix_from(&[vec![0.0; 1000], vec![0.0; 1000]], true);
        let b = total_ipc(
            &x,
            &u,
            &IpcOptions {
                threshold: ThresholdMethod::Analytic,
                ..IpcOptions::default()
            },
        )
        .unwrap();
        assert_eq!(b.total, 0.0);
        assert!(b.records.iter().all(|r| r.capacity == 0.0));

        // surrogates all score 0, so the analytic threshold stands in
        let b = total_ipc(&x, &u, &IpcOptions::default()).unwrap();
        assert_eq!(b.total, 0.0);
        assert!(b.null_model.is_none());
        assert_eq!(b.threshold, significance_threshold(b.scored_rows, 1, 1e-4).unwrap());
    }

    #[test]
    fn threshold_rejects_independent_target() {
        let u = ipc_input(6, 4000);
        let noise = ipc_input(7, 4000);
        let x = matrix_from(&[u.clone(), u.iter().map(|v| v * v).collect()], true);
        let c = capacity(&x, &noise).unwrap();
        let threshold = significance_threshold(1200, 1, 1e-4).unwrap();
        assert!(c < threshold, "{c} >= {threshold}");
    }

    #[test]
    fn orthonormalized_targets() {
        let u = ipc_input(8, 400);
        let sets = enumerate_factor_sets(&IpcLimits { max_total_degree: 3, max_delay: 3, max_factors: 2 }).unwrap();
        let mut t: Vec<Vec<f64>> = sets.iter().map(|s| s.target(&u, 3..400)).collect();
        t.push(t[0].iter().map(|v| 2.0 * v + 1.0).collect());
        orthonormalize_targets(&mut t, 100..397);
        let dot = |a: &[f64], b: &[f64]| a[100..].iter().zip(&b[100..]).map(|(x, y)| x * y).sum::<f64>();
        for i in 0..sets.len() {
            assert!((dot(&t[i], &t[i]) - 1.0).abs() < 1e-12);
            for j in 0..i {
                assert!(dot(&t[i], &t[j]).abs() < 1e-12);
            }
        }
        assert!(t.last().unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn breakdown_csv_layout() {
        let u = ipc_input(8, 800);
        let x = matrix_from(&[u.clone()], true);
        let options = IpcOptions {
            limits: IpcLimits { max_total_degree: 2, max_delay: 1, max_factors: 2 },
            threshold: ThresholdMethod::Analytic,
            ..IpcOptions::default()
        };
        let b = total_ipc(&x, &u, &options).unwrap();
        let mut buf = Vec::new();
        b.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "degree,delays,orders,capacity,significant");
        assert_eq!(lines.len(), 6);
        assert!(lines[5].starts_with("2,0;1,1;1,"));
        assert!(lines[1].ends_with(",true"));
    }
}
