//! Linear readout: ridge regression, prediction, NRMSE and smoothing.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::params::UniformTrace;
use crate::receptor::StateMatrix;

/// Relative size of the smallest R diagonal below which an unregularised
/// system is treated as rank deficient.
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutWeights {
    /// One weight per state-matrix column, bias last when present.
    pub values: Vec<f64>,
    pub lambda: f64,
    pub bias: bool,
    /// Ratio of the largest to smallest |R_ii| of the factorised system.
    pub condition_estimate: f64,
    /// `‖(XᵀX + λP)w − Xᵀy‖ / ‖Xᵀy‖`, P the penalty mask.
    pub normal_residual: f64,
    /// SHA-256 over the training matrix and targets.
    pub training_hash: String,
}

/// QR factorisation of the ridge-augmented design `[X; √λ P]`, reusable for
/// any number of right-hand sides. The bias column, if any, is not penalised.
pub struct RidgeSolver {
    qr: nalgebra::linalg::QR<f64, nalgebra::Dyn, nalgebra::Dyn>,
    r: DMatrix<f64>,
    rows: usize,
    augmented_rows: usize,
    cols: usize,
    lambda: f64,
    condition_estimate: f64,
}

impl RidgeSolver {
    pub fn new(x: &StateMatrix, lambda: f64) -> Result<Self> {
        Self::from_matrix(x.matrix(), x.has_bias(), lambda)
    }

    /// `bias` marks the last column of `x` as the unpenalised intercept.
    pub fn from_matrix(x: &DMatrix<f64>, bias: bool, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::config("ridge lambda must be finite and non-negative"));
        }
        let (rows, cols) = x.shape();
        if rows == 0 || cols == 0 {
            return Err(Error::Shape("empty design matrix".into()));
        }
        let penalised = if bias { cols - 1 } else { cols };
        let augmented = if lambda > 0.0 {
            let mut a = DMatrix::zeros(rows + penalised, cols);
            a.rows_mut(0, rows).copy_from(x);
            let s = lambda.sqrt();
            for j in 0..penalised {
                a[(rows + j, j)] = s;
            }
            a
        } else {
            if rows < cols {
                return Err(Error::Singular(format!(
                    "{rows} samples for {cols} unknowns without regularisation; use lambda > 0"
                )));
            }
            x.clone()
        };
        let augmented_rows = augmented.nrows();
        let qr = augmented.qr();
        let r = qr.r();
        let diag: Vec<f64> = (0..cols).map(|i| r[(i, i)].abs()).collect();
        let max = diag.iter().copied().fold(0.0, f64::max);
        let min = diag.iter().copied().fold(f64::INFINITY, f64::min);
        if !(min > RANK_TOL * max) {
            if lambda == 0.0 {
                return Err(Error::Singular(
                    "design matrix is rank deficient; use lambda > 0".into(),
                ));
            }
            // an all-zero intercept-free column under ridge still has √λ on
            // its diagonal, so this only triggers for a degenerate bias column
            return Err(Error::Singular("design matrix is rank deficient".into()));
        }
        Ok(Self {
            qr,
            r,
            rows,
            augmented_rows,
            cols,
            lambda,
            condition_estimate: max / min,
        })
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn condition_estimate(&self) -> f64 {
        self.condition_estimate
    }

    /// Least-squares weights for one target vector.
    pub fn solve(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.rows {
            return Err(Error::Shape(format!(
                "{} targets for {} rows",
                y.len(),
                self.rows
            )));
        }
        let mut rhs = DVector::zeros(self.augmented_rows);
        rhs.rows_mut(0, self.rows).copy_from_slice(y);
        self.qr.q_tr_mul(&mut rhs);
        let head = rhs.rows(0, self.cols).into_owned();
        let r = self.r.view((0, 0), (self.cols, self.cols));
        let w = r
            .solve_upper_triangular(&head)
            .ok_or_else(|| Error::Singular("triangular solve failed".into()))?;
        Ok(w.iter().copied().collect())
    }
}

/// Ridge weights `W = (XᵀX + λI)⁻¹ Xᵀ y`, computed from a QR factorisation of
/// the augmented least-squares system. A bias column is left unpenalised.
pub fn fit_ridge(x: &StateMatrix, y: &[f64], lambda: f64) -> Result<ReadoutWeights> {
    if x.rows() != y.len() {
        return Err(Error::Shape(format!(
            "{} state rows for {} targets",
            x.rows(),
            y.len()
        )));
    }
    let solver = RidgeSolver::new(x, lambda)?;
    let values = solver.solve(y)?;
    if values.iter().any(|w| !w.is_finite()) {
        return Err(Error::Singular("non-finite readout weights".into()));
    }
    let normal_residual = normal_equation_residual(x.matrix(), x.has_bias(), y, &values, lambda);
    Ok(ReadoutWeights {
        values,
        lambda,
        bias: x.has_bias(),
        condition_estimate: solver.condition_estimate,
        normal_residual,
        training_hash: training_hash(x.matrix(), y),
    })
}

fn normal_equation_residual(x: &DMatrix<f64>, bias: bool, y: &[f64], w: &[f64], lambda: f64) -> f64 {
    let yv = DVector::from_column_slice(y);
    let wv = DVector::from_column_slice(w);
    let xty = x.tr_mul(&yv);
    let mut lhs = x.tr_mul(&(x * &wv));
    let penalised = if bias { w.len() - 1 } else { w.len() };
    for j in 0..penalised {
        lhs[j] += lambda * w[j];
    }
    let scale = xty.norm();
    if scale == 0.0 {
        (lhs - xty).norm()
    } else {
        (lhs - xty).norm() / scale
    }
}

fn training_hash(x: &DMatrix<f64>, y: &[f64]) -> String {
    let mut hasher = Sha256::new();
    hasher.update((x.nrows() as u64).to_le_bytes());
    hasher.update((x.ncols() as u64).to_le_bytes());
    for v in x.iter().chain(y) {
        hasher.update(v.to_le_bytes());
    }
    hex::encode(hasher.finalize())
}

/// `ŷ = X W`.
pub fn predict(x: &StateMatrix, weights: &ReadoutWeights) -> Result<Vec<f64>> {
    predict_matrix(x.matrix(), &weights.values)
}

pub fn predict_matrix(x: &DMatrix<f64>, w: &[f64]) -> Result<Vec<f64>> {
    if x.ncols() != w.len() {
        return Err(Error::Shape(format!(
            "{} weights for {} state columns",
            w.len(),
            x.ncols()
        )));
    }
    let wv = DVector::from_column_slice(w);
    Ok((x * wv).iter().copied().collect())
}

/// `sqrt(Σ (y - ŷ)² / Σ (y - ȳ)²)`.
pub fn nrmse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    if y.len() != y_hat.len() {
        return Err(Error::Shape(format!(
            "{} targets vs {} predictions",
            y.len(),
            y_hat.len()
        )));
    }
    if y.len() < 2 {
        return Err(Error::Degenerate("NRMSE needs at least two samples".into()));
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let spread: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if spread == 0.0 {
        return Err(Error::Degenerate("NRMSE undefined for a constant target".into()));
    }
    let err: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((err / spread).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterAlignment {
    /// Window centred on each sample; zero phase.
    #[default]
    Centered,
    /// Window ending at each sample.
    Causal,
}

/// Number of samples a window of `window` seconds covers on a grid of `step`.
/// Centred windows are forced to an odd count.
pub fn window_samples(window: f64, step: f64, alignment: FilterAlignment) -> Result<usize> {
    let raw = (window / step + 1e-9).floor();
    if !(raw >= 1.0) {
        return Err(Error::config(format!(
            "filter window {window} s is shorter than the trace step {step} s"
        )));
    }
    let n = raw as usize;
    Ok(match alignment {
        FilterAlignment::Centered if n % 2 == 0 => n - 1,
        _ => n,
    })
}

/// Box filter over `window` seconds. Near the edges the mean is taken over
/// the part of the window that lies inside the trace.
pub fn moving_average(
    trace: &UniformTrace,
    window: f64,
    alignment: FilterAlignment,
) -> Result<UniformTrace> {
    let n = window_samples(window, trace.step, alignment)?;
    Ok(UniformTrace {
        start_time: trace.start_time,
        step: trace.step,
        values: box_filter(&trace.values, n, alignment),
    })
}

/// Box filter over a window of `width` samples.
pub fn box_filter(values: &[f64], width: usize, alignment: FilterAlignment) -> Vec<f64> {
    let len = values.len();
    let mut prefix = Vec::with_capacity(len + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for v in values {
        acc += v;
        prefix.push(acc);
    }
    let (behind, ahead) = match alignment {
        FilterAlignment::Centered => (width / 2, width / 2),
        FilterAlignment::Causal => (width - 1, 0),
    };
    (0..len)
        .map(|i| {
            let lo = i.saturating_sub(behind);
            let hi = (i + ahead + 1).min(len);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}
