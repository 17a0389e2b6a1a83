//! Regularized symmetric positive-definite solves and the closed-form
//! leave-one-out cross-validation tuner.
//!
//! Every estimator in this crate reduces to solves of the form
//! `(K + n*lambda*I)^{-1} v` for a kernel matrix `K`. The ridge penalty is
//! tuned by minimizing the closed-form LOOCV loss
//! `(1/n) ||diag(H)^{-1} H y||^2` with `H = I - K (K + n*lambda*I)^{-1}`,
//! which equals the average squared held-out residual of n leave-one-out
//! refits at the same regularization.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use ndarray_linalg::{CholeskyFactorized, Eigh, FactorizeC, InverseC, SolveC, UPLO};

use crate::error::{Error, Result};

/// A kernel matrix paired with its ridge penalty.
#[derive(Debug, Clone)]
pub struct RidgeSystem {
    k: Array2<f64>,
    lambda: f64,
}

impl RidgeSystem {
    pub fn new(k: Array2<f64>, lambda: f64) -> Result<Self> {
        if k.nrows() != k.ncols() {
            return Err(Error::DimensionMismatch {
                expected: k.nrows(),
                got: k.ncols(),
                context: "ridge system matrix must be square",
            });
        }
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::validation(format!("ridge penalty must be positive, got {lambda}")));
        }
        let scale = k.iter().fold(0.0f64, |a, &v| a.max(v.abs())).max(1.0);
        for i in 0..k.nrows() {
            for j in 0..i {
                if (k[[i, j]] - k[[j, i]]).abs() > 1e-10 * scale {
                    return Err(Error::validation("ridge system matrix is not symmetric"));
                }
            }
        }
        Ok(RidgeSystem { k, lambda })
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.k
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// The absolute diagonal shift n*lambda.
    pub fn shift(&self) -> f64 {
        self.k.nrows() as f64 * self.lambda
    }
}

/// Cholesky factorization of `K + shift*I` with one jitter retry.
pub(crate) struct SpdFactor {
    factor: CholeskyFactorized<ndarray::OwnedRepr<f64>>,
}

impl SpdFactor {
    /// Factor `k + shift*I`. If the factorization fails (K numerically
    /// indefinite), retry once with an extra `1e-10 * trace(K)/n` on the
    /// diagonal before giving up.
    pub(crate) fn new(k: &Array2<f64>, shift: f64) -> Result<Self> {
        let n = k.nrows();
        let mut a = k.clone();
        for i in 0..n {
            a[[i, i]] += shift;
        }
        match a.factorizec(UPLO::Lower) {
            Ok(factor) => Ok(SpdFactor { factor }),
            Err(_) => {
                let jitter = 1e-10 * k.diag().sum() / n as f64;
                for i in 0..n {
                    a[[i, i]] += jitter;
                }
                let factor = a.factorizec(UPLO::Lower).map_err(|_| Error::Factorization)?;
                Ok(SpdFactor { factor })
            }
        }
    }

    pub(crate) fn solve_vec(&self, b: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.factor.solvec(&b).map_err(|_| Error::Factorization)
    }

    pub(crate) fn inverse(&self) -> Result<Array2<f64>> {
        self.factor.invc().map_err(|_| Error::Factorization)
    }
}

/// Solve `(K + n*lambda*I) out = targets` column by column.
pub fn solve_ridge(system: &RidgeSystem, targets: &Array2<f64>) -> Result<Array2<f64>> {
    let n = system.k.nrows();
    if targets.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: targets.nrows(),
            context: "ridge targets",
        });
    }
    let factor = SpdFactor::new(&system.k, system.shift())?;
    let mut out = Array2::<f64>::zeros(targets.raw_dim());
    for (j, col) in targets.axis_iter(Axis(1)).enumerate() {
        let sol = factor.solve_vec(col)?;
        out.column_mut(j).assign(&sol);
    }
    Ok(out)
}

/// Closed-form LOOCV loss for the ridge penalty `lambda`.
///
/// Uses `H = n*lambda*(K + n*lambda*I)^{-1}`, so the score reduces to
/// `(1/n) sum_i [(A^{-1}y)_i / (A^{-1})_ii]^2` with `A = K + n*lambda*I`.
pub fn loocv_score(k: &Array2<f64>, y: ArrayView1<f64>, lambda: f64) -> Result<f64> {
    let n = k.nrows();
    if y.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: y.len(), context: "loocv targets" });
    }
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::validation(format!("ridge penalty must be positive, got {lambda}")));
    }
    let shift = n as f64 * lambda;
    let factor = SpdFactor::new(k, shift)?;
    let a_inv = factor.inverse()?;
    let s = a_inv.dot(&y);
    let mut score = 0.0;
    for i in 0..n {
        let d = a_inv[[i, i]];
        if !d.is_finite() || d.abs() < 1e-300 {
            return Err(Error::DegenerateSmoother);
        }
        let r = s[i] / d;
        score += r * r;
    }
    Ok(score / n as f64)
}

/// Candidate ridge penalties, kept sorted ascending.
#[derive(Debug, Clone)]
pub struct TuningGrid {
    values: Vec<f64>,
}

impl TuningGrid {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::validation("tuning grid is empty"));
        }
        if values.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
            return Err(Error::validation("tuning grid values must be positive and finite"));
        }
        values.sort_by(|a, b| a.partial_cmp(b).expect("finite grid"));
        Ok(TuningGrid { values })
    }

    /// 20 log-spaced penalties in `[1e-6, 1]` scaled by `trace(K)/n`.
    pub fn log_default(k: &Array2<f64>) -> Self {
        let scale = k.diag().sum() / k.nrows() as f64;
        let values = (0..20)
            .map(|i| scale * 10f64.powf(-6.0 + 6.0 * i as f64 / 19.0))
            .collect();
        TuningGrid { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Grid value minimizing the LOOCV score; ties break toward the larger penalty.
pub fn tune_lambda(k: &Array2<f64>, y: ArrayView1<f64>, grid: &TuningGrid) -> Result<f64> {
    let targets = y.insert_axis(Axis(1));
    tune_lambda_multi(k, targets, grid)
}

/// Multi-output variant of [`tune_lambda`]: the score sums the squared
/// leave-one-out residuals over all target columns. One eigendecomposition of
/// `K` serves every grid point.
pub fn tune_lambda_multi(
    k: &Array2<f64>,
    targets: ArrayView2<f64>,
    grid: &TuningGrid,
) -> Result<f64> {
    let n = k.nrows();
    if targets.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: targets.nrows(),
            context: "tuning targets",
        });
    }
    let (w, q) = k.eigh(UPLO::Lower).map_err(|_| Error::Tuning("eigendecomposition failed".into()))?;
    let q_sq = q.mapv(|v| v * v);
    // Rotated targets: one pass shared by all grid points.
    let qt_targets = q.t().dot(&targets);

    let mut best: Option<(f64, f64)> = None;
    for &lambda in grid.values() {
        let shift = n as f64 * lambda;
        let inv_d: Array1<f64> = w.mapv(|wj| 1.0 / (wj + shift));
        if inv_d.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            continue; // numerically indefinite at this penalty
        }
        let diag = q_sq.dot(&inv_d);
        if diag.iter().any(|d| !d.is_finite() || d.abs() < 1e-300) {
            continue;
        }
        let mut score = 0.0;
        let mut degenerate = false;
        let scaled = &qt_targets * &inv_d.view().insert_axis(Axis(1));
        let s = q.dot(&scaled); // A^{-1} targets, one column per output
        for col in s.axis_iter(Axis(1)) {
            for i in 0..n {
                let r = col[i] / diag[i];
                if !r.is_finite() {
                    degenerate = true;
                    break;
                }
                score += r * r;
            }
            if degenerate {
                break;
            }
        }
        if degenerate {
            continue;
        }
        score /= n as f64;
        best = match best {
            Some((best_score, _)) if score > best_score => best,
            _ => Some((score, lambda)),
        };
    }
    best.map(|(_, lambda)| lambda)
        .ok_or_else(|| Error::Tuning("all grid points degenerate".into()))
}

/// Tune a ridge penalty for a block system, capping the LOOCV problem size.
///
/// Rows are thinned to at most `cap` by even striding (deterministic), the
/// per-sample penalty is tuned there, and the result is rescaled so that the
/// absolute shift `n_block * lambda_block` is expressed against `n_full`:
/// the returned value is the `lambda` to use in a system over `n_full` rows.
pub(crate) fn tune_block_penalty(
    k_block: &Array2<f64>,
    targets: ArrayView2<f64>,
    grid: Option<&TuningGrid>,
    n_full: usize,
    cap: usize,
) -> Result<f64> {
    let n_block = k_block.nrows();
    let rescale = n_block as f64 / n_full as f64;
    if n_block > cap && cap > 0 {
        let idx: Vec<usize> = (0..cap).map(|i| i * n_block / cap).collect();
        let mut k_sub = Array2::<f64>::zeros((cap, cap));
        for (a, &ia) in idx.iter().enumerate() {
            for (b, &ib) in idx.iter().enumerate() {
                k_sub[[a, b]] = k_block[[ia, ib]];
            }
        }
        let mut t_sub = Array2::<f64>::zeros((cap, targets.ncols()));
        for (a, &ia) in idx.iter().enumerate() {
            t_sub.row_mut(a).assign(&targets.row(ia));
        }
        let lambda_sub = match grid {
            Some(g) => tune_lambda_multi(&k_sub, t_sub.view(), g)?,
            None => tune_lambda_multi(&k_sub, t_sub.view(), &TuningGrid::log_default(&k_sub))?,
        };
        return Ok(lambda_sub * rescale);
    }
    let lambda_block = match grid {
        Some(g) => tune_lambda_multi(k_block, targets, g)?,
        None => tune_lambda_multi(k_block, targets, &TuningGrid::log_default(k_block))?,
    };
    Ok(lambda_block * rescale)
}
