//! Brute-force reference computations for tests: explicit full-matrix
//! assembly, Gauss-Jordan inversion, and double-loop averages. Everything here
//! works on the unreduced n x n systems so it exercises none of the block
//! shortcuts used by the estimators.

use ndarray::{Array1, Array2};

use crate::data::{FusedDataset, Group};
use crate::kernels::{KernelSet, KernelSpec};

pub(crate) fn gj_inverse(a: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let mut aug = Array2::<f64>::zeros((n, 2 * n));
    for i in 0..n {
        for j in 0..n {
            aug[[i, j]] = a[[i, j]];
        }
        aug[[i, n + i]] = 1.0;
    }
    for col in 0..n {
        let mut pivot = col;
        for r in col + 1..n {
            if aug[[r, col]].abs() > aug[[pivot, col]].abs() {
                pivot = r;
            }
        }
        if pivot != col {
            for j in 0..2 * n {
                let tmp = aug[[col, j]];
                aug[[col, j]] = aug[[pivot, j]];
                aug[[pivot, j]] = tmp;
            }
        }
        let p = aug[[col, col]];
        for j in 0..2 * n {
            aug[[col, j]] /= p;
        }
        for r in 0..n {
            if r != col {
                let f = aug[[r, col]];
                for j in 0..2 * n {
                    aug[[r, j]] -= f * aug[[col, j]];
                }
            }
        }
    }
    aug.slice(ndarray::s![.., n..]).to_owned()
}

fn full_gram<F: Fn(usize, usize) -> f64>(n: usize, f: F) -> Array2<f64> {
    Array2::from_shape_fn((n, n), |(i, j)| f(i, j))
}

pub(crate) struct FullMatrices {
    pub k_gg: Array2<f64>,
    pub k_xx: Array2<f64>,
    pub k_dd: Array2<f64>,
    pub k_mm: Array2<f64>,
    pub g0: Array1<f64>,
    pub g1: Array1<f64>,
}

pub(crate) fn full_matrices(ds: &FusedDataset, kernels: &KernelSet) -> FullMatrices {
    let n = ds.len();
    let s = ds.samples();
    FullMatrices {
        k_gg: full_gram(n, |i, j| {
            if s[i].group() == s[j].group() {
                1.0
            } else {
                0.0
            }
        }),
        k_xx: full_gram(n, |i, j| kernels.x.eval_unchecked(s[i].x(), s[j].x())),
        k_dd: full_gram(n, |i, j| kernels.d.eval1(s[i].treatment(), s[j].treatment())),
        k_mm: full_gram(n, |i, j| kernels.m.eval_unchecked(s[i].m(), s[j].m())),
        g0: Array1::from_iter(
            s.iter().map(|r| if r.group() == Group::Experimental { 1.0 } else { 0.0 }),
        ),
        g1: Array1::from_iter(
            s.iter().map(|r| if r.group() == Group::Observational { 1.0 } else { 0.0 }),
        ),
    }
}

fn shifted(a: &Array2<f64>, shift: f64) -> Array2<f64> {
    let mut out = a.clone();
    for i in 0..a.nrows() {
        out[[i, i]] += shift;
    }
    out
}

fn kx_query(ds: &FusedDataset, spec: &KernelSpec, x: &[f64]) -> Array1<f64> {
    Array1::from_iter(ds.samples().iter().map(|s| spec.eval_unchecked(s.x(), x)))
}

fn kd_query(ds: &FusedDataset, spec: &KernelSpec, d: f64) -> Array1<f64> {
    Array1::from_iter(ds.samples().iter().map(|s| spec.eval1(s.treatment(), d)))
}

fn km_query(ds: &FusedDataset, spec: &KernelSpec, m: &[f64]) -> Array1<f64> {
    Array1::from_iter(ds.samples().iter().map(|s| spec.eval_unchecked(s.m(), m)))
}

/// Verbatim first-stage coefficients over the full unreduced system.
pub(crate) fn naive_cme_coefficients(
    ds: &FusedDataset,
    kernels: &KernelSet,
    lambda1: f64,
    x: &[f64],
    d: f64,
) -> Array1<f64> {
    let n = ds.len();
    let mats = full_matrices(ds, kernels);
    let a = shifted(&(&(&mats.k_gg * &mats.k_xx) * &mats.k_dd), n as f64 * lambda1);
    let target = &(&mats.g0 * &kx_query(ds, &kernels.x, x)) * &kd_query(ds, &kernels.d, d);
    gj_inverse(&a).dot(&target)
}

/// chi(x, d) composed step by step from the verbatim formula.
pub(crate) fn naive_chi(
    ds: &FusedDataset,
    kernels: &KernelSet,
    lambda1: f64,
    x: &[f64],
    d: f64,
) -> Array1<f64> {
    let mats = full_matrices(ds, kernels);
    let beta = naive_cme_coefficients(ds, kernels, lambda1, x, d);
    &kx_query(ds, &kernels.x, x) * &mats.k_mm.dot(&beta)
}

/// Verbatim dose-response value at one covariate query and treatment level.
pub(crate) fn naive_curve_value(
    ds: &FusedDataset,
    kernels: &KernelSet,
    lambda: f64,
    lambda1: f64,
    x: &[f64],
    d: f64,
) -> f64 {
    let n = ds.len();
    let mats = full_matrices(ds, kernels);
    let outcome_system =
        shifted(&(&(&mats.k_gg * &mats.k_xx) * &mats.k_mm), n as f64 * lambda);
    let chi = naive_chi(ds, kernels, lambda1, x, d);
    let masked = &mats.g1 * &chi;
    let y = Array1::from_vec(ds.outcomes());
    y.dot(&gj_inverse(&outcome_system).dot(&masked))
}

/// Verbatim regression evaluation `gamma(G=1, x, m)`.
pub(crate) fn naive_gamma(
    ds: &FusedDataset,
    kernels: &KernelSet,
    lambda: f64,
    x: &[f64],
    m: &[f64],
) -> f64 {
    let n = ds.len();
    let mats = full_matrices(ds, kernels);
    let a = shifted(&(&(&mats.k_gg * &mats.k_xx) * &mats.k_mm), n as f64 * lambda);
    let target =
        &(&mats.g1 * &kx_query(ds, &kernels.x, x)) * &km_query(ds, &kernels.m, m);
    let y = Array1::from_vec(ds.outcomes());
    y.dot(&gj_inverse(&a).dot(&target))
}

/// Verbatim treatment propensity regression against covariates only.
pub(crate) fn naive_pi_raw(ds: &FusedDataset, kernels: &KernelSet, lambda3: f64, x: &[f64]) -> f64 {
    let n = ds.len();
    let mats = full_matrices(ds, kernels);
    let a = shifted(&(&mats.k_gg * &mats.k_xx), n as f64 * lambda3);
    let target = &mats.g0 * &kx_query(ds, &kernels.x, x);
    let dv = Array1::from_vec(ds.treatments());
    dv.dot(&gj_inverse(&a).dot(&target))
}

/// Verbatim treatment propensity regression against covariates and surrogates.
pub(crate) fn naive_rho_raw(
    ds: &FusedDataset,
    kernels: &KernelSet,
    lambda4: f64,
    x: &[f64],
    m: &[f64],
) -> f64 {
    let n = ds.len();
    let mats = full_matrices(ds, kernels);
    let a = shifted(&(&(&mats.k_gg * &mats.k_xx) * &mats.k_mm), n as f64 * lambda4);
    let target =
        &(&mats.g0 * &kx_query(ds, &kernels.x, x)) * &km_query(ds, &kernels.m, m);
    let dv = Array1::from_vec(ds.treatments());
    dv.dot(&gj_inverse(&a).dot(&target))
}

/// Verbatim selection propensity regression against covariates only.
pub(crate) fn naive_pi_prime_raw(
    ds: &FusedDataset,
    kernels: &KernelSet,
    lambda5: f64,
    x: &[f64],
) -> f64 {
    let n = ds.len();
    let mats = full_matrices(ds, kernels);
    let a = shifted(&mats.k_xx, n as f64 * lambda5);
    let g = Array1::from_vec(ds.group_indicators());
    g.dot(&gj_inverse(&a).dot(&kx_query(ds, &kernels.x, x)))
}

/// Verbatim selection propensity regression against covariates and surrogates.
pub(crate) fn naive_rho_prime_raw(
    ds: &FusedDataset,
    kernels: &KernelSet,
    lambda6: f64,
    x: &[f64],
    m: &[f64],
) -> f64 {
    let n = ds.len();
    let mats = full_matrices(ds, kernels);
    let a = shifted(&(&mats.k_xx * &mats.k_mm), n as f64 * lambda6);
    let target = &kx_query(ds, &kernels.x, x) * &km_query(ds, &kernels.m, m);
    let g = Array1::from_vec(ds.group_indicators());
    g.dot(&gj_inverse(&a).dot(&target))
}

/// Verbatim distribution-embedding evaluation: the per-query formula averaged
/// explicitly over the estimand's index set.
pub(crate) fn naive_dist_embedding_eval(
    ds: &FusedDataset,
    kernels: &KernelSet,
    lambda1: f64,
    lambda2: f64,
    queries: &[Vec<f64>],
    d: f64,
    y: f64,
) -> f64 {
    let n = ds.len();
    let mats = full_matrices(ds, kernels);
    let a = shifted(&(&(&mats.k_gg * &mats.k_xx) * &mats.k_mm), n as f64 * lambda2);
    let a_inv = gj_inverse(&a);
    let k_y = Array1::from_iter(ds.samples().iter().map(|s| kernels.y.eval1(s.outcome(), y)));
    let mut total = 0.0;
    for q in queries {
        let chi = naive_chi(ds, kernels, lambda1, q, d);
        let masked = &mats.g1 * &chi;
        total += k_y.dot(&a_inv.dot(&masked));
    }
    total / queries.len() as f64
}
