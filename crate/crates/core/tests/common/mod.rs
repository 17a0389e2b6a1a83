//! Shared helpers for the integration suites: an independent brute-force
//! implementation of the closed-form estimators (explicit full matrices,
//! Gauss-Jordan inversion, double-loop averages) plus small statistics
//! utilities. Nothing here touches the library's solver or block-reduction
//! paths.

#![allow(dead_code)]

use ltk::data::{FusedDataset, FusedSample, Group, TreatmentKind};
use ltk::kernels::{KernelSet, KernelSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[allow(clippy::needless_range_loop)]
pub fn gj_inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut aug: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if j == i { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let mut pivot = col;
        for r in col + 1..n {
            if aug[r][col].abs() > aug[pivot][col].abs() {
                pivot = r;
            }
        }
        aug.swap(col, pivot);
        let p = aug[col][col];
        for v in aug[col].iter_mut() {
            *v /= p;
        }
        for r in 0..n {
            if r != col {
                let f = aug[r][col];
                for j in 0..2 * n {
                    aug[r][j] -= f * aug[col][j];
                }
            }
        }
    }
    aug.into_iter().map(|row| row[n..].to_vec()).collect()
}

pub fn mat_vec(a: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    a.iter().map(|row| row.iter().zip(v).map(|(x, y)| x * y).sum()).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// The verbatim full-sample matrices of the closed-form estimators.
pub struct PaperMatrices {
    pub k_gg: Vec<Vec<f64>>,
    pub k_xx: Vec<Vec<f64>>,
    pub k_dd: Vec<Vec<f64>>,
    pub k_mm: Vec<Vec<f64>>,
    pub g0: Vec<f64>,
    pub g1: Vec<f64>,
}

pub fn paper_matrices(ds: &FusedDataset, kernels: &KernelSet) -> PaperMatrices {
    let s = ds.samples();
    let n = s.len();
    let build = |f: &dyn Fn(usize, usize) -> f64| -> Vec<Vec<f64>> {
        (0..n).map(|i| (0..n).map(|j| f(i, j)).collect()).collect()
    };
    PaperMatrices {
        k_gg: build(&|i, j| if s[i].group() == s[j].group() { 1.0 } else { 0.0 }),
        k_xx: build(&|i, j| kernels.x.eval(s[i].x(), s[j].x()).unwrap()),
        k_dd: build(&|i, j| {
            kernels.d.eval(&[s[i].treatment()], &[s[j].treatment()]).unwrap()
        }),
        k_mm: build(&|i, j| kernels.m.eval(s[i].m(), s[j].m()).unwrap()),
        g0: s.iter().map(|r| if r.group() == Group::Experimental { 1.0 } else { 0.0 }).collect(),
        g1: s.iter().map(|r| if r.group() == Group::Observational { 1.0 } else { 0.0 }).collect(),
    }
}

pub fn hadamard(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter()
        .zip(b)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| x * y).collect())
        .collect()
}

pub fn shifted(a: &[Vec<f64>], shift: f64) -> Vec<Vec<f64>> {
    let mut out = a.to_vec();
    for (i, row) in out.iter_mut().enumerate() {
        row[i] += shift;
    }
    out
}

pub fn kx_query(ds: &FusedDataset, kernels: &KernelSet, x: &[f64]) -> Vec<f64> {
    ds.samples().iter().map(|s| kernels.x.eval(s.x(), x).unwrap()).collect()
}

pub fn kd_query(ds: &FusedDataset, kernels: &KernelSet, d: f64) -> Vec<f64> {
    ds.samples().iter().map(|s| kernels.d.eval(&[s.treatment()], &[d]).unwrap()).collect()
}

pub fn km_query(ds: &FusedDataset, kernels: &KernelSet, m: &[f64]) -> Vec<f64> {
    ds.samples().iter().map(|s| kernels.m.eval(s.m(), m).unwrap()).collect()
}

/// chi(x, d) assembled exactly as written: the masked first-stage solve, the
/// surrogate Gram multiply, and the covariate cross-kernel mask.
pub fn naive_chi(
    ds: &FusedDataset,
    kernels: &KernelSet,
    lambda1: f64,
    x: &[f64],
    d: f64,
) -> Vec<f64> {
    let n = ds.len();
    let mats = paper_matrices(ds, kernels);
    let system = shifted(&hadamard(&hadamard(&mats.k_gg, &mats.k_xx), &mats.k_dd), n as f64 * lambda1);
    let kx = kx_query(ds, kernels, x);
    let kd = kd_query(ds, kernels, d);
    let target: Vec<f64> =
        (0..n).map(|i| mats.g0[i] * kx[i] * kd[i]).collect();
    let beta = mat_vec(&gj_inverse(&system), &target);
    let km_beta = mat_vec(&mats.k_mm, &beta);
    (0..n).map(|i| kx[i] * km_beta[i]).collect()
}

/// One dose-response evaluation at covariate query `x` and treatment `d`.
pub fn naive_curve_value(
    ds: &FusedDataset,
    kernels: &KernelSet,
    lambda: f64,
    lambda1: f64,
    x: &[f64],
    d: f64,
) -> f64 {
    let n = ds.len();
    let mats = paper_matrices(ds, kernels);
    let system = shifted(&hadamard(&hadamard(&mats.k_gg, &mats.k_xx), &mats.k_mm), n as f64 * lambda);
    let chi = naive_chi(ds, kernels, lambda1, x, d);
    let masked: Vec<f64> = (0..n).map(|i| mats.g1[i] * chi[i]).collect();
    let y = ds.outcomes();
    dot(&y, &mat_vec(&gj_inverse(&system), &masked))
}

pub fn naive_nu(
    ds: &FusedDataset,
    kernels: &KernelSet,
    lambda: f64,
    lambda1: f64,
    x: &[f64],
    d: f64,
) -> f64 {
    naive_curve_value(ds, kernels, lambda, lambda1, x, d)
}

pub fn naive_gamma(
    ds: &FusedDataset,
    kernels: &KernelSet,
    lambda: f64,
    x: &[f64],
    m: &[f64],
) -> f64 {
    let n = ds.len();
    let mats = paper_matrices(ds, kernels);
    let system = shifted(&hadamard(&hadamard(&mats.k_gg, &mats.k_xx), &mats.k_mm), n as f64 * lambda);
    let kx = kx_query(ds, kernels, x);
    let km = km_query(ds, kernels, m);
    let target: Vec<f64> = (0..n).map(|i| mats.g1[i] * kx[i] * km[i]).collect();
    dot(&ds.outcomes(), &mat_vec(&gj_inverse(&system), &target))
}

pub fn naive_pi(ds: &FusedDataset, kernels: &KernelSet, lambda3: f64, x: &[f64]) -> f64 {
    let n = ds.len();
    let mats = paper_matrices(ds, kernels);
    let system = shifted(&hadamard(&mats.k_gg, &mats.k_xx), n as f64 * lambda3);
    let kx = kx_query(ds, kernels, x);
    let target: Vec<f64> = (0..n).map(|i| mats.g0[i] * kx[i]).collect();
    dot(&ds.treatments(), &mat_vec(&gj_inverse(&system), &target))
}

pub fn naive_rho(
    ds: &FusedDataset,
    kernels: &KernelSet,
    lambda4: f64,
    x: &[f64],
    m: &[f64],
) -> f64 {
    let n = ds.len();
    let mats = paper_matrices(ds, kernels);
    let system = shifted(&hadamard(&hadamard(&mats.k_gg, &mats.k_xx), &mats.k_mm), n as f64 * lambda4);
    let kx = kx_query(ds, kernels, x);
    let km = km_query(ds, kernels, m);
    let target: Vec<f64> = (0..n).map(|i| mats.g0[i] * kx[i] * km[i]).collect();
    dot(&ds.treatments(), &mat_vec(&gj_inverse(&system), &target))
}

pub fn naive_pi_prime(ds: &FusedDataset, kernels: &KernelSet, lambda5: f64, x: &[f64]) -> f64 {
    let n = ds.len();
    let mats = paper_matrices(ds, kernels);
    let system = shifted(&mats.k_xx, n as f64 * lambda5);
    dot(&ds.group_indicators(), &mat_vec(&gj_inverse(&system), &kx_query(ds, kernels, x)))
}

pub fn naive_rho_prime(
    ds: &FusedDataset,
    kernels: &KernelSet,
    lambda6: f64,
    x: &[f64],
    m: &[f64],
) -> f64 {
    let n = ds.len();
    let mats = paper_matrices(ds, kernels);
    let system = shifted(&hadamard(&mats.k_xx, &mats.k_mm), n as f64 * lambda6);
    let kx = kx_query(ds, kernels, x);
    let km = km_query(ds, kernels, m);
    let target: Vec<f64> = (0..n).map(|i| kx[i] * km[i]).collect();
    dot(&ds.group_indicators(), &mat_vec(&gj_inverse(&system), &target))
}

/// Distribution-embedding evaluation averaged explicitly over the query set.
pub fn naive_embedding_eval(
    ds: &FusedDataset,
    kernels: &KernelSet,
    lambda1: f64,
    lambda2: f64,
    queries: &[Vec<f64>],
    d: f64,
    y: f64,
) -> f64 {
    let n = ds.len();
    let mats = paper_matrices(ds, kernels);
    let system = shifted(&hadamard(&hadamard(&mats.k_gg, &mats.k_xx), &mats.k_mm), n as f64 * lambda2);
    let inv = gj_inverse(&system);
    let ky: Vec<f64> =
        ds.samples().iter().map(|s| kernels.y.eval(&[s.outcome()], &[y]).unwrap()).collect();
    let mut total = 0.0;
    for q in queries {
        let chi = naive_chi(ds, kernels, lambda1, q, d);
        let masked: Vec<f64> = (0..n).map(|i| mats.g1[i] * chi[i]).collect();
        total += dot(&ky, &mat_vec(&inv, &masked));
    }
    total / queries.len() as f64
}

/// Random fused dataset with both groups guaranteed.
pub fn random_dataset(n: usize, seed: u64, kind: TreatmentKind) -> FusedDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let exp = if i == 0 {
            true
        } else if i == 1 {
            false
        } else {
            rng.gen_bool(0.5)
        };
        let x = vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
        let m = vec![rng.gen_range(-2.0..2.0)];
        if exp {
            let d = match kind {
                TreatmentKind::Continuous => rng.gen_range(-1.0..1.0),
                TreatmentKind::Binary => {
                    if rng.gen_bool(0.5) {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
            samples.push(FusedSample::experimental(x, d, m));
        } else {
            samples.push(FusedSample::observational(x, m, rng.gen_range(-2.0..2.0)));
        }
    }
    FusedDataset::new(samples, 2, 1, kind).unwrap()
}

pub fn test_kernels(kind: TreatmentKind) -> KernelSet {
    KernelSet {
        x: KernelSpec::gaussian(vec![0.9, 1.3]).unwrap(),
        d: match kind {
            TreatmentKind::Continuous => KernelSpec::gaussian(vec![0.8]).unwrap(),
            TreatmentKind::Binary => KernelSpec::dirac(),
        },
        m: KernelSpec::gaussian(vec![1.1]).unwrap(),
        y: KernelSpec::gaussian(vec![0.9]).unwrap(),
    }
}

/// Two-sample Kolmogorov-Smirnov distance.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (mut i, mut j) = (0usize, 0usize);
    let mut sup = 0.0f64;
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            i += 1;
        } else {
            j += 1;
        }
        let fa = i as f64 / a.len() as f64;
        let fb = j as f64 / b.len() as f64;
        sup = sup.max((fa - fb).abs());
    }
    sup
}

/// Standard normal quantiles at levels 0.1..0.9, frozen from tables.
pub const NORMAL_QUANTILES_9: [f64; 9] = [
    -1.2815515655446004,
    -0.8416212335729143,
    -0.5244005127080407,
    -0.2533471031357997,
    0.0,
    0.2533471031357997,
    0.5244005127080407,
    0.8416212335729143,
    1.2815515655446004,
];
