//! Kernel functions, lengthscale selection, and Gram matrix construction.
//!
//! Two families cover every variable in the fused-data model: a product of
//! one-dimensional Gaussian kernels for continuous inputs, and the indicator
//! (Dirac) kernel for discrete ones. The group label always uses the Dirac
//! kernel, which turns the group masks appearing in the closed-form
//! estimators into exact 0/1 vectors.

use ndarray::Array2;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::data::{FusedDataset, Group, TreatmentKind};
use crate::error::{Error, Result};

/// Maximum number of points used when computing pairwise-distance medians.
const MEDIAN_HEURISTIC_SUBSAMPLE: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelFamily {
    /// Product of per-dimension Gaussian kernels exp(-0.5 (w_j - w'_j)^2 / s_j^2).
    GaussianProduct,
    /// Indicator kernel 1{w = w'} for discrete inputs.
    Dirac,
}

/// A kernel plus its hyperparameters for one variable block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    family: KernelFamily,
    /// One lengthscale per input dimension; empty for the Dirac family.
    lengthscales: Vec<f64>,
}

impl KernelSpec {
    pub fn gaussian(lengthscales: Vec<f64>) -> Result<Self> {
        if lengthscales.is_empty() {
            return Err(Error::validation("gaussian kernel needs at least one lengthscale"));
        }
        for (j, &s) in lengthscales.iter().enumerate() {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::validation(format!(
                    "lengthscale {s} in dimension {j} must be positive and finite"
                )));
            }
        }
        Ok(KernelSpec { family: KernelFamily::GaussianProduct, lengthscales })
    }

    pub fn dirac() -> Self {
        KernelSpec { family: KernelFamily::Dirac, lengthscales: Vec::new() }
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn lengthscales(&self) -> &[f64] {
        &self.lengthscales
    }

    /// Evaluate the kernel at a pair of points.
    pub fn eval(&self, w: &[f64], w2: &[f64]) -> Result<f64> {
        self.check_dims(w, w2)?;
        Ok(self.eval_unchecked(w, w2))
    }

    fn check_dims(&self, w: &[f64], w2: &[f64]) -> Result<()> {
        if w.len() != w2.len() {
            return Err(Error::DimensionMismatch {
                expected: w.len(),
                got: w2.len(),
                context: "kernel arguments",
            });
        }
        if self.family == KernelFamily::GaussianProduct && w.len() != self.lengthscales.len() {
            return Err(Error::DimensionMismatch {
                expected: self.lengthscales.len(),
                got: w.len(),
                context: "kernel argument vs lengthscales",
            });
        }
        Ok(())
    }

    /// Same as [`eval`](Self::eval) without dimension checks; callers validate once
    /// per batch.
    pub(crate) fn eval_unchecked(&self, w: &[f64], w2: &[f64]) -> f64 {
        match self.family {
            KernelFamily::GaussianProduct => {
                let mut q = 0.0;
                for j in 0..w.len() {
                    let z = (w[j] - w2[j]) / self.lengthscales[j];
                    q += z * z;
                }
                (-0.5 * q).exp()
            }
            KernelFamily::Dirac => {
                if w == w2 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Scalar shortcut for one-dimensional variables.
    pub(crate) fn eval1(&self, a: f64, b: f64) -> f64 {
        match self.family {
            KernelFamily::GaussianProduct => {
                let z = (a - b) / self.lengthscales[0];
                (-0.5 * z * z).exp()
            }
            KernelFamily::Dirac => {
                if a == b {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// A matrix of kernel evaluations between two point sets.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    entries: Array2<f64>,
    symmetric: bool,
}

impl GramMatrix {
    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn into_entries(self) -> Array2<f64> {
        self.entries
    }

    /// True when the row and column point sets coincide, in which case the
    /// matrix is symmetric with unit diagonal and positive semidefinite.
    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }
}

/// Per-dimension lower median of pairwise absolute coordinate distances.
///
/// A dimension whose points are all identical has median distance zero and is
/// reported as an error; the caller must override or drop that dimension.
pub fn median_heuristic(points: &[Vec<f64>]) -> Result<Vec<f64>> {
    if points.len() < 2 {
        return Err(Error::validation("median heuristic needs at least two points"));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: points.iter().map(|p| p.len()).find(|&l| l != dim).unwrap_or(dim),
            context: "median heuristic points",
        });
    }

    // Pair enumeration is quadratic; cap the point count to keep it tractable.
    let subsampled: Vec<&Vec<f64>> = if points.len() > MEDIAN_HEURISTIC_SUBSAMPLE {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x6d65_6469_616e);
        let idx =
            rand::seq::index::sample(&mut rng, points.len(), MEDIAN_HEURISTIC_SUBSAMPLE).into_vec();
        idx.into_iter().map(|i| &points[i]).collect()
    } else {
        points.iter().collect()
    };

    let n = subsampled.len();
    let mut out = Vec::with_capacity(dim);
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for j in 0..dim {
        dists.clear();
        for (a, pa) in subsampled.iter().enumerate() {
            for pb in &subsampled[a + 1..] {
                dists.push((pa[j] - pb[j]).abs());
            }
        }
        dists.sort_by(|x, y| x.partial_cmp(y).expect("finite distances"));
        // Lower-median convention keeps the output deterministic for even counts.
        let med = dists[(dists.len() - 1) / 2];
        if med == 0.0 {
            return Err(Error::DegenerateLengthscale { dim: j });
        }
        out.push(med);
    }
    Ok(out)
}

/// Kernel matrix with entries `spec.eval(rows[i], cols[j])`.
pub fn gram(spec: &KernelSpec, rows: &[Vec<f64>], cols: &[Vec<f64>]) -> Result<GramMatrix> {
    if rows.is_empty() || cols.is_empty() {
        return Err(Error::validation("gram needs non-empty point sets"));
    }
    for p in rows.iter().chain(cols.iter()) {
        spec.check_dims(p, p)?;
    }
    let symmetric = rows.len() == cols.len() && rows == cols;
    let entries = if symmetric {
        gram_symmetric(spec, rows)
    } else {
        gram_rectangular(spec, rows, cols)
    };
    Ok(GramMatrix { entries, symmetric })
}

fn gram_symmetric(spec: &KernelSpec, pts: &[Vec<f64>]) -> Array2<f64> {
    let n = pts.len();
    let mut k = Array2::<f64>::zeros((n, n));
    {
        let data = k.as_slice_mut().expect("standard layout");
        let fill_row = |i: usize, row: &mut [f64]| {
            for j in i..n {
                row[j] = spec.eval_unchecked(&pts[i], &pts[j]);
            }
        };
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            data.par_chunks_mut(n).enumerate().for_each(|(i, row)| fill_row(i, row));
        }
        #[cfg(not(feature = "parallel"))]
        for (i, row) in data.chunks_mut(n).enumerate() {
            fill_row(i, row);
        }
    }
    for i in 0..n {
        for j in 0..i {
            k[[i, j]] = k[[j, i]];
        }
    }
    k
}

fn gram_rectangular(spec: &KernelSpec, rows: &[Vec<f64>], cols: &[Vec<f64>]) -> Array2<f64> {
    let (n, m) = (rows.len(), cols.len());
    let mut k = Array2::<f64>::zeros((n, m));
    let data = k.as_slice_mut().expect("standard layout");
    let fill_row = |i: usize, row: &mut [f64]| {
        for j in 0..m {
            row[j] = spec.eval_unchecked(&rows[i], &cols[j]);
        }
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        data.par_chunks_mut(m).enumerate().for_each(|(i, row)| fill_row(i, row));
    }
    #[cfg(not(feature = "parallel"))]
    for (i, row) in data.chunks_mut(m).enumerate() {
        fill_row(i, row);
    }
    k
}

/// Kernel configuration for every variable block of the fused model.
///
/// The group indicator always uses the Dirac kernel and is therefore not a
/// field here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSet {
    pub x: KernelSpec,
    pub d: KernelSpec,
    pub m: KernelSpec,
    pub y: KernelSpec,
}

impl KernelSet {
    /// Median-heuristic lengthscales computed from the dataset: covariates and
    /// surrogates over all rows, treatment over experimental rows, outcome over
    /// observational rows. Binary treatments get the Dirac kernel.
    pub fn median_heuristic(dataset: &FusedDataset) -> Result<Self> {
        Ok(KernelSet {
            x: Self::median_x(dataset)?,
            d: Self::median_d(dataset)?,
            m: Self::median_m(dataset)?,
            y: Self::median_y(dataset)?,
        })
    }

    pub fn median_x(dataset: &FusedDataset) -> Result<KernelSpec> {
        KernelSpec::gaussian(median_heuristic(&dataset.x_points())?)
    }

    pub fn median_m(dataset: &FusedDataset) -> Result<KernelSpec> {
        KernelSpec::gaussian(median_heuristic(&dataset.m_points())?)
    }

    pub fn median_d(dataset: &FusedDataset) -> Result<KernelSpec> {
        match dataset.treatment_kind() {
            TreatmentKind::Binary => Ok(KernelSpec::dirac()),
            TreatmentKind::Continuous => {
                let pts: Vec<Vec<f64>> = dataset
                    .samples()
                    .iter()
                    .filter(|s| s.group() == Group::Experimental)
                    .map(|s| vec![s.treatment()])
                    .collect();
                KernelSpec::gaussian(median_heuristic(&pts)?)
            }
        }
    }

    pub fn median_y(dataset: &FusedDataset) -> Result<KernelSpec> {
        let y_pts: Vec<Vec<f64>> = dataset
            .samples()
            .iter()
            .filter(|s| s.group() == Group::Observational)
            .map(|s| vec![s.outcome()])
            .collect();
        KernelSpec::gaussian(median_heuristic(&y_pts)?)
    }
}
