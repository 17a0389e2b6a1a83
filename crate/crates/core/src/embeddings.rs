//! Conditional-mean-embedding coefficients and the chi vector shared by the
//! dose-response, treatment-effect, and distribution estimators.
//!
//! The first-stage system `(K_GG ⊙ K_XX ⊙ K_D'D' + n λ1 I)` is block diagonal
//! once rows are grouped by the selection indicator, because the Dirac kernel
//! on G zeroes every cross-group entry. The masked target `K_G0 ⊙ ...` lives
//! entirely in the experimental block, so the solve reduces exactly to that
//! block. The same reduction applies to every `K_G1`-masked outcome solve on
//! the observational block.

use ndarray::{Array1, Array2};

use crate::data::{FusedDataset, TreatmentKind};
use crate::error::{Error, Result};
use crate::kernels::{gram, KernelSet, KernelSpec};
use crate::ridge::SpdFactor;

/// The chi vector of a fitted embedding model at one query point.
#[derive(Debug, Clone)]
pub struct ChiVector {
    values: Array1<f64>,
    at_x: Vec<f64>,
    at_d: f64,
}

impl ChiVector {
    pub fn values(&self) -> &Array1<f64> {
        &self.values
    }

    pub fn at_x(&self) -> &[f64] {
        &self.at_x
    }

    pub fn at_d(&self) -> f64 {
        self.at_d
    }
}

/// First-stage surrogate embedding model, reusable across query points.
///
/// Fitting factors the regularized system once; every query afterwards costs
/// one triangular solve.
pub struct EmbeddingModel {
    n: usize,
    treatment_kind: TreatmentKind,
    x_all: Vec<Vec<f64>>,
    exp_idx: Vec<usize>,
    obs_idx: Vec<usize>,
    d_exp: Vec<f64>,
    x_spec: KernelSpec,
    d_spec: KernelSpec,
    lambda1: f64,
    /// Full n x n surrogate Gram matrix.
    k_mm: Array2<f64>,
    /// Cholesky of the experimental block of the first-stage system.
    first_stage: SpdFactor,
    /// K_MM[obs, exp] * (first-stage block)^{-1}; turns batched chi
    /// evaluations into a single matrix product.
    cross_obs_solve: Array2<f64>,
}

/// The Gram matrices the first stage is assembled from, when the caller has
/// already computed them.
pub(crate) struct FirstStageGrams {
    pub(crate) k_xx_exp: Array2<f64>,
    pub(crate) k_dd_exp: Array2<f64>,
    pub(crate) k_mm: Array2<f64>,
}

impl EmbeddingModel {
    pub fn fit(dataset: &FusedDataset, kernels: &KernelSet, lambda1: f64) -> Result<Self> {
        let exp_idx = dataset.exp_indices();
        let x_all = dataset.x_points();
        let x_exp: Vec<Vec<f64>> = exp_idx.iter().map(|&i| x_all[i].clone()).collect();
        let d_exp_pts: Vec<Vec<f64>> =
            exp_idx.iter().map(|&i| vec![dataset.samples()[i].treatment()]).collect();
        let m_all = dataset.m_points();
        let grams = FirstStageGrams {
            k_xx_exp: gram(&kernels.x, &x_exp, &x_exp)?.into_entries(),
            k_dd_exp: gram(&kernels.d, &d_exp_pts, &d_exp_pts)?.into_entries(),
            k_mm: gram(&kernels.m, &m_all, &m_all)?.into_entries(),
        };
        Self::fit_with_grams(dataset, kernels, lambda1, grams)
    }

    pub(crate) fn fit_with_grams(
        dataset: &FusedDataset,
        kernels: &KernelSet,
        lambda1: f64,
        grams: FirstStageGrams,
    ) -> Result<Self> {
        if !(lambda1.is_finite() && lambda1 > 0.0) {
            return Err(Error::validation(format!(
                "first-stage penalty must be positive, got {lambda1}"
            )));
        }
        let n = dataset.len();
        let exp_idx = dataset.exp_indices();
        let obs_idx = dataset.obs_indices();
        let x_all = dataset.x_points();
        let d_exp: Vec<f64> =
            exp_idx.iter().map(|&i| dataset.samples()[i].treatment()).collect();

        let first_block = &grams.k_xx_exp * &grams.k_dd_exp;
        let k_mm = grams.k_mm;

        let shift = n as f64 * lambda1;
        let first_stage = SpdFactor::new(&first_block, shift)?;
        let block_inv = first_stage.inverse()?;

        let n0 = exp_idx.len();
        let n1 = obs_idx.len();
        let mut k_mm_obs_exp = Array2::<f64>::zeros((n1, n0));
        for (a, &i) in obs_idx.iter().enumerate() {
            for (b, &j) in exp_idx.iter().enumerate() {
                k_mm_obs_exp[[a, b]] = k_mm[[i, j]];
            }
        }
        let cross_obs_solve = k_mm_obs_exp.dot(&block_inv);

        Ok(EmbeddingModel {
            n,
            treatment_kind: dataset.treatment_kind(),
            x_all,
            exp_idx,
            obs_idx,
            d_exp,
            x_spec: kernels.x.clone(),
            d_spec: kernels.d.clone(),
            lambda1,
            k_mm,
            first_stage,
            cross_obs_solve,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn lambda1(&self) -> f64 {
        self.lambda1
    }

    pub(crate) fn exp_indices(&self) -> &[usize] {
        &self.exp_idx
    }

    pub(crate) fn obs_indices(&self) -> &[usize] {
        &self.obs_idx
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.x_all[0].len() {
            return Err(Error::DimensionMismatch {
                expected: self.x_all[0].len(),
                got: x.len(),
                context: "query covariate vector",
            });
        }
        Ok(())
    }

    fn check_d(&self, d: f64) -> Result<()> {
        if !d.is_finite() {
            return Err(Error::validation("query treatment must be finite"));
        }
        if self.treatment_kind == TreatmentKind::Binary && d != 0.0 && d != 1.0 {
            return Err(Error::validation(format!("binary treatment query must be 0 or 1, got {d}")));
        }
        Ok(())
    }

    fn check_query(&self, x: &[f64], d: f64) -> Result<()> {
        self.check_x(x)?;
        self.check_d(d)
    }

    /// Masked first-stage target restricted to the experimental block.
    fn masked_target(&self, x: &[f64], d: f64) -> Array1<f64> {
        Array1::from_iter(self.exp_idx.iter().zip(&self.d_exp).map(|(&i, &di)| {
            self.x_spec.eval_unchecked(&self.x_all[i], x) * self.d_spec.eval1(di, d)
        }))
    }

    /// Coefficient vector of the estimated surrogate embedding at `(x, d)`:
    /// the solution of the regularized first-stage system against the
    /// group-masked cross-kernel target. Entries at observational rows are
    /// exactly zero.
    pub fn cme_coefficients(&self, x: &[f64], d: f64) -> Result<Array1<f64>> {
        self.check_query(x, d)?;
        let beta_exp = self.first_stage.solve_vec(self.masked_target(x, d).view())?;
        let mut beta = Array1::<f64>::zeros(self.n);
        for (b, &i) in self.exp_idx.iter().enumerate() {
            beta[i] = beta_exp[b];
        }
        Ok(beta)
    }

    /// The chi vector `K_Xx ⊙ (K_MM β(x, d))`.
    pub fn chi_vector(&self, x: &[f64], d: f64) -> Result<ChiVector> {
        self.check_query(x, d)?;
        let beta_exp = self.first_stage.solve_vec(self.masked_target(x, d).view())?;
        let mut values = Array1::<f64>::zeros(self.n);
        for i in 0..self.n {
            let mut acc = 0.0;
            for (b, &j) in self.exp_idx.iter().enumerate() {
                acc += self.k_mm[[i, j]] * beta_exp[b];
            }
            values[i] = self.x_spec.eval_unchecked(&self.x_all[i], x) * acc;
        }
        Ok(ChiVector { values, at_x: x.to_vec(), at_d: d })
    }

    /// Cross kernels from the training rows to a batch of covariate queries,
    /// split by group block. Reused across treatment grid points.
    pub(crate) fn query_batch(&self, queries: &[Vec<f64>]) -> Result<QueryBatch> {
        for q in queries {
            self.check_x(q)?;
        }
        let nq = queries.len();
        let mut kx_exp = Array2::<f64>::zeros((self.exp_idx.len(), nq));
        for (a, &i) in self.exp_idx.iter().enumerate() {
            for (c, q) in queries.iter().enumerate() {
                kx_exp[[a, c]] = self.x_spec.eval_unchecked(&self.x_all[i], q);
            }
        }
        let mut kx_obs = Array2::<f64>::zeros((self.obs_idx.len(), nq));
        for (a, &i) in self.obs_idx.iter().enumerate() {
            for (c, q) in queries.iter().enumerate() {
                kx_obs[[a, c]] = self.x_spec.eval_unchecked(&self.x_all[i], q);
            }
        }
        Ok(QueryBatch { kx_exp, kx_obs })
    }

    /// Observational-block rows of the chi vectors for every query at
    /// treatment `d` (column `c` holds `chi(queries[c], d)` restricted to
    /// observational rows). This is the only part of chi the `K_G1`-masked
    /// estimators consume.
    pub(crate) fn chi_obs_batch(&self, batch: &QueryBatch, d: f64) -> Result<Array2<f64>> {
        self.check_d(d)?;
        let u0 = Array1::from_iter(self.d_exp.iter().map(|&di| self.d_spec.eval1(di, d)));
        // Masked targets for the whole batch: T0[j, c] = u0[j] * kx_exp[j, c].
        let t0 = &batch.kx_exp * &u0.view().insert_axis(ndarray::Axis(1));
        let c = self.cross_obs_solve.dot(&t0);
        Ok(&batch.kx_obs * &c)
    }
}

/// Precomputed query cross-kernels, see [`EmbeddingModel::query_batch`].
pub(crate) struct QueryBatch {
    pub(crate) kx_exp: Array2<f64>,
    pub(crate) kx_obs: Array2<f64>,
}
