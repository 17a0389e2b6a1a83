//! Debiased machine-learning estimation of the long-term treatment effect for
//! binary treatment: kernel ridge nuisance subroutines, the multiply robust
//! moment, cross-fitting, and Gaussian confidence intervals.

use ndarray::{Array1, Array2};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{FoldPartition, FusedDataset, FusedSample, Group, TreatmentKind};
use crate::embeddings::{EmbeddingModel, FirstStageGrams};
use crate::error::{Error, Result};
use crate::kernels::{gram, KernelSet, KernelSpec};
use crate::ridge::{tune_block_penalty, SpdFactor};

/// Default cap on the LOOCV problem size during per-fold tuning.
pub const DEFAULT_TUNING_CAP: usize = 512;

/// The nuisance functions entering the multiply robust moment. All propensity
/// outputs are censored into `[epsilon, 1 - epsilon]`, and `pi`/`rho` are
/// already specialized to the treatment level `d()` they were fitted for.
pub trait Nuisances {
    /// Treatment level the nuisances target.
    fn d(&self) -> f64;
    /// Censoring bound.
    fn epsilon(&self) -> f64;
    /// Partial mean of the outcome regression over the surrogate embedding.
    fn nu(&self, x: &[f64]) -> f64;
    /// Outcome regression evaluated in the observational group.
    fn gamma(&self, x: &[f64], m: &[f64]) -> f64;
    /// P(D = d | G=0, x), censored.
    fn pi(&self, x: &[f64]) -> f64;
    /// P(D = d | G=0, x, m), censored.
    fn rho(&self, x: &[f64], m: &[f64]) -> f64;
    /// P(G = 1 | x), censored.
    fn pi_prime(&self, x: &[f64]) -> f64;
    /// P(G = 1 | x, m), censored.
    fn rho_prime(&self, x: &[f64], m: &[f64]) -> f64;

    /// Balancing weight on observational rows; exactly zero elsewhere.
    fn alpha(&self, s: &FusedSample) -> f64 {
        if s.group() != Group::Observational {
            return 0.0;
        }
        let rho1 = self.rho_prime(s.x(), s.m());
        let num = self.rho(s.x(), s.m()) * (1.0 - rho1);
        let den = self.pi(s.x()) * (1.0 - self.pi_prime(s.x()));
        num / (rho1 * den)
    }

    /// Balancing weight on experimental rows at the target treatment level;
    /// exactly zero elsewhere.
    fn eta(&self, s: &FusedSample) -> f64 {
        if s.group() != Group::Experimental || s.treatment() != self.d() {
            return 0.0;
        }
        1.0 / (self.pi(s.x()) * (1.0 - self.pi_prime(s.x())))
    }
}

/// One evaluation of the multiply robust moment
/// `nu + alpha (Y - delta) + eta (delta - nu)`.
///
/// `d` must equal `nuisances.d()`. On experimental rows the stored outcome is
/// the neutral fill, but `alpha` vanishes there, so the product is a
/// well-defined zero.
pub fn moment_value<N: Nuisances + ?Sized>(row: &FusedSample, nuisances: &N, d: f64) -> f64 {
    debug_assert_eq!(d, nuisances.d());
    moment_given_nu(row, nuisances, d, nuisances.nu(row.x()))
}

fn moment_given_nu<N: Nuisances + ?Sized>(
    row: &FusedSample,
    nuisances: &N,
    d: f64,
    nu: f64,
) -> f64 {
    match row.group() {
        Group::Observational => {
            let delta = nuisances.gamma(row.x(), row.m());
            nu + nuisances.alpha(row) * (row.outcome() - delta)
        }
        Group::Experimental => {
            if row.treatment() == d {
                let delta = nuisances.gamma(row.x(), row.m());
                nu + nuisances.eta(row) * (delta - nu)
            } else {
                nu
            }
        }
    }
}

/// Ridge penalties for the six nuisance regressions.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct NuisancePenalties {
    /// Outcome regression (shared by the partial mean and `gamma`).
    pub lambda: f64,
    /// First-stage surrogate embedding.
    pub lambda1: f64,
    /// Treatment propensity given covariates.
    pub lambda3: f64,
    /// Treatment propensity given covariates and surrogates.
    pub lambda4: f64,
    /// Selection propensity given covariates.
    pub lambda5: f64,
    /// Selection propensity given covariates and surrogates.
    pub lambda6: f64,
}

/// Kernel ridge nuisance set fitted on one training sample.
pub struct NuisanceSet {
    d: f64,
    epsilon: f64,
    x_all: Vec<Vec<f64>>,
    m_all: Vec<Vec<f64>>,
    exp_idx: Vec<usize>,
    obs_idx: Vec<usize>,
    x_spec: KernelSpec,
    m_spec: KernelSpec,
    model: EmbeddingModel,
    w_obs: Array1<f64>,
    coef_pi: Array1<f64>,
    coef_rho: Array1<f64>,
    coef_pi_prime: Array1<f64>,
    coef_rho_prime: Array1<f64>,
}

fn censor(p: f64, epsilon: f64) -> f64 {
    p.clamp(epsilon, 1.0 - epsilon)
}

/// Matrices shared between tuning and fitting on one training sample.
struct TrainMatrices {
    k_xx_exp: Array2<f64>,
    k_dd_exp: Array2<f64>,
    k_mm: Array2<f64>,
    k_xx_full: Array2<f64>,
    prod_xm_full: Array2<f64>,
    d_exp: Array1<f64>,
    g_vec: Array1<f64>,
    m_exp: Array2<f64>,
    y_obs: Array1<f64>,
    exp_idx: Vec<usize>,
    obs_idx: Vec<usize>,
}

impl TrainMatrices {
    fn build(train: &FusedDataset, kernels: &KernelSet) -> Result<Self> {
        let exp_idx = train.exp_indices();
        let obs_idx = train.obs_indices();
        let x_all = train.x_points();
        let m_all = train.m_points();
        let x_exp: Vec<Vec<f64>> = exp_idx.iter().map(|&i| x_all[i].clone()).collect();
        let d_exp_pts: Vec<Vec<f64>> =
            exp_idx.iter().map(|&i| vec![train.samples()[i].treatment()]).collect();
        let k_xx_exp = gram(&kernels.x, &x_exp, &x_exp)?.into_entries();
        let k_dd_exp = gram(&kernels.d, &d_exp_pts, &d_exp_pts)?.into_entries();
        let k_mm = gram(&kernels.m, &m_all, &m_all)?.into_entries();
        let k_xx_full = gram(&kernels.x, &x_all, &x_all)?.into_entries();
        let prod_xm_full = &k_xx_full * &k_mm;
        Ok(TrainMatrices {
            k_xx_exp,
            k_dd_exp,
            k_mm,
            k_xx_full,
            prod_xm_full,
            d_exp: Array1::from_iter(
                exp_idx.iter().map(|&i| train.samples()[i].treatment()),
            ),
            g_vec: Array1::from_vec(train.group_indicators()),
            m_exp: Array2::from_shape_fn((exp_idx.len(), train.m_dim()), |(a, j)| {
                train.samples()[exp_idx[a]].m()[j]
            }),
            y_obs: Array1::from_iter(obs_idx.iter().map(|&i| train.samples()[i].outcome())),
            exp_idx,
            obs_idx,
        })
    }

    fn gather(&self, src: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
        let k = idx.len();
        Array2::from_shape_fn((k, k), |(a, b)| src[[idx[a], idx[b]]])
    }
}

fn validate_binary_inputs(train: &FusedDataset, d: f64, epsilon: f64) -> Result<()> {
    if train.treatment_kind() != TreatmentKind::Binary {
        return Err(Error::validation("semiparametric estimation requires binary treatment"));
    }
    if d != 0.0 && d != 1.0 {
        return Err(Error::validation(format!("treatment level must be 0 or 1, got {d}")));
    }
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(Error::validation(format!("censoring bound must lie in (0, 0.5), got {epsilon}")));
    }
    Ok(())
}

/// Fit all six nuisance subroutines on the training rows.
pub fn fit_nuisances(
    train: &FusedDataset,
    d: f64,
    kernels: &KernelSet,
    penalties: &NuisancePenalties,
    epsilon: f64,
) -> Result<NuisanceSet> {
    validate_binary_inputs(train, d, epsilon)?;
    if kernels.d.family() != crate::kernels::KernelFamily::Dirac {
        return Err(Error::validation(
            "semiparametric estimation takes the indicator kernel on the treatment",
        ));
    }
    let mats = TrainMatrices::build(train, kernels)?;
    fit_from_matrices(train, d, kernels, penalties, epsilon, mats)
}

fn fit_from_matrices(
    train: &FusedDataset,
    d: f64,
    kernels: &KernelSet,
    penalties: &NuisancePenalties,
    epsilon: f64,
    mats: TrainMatrices,
) -> Result<NuisanceSet> {
    let n = train.len() as f64;
    let shift = |lambda: f64| n * lambda;

    let prod_xm_obs = mats.gather(&mats.prod_xm_full, &mats.obs_idx);
    let w_obs = SpdFactor::new(&prod_xm_obs, shift(penalties.lambda))?
        .solve_vec(mats.y_obs.view())?;

    let coef_pi =
        SpdFactor::new(&mats.k_xx_exp, shift(penalties.lambda3))?.solve_vec(mats.d_exp.view())?;
    let prod_xm_exp = mats.gather(&mats.prod_xm_full, &mats.exp_idx);
    let coef_rho =
        SpdFactor::new(&prod_xm_exp, shift(penalties.lambda4))?.solve_vec(mats.d_exp.view())?;
    let coef_pi_prime =
        SpdFactor::new(&mats.k_xx_full, shift(penalties.lambda5))?.solve_vec(mats.g_vec.view())?;
    let coef_rho_prime = SpdFactor::new(&mats.prod_xm_full, shift(penalties.lambda6))?
        .solve_vec(mats.g_vec.view())?;

    let model = EmbeddingModel::fit_with_grams(
        train,
        kernels,
        penalties.lambda1,
        FirstStageGrams {
            k_xx_exp: mats.k_xx_exp,
            k_dd_exp: mats.k_dd_exp,
            k_mm: mats.k_mm,
        },
    )?;

    Ok(NuisanceSet {
        d,
        epsilon,
        x_all: train.x_points(),
        m_all: train.m_points(),
        exp_idx: mats.exp_idx,
        obs_idx: mats.obs_idx,
        x_spec: kernels.x.clone(),
        m_spec: kernels.m.clone(),
        model,
        w_obs,
        coef_pi,
        coef_rho,
        coef_pi_prime,
        coef_rho_prime,
    })
}

/// LOOCV-tuned penalties for every nuisance regression on this training
/// sample, with the grid search capped at `cap` rows.
pub fn tune_nuisance_penalties(
    train: &FusedDataset,
    kernels: &KernelSet,
    cap: usize,
) -> Result<NuisancePenalties> {
    let mats = TrainMatrices::build(train, kernels)?;
    tune_from_matrices(train, &mats, cap)
}

fn tune_from_matrices(
    train: &FusedDataset,
    mats: &TrainMatrices,
    cap: usize,
) -> Result<NuisancePenalties> {
    let n = train.len();
    let prod_xm_obs = mats.gather(&mats.prod_xm_full, &mats.obs_idx);
    let y_col = mats.y_obs.view().insert_axis(ndarray::Axis(1));
    let lambda = tune_block_penalty(&prod_xm_obs, y_col, None, n, cap)?;

    let first_block = &mats.k_xx_exp * &mats.k_dd_exp;
    let lambda1 = tune_block_penalty(&first_block, mats.m_exp.view(), None, n, cap)?;

    let d_col = mats.d_exp.view().insert_axis(ndarray::Axis(1));
    let lambda3 = tune_block_penalty(&mats.k_xx_exp, d_col, None, n, cap)?;
    let prod_xm_exp = mats.gather(&mats.prod_xm_full, &mats.exp_idx);
    let d_col = mats.d_exp.view().insert_axis(ndarray::Axis(1));
    let lambda4 = tune_block_penalty(&prod_xm_exp, d_col, None, n, cap)?;

    let g_col = mats.g_vec.view().insert_axis(ndarray::Axis(1));
    let lambda5 = tune_block_penalty(&mats.k_xx_full, g_col, None, n, cap)?;
    let g_col = mats.g_vec.view().insert_axis(ndarray::Axis(1));
    let lambda6 = tune_block_penalty(&mats.prod_xm_full, g_col, None, n, cap)?;

    Ok(NuisancePenalties { lambda, lambda1, lambda3, lambda4, lambda5, lambda6 })
}

impl NuisanceSet {
    pub fn penalizing_d(&self) -> f64 {
        self.d
    }

    /// Uncensored regression of the treatment indicator on covariates.
    pub fn pi_raw(&self, x: &[f64]) -> f64 {
        self.exp_idx
            .iter()
            .zip(self.coef_pi.iter())
            .map(|(&i, c)| c * self.x_spec.eval_unchecked(&self.x_all[i], x))
            .sum()
    }

    /// Uncensored regression of the treatment indicator on covariates and
    /// surrogates.
    pub fn rho_raw(&self, x: &[f64], m: &[f64]) -> f64 {
        self.exp_idx
            .iter()
            .zip(self.coef_rho.iter())
            .map(|(&i, c)| {
                c * self.x_spec.eval_unchecked(&self.x_all[i], x)
                    * self.m_spec.eval_unchecked(&self.m_all[i], m)
            })
            .sum()
    }

    /// Uncensored regression of the selection indicator on covariates.
    pub fn pi_prime_raw(&self, x: &[f64]) -> f64 {
        (0..self.x_all.len())
            .map(|i| self.coef_pi_prime[i] * self.x_spec.eval_unchecked(&self.x_all[i], x))
            .sum()
    }

    /// Uncensored regression of the selection indicator on covariates and
    /// surrogates.
    pub fn rho_prime_raw(&self, x: &[f64], m: &[f64]) -> f64 {
        (0..self.x_all.len())
            .map(|i| {
                self.coef_rho_prime[i]
                    * self.x_spec.eval_unchecked(&self.x_all[i], x)
                    * self.m_spec.eval_unchecked(&self.m_all[i], m)
            })
            .sum()
    }

    fn to_level(&self, p_one: f64) -> f64 {
        if self.d == 1.0 {
            p_one
        } else {
            1.0 - p_one
        }
    }

    /// Batched partial mean over many covariate queries.
    pub fn nu_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        let batch = self.model.query_batch(xs)?;
        let chis = self.model.chi_obs_batch(&batch, self.d)?;
        Ok(self.w_obs.dot(&chis).to_vec())
    }

    /// Moment evaluations for a batch of held-out rows.
    pub fn moment_values(&self, rows: &[FusedSample]) -> Result<Vec<f64>> {
        let xs: Vec<Vec<f64>> = rows.iter().map(|r| r.x().to_vec()).collect();
        let nus = self.nu_batch(&xs)?;
        Ok(rows
            .iter()
            .zip(nus)
            .map(|(row, nu)| moment_given_nu(row, self, self.d, nu))
            .collect())
    }
}

impl Nuisances for NuisanceSet {
    fn d(&self) -> f64 {
        self.d
    }

    fn epsilon(&self) -> f64 {
        self.epsilon
    }

    fn nu(&self, x: &[f64]) -> f64 {
        self.nu_batch(std::slice::from_ref(&x.to_vec())).expect("query dimensions validated")[0]
    }

    fn gamma(&self, x: &[f64], m: &[f64]) -> f64 {
        self.obs_idx
            .iter()
            .zip(self.w_obs.iter())
            .map(|(&i, w)| {
                w * self.x_spec.eval_unchecked(&self.x_all[i], x)
                    * self.m_spec.eval_unchecked(&self.m_all[i], m)
            })
            .sum()
    }

    fn pi(&self, x: &[f64]) -> f64 {
        censor(self.to_level(self.pi_raw(x)), self.epsilon)
    }

    fn rho(&self, x: &[f64], m: &[f64]) -> f64 {
        censor(self.to_level(self.rho_raw(x, m)), self.epsilon)
    }

    fn pi_prime(&self, x: &[f64]) -> f64 {
        censor(self.pi_prime_raw(x), self.epsilon)
    }

    fn rho_prime(&self, x: &[f64], m: &[f64]) -> f64 {
        censor(self.rho_prime_raw(x, m), self.epsilon)
    }
}

/// Point estimate, influence values, variance, and confidence interval from
/// cross-fitted debiased machine learning.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct EffectEstimate {
    pub theta: f64,
    pub sigma: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub level: f64,
    pub n: usize,
    pub folds: usize,
    pub d: f64,
    pub epsilon: f64,
    #[serde(skip)]
    pub psi_values: Vec<f64>,
    #[serde(skip)]
    pub degenerate_variance: bool,
}

impl EffectEstimate {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Configuration for [`dml_estimate`].
#[derive(Debug, Clone)]
pub struct DmlConfig {
    /// Censoring bound for the propensities.
    pub epsilon: f64,
    /// Seed for the fold partition.
    pub seed: u64,
    /// Kernel override; per-fold median heuristic when absent.
    pub kernels: Option<KernelSet>,
    /// Penalty override; per-fold LOOCV tuning when absent.
    pub penalties: Option<NuisancePenalties>,
    /// Cap on the LOOCV problem size during tuning.
    pub tuning_cap: usize,
}

impl Default for DmlConfig {
    fn default() -> Self {
        DmlConfig {
            epsilon: 0.01,
            seed: 0,
            kernels: None,
            penalties: None,
            tuning_cap: DEFAULT_TUNING_CAP,
        }
    }
}

/// Cross-fitted debiased estimate of the long-term treatment effect at level
/// `d`, with a Gaussian confidence interval.
pub fn dml_estimate(
    dataset: &FusedDataset,
    d: f64,
    num_folds: usize,
    level: f64,
    config: &DmlConfig,
) -> Result<EffectEstimate> {
    validate_binary_inputs(dataset, d, config.epsilon)?;
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::validation(format!("confidence level must lie in (0,1), got {level}")));
    }
    let partition = FoldPartition::split(dataset, num_folds, config.seed)?;
    dml_with_partition(dataset, d, &partition, level, config)
}

pub(crate) fn dml_with_partition(
    dataset: &FusedDataset,
    d: f64,
    partition: &FoldPartition,
    level: f64,
    config: &DmlConfig,
) -> Result<EffectEstimate> {
    let num_folds = partition.num_folds();
    let run_fold = |fold: usize| -> Result<(Vec<usize>, Vec<f64>)> {
        let train_idx = partition.complement_indices(fold);
        let train = dataset.subset(&train_idx)?;
        let kernels = match &config.kernels {
            Some(k) => k.clone(),
            None => KernelSet::median_heuristic(&train)?,
        };
        let mats = TrainMatrices::build(&train, &kernels)?;
        let penalties = match &config.penalties {
            Some(p) => *p,
            None => tune_from_matrices(&train, &mats, config.tuning_cap)?,
        };
        let nuisances =
            fit_from_matrices(&train, d, &kernels, &penalties, config.epsilon, mats)?;
        let held_out = partition.fold_indices(fold);
        let rows: Vec<FusedSample> =
            held_out.iter().map(|&i| dataset.samples()[i].clone()).collect();
        let psi = nuisances.moment_values(&rows)?;
        Ok((held_out, psi))
    };

    #[cfg(feature = "parallel")]
    let fold_results: Result<Vec<(Vec<usize>, Vec<f64>)>> = {
        use rayon::prelude::*;
        (0..num_folds).into_par_iter().map(run_fold).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let fold_results: Result<Vec<(Vec<usize>, Vec<f64>)>> =
        (0..num_folds).map(run_fold).collect();

    let n = dataset.len();
    let mut psi_values = vec![0.0; n];
    for (indices, psi) in fold_results? {
        for (&i, &v) in indices.iter().zip(psi.iter()) {
            psi_values[i] = v;
        }
    }

    let theta = psi_values.iter().sum::<f64>() / n as f64;
    let sigma_sq = psi_values.iter().map(|&v| (v - theta).powi(2)).sum::<f64>() / n as f64;
    let sigma = sigma_sq.sqrt();
    let degenerate_variance = sigma == 0.0;
    if degenerate_variance {
        log::warn!("influence values are constant; the confidence interval collapses to a point");
    }
    let a = 1.0 - level;
    let c_a = Normal::new(0.0, 1.0)
        .expect("standard normal")
        .inverse_cdf(1.0 - a / 2.0);
    let half_width = c_a * sigma / (n as f64).sqrt();

    Ok(EffectEstimate {
        theta,
        sigma,
        ci_lower: theta - half_width,
        ci_upper: theta + half_width,
        level,
        n,
        folds: num_folds,
        d,
        epsilon: config.epsilon,
        psi_values,
        degenerate_variance,
    })
}
