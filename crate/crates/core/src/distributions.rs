//! Counterfactual outcome distributions: RKHS embeddings with closed-form
//! coefficients, and kernel herding to draw samples from them.

use ndarray::Array1;
use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};

use crate::data::{AltPopulation, FusedDataset};
use crate::dose_response::Estimand;
use crate::embeddings::EmbeddingModel;
use crate::error::{Error, Result};
use crate::kernels::{gram, KernelFamily, KernelSet, KernelSpec};
use crate::ridge::SpdFactor;

/// Default number of candidate grid points for herding.
pub const DEFAULT_HERDING_GRID: usize = 512;

/// An estimated counterfactual outcome distribution, represented by its RKHS
/// embedding `y -> sum_i c_i k_Y(Y'_i, y)`.
#[derive(Debug, Clone)]
pub struct DistributionEmbedding {
    coefficients: Array1<f64>,
    y_points: Vec<f64>,
    outcome_kernel: KernelSpec,
    estimand: Estimand,
    d: f64,
    lambda2: f64,
}

impl DistributionEmbedding {
    /// Assemble an embedding from explicit parts.
    pub fn from_parts(
        coefficients: Array1<f64>,
        y_points: Vec<f64>,
        outcome_kernel: KernelSpec,
        estimand: Estimand,
        d: f64,
        lambda2: f64,
    ) -> Result<Self> {
        if coefficients.len() != y_points.len() {
            return Err(Error::DimensionMismatch {
                expected: y_points.len(),
                got: coefficients.len(),
                context: "embedding coefficients",
            });
        }
        Ok(DistributionEmbedding { coefficients, y_points, outcome_kernel, estimand, d, lambda2 })
    }

    pub fn coefficients(&self) -> &Array1<f64> {
        &self.coefficients
    }

    pub fn estimand(&self) -> Estimand {
        self.estimand
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    pub fn lambda2(&self) -> f64 {
        self.lambda2
    }

    pub fn outcome_kernel(&self) -> &KernelSpec {
        &self.outcome_kernel
    }

    /// Evaluate the embedding at an outcome point.
    pub fn evaluate(&self, y: f64) -> f64 {
        self.coefficients
            .iter()
            .zip(&self.y_points)
            .map(|(c, &yi)| c * self.outcome_kernel.eval1(yi, y))
            .sum()
    }

    pub fn evaluate_batch(&self, ys: &[f64]) -> Vec<f64> {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            ys.par_iter().map(|&y| self.evaluate(y)).collect()
        }
        #[cfg(not(feature = "parallel"))]
        ys.iter().map(|&y| self.evaluate(y)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

impl Serialize for DistributionEmbedding {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut s = serializer.serialize_struct("DistributionEmbedding", 4)?;
        s.serialize_field("coefficients", &self.coefficients.to_vec())?;
        let lengthscale = self.outcome_kernel.lengthscales().first().copied();
        s.serialize_field("outcomeLengthscale", &lengthscale)?;
        s.serialize_field("d", &self.d)?;
        s.serialize_field("estimand", &self.estimand)?;
        s.end()
    }
}

/// Closed-form embedding of the counterfactual outcome distribution at
/// treatment `d` for the given estimand.
pub fn embed_distribution(
    dataset: &FusedDataset,
    estimand: Estimand,
    d: f64,
    kernels: &KernelSet,
    lambda1: f64,
    lambda2: f64,
    alt: Option<&AltPopulation>,
) -> Result<DistributionEmbedding> {
    if kernels.y.family() != KernelFamily::GaussianProduct {
        return Err(Error::validation("outcome kernel must be characteristic (Gaussian)"));
    }
    if !(lambda2.is_finite() && lambda2 > 0.0) {
        return Err(Error::validation(format!(
            "distribution penalty must be positive, got {lambda2}"
        )));
    }
    let alt = match (estimand, alt) {
        (Estimand::Ds, Some(alt)) => {
            if alt.x_dim() != dataset.x_dim() {
                return Err(Error::DimensionMismatch {
                    expected: dataset.x_dim(),
                    got: alt.x_dim(),
                    context: "alternative population covariates",
                });
            }
            Some(alt)
        }
        (Estimand::Ds, None) => {
            return Err(Error::validation("estimand ds requires an alternative population"))
        }
        _ => None,
    };

    let model = EmbeddingModel::fit(dataset, kernels, lambda1)?;
    let queries: Vec<Vec<f64>> = match alt {
        Some(alt) => alt.points().to_vec(),
        None => dataset.x_points(),
    };
    let batch = model.query_batch(&queries)?;
    let chis = model.chi_obs_batch(&batch, d)?;

    let averaging_set: Vec<usize> = match estimand {
        Estimand::Ate | Estimand::Ds => (0..queries.len()).collect(),
        Estimand::Exp => model.exp_indices().to_vec(),
        Estimand::Obs => model.obs_indices().to_vec(),
    };
    if averaging_set.is_empty() {
        return Err(Error::validation("empty averaging set for estimand"));
    }
    let obs_idx = model.obs_indices().to_vec();
    let mut target_obs = Array1::<f64>::zeros(obs_idx.len());
    for &c in &averaging_set {
        for (a, t) in target_obs.iter_mut().enumerate() {
            *t += chis[[a, c]];
        }
    }
    target_obs.mapv_inplace(|v| v / averaging_set.len() as f64);

    // The distribution solve shares the block structure of the outcome
    // regression: its masked target lives on the observational block.
    let x_obs: Vec<Vec<f64>> =
        obs_idx.iter().map(|&i| dataset.samples()[i].x().to_vec()).collect();
    let m_obs: Vec<Vec<f64>> =
        obs_idx.iter().map(|&i| dataset.samples()[i].m().to_vec()).collect();
    let k_xx = gram(&kernels.x, &x_obs, &x_obs)?.into_entries();
    let k_mm = gram(&kernels.m, &m_obs, &m_obs)?.into_entries();
    let block = &k_xx * &k_mm;
    let factor = SpdFactor::new(&block, dataset.len() as f64 * lambda2)?;
    let c_obs = factor.solve_vec(target_obs.view())?;

    let mut coefficients = Array1::<f64>::zeros(dataset.len());
    for (a, &i) in obs_idx.iter().enumerate() {
        coefficients[i] = c_obs[a];
    }
    DistributionEmbedding::from_parts(
        coefficients,
        dataset.outcomes(),
        kernels.y.clone(),
        estimand,
        d,
        lambda2,
    )
}

/// Tune hyperparameters on the dataset, then embed. The distribution solve
/// shares the outcome-side system, so its penalty is tuned on the scalar
/// outcome regression as the proxy for the embedding targets.
pub fn embed_distribution_tuned(
    dataset: &FusedDataset,
    estimand: Estimand,
    d: f64,
    alt: Option<&AltPopulation>,
) -> Result<DistributionEmbedding> {
    let tuned = crate::dose_response::tune_hyperparameters(dataset)?;
    embed_distribution(dataset, estimand, d, &tuned.kernels, tuned.lambda1, tuned.lambda, alt)
}

/// An ordered herded sample drawn from a distribution embedding.
#[derive(Debug, Clone)]
pub struct HerdedSample {
    values: Vec<f64>,
    candidate_grid: Vec<f64>,
}

impl HerdedSample {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn candidate_grid(&self) -> &[f64] {
        &self.candidate_grid
    }

    /// Write the samples as a single-column CSV `y_tilde`.
    pub fn to_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        writer.write_record(["y_tilde"])?;
        for v in &self.values {
            writer.write_record([format!("{v}")])?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Greedy kernel herding: each sample maximizes the embedding minus
/// `1/(j+1)` times the kernel mass already placed. Ties break toward the
/// smallest grid value.
pub fn herd(
    embedding: &DistributionEmbedding,
    count: usize,
    candidate_grid: &[f64],
) -> Result<HerdedSample> {
    if candidate_grid.is_empty() {
        return Err(Error::validation("candidate grid is empty"));
    }
    if count == 0 {
        return Err(Error::validation("herded sample count must be at least 1"));
    }
    if candidate_grid.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("candidate grid contains non-finite values"));
    }
    let mut grid = candidate_grid.to_vec();
    grid.sort_by(|a, b| a.partial_cmp(b).expect("finite grid"));

    let base = embedding.evaluate_batch(&grid);
    let mut kernel_mass = vec![0.0f64; grid.len()];
    let mut values = Vec::with_capacity(count);
    for j in 1..=count {
        let damping = 1.0 / (j as f64 + 1.0);
        let mut best = 0usize;
        let mut best_obj = f64::NEG_INFINITY;
        for (g, (&b, &s)) in base.iter().zip(&kernel_mass).enumerate() {
            let obj = b - damping * s;
            // Strict comparison keeps the first (smallest) grid value on ties.
            if obj > best_obj {
                best_obj = obj;
                best = g;
            }
        }
        let picked = grid[best];
        values.push(picked);
        for (g, s) in kernel_mass.iter_mut().enumerate() {
            *s += embedding.outcome_kernel.eval1(picked, grid[g]);
        }
    }
    Ok(HerdedSample { values, candidate_grid: grid })
}

/// Default candidate grid: equispaced points spanning the observational
/// outcome range, expanded by a 10% margin on each side.
pub fn default_candidate_grid(dataset: &FusedDataset, size: usize) -> Result<Vec<f64>> {
    if size < 2 {
        return Err(Error::validation("candidate grid needs at least 2 points"));
    }
    let obs_y: Vec<f64> = dataset
        .samples()
        .iter()
        .filter(|s| s.group() == crate::data::Group::Observational)
        .map(|s| s.outcome())
        .collect();
    let (lo, hi) = obs_y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    let margin = if range > 0.0 { 0.1 * range } else { 1.0 };
    let (lo, hi) = (lo - margin, hi + margin);
    let step = (hi - lo) / (size - 1) as f64;
    Ok((0..size).map(|i| lo + i as f64 * step).collect())
}
