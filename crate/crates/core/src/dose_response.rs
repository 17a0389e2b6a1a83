//! Closed-form dose-response estimators over a treatment grid, for the whole
//! population, an alternative population, or either subpopulation.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::data::{AltPopulation, FusedDataset, TreatmentKind};
use crate::embeddings::EmbeddingModel;
use crate::error::{Error, Result};
use crate::kernels::{gram, KernelSet};
use crate::ridge::{tune_block_penalty, SpdFactor};

/// Which population the counterfactual mean averages over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Estimand {
    /// Entire population.
    Ate,
    /// Alternative population with shifted covariates.
    Ds,
    /// Experimental subpopulation.
    Exp,
    /// Observational subpopulation.
    Obs,
}

/// A dose-response curve with the hyperparameters that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DoseResponseCurve {
    pub estimand: Estimand,
    pub lambda: f64,
    pub lambda1: f64,
    pub n: usize,
    pub n_exp: usize,
    pub n_obs: usize,
    pub curve: Vec<CurvePoint>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurvePoint {
    pub d: f64,
    pub estimate: f64,
}

impl DoseResponseCurve {
    pub fn grid(&self) -> Vec<f64> {
        self.curve.iter().map(|p| p.d).collect()
    }

    pub fn estimates(&self) -> Vec<f64> {
        self.curve.iter().map(|p| p.estimate).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// The precomputed outcome weight row `(Y')^T (K_GG ⊙ K_XX ⊙ K_MM + n λ I)^{-1}`.
///
/// With the Dirac group kernel the system is block diagonal and `Y'` vanishes
/// off the observational block, so entries at experimental rows are exactly
/// zero.
#[derive(Debug, Clone)]
pub struct OutcomeWeightVector {
    values: Array1<f64>,
}

impl OutcomeWeightVector {
    pub fn values(&self) -> &Array1<f64> {
        &self.values
    }
}

/// Solve the outcome regression once, returning full-length weights.
pub fn outcome_weights(
    dataset: &FusedDataset,
    kernels: &KernelSet,
    lambda: f64,
) -> Result<OutcomeWeightVector> {
    let (w_obs, obs_idx) = outcome_weights_obs(dataset, kernels, lambda)?;
    let mut values = Array1::<f64>::zeros(dataset.len());
    for (a, &i) in obs_idx.iter().enumerate() {
        values[i] = w_obs[a];
    }
    Ok(OutcomeWeightVector { values })
}

fn outcome_weights_obs(
    dataset: &FusedDataset,
    kernels: &KernelSet,
    lambda: f64,
) -> Result<(Array1<f64>, Vec<usize>)> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::validation(format!("outcome penalty must be positive, got {lambda}")));
    }
    let obs_idx = dataset.obs_indices();
    let block = outcome_block(dataset, kernels, &obs_idx)?;
    let factor = SpdFactor::new(&block, dataset.len() as f64 * lambda)?;
    let y_obs =
        Array1::from_iter(obs_idx.iter().map(|&i| dataset.samples()[i].outcome()));
    let w_obs = factor.solve_vec(y_obs.view())?;
    Ok((w_obs, obs_idx))
}

fn outcome_block(
    dataset: &FusedDataset,
    kernels: &KernelSet,
    obs_idx: &[usize],
) -> Result<Array2<f64>> {
    let x_obs: Vec<Vec<f64>> =
        obs_idx.iter().map(|&i| dataset.samples()[i].x().to_vec()).collect();
    let m_obs: Vec<Vec<f64>> =
        obs_idx.iter().map(|&i| dataset.samples()[i].m().to_vec()).collect();
    let k_xx = gram(&kernels.x, &x_obs, &x_obs)?.into_entries();
    let k_mm = gram(&kernels.m, &m_obs, &m_obs)?.into_entries();
    Ok(&k_xx * &k_mm)
}

/// Estimate the dose response at every grid point with explicit penalties.
pub fn estimate_curve(
    dataset: &FusedDataset,
    estimand: Estimand,
    grid: &[f64],
    kernels: &KernelSet,
    lambda: f64,
    lambda1: f64,
    alt: Option<&AltPopulation>,
) -> Result<DoseResponseCurve> {
    if grid.is_empty() {
        return Err(Error::validation("treatment grid is empty"));
    }
    if grid.iter().any(|d| !d.is_finite()) {
        return Err(Error::validation("treatment grid contains non-finite values"));
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
        (_, _) => None,
    };
    let y_max = dataset.outcomes().iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    if y_max > 1e6 {
        log::warn!("outcome magnitude {y_max:.3e} exceeds 1e6; consider rescaling");
    }

    let model = EmbeddingModel::fit(dataset, kernels, lambda1)?;
    let (w_obs, _) = outcome_weights_obs(dataset, kernels, lambda)?;

    let queries: Vec<Vec<f64>> = match alt {
        Some(alt) => alt.points().to_vec(),
        None => dataset.x_points(),
    };
    let batch = model.query_batch(&queries)?;

    let averaging_set: Vec<usize> = match estimand {
        Estimand::Ate | Estimand::Ds => (0..queries.len()).collect(),
        Estimand::Exp => model.exp_indices().to_vec(),
        Estimand::Obs => model.obs_indices().to_vec(),
    };
    if averaging_set.is_empty() {
        return Err(Error::validation("empty averaging set for estimand"));
    }

    let value_at = |d: f64| -> Result<f64> {
        let chis = model.chi_obs_batch(&batch, d)?;
        let vals = w_obs.dot(&chis);
        Ok(averaging_set.iter().map(|&i| vals[i]).sum::<f64>() / averaging_set.len() as f64)
    };

    #[cfg(feature = "parallel")]
    let estimates: Result<Vec<f64>> = {
        use rayon::prelude::*;
        grid.par_iter().map(|&d| value_at(d)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let estimates: Result<Vec<f64>> = grid.iter().map(|&d| value_at(d)).collect();
    let estimates = estimates?;

    Ok(DoseResponseCurve {
        estimand,
        lambda,
        lambda1,
        n: dataset.len(),
        n_exp: dataset.n_exp(),
        n_obs: dataset.n_obs(),
        curve: grid
            .iter()
            .zip(estimates)
            .map(|(&d, estimate)| CurvePoint { d, estimate })
            .collect(),
    })
}

/// Hyperparameters selected by the median heuristic and closed-form LOOCV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TunedHyperparameters {
    pub kernels: KernelSet,
    pub lambda: f64,
    pub lambda1: f64,
}

/// Median-heuristic lengthscales, then LOOCV penalties: the outcome penalty on
/// the regression of observed outcomes, the first-stage penalty on the
/// regression of surrogate coordinates on (covariates, treatment) over
/// experimental rows. Deterministic given the dataset.
pub fn tune_hyperparameters(dataset: &FusedDataset) -> Result<TunedHyperparameters> {
    tune_hyperparameters_capped(dataset, usize::MAX)
}

pub(crate) fn tune_hyperparameters_capped(
    dataset: &FusedDataset,
    cap: usize,
) -> Result<TunedHyperparameters> {
    let kernels = KernelSet::median_heuristic(dataset)?;
    let (lambda, lambda1) = tune_curve_penalties(dataset, &kernels, cap)?;
    Ok(TunedHyperparameters { kernels, lambda, lambda1 })
}

/// LOOCV penalties for the curve pipeline under the given kernels: the
/// outcome penalty on the observed-outcome regression, the first-stage
/// penalty on the surrogate-coordinate regression over experimental rows.
pub fn tune_curve_penalties(
    dataset: &FusedDataset,
    kernels: &KernelSet,
    cap: usize,
) -> Result<(f64, f64)> {
    let n = dataset.len();

    let obs_idx = dataset.obs_indices();
    let block = outcome_block(dataset, kernels, &obs_idx)?;
    let y_obs = Array2::from_shape_vec(
        (obs_idx.len(), 1),
        obs_idx.iter().map(|&i| dataset.samples()[i].outcome()).collect(),
    )
    .expect("column shape");
    let lambda = tune_block_penalty(&block, y_obs.view(), None, n, cap)?;

    let exp_idx = dataset.exp_indices();
    let x_exp: Vec<Vec<f64>> = exp_idx.iter().map(|&i| dataset.samples()[i].x().to_vec()).collect();
    let d_exp: Vec<Vec<f64>> =
        exp_idx.iter().map(|&i| vec![dataset.samples()[i].treatment()]).collect();
    let k_xx = gram(&kernels.x, &x_exp, &x_exp)?.into_entries();
    let k_dd = gram(&kernels.d, &d_exp, &d_exp)?.into_entries();
    let first_block = &k_xx * &k_dd;
    let m_targets = Array2::from_shape_fn((exp_idx.len(), dataset.m_dim()), |(a, j)| {
        dataset.samples()[exp_idx[a]].m()[j]
    });
    let lambda1 = tune_block_penalty(&first_block, m_targets.view(), None, n, cap)?;

    Ok((lambda, lambda1))
}

/// Tune hyperparameters on the dataset, then estimate the curve.
pub fn estimate_curve_tuned(
    dataset: &FusedDataset,
    estimand: Estimand,
    grid: &[f64],
    alt: Option<&AltPopulation>,
) -> Result<DoseResponseCurve> {
    let tuned = tune_hyperparameters(dataset)?;
    estimate_curve(dataset, estimand, grid, &tuned.kernels, tuned.lambda, tuned.lambda1, alt)
}

/// Equispaced quantiles of the experimental treatments, the default grid when
/// the caller supplies none. Support-aware: never extrapolates beyond the
/// observed treatment range.
pub fn default_grid(dataset: &FusedDataset, count: usize) -> Result<Vec<f64>> {
    if count == 0 {
        return Err(Error::validation("grid size must be positive"));
    }
    if dataset.treatment_kind() == TreatmentKind::Binary {
        return Ok(vec![0.0, 1.0]);
    }
    let mut d: Vec<f64> = dataset
        .samples()
        .iter()
        .filter(|s| s.group() == crate::data::Group::Experimental)
        .map(|s| s.treatment())
        .collect();
    d.sort_by(|a, b| a.partial_cmp(b).expect("finite treatments"));
    if count == 1 {
        return Ok(vec![d[(d.len() - 1) / 2]]);
    }
    let grid = (0..count)
        .map(|i| {
            let q = i as f64 / (count - 1) as f64;
            let pos = q * (d.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let frac = pos - lo as f64;
            if lo + 1 < d.len() {
                d[lo] * (1.0 - frac) + d[lo + 1] * frac
            } else {
                d[lo]
            }
        })
        .collect();
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FusedSample;
    use crate::kernels::KernelSpec;
    use crate::test_oracles;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn kernel_set() -> KernelSet {
        KernelSet {
            x: KernelSpec::gaussian(vec![0.9, 1.2]).unwrap(),
            d: KernelSpec::gaussian(vec![0.7]).unwrap(),
            m: KernelSpec::gaussian(vec![1.1]).unwrap(),
            y: KernelSpec::gaussian(vec![1.0]).unwrap(),
        }
    }

    fn random_dataset(n: usize, seed: u64) -> FusedDataset {
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
                samples.push(FusedSample::experimental(x, rng.gen_range(-1.0..1.0), m));
            } else {
                samples.push(FusedSample::observational(x, m, rng.gen_range(-2.0..2.0)));
            }
        }
        FusedDataset::new(samples, 2, 1, TreatmentKind::Continuous).unwrap()
    }

    #[test]
    fn zero_outcomes_give_zero_curve() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut samples = Vec::new();
        for i in 0..10 {
            let x = vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let m = vec![rng.gen_range(-1.0..1.0)];
            if i % 2 == 0 {
                samples.push(FusedSample::experimental(x, rng.gen_range(-1.0..1.0), m));
            } else {
                samples.push(FusedSample::observational(x, m, 0.0));
            }
        }
        let ds = FusedDataset::new(samples, 2, 1, TreatmentKind::Continuous).unwrap();
        for estimand in [Estimand::Ate, Estimand::Exp, Estimand::Obs] {
            let curve =
                estimate_curve(&ds, estimand, &[0.0, 0.5], &kernel_set(), 0.1, 0.1, None).unwrap();
            for p in &curve.curve {
                assert_eq!(p.estimate, 0.0);
            }
        }
    }

    #[test]
    fn estimates_match_brute_force_oracle() {
        for seed in 0..3u64 {
            let ds = random_dataset(13, 100 + seed);
            let kernels = kernel_set();
            let (lambda, lambda1) = (0.08, 0.03);
            let grid = [0.2, -0.4];
            for estimand in [Estimand::Ate, Estimand::Exp, Estimand::Obs] {
                let curve =
                    estimate_curve(&ds, estimand, &grid, &kernels, lambda, lambda1, None).unwrap();
                for (gi, &d) in grid.iter().enumerate() {
                    let idx: Vec<usize> = match estimand {
                        Estimand::Ate | Estimand::Ds => (0..ds.len()).collect(),
                        Estimand::Exp => ds.exp_indices(),
                        Estimand::Obs => ds.obs_indices(),
                    };
                    let oracle = idx
                        .iter()
                        .map(|&i| {
                            test_oracles::naive_curve_value(
                                &ds,
                                &kernels,
                                lambda,
                                lambda1,
                                ds.samples()[i].x(),
                                d,
                            )
                        })
                        .sum::<f64>()
                        / idx.len() as f64;
                    assert_abs_diff_eq!(curve.curve[gi].estimate, oracle, epsilon = 1e-8);
                }
            }
        }
    }

    #[test]
    fn ds_with_alt_population_matches_oracle() {
        let ds = random_dataset(12, 200);
        let kernels = kernel_set();
        let alt = AltPopulation::new(vec![vec![0.5, -0.5], vec![1.0, 1.0], vec![-1.0, 0.0]])
            .unwrap();
        let curve =
            estimate_curve(&ds, Estimand::Ds, &[0.3], &kernels, 0.05, 0.05, Some(&alt)).unwrap();
        let oracle = alt
            .points()
            .iter()
            .map(|x| test_oracles::naive_curve_value(&ds, &kernels, 0.05, 0.05, x, 0.3))
            .sum::<f64>()
            / alt.len() as f64;
        assert_abs_diff_eq!(curve.curve[0].estimate, oracle, epsilon = 1e-8);
    }

    #[test]
    fn ate_decomposes_into_group_means() {
        let ds = random_dataset(15, 7);
        let kernels = kernel_set();
        let grid = [0.0, 0.7, -0.7];
        let ate = estimate_curve(&ds, Estimand::Ate, &grid, &kernels, 0.1, 0.1, None).unwrap();
        let exp = estimate_curve(&ds, Estimand::Exp, &grid, &kernels, 0.1, 0.1, None).unwrap();
        let obs = estimate_curve(&ds, Estimand::Obs, &grid, &kernels, 0.1, 0.1, None).unwrap();
        let (n, n0, n1) = (ds.len() as f64, ds.n_exp() as f64, ds.n_obs() as f64);
        for i in 0..grid.len() {
            let combined =
                (n0 / n) * exp.curve[i].estimate + (n1 / n) * obs.curve[i].estimate;
            assert_abs_diff_eq!(ate.curve[i].estimate, combined, epsilon = 1e-12);
        }
    }

    #[test]
    fn ds_with_own_covariates_reproduces_ate() {
        let ds = random_dataset(11, 8);
        let kernels = kernel_set();
        let alt = AltPopulation::new(ds.x_points()).unwrap();
        let grid = [0.25, -0.6];
        let ate = estimate_curve(&ds, Estimand::Ate, &grid, &kernels, 0.1, 0.05, None).unwrap();
        let ds_curve =
            estimate_curve(&ds, Estimand::Ds, &grid, &kernels, 0.1, 0.05, Some(&alt)).unwrap();
        for i in 0..grid.len() {
            assert_eq!(ate.curve[i].estimate, ds_curve.curve[i].estimate);
        }
    }

    #[test]
    fn linear_in_outcomes() {
        let ds = random_dataset(12, 9);
        let doubled = FusedDataset::new(
            ds.samples()
                .iter()
                .map(|s| match s.group() {
                    crate::data::Group::Experimental => {
                        FusedSample::experimental(s.x().to_vec(), s.treatment(), s.m().to_vec())
                    }
                    crate::data::Group::Observational => FusedSample::observational(
                        s.x().to_vec(),
                        s.m().to_vec(),
                        2.0 * s.outcome(),
                    ),
                })
                .collect(),
            2,
            1,
            TreatmentKind::Continuous,
        )
        .unwrap();
        let kernels = kernel_set();
        let base = estimate_curve(&ds, Estimand::Ate, &[0.4], &kernels, 0.1, 0.1, None).unwrap();
        let twice =
            estimate_curve(&doubled, Estimand::Ate, &[0.4], &kernels, 0.1, 0.1, None).unwrap();
        let (a, b) = (base.curve[0].estimate, twice.curve[0].estimate);
        assert!((b - 2.0 * a).abs() <= 1e-12 * a.abs().max(1.0), "a={a} b={b}");
    }

    #[test]
    fn grid_points_are_independent() {
        let ds = random_dataset(14, 10);
        let kernels = kernel_set();
        let batch =
            estimate_curve(&ds, Estimand::Ate, &[0.1, 0.9], &kernels, 0.1, 0.1, None).unwrap();
        let single_a =
            estimate_curve(&ds, Estimand::Ate, &[0.1], &kernels, 0.1, 0.1, None).unwrap();
        let single_b =
            estimate_curve(&ds, Estimand::Ate, &[0.9], &kernels, 0.1, 0.1, None).unwrap();
        assert_eq!(batch.curve[0].estimate, single_a.curve[0].estimate);
        assert_eq!(batch.curve[1].estimate, single_b.curve[0].estimate);
    }

    #[test]
    fn ds_requires_alt_population() {
        let ds = random_dataset(10, 11);
        let res = estimate_curve(&ds, Estimand::Ds, &[0.0], &kernel_set(), 0.1, 0.1, None);
        assert!(res.is_err());
    }

    #[test]
    fn tuned_curve_is_deterministic() {
        let ds = random_dataset(24, 12);
        let a = estimate_curve_tuned(&ds, Estimand::Ate, &[0.0, 0.5], None).unwrap();
        let b = estimate_curve_tuned(&ds, Estimand::Ate, &[0.0, 0.5], None).unwrap();
        assert_eq!(a.estimates(), b.estimates());
        assert_eq!(a.lambda, b.lambda);
        assert_eq!(a.lambda1, b.lambda1);
    }

    #[test]
    fn default_grid_spans_experimental_quantiles() {
        let ds = random_dataset(30, 13);
        let grid = default_grid(&ds, 9).unwrap();
        assert_eq!(grid.len(), 9);
        let d: Vec<f64> = ds
            .samples()
            .iter()
            .filter(|s| s.group() == crate::data::Group::Experimental)
            .map(|s| s.treatment())
            .collect();
        let (min, max) = d.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
        assert_eq!(grid[0], min);
        assert_eq!(grid[8], max);
        for w in grid.windows(2) {
            assert!(w[0] <= w[1]);
        }
    }

    #[test]
    fn outcome_weights_live_on_the_observational_block() {
        let ds = random_dataset(12, 15);
        let kernels = kernel_set();
        let (lambda, lambda1) = (0.07, 0.04);
        let w = outcome_weights(&ds, &kernels, lambda).unwrap();
        for &i in &ds.exp_indices() {
            assert_eq!(w.values()[i], 0.0);
        }
        // Pairing the weights with a masked chi vector reproduces the curve.
        let model = crate::embeddings::EmbeddingModel::fit(&ds, &kernels, lambda1).unwrap();
        let d = 0.3;
        let mut total = 0.0;
        for s in ds.samples() {
            let chi = model.chi_vector(s.x(), d).unwrap();
            let masked: f64 = ds
                .obs_indices()
                .iter()
                .map(|&j| w.values()[j] * chi.values()[j])
                .sum();
            total += masked;
        }
        let curve = estimate_curve(&ds, Estimand::Ate, &[d], &kernels, lambda, lambda1, None)
            .unwrap();
        assert_abs_diff_eq!(total / ds.len() as f64, curve.curve[0].estimate, epsilon = 1e-9);
    }

    #[test]
    fn curve_serialization_shape() {
        let ds = random_dataset(10, 14);
        let curve =
            estimate_curve(&ds, Estimand::Ate, &[0.5], &kernel_set(), 0.1, 0.1, None).unwrap();
        let json = curve.to_json().unwrap();
        let parsed: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed["estimand"], "ate");
        assert!(parsed["curve"][0]["d"].is_number());
        assert!(parsed["curve"][0]["estimate"].is_number());
        assert!(parsed["nExp"].is_number());
        assert!(parsed["nObs"].is_number());
    }
}
