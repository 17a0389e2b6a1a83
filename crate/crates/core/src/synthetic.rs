//! Synthetic data-generating processes with analytically known causal truths.
//!
//! The structural model draws covariates, then selection given covariates,
//! then treatment, surrogates, and outcome:
//!
//! ```text
//! X ~ N(x_mean, I)
//! G | X          selection probability 0.05 + 0.9 sigmoid(s0 + s_x'x)
//! D | X          logistic (binary) or Gaussian (continuous), same law in both groups
//! M | X, D       mean b0 + b_d d + link(B x), isotropic Gaussian noise
//! Y | X, M       c0 + c_m'm + c_x'x, Gaussian noise
//! ```
//!
//! Treatment reaches the outcome only through the surrogates, the conditional
//! law of Y given (X, M) is the same in both groups (one code path), and the
//! bent 0.05 + 0.9 sigmoid keeps all selection and treatment probabilities
//! inside [0.05, 0.95]. The dose response has the closed form
//! `c0 + c_m'E[mean_M(X, d)] + c_x'x_mean`, affine in `d`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{AltPopulation, FusedDataset, FusedSample, TreatmentKind};
use crate::error::{Error, Result};
use crate::semiparametric::Nuisances;

/// How the covariate index enters the surrogate mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurrogateLink {
    /// Surrogate mean is affine in the covariates.
    Identity,
    /// Surrogate mean bends the covariate index through a sine, exercising
    /// the estimators beyond linear truth while keeping a closed-form dose
    /// response (the Gaussian expectation of a sine is analytic).
    Sin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreatmentMechanism {
    /// D | X ~ N(a0 + a_x'x, sd^2), continuous dose.
    Gaussian,
    /// P(D=1 | X) = 0.05 + 0.9 sigmoid(a0 + a_x'x), binary.
    Logistic,
}

/// A linear-Gaussian structural model, optionally with a sine-bent surrogate
/// mean. All coefficients serialize to JSON for the CLI.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LinearGaussianDgp {
    pub x_dim: usize,
    pub m_dim: usize,
    /// Mean of the covariate distribution N(x_mean, I).
    pub x_mean: Vec<f64>,
    /// Selection logit: P(G=1|x) = 0.05 + 0.9 sigmoid(s0 + s_x'x).
    pub selection_intercept: f64,
    pub selection_weights: Vec<f64>,
    pub treatment_mechanism: TreatmentMechanism,
    pub treatment_intercept: f64,
    pub treatment_weights: Vec<f64>,
    /// Noise scale of the continuous treatment draw; unused for logistic.
    pub treatment_noise_sd: f64,
    /// Surrogate mean: b0 + b_d d + link(B x), per coordinate.
    pub surrogate_intercept: Vec<f64>,
    pub surrogate_treatment: Vec<f64>,
    pub surrogate_covariates: Vec<Vec<f64>>,
    pub surrogate_link: SurrogateLink,
    pub surrogate_noise_sd: f64,
    /// Outcome: c0 + c_m'm + c_x'x.
    pub outcome_intercept: f64,
    pub outcome_surrogate: Vec<f64>,
    pub outcome_covariates: Vec<f64>,
    pub outcome_noise_sd: f64,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Probability bent into [0.05, 0.95], enforcing overlap by construction.
fn bounded_prob(z: f64) -> f64 {
    0.05 + 0.9 * sigmoid(z)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl LinearGaussianDgp {
    /// Continuous-treatment default: p = q = 2, noise standard deviations 0.5,
    /// treatment effect c_m'b_d close to 1. Coefficient scales are moderate so
    /// the balancing weights stay well bounded, matching the boundedness the
    /// estimators assume.
    pub fn default_continuous() -> Self {
        LinearGaussianDgp {
            x_dim: 2,
            m_dim: 2,
            x_mean: vec![0.0, 0.0],
            selection_intercept: 0.0,
            selection_weights: vec![0.3, -0.2],
            treatment_mechanism: TreatmentMechanism::Gaussian,
            treatment_intercept: 0.0,
            treatment_weights: vec![0.4, 0.25],
            treatment_noise_sd: 0.5,
            surrogate_intercept: vec![0.0, 0.0],
            surrogate_treatment: vec![0.7, 0.7],
            surrogate_covariates: vec![vec![0.4, -0.25], vec![0.2, 0.3]],
            surrogate_link: SurrogateLink::Identity,
            surrogate_noise_sd: 0.5,
            outcome_intercept: 0.0,
            outcome_surrogate: vec![0.7, 0.7],
            outcome_covariates: vec![0.2, -0.15],
            outcome_noise_sd: 0.5,
        }
    }

    /// Binary-treatment default, otherwise matching [`default_continuous`].
    pub fn default_binary() -> Self {
        LinearGaussianDgp {
            treatment_mechanism: TreatmentMechanism::Logistic,
            treatment_weights: vec![0.4, -0.25],
            // E[D] is near 1/2 under the logistic draw; this intercept keeps
            // the surrogate means centered.
            surrogate_intercept: vec![-0.35, -0.35],
            ..Self::default_continuous()
        }
    }

    /// Binary-treatment variant with a sine-bent surrogate mean.
    pub fn default_binary_nonlinear() -> Self {
        LinearGaussianDgp {
            surrogate_link: SurrogateLink::Sin,
            surrogate_covariates: vec![vec![0.7, -0.45], vec![0.3, 0.6]],
            ..Self::default_binary()
        }
    }

    /// Continuous-treatment variant with a sine-bent surrogate mean.
    pub fn default_continuous_nonlinear() -> Self {
        LinearGaussianDgp {
            surrogate_link: SurrogateLink::Sin,
            surrogate_covariates: vec![vec![0.7, -0.45], vec![0.3, 0.6]],
            ..Self::default_continuous()
        }
    }

    pub fn treatment_kind(&self) -> TreatmentKind {
        match self.treatment_mechanism {
            TreatmentMechanism::Gaussian => TreatmentKind::Continuous,
            TreatmentMechanism::Logistic => TreatmentKind::Binary,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (p, q) = (self.x_dim, self.m_dim);
        if p == 0 || q == 0 {
            return Err(Error::validation("x and m must have at least one dimension"));
        }
        let dims_ok = self.x_mean.len() == p
            && self.selection_weights.len() == p
            && self.treatment_weights.len() == p
            && self.surrogate_intercept.len() == q
            && self.surrogate_treatment.len() == q
            && self.surrogate_covariates.len() == q
            && self.surrogate_covariates.iter().all(|row| row.len() == p)
            && self.outcome_surrogate.len() == q
            && self.outcome_covariates.len() == p;
        if !dims_ok {
            return Err(Error::validation("coefficient dimensions are inconsistent"));
        }
        for sd in [self.treatment_noise_sd, self.surrogate_noise_sd, self.outcome_noise_sd] {
            if !(sd.is_finite() && sd >= 0.0) {
                return Err(Error::validation(format!("noise scale must be nonnegative, got {sd}")));
            }
        }
        Ok(())
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let dgp: LinearGaussianDgp = serde_json::from_str(json)?;
        dgp.validate()?;
        Ok(dgp)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// P(G=1 | x).
    pub fn selection_prob(&self, x: &[f64]) -> f64 {
        bounded_prob(self.selection_intercept + dot(&self.selection_weights, x))
    }

    /// P(D=1 | x) for the logistic mechanism.
    pub fn treatment_prob(&self, x: &[f64]) -> f64 {
        bounded_prob(self.treatment_intercept + dot(&self.treatment_weights, x))
    }

    /// Conditional mean of each surrogate coordinate given (x, d).
    pub fn surrogate_mean(&self, x: &[f64], d: f64) -> Vec<f64> {
        (0..self.m_dim)
            .map(|k| {
                let index = dot(&self.surrogate_covariates[k], x);
                let bent = match self.surrogate_link {
                    SurrogateLink::Identity => index,
                    SurrogateLink::Sin => index.sin(),
                };
                self.surrogate_intercept[k] + self.surrogate_treatment[k] * d + bent
            })
            .collect()
    }

    /// Conditional mean of the outcome given (x, m); identical in both groups.
    pub fn outcome_mean(&self, x: &[f64], m: &[f64]) -> f64 {
        self.outcome_intercept + dot(&self.outcome_surrogate, m) + dot(&self.outcome_covariates, x)
    }

    fn draw_x(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.x_mean.iter().map(|&mu| mu + rng.sample::<f64, _>(StandardNormal)).collect()
    }

    fn draw_treatment(&self, x: &[f64], rng: &mut impl Rng) -> f64 {
        match self.treatment_mechanism {
            TreatmentMechanism::Gaussian => {
                self.treatment_intercept
                    + dot(&self.treatment_weights, x)
                    + self.treatment_noise_sd * rng.sample::<f64, _>(StandardNormal)
            }
            TreatmentMechanism::Logistic => {
                if rng.gen_bool(self.treatment_prob(x)) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn draw_surrogates(&self, x: &[f64], d: f64, rng: &mut impl Rng) -> Vec<f64> {
        self.surrogate_mean(x, d)
            .into_iter()
            .map(|mu| mu + self.surrogate_noise_sd * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    /// Draw a fused dataset of `n` rows. A latent treatment is drawn for every
    /// row from the same mechanism, so the surrogate law given covariates is
    /// identical in both groups; it is observed only on experimental rows.
    /// Redraws (fresh randomness from the same stream) if a group comes out
    /// empty, erroring after 100 attempts.
    pub fn generate(&self, n: usize, seed: u64) -> Result<FusedDataset> {
        self.validate()?;
        if n < 4 {
            return Err(Error::validation("need at least 4 samples"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..100 {
            let mut samples = Vec::with_capacity(n);
            for _ in 0..n {
                let x = self.draw_x(&mut rng);
                let observational = rng.gen_bool(self.selection_prob(&x));
                let d = self.draw_treatment(&x, &mut rng);
                let m = self.draw_surrogates(&x, d, &mut rng);
                if observational {
                    let y = self.outcome_mean(&x, &m)
                        + self.outcome_noise_sd * rng.sample::<f64, _>(StandardNormal);
                    samples.push(FusedSample::observational(x, m, y));
                } else {
                    samples.push(FusedSample::experimental(x, d, m));
                }
            }
            let has_exp = samples.iter().any(|s| s.group() == crate::data::Group::Experimental);
            let has_obs = samples.iter().any(|s| s.group() == crate::data::Group::Observational);
            if has_exp && has_obs {
                return FusedDataset::new(samples, self.x_dim, self.m_dim, self.treatment_kind());
            }
        }
        Err(Error::validation("selection mechanism produced a degenerate group in 100 attempts"))
    }

    /// Covariate draws from the DGP with a shifted mean, for the
    /// distribution-shift estimand.
    pub fn sample_alt_population(&self, shift: &[f64], n: usize, seed: u64) -> Result<AltPopulation> {
        if shift.len() != self.x_dim {
            return Err(Error::DimensionMismatch {
                expected: self.x_dim,
                got: shift.len(),
                context: "alternative population shift",
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..n)
            .map(|_| {
                self.x_mean
                    .iter()
                    .zip(shift)
                    .map(|(&mu, &s)| mu + s + rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        AltPopulation::new(pts)
    }

    fn dose_response_at_mean(&self, mean: &[f64], d: f64) -> f64 {
        // E[link(B X)] under X ~ N(mean, I): the sine case uses
        // E[sin(Z)] = sin(mu) exp(-s^2/2) for Z ~ N(mu, s^2).
        let mut value = self.outcome_intercept + dot(&self.outcome_covariates, mean);
        for k in 0..self.m_dim {
            let row = &self.surrogate_covariates[k];
            let mu = dot(row, mean);
            let bent = match self.surrogate_link {
                SurrogateLink::Identity => mu,
                SurrogateLink::Sin => {
                    let s_sq: f64 = row.iter().map(|&v| v * v).sum();
                    mu.sin() * (-0.5 * s_sq).exp()
                }
            };
            value += self.outcome_surrogate[k]
                * (self.surrogate_intercept[k] + self.surrogate_treatment[k] * d + bent);
        }
        value
    }

    /// Closed-form counterfactual mean outcome at dose `d`.
    pub fn true_dose_response(&self, d: f64) -> f64 {
        self.dose_response_at_mean(&self.x_mean, d)
    }

    /// The dose response for an alternative population with shifted covariate
    /// mean.
    pub fn true_dose_response_shifted(&self, shift: &[f64], d: f64) -> f64 {
        let mean: Vec<f64> = self.x_mean.iter().zip(shift).map(|(&m, &s)| m + s).collect();
        self.dose_response_at_mean(&mean, d)
    }

    /// The average treatment effect `theta(1) - theta(0) = c_m'b_d`.
    pub fn true_ate(&self) -> f64 {
        dot(&self.outcome_surrogate, &self.surrogate_treatment)
    }

    /// Monte Carlo draws of the counterfactual outcome Y^(d).
    pub fn sample_counterfactual(&self, d: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let x = self.draw_x(&mut rng);
                let m = self.draw_surrogates(&x, d, &mut rng);
                self.outcome_mean(&x, &m)
                    + self.outcome_noise_sd * rng.sample::<f64, _>(StandardNormal)
            })
            .collect()
    }

    /// The true nuisance functions for binary treatment, censored identically
    /// to the fitted ones.
    pub fn oracle_nuisances(&self, d: f64, epsilon: f64) -> Result<OracleNuisances> {
        self.validate()?;
        if self.treatment_kind() != TreatmentKind::Binary {
            return Err(Error::validation("oracle nuisances require the binary configuration"));
        }
        if d != 0.0 && d != 1.0 {
            return Err(Error::validation(format!("treatment level must be 0 or 1, got {d}")));
        }
        if !(epsilon > 0.0 && epsilon < 0.5) {
            return Err(Error::validation(format!(
                "censoring bound must lie in (0, 0.5), got {epsilon}"
            )));
        }
        if self.surrogate_noise_sd == 0.0 {
            return Err(Error::validation(
                "oracle surrogate propensity needs positive surrogate noise",
            ));
        }
        Ok(OracleNuisances { dgp: self.clone(), d, epsilon })
    }
}

/// Analytic nuisances of a binary-treatment DGP, usable wherever fitted ones
/// are.
pub struct OracleNuisances {
    dgp: LinearGaussianDgp,
    d: f64,
    epsilon: f64,
}

impl OracleNuisances {
    fn censor(&self, p: f64) -> f64 {
        p.clamp(self.epsilon, 1.0 - self.epsilon)
    }

    /// P(D=1 | x, m) by Bayes against the two Gaussian surrogate laws.
    fn treatment_prob_given_m(&self, x: &[f64], m: &[f64]) -> f64 {
        let p1 = self.dgp.treatment_prob(x);
        let mu1 = self.dgp.surrogate_mean(x, 1.0);
        let mu0 = self.dgp.surrogate_mean(x, 0.0);
        let s_sq = self.dgp.surrogate_noise_sd * self.dgp.surrogate_noise_sd;
        let sq = |mu: &[f64]| -> f64 { m.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum() };
        let log_lr = (sq(&mu0) - sq(&mu1)) / (2.0 * s_sq);
        sigmoid((p1 / (1.0 - p1)).ln() + log_lr)
    }
}

impl Nuisances for OracleNuisances {
    fn d(&self) -> f64 {
        self.d
    }

    fn epsilon(&self) -> f64 {
        self.epsilon
    }

    fn nu(&self, x: &[f64]) -> f64 {
        // Integrating the affine outcome regression against the Gaussian
        // surrogate law replaces m by its conditional mean.
        let m_mean = self.dgp.surrogate_mean(x, self.d);
        self.dgp.outcome_mean(x, &m_mean)
    }

    fn gamma(&self, x: &[f64], m: &[f64]) -> f64 {
        self.dgp.outcome_mean(x, m)
    }

    fn pi(&self, x: &[f64]) -> f64 {
        let p1 = self.dgp.treatment_prob(x);
        self.censor(if self.d == 1.0 { p1 } else { 1.0 - p1 })
    }

    fn rho(&self, x: &[f64], m: &[f64]) -> f64 {
        let p1 = self.treatment_prob_given_m(x, m);
        self.censor(if self.d == 1.0 { p1 } else { 1.0 - p1 })
    }

    fn pi_prime(&self, x: &[f64]) -> f64 {
        self.censor(self.dgp.selection_prob(x))
    }

    fn rho_prime(&self, x: &[f64], _m: &[f64]) -> f64 {
        // Selection depends on covariates only and the surrogate law is
        // group-free, so conditioning on m changes nothing.
        self.censor(self.dgp.selection_prob(x))
    }
}
