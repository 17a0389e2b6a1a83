//! Command-line front end: simulate, tune, dose, ate, dist, herd.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{AltPopulation, FusedDataset, TreatmentKind};
use crate::distributions::{default_candidate_grid, embed_distribution, herd};
use crate::dose_response::{default_grid, estimate_curve, tune_curve_penalties, Estimand};
use crate::error::{Error, Result};
use crate::kernels::{KernelSet, KernelSpec};
use crate::semiparametric::{dml_estimate, DmlConfig};
use crate::synthetic::LinearGaussianDgp;

#[derive(Parser)]
#[command(
    name = "ltk",
    version,
    about = "Long-term causal inference from fused experimental/observational data"
)]
struct Cli {
    /// Cap the number of worker threads (fallback: the LTK_THREADS variable).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic fused dataset and write it as CSV.
    Simulate(SimulateArgs),
    /// Select kernel lengthscales and ridge penalties; write them as JSON.
    Tune(TuneArgs),
    /// Estimate a dose-response curve over a treatment grid.
    Dose(DoseArgs),
    /// Debiased treatment-effect estimate with a confidence interval.
    Ate(AteArgs),
    /// Estimate a counterfactual outcome distribution embedding.
    Dist(DistArgs),
    /// Draw herded samples from a counterfactual outcome distribution.
    Herd(HerdArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Number of rows to draw.
    #[arg(long)]
    n: usize,
    /// RNG seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Treatment mechanism of the built-in generator.
    #[arg(long, value_enum, default_value_t = TreatmentKind::Continuous)]
    treatment: TreatmentKind,
    /// Bend the surrogate mean through a sine.
    #[arg(long)]
    nonlinear: bool,
    /// JSON file with generator coefficients, overriding the built-ins.
    #[arg(long)]
    dgp: Option<PathBuf>,
    /// Also draw alternative-population covariates to this CSV.
    #[arg(long)]
    alt_out: Option<PathBuf>,
    /// Covariate mean shift of the alternative population.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    alt_shift: Option<Vec<f64>>,
    /// Alternative-population size.
    #[arg(long, default_value_t = 500)]
    alt_n: usize,
}

#[derive(Args)]
struct DataArgs {
    /// Fused dataset CSV (header g,x_1..x_p,d,m_1..m_q,y).
    #[arg(long)]
    data: PathBuf,
    /// How to interpret the treatment column.
    #[arg(long, value_enum, default_value_t = TreatmentKind::Continuous)]
    treatment: TreatmentKind,
}

#[derive(Args)]
struct KernelOverrideArgs {
    /// Covariate kernel lengthscales (comma separated), overriding the median heuristic.
    #[arg(long, value_delimiter = ',')]
    lengthscales_x: Option<Vec<f64>>,
    /// Surrogate kernel lengthscales (comma separated), overriding the median heuristic.
    #[arg(long, value_delimiter = ',')]
    lengthscales_m: Option<Vec<f64>>,
    /// Treatment kernel lengthscale (continuous treatment only).
    #[arg(long)]
    lengthscale_d: Option<f64>,
    /// Outcome kernel lengthscale.
    #[arg(long)]
    lengthscale_y: Option<f64>,
}

impl KernelOverrideArgs {
    fn resolve(&self, dataset: &FusedDataset) -> Result<KernelSet> {
        let x = match &self.lengthscales_x {
            Some(ls) => KernelSpec::gaussian(ls.clone())?,
            None => KernelSet::median_x(dataset)?,
        };
        let m = match &self.lengthscales_m {
            Some(ls) => KernelSpec::gaussian(ls.clone())?,
            None => KernelSet::median_m(dataset)?,
        };
        let d = match self.lengthscale_d {
            Some(ls) => {
                if dataset.treatment_kind() == TreatmentKind::Binary {
                    return Err(Error::validation(
                        "treatment lengthscale override requires continuous treatment",
                    ));
                }
                KernelSpec::gaussian(vec![ls])?
            }
            None => KernelSet::median_d(dataset)?,
        };
        let y = match self.lengthscale_y {
            Some(ls) => KernelSpec::gaussian(vec![ls])?,
            None => KernelSet::median_y(dataset)?,
        };
        Ok(KernelSet { x, d, m, y })
    }
}

#[derive(Args)]
struct TuneArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Output JSON path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DoseArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Averaging population.
    #[arg(long, value_enum, default_value_t = Estimand::Ate)]
    estimand: Estimand,
    /// Treatment grid as start:stop:count; defaults to 25 treatment quantiles.
    #[arg(long, allow_hyphen_values = true)]
    grid: Option<String>,
    /// Alternative-population covariate CSV (required for --estimand ds).
    #[arg(long)]
    alt: Option<PathBuf>,
    /// Outcome ridge penalty; tuned by LOOCV when omitted.
    #[arg(long)]
    lambda: Option<f64>,
    /// First-stage ridge penalty; tuned by LOOCV when omitted.
    #[arg(long)]
    lambda1: Option<f64>,
    #[command(flatten)]
    kernels: KernelOverrideArgs,
    /// Output JSON path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AteArgs {
    /// Fused dataset CSV with binary treatment.
    #[arg(long)]
    data: PathBuf,
    /// Treatment level whose counterfactual mean is estimated.
    #[arg(long, default_value_t = 1.0)]
    d: f64,
    /// Number of cross-fitting folds.
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Confidence level.
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Propensity censoring bound.
    #[arg(long, default_value_t = 0.01)]
    epsilon: f64,
    /// Seed for the fold partition.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    kernels: KernelOverrideArgs,
    /// Output JSON path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DistArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value_t = Estimand::Ate)]
    estimand: Estimand,
    /// Treatment level to embed.
    #[arg(long, allow_hyphen_values = true)]
    d: f64,
    #[arg(long)]
    alt: Option<PathBuf>,
    /// First-stage ridge penalty; tuned by LOOCV when omitted.
    #[arg(long)]
    lambda1: Option<f64>,
    /// Distribution ridge penalty; tuned by LOOCV when omitted.
    #[arg(long)]
    lambda2: Option<f64>,
    #[command(flatten)]
    kernels: KernelOverrideArgs,
    /// Output JSON path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct HerdArgs {
    #[command(flatten)]
    dist: DistArgs,
    /// Number of herded samples.
    #[arg(long, default_value_t = 500)]
    samples: usize,
    /// Size of the candidate grid searched by the argmax.
    #[arg(long, default_value_t = crate::distributions::DEFAULT_HERDING_GRID)]
    grid_size: usize,
}

/// Parse `start:stop:count` into an inclusive equispaced grid.
fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::validation(format!("grid must be start:stop:count, got '{text}'")));
    }
    let start: f64 = parts[0]
        .parse()
        .map_err(|_| Error::validation(format!("bad grid start '{}'", parts[0])))?;
    let stop: f64 = parts[1]
        .parse()
        .map_err(|_| Error::validation(format!("bad grid stop '{}'", parts[1])))?;
    let count: usize = parts[2]
        .parse()
        .map_err(|_| Error::validation(format!("bad grid count '{}'", parts[2])))?;
    if count == 0 {
        return Err(Error::validation("grid count must be positive"));
    }
    if count == 1 {
        return Ok(vec![start]);
    }
    let step = (stop - start) / (count - 1) as f64;
    Ok((0..count).map(|i| start + i as f64 * step).collect())
}

fn configure_threads(threads: Option<usize>) {
    let threads = threads.or_else(|| {
        std::env::var("LTK_THREADS").ok().and_then(|v| v.parse::<usize>().ok())
    });
    if let Some(t) = threads.filter(|&t| t > 0) {
        crate::threads::set_blas_threads(t);
        #[cfg(feature = "parallel")]
        {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
        }
    } else {
        // The estimators parallelize with rayon; keep BLAS single threaded
        // per call unless the environment explicitly says otherwise.
        if std::env::var("OPENBLAS_NUM_THREADS").is_err() {
            crate::threads::set_blas_threads(1);
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

fn load_alt(alt: &Option<PathBuf>, estimand: Estimand) -> Result<Option<AltPopulation>> {
    match (estimand, alt) {
        (Estimand::Ds, Some(path)) => Ok(Some(AltPopulation::from_csv(path)?)),
        (Estimand::Ds, None) => {
            Err(Error::validation("estimand ds requires --alt with covariate draws"))
        }
        _ => Ok(None),
    }
}

fn run_simulate(args: &SimulateArgs) -> Result<()> {
    let dgp = match &args.dgp {
        Some(path) => LinearGaussianDgp::from_json(&std::fs::read_to_string(path)?)?,
        None => match (args.treatment, args.nonlinear) {
            (TreatmentKind::Continuous, false) => LinearGaussianDgp::default_continuous(),
            (TreatmentKind::Continuous, true) => LinearGaussianDgp::default_continuous_nonlinear(),
            (TreatmentKind::Binary, false) => LinearGaussianDgp::default_binary(),
            (TreatmentKind::Binary, true) => LinearGaussianDgp::default_binary_nonlinear(),
        },
    };
    let dataset = dgp.generate(args.n, args.seed)?;
    dataset.to_csv(&args.out)?;
    println!(
        "simulate: wrote {} rows ({} experimental, {} observational) to {}",
        dataset.len(),
        dataset.n_exp(),
        dataset.n_obs(),
        args.out.display()
    );
    if let Some(alt_out) = &args.alt_out {
        let shift = match &args.alt_shift {
            Some(s) => s.clone(),
            None => vec![0.5; dgp.x_dim],
        };
        let alt = dgp.sample_alt_population(&shift, args.alt_n, args.seed.wrapping_add(1))?;
        alt.to_csv(alt_out)?;
        println!("simulate: wrote {} alternative-population rows to {}", alt.len(), alt_out.display());
    }
    Ok(())
}

fn run_tune(args: &TuneArgs) -> Result<()> {
    let dataset = FusedDataset::from_csv(&args.data.data, args.data.treatment)?;
    let tuned = crate::dose_response::tune_hyperparameters(&dataset)?;
    write_text(&args.out, &serde_json::to_string_pretty(&tuned)?)?;
    println!(
        "tune: lambda={:.6e} lambda1={:.6e} written to {}",
        tuned.lambda,
        tuned.lambda1,
        args.out.display()
    );
    Ok(())
}

fn run_dose(args: &DoseArgs) -> Result<()> {
    let dataset = FusedDataset::from_csv(&args.data.data, args.data.treatment)?;
    let alt = load_alt(&args.alt, args.estimand)?;
    let grid = match &args.grid {
        Some(text) => parse_grid(text)?,
        None => default_grid(&dataset, 25)?,
    };
    let kernels = args.kernels.resolve(&dataset)?;
    let (lambda, lambda1) = match (args.lambda, args.lambda1) {
        (Some(l), Some(l1)) => (l, l1),
        (l, l1) => {
            let (tl, tl1) = tune_curve_penalties(&dataset, &kernels, usize::MAX)?;
            (l.unwrap_or(tl), l1.unwrap_or(tl1))
        }
    };
    let curve =
        estimate_curve(&dataset, args.estimand, &grid, &kernels, lambda, lambda1, alt.as_ref())?;
    write_text(&args.out, &curve.to_json()?)?;
    println!(
        "dose: {} points (lambda={:.3e}, lambda1={:.3e}) written to {}",
        curve.curve.len(),
        lambda,
        lambda1,
        args.out.display()
    );
    Ok(())
}

fn run_ate(args: &AteArgs) -> Result<()> {
    let dataset = FusedDataset::from_csv(&args.data, TreatmentKind::Binary)?;
    let kernels = if args.kernels.lengthscales_x.is_some()
        || args.kernels.lengthscales_m.is_some()
        || args.kernels.lengthscale_y.is_some()
    {
        Some(args.kernels.resolve(&dataset)?)
    } else {
        None
    };
    let config = DmlConfig {
        epsilon: args.epsilon,
        seed: args.seed,
        kernels,
        ..DmlConfig::default()
    };
    let estimate = dml_estimate(&dataset, args.d, args.folds, args.level, &config)?;
    write_text(&args.out, &estimate.to_json()?)?;
    println!(
        "ate: theta={:.6} ci=[{:.6}, {:.6}] (n={}, folds={}) written to {}",
        estimate.theta,
        estimate.ci_lower,
        estimate.ci_upper,
        estimate.n,
        estimate.folds,
        args.out.display()
    );
    Ok(())
}

fn resolve_dist_embedding(
    args: &DistArgs,
) -> Result<(crate::distributions::DistributionEmbedding, FusedDataset)> {
    let dataset = FusedDataset::from_csv(&args.data.data, args.data.treatment)?;
    let alt = load_alt(&args.alt, args.estimand)?;
    let kernels = args.kernels.resolve(&dataset)?;
    let (lambda1, lambda2) = match (args.lambda1, args.lambda2) {
        (Some(l1), Some(l2)) => (l1, l2),
        (l1, l2) => {
            let (tl, tl1) = tune_curve_penalties(&dataset, &kernels, usize::MAX)?;
            (l1.unwrap_or(tl1), l2.unwrap_or(tl))
        }
    };
    let embedding = embed_distribution(
        &dataset,
        args.estimand,
        args.d,
        &kernels,
        lambda1,
        lambda2,
        alt.as_ref(),
    )?;
    Ok((embedding, dataset))
}

fn run_dist(args: &DistArgs) -> Result<()> {
    let (embedding, _) = resolve_dist_embedding(args)?;
    write_text(&args.out, &embedding.to_json()?)?;
    println!(
        "dist: embedding for estimand {:?} at d={} written to {}",
        embedding.estimand(),
        embedding.d(),
        args.out.display()
    );
    Ok(())
}

fn run_herd(args: &HerdArgs) -> Result<()> {
    let (embedding, dataset) = resolve_dist_embedding(&args.dist)?;
    let grid = default_candidate_grid(&dataset, args.grid_size)?;
    let herded = herd(&embedding, args.samples, &grid)?;
    herded.to_csv(&args.dist.out)?;
    let mean = herded.values().iter().sum::<f64>() / herded.values().len() as f64;
    println!(
        "herd: {} samples (mean {:.6}) written to {}",
        herded.values().len(),
        mean,
        args.dist.out.display()
    );
    Ok(())
}

/// Parse arguments and run. Returns the process exit status: 0 on success,
/// 1 on usage/validation errors, 2 on numerical failures.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    configure_threads(cli.threads);
    let result = match &cli.command {
        Command::Simulate(args) => run_simulate(args),
        Command::Tune(args) => run_tune(args),
        Command::Dose(args) => run_dose(args),
        Command::Ate(args) => run_ate(args),
        Command::Dist(args) => run_dist(args),
        Command::Herd(args) => run_herd(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                2
            } else {
                1
            }
        }
    }
}
