//! The fused-dataset model, CSV ingestion, alternative-population covariate
//! samples, and fold partitioning for cross-fitting.
//!
//! A fused dataset concatenates an experimental sample (treatment and
//! surrogates observed, outcome missing) with an observational sample
//! (surrogates and outcome observed, treatment missing). Structurally missing
//! cells carry the neutral fill value 0; the estimators' group masks guarantee
//! the fill never influences an estimate.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    /// g = 0: randomized treatment and surrogates observed.
    Experimental,
    /// g = 1: surrogates and long-term outcome observed.
    Observational,
}

impl Group {
    pub fn as_f64(self) -> f64 {
        match self {
            Group::Experimental => 0.0,
            Group::Observational => 1.0,
        }
    }

    pub fn from_f64(v: f64) -> Result<Self> {
        if v == 0.0 {
            Ok(Group::Experimental)
        } else if v == 1.0 {
            Ok(Group::Observational)
        } else {
            Err(Error::validation(format!("group indicator must be 0 or 1, got {v}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TreatmentKind {
    Continuous,
    Binary,
}

/// One row of the fused dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedSample {
    group: Group,
    x: Vec<f64>,
    /// (1-G)·D encoding: the treatment on experimental rows, 0 otherwise.
    d_prime: f64,
    m: Vec<f64>,
    /// G·Y encoding: the outcome on observational rows, 0 otherwise.
    y_prime: f64,
}

impl FusedSample {
    pub fn experimental(x: Vec<f64>, d: f64, m: Vec<f64>) -> Self {
        FusedSample { group: Group::Experimental, x, d_prime: d, m, y_prime: 0.0 }
    }

    pub fn observational(x: Vec<f64>, m: Vec<f64>, y: f64) -> Self {
        FusedSample { group: Group::Observational, x, d_prime: 0.0, m, y_prime: y }
    }

    pub fn group(&self) -> Group {
        self.group
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    /// Meaningful only on experimental rows; 0 elsewhere.
    pub fn treatment(&self) -> f64 {
        self.d_prime
    }

    pub fn m(&self) -> &[f64] {
        &self.m
    }

    /// Meaningful only on observational rows; 0 elsewhere.
    pub fn outcome(&self) -> f64 {
        self.y_prime
    }

    fn finite(&self) -> bool {
        self.d_prime.is_finite()
            && self.y_prime.is_finite()
            && self.x.iter().all(|v| v.is_finite())
            && self.m.iter().all(|v| v.is_finite())
    }
}

/// Validated fused dataset.
#[derive(Debug, Clone)]
pub struct FusedDataset {
    samples: Vec<FusedSample>,
    x_dim: usize,
    m_dim: usize,
    treatment_kind: TreatmentKind,
    /// Rows whose structurally absent cells held a nonzero value and were
    /// normalized to the neutral fill during loading.
    encoding_warnings: usize,
}

impl FusedDataset {
    pub fn new(
        samples: Vec<FusedSample>,
        x_dim: usize,
        m_dim: usize,
        treatment_kind: TreatmentKind,
    ) -> Result<Self> {
        if x_dim == 0 || m_dim == 0 {
            return Err(Error::validation("x and m must have at least one dimension"));
        }
        let n_exp = samples.iter().filter(|s| s.group == Group::Experimental).count();
        let n_obs = samples.len() - n_exp;
        if n_exp == 0 {
            return Err(Error::validation("experimental group empty"));
        }
        if n_obs == 0 {
            return Err(Error::validation("observational group empty"));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.x.len() != x_dim {
                return Err(Error::DimensionMismatch {
                    expected: x_dim,
                    got: s.x.len(),
                    context: "covariate vector",
                });
            }
            if s.m.len() != m_dim {
                return Err(Error::DimensionMismatch {
                    expected: m_dim,
                    got: s.m.len(),
                    context: "surrogate vector",
                });
            }
            if !s.finite() {
                return Err(Error::validation(format!("non-finite value in row {i}")));
            }
            match s.group {
                Group::Experimental => {
                    if s.y_prime != 0.0 {
                        return Err(Error::validation(format!(
                            "row {i}: outcome must be the neutral fill 0 on experimental rows"
                        )));
                    }
                    if treatment_kind == TreatmentKind::Binary
                        && s.d_prime != 0.0
                        && s.d_prime != 1.0
                    {
                        return Err(Error::validation(format!(
                            "row {i}: binary treatment must be 0 or 1, got {}",
                            s.d_prime
                        )));
                    }
                }
                Group::Observational => {
                    if s.d_prime != 0.0 {
                        return Err(Error::validation(format!(
                            "row {i}: treatment must be the neutral fill 0 on observational rows"
                        )));
                    }
                }
            }
        }
        Ok(FusedDataset { samples, x_dim, m_dim, treatment_kind, encoding_warnings: 0 })
    }

    pub fn samples(&self) -> &[FusedSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn x_dim(&self) -> usize {
        self.x_dim
    }

    pub fn m_dim(&self) -> usize {
        self.m_dim
    }

    pub fn treatment_kind(&self) -> TreatmentKind {
        self.treatment_kind
    }

    pub fn encoding_warnings(&self) -> usize {
        self.encoding_warnings
    }

    pub fn n_exp(&self) -> usize {
        self.samples.iter().filter(|s| s.group == Group::Experimental).count()
    }

    pub fn n_obs(&self) -> usize {
        self.len() - self.n_exp()
    }

    pub fn exp_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.samples[i].group == Group::Experimental).collect()
    }

    pub fn obs_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.samples[i].group == Group::Observational).collect()
    }

    pub fn x_points(&self) -> Vec<Vec<f64>> {
        self.samples.iter().map(|s| s.x.clone()).collect()
    }

    pub fn m_points(&self) -> Vec<Vec<f64>> {
        self.samples.iter().map(|s| s.m.clone()).collect()
    }

    pub fn outcomes(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.y_prime).collect()
    }

    pub fn treatments(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.d_prime).collect()
    }

    pub fn group_indicators(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.group.as_f64()).collect()
    }

    /// New dataset from the given rows, revalidating the group invariant.
    pub fn subset(&self, indices: &[usize]) -> Result<FusedDataset> {
        let samples = indices.iter().map(|&i| self.samples[i].clone()).collect();
        FusedDataset::new(samples, self.x_dim, self.m_dim, self.treatment_kind)
    }

    /// Load from CSV with header `g,x_1,...,x_p,d,m_1,...,m_q,y`.
    ///
    /// `d` and `y` may be empty where structurally absent; nonzero values in
    /// structurally absent cells are normalized to 0 and counted as warnings.
    pub fn from_csv(path: &Path, treatment_kind: TreatmentKind) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
        let header: Vec<String> =
            reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let (x_dim, m_dim) = parse_fused_header(&header)?;

        let mut samples = Vec::new();
        let mut warnings = 0usize;
        for (row_idx, record) in reader.records().enumerate() {
            let line = row_idx + 2; // header is line 1
            let record = record?;
            if record.len() != header.len() {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {} fields, got {}", header.len(), record.len()),
                });
            }
            let field = |i: usize| -> &str { record.get(i).unwrap_or("").trim() };
            let parse = |i: usize| -> Result<f64> {
                field(i).parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    message: format!("non-numeric value '{}' in column '{}'", field(i), header[i]),
                })
            };
            let g = Group::from_f64(parse(0)?).map_err(|_| Error::Parse {
                line,
                message: format!("group indicator must be 0 or 1, got '{}'", field(0)),
            })?;
            let x: Vec<f64> = (1..=x_dim).map(parse).collect::<Result<_>>()?;
            let d_col = 1 + x_dim;
            let m: Vec<f64> =
                (d_col + 1..d_col + 1 + m_dim).map(parse).collect::<Result<_>>()?;
            let y_col = d_col + 1 + m_dim;

            let optional = |i: usize| -> Result<Option<f64>> {
                if field(i).is_empty() {
                    Ok(None)
                } else {
                    parse(i).map(Some)
                }
            };
            let (d, y) = match g {
                Group::Experimental => {
                    let d = optional(d_col)?.ok_or_else(|| Error::Parse {
                        line,
                        message: "treatment missing on experimental row".to_string(),
                    })?;
                    if let Some(y) = optional(y_col)? {
                        if y != 0.0 {
                            warnings += 1;
                        }
                    }
                    (d, 0.0)
                }
                Group::Observational => {
                    let y = optional(y_col)?.ok_or_else(|| Error::Parse {
                        line,
                        message: "outcome missing on observational row".to_string(),
                    })?;
                    if let Some(d) = optional(d_col)? {
                        if d != 0.0 {
                            warnings += 1;
                        }
                    }
                    (0.0, y)
                }
            };
            samples.push(match g {
                Group::Experimental => FusedSample::experimental(x, d, m),
                Group::Observational => FusedSample::observational(x, m, y),
            });
        }

        let mut dataset = FusedDataset::new(samples, x_dim, m_dim, treatment_kind)?;
        dataset.encoding_warnings = warnings;
        Ok(dataset)
    }

    /// Write in the schema read by [`from_csv`](Self::from_csv); structurally
    /// absent cells are left empty, so a round trip is warning-free and
    /// bit-exact.
    pub fn to_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        let mut header = vec!["g".to_string()];
        header.extend((1..=self.x_dim).map(|j| format!("x_{j}")));
        header.push("d".to_string());
        header.extend((1..=self.m_dim).map(|j| format!("m_{j}")));
        header.push("y".to_string());
        writer.write_record(&header)?;
        for s in &self.samples {
            let mut rec = vec![format!("{}", s.group.as_f64())];
            rec.extend(s.x.iter().map(|v| format!("{v}")));
            rec.push(match s.group {
                Group::Experimental => format!("{}", s.d_prime),
                Group::Observational => String::new(),
            });
            rec.extend(s.m.iter().map(|v| format!("{v}")));
            rec.push(match s.group {
                Group::Experimental => String::new(),
                Group::Observational => format!("{}", s.y_prime),
            });
            writer.write_record(&rec)?;
        }
        writer.flush()?;
        Ok(())
    }
}

fn parse_fused_header(header: &[String]) -> Result<(usize, usize)> {
    let err = |msg: String| Error::Parse { line: 1, message: msg };
    if header.first().map(String::as_str) != Some("g") {
        return Err(err("header must start with 'g'".to_string()));
    }
    let x_dim = header.iter().skip(1).take_while(|h| h.starts_with("x_")).count();
    if x_dim == 0 {
        return Err(err("no covariate columns x_1..x_p found".to_string()));
    }
    let d_col = 1 + x_dim;
    if header.get(d_col).map(String::as_str) != Some("d") {
        return Err(err(format!("expected column 'd' at position {d_col}")));
    }
    let m_dim = header.iter().skip(d_col + 1).take_while(|h| h.starts_with("m_")).count();
    if m_dim == 0 {
        return Err(err("no surrogate columns m_1..m_q found".to_string()));
    }
    let y_col = d_col + 1 + m_dim;
    if header.get(y_col).map(String::as_str) != Some("y") {
        return Err(err(format!("expected column 'y' at position {y_col}")));
    }
    if header.len() != y_col + 1 {
        return Err(err("unexpected trailing columns after 'y'".to_string()));
    }
    for (j, h) in header.iter().enumerate().skip(1).take(x_dim) {
        if *h != format!("x_{j}") {
            return Err(err(format!("expected column 'x_{j}', got '{h}'")));
        }
    }
    for (k, h) in header.iter().enumerate().skip(d_col + 1).take(m_dim) {
        let j = k - d_col;
        if *h != format!("m_{j}") {
            return Err(err(format!("expected column 'm_{j}', got '{h}'")));
        }
    }
    Ok((x_dim, m_dim))
}

/// Covariate draws from an alternative population, for the distribution-shift
/// estimand.
#[derive(Debug, Clone)]
pub struct AltPopulation {
    x_tilde: Vec<Vec<f64>>,
}

impl AltPopulation {
    pub fn new(x_tilde: Vec<Vec<f64>>) -> Result<Self> {
        if x_tilde.is_empty() {
            return Err(Error::validation("alternative population is empty"));
        }
        let dim = x_tilde[0].len();
        if dim == 0 || x_tilde.iter().any(|x| x.len() != dim) {
            return Err(Error::validation("alternative population has inconsistent dimensions"));
        }
        if x_tilde.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::validation("non-finite value in alternative population"));
        }
        Ok(AltPopulation { x_tilde })
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.x_tilde
    }

    pub fn len(&self) -> usize {
        self.x_tilde.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x_tilde.is_empty()
    }

    pub fn x_dim(&self) -> usize {
        self.x_tilde[0].len()
    }

    /// Load from CSV with header `x_1,...,x_p`.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
        let header: Vec<String> =
            reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
        for (j, h) in header.iter().enumerate() {
            if *h != format!("x_{}", j + 1) {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("expected column 'x_{}', got '{h}'", j + 1),
                });
            }
        }
        let mut rows = Vec::new();
        for (row_idx, record) in reader.records().enumerate() {
            let record = record?;
            let row: Vec<f64> = record
                .iter()
                .map(|f| {
                    f.trim().parse::<f64>().map_err(|_| Error::Parse {
                        line: row_idx + 2,
                        message: format!("non-numeric value '{}'", f.trim()),
                    })
                })
                .collect::<Result<_>>()?;
            rows.push(row);
        }
        AltPopulation::new(rows)
    }

    pub fn to_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        let header: Vec<String> = (1..=self.x_dim()).map(|j| format!("x_{j}")).collect();
        writer.write_record(&header)?;
        for row in &self.x_tilde {
            writer.write_record(row.iter().map(|v| format!("{v}")))?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Assignment of every sample to one of `L` cross-fitting folds.
#[derive(Debug, Clone)]
pub struct FoldPartition {
    assignments: Vec<usize>,
    num_folds: usize,
}

impl FoldPartition {
    /// Uniformly random partition with fold sizes differing by at most one,
    /// redrawn (up to 100 attempts) until every fold complement contains both
    /// groups. Deterministic given the seed.
    pub fn split(dataset: &FusedDataset, num_folds: usize, seed: u64) -> Result<Self> {
        let n = dataset.len();
        if num_folds < 2 {
            return Err(Error::validation("need at least 2 folds"));
        }
        if n < 2 * num_folds {
            return Err(Error::validation(format!(
                "need at least {} samples for {num_folds} folds, got {n}",
                2 * num_folds
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..100 {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let mut assignments = vec![0usize; n];
            let base = n / num_folds;
            let extra = n % num_folds;
            let mut pos = 0;
            for fold in 0..num_folds {
                let size = base + usize::from(fold < extra);
                for &i in &order[pos..pos + size] {
                    assignments[i] = fold;
                }
                pos += size;
            }
            let partition = FoldPartition { assignments, num_folds };
            let ok = (0..num_folds).all(|fold| {
                let complement = partition.complement_indices(fold);
                let mut has_exp = false;
                let mut has_obs = false;
                for &i in &complement {
                    match dataset.samples()[i].group() {
                        Group::Experimental => has_exp = true,
                        Group::Observational => has_obs = true,
                    }
                }
                has_exp && has_obs
            });
            if ok {
                return Ok(partition);
            }
        }
        Err(Error::validation(
            "could not build folds whose complements contain both groups after 100 attempts",
        ))
    }

    #[cfg(test)]
    pub(crate) fn from_assignments(assignments: Vec<usize>, num_folds: usize) -> Self {
        FoldPartition { assignments, num_folds }
    }

    pub fn num_folds(&self) -> usize {
        self.num_folds
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn fold_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] == fold).collect()
    }

    pub fn complement_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] != fold).collect()
    }
}
