//! Ensemble weight filter: several undersamplers vote on the same dataset,
//! each sample's agreement count (how many keep sets contain it) indexes a
//! monotone weight table, and the result is one loss weight per sample.
//!
//! With `m` samplers the table has `m + 1` entries for agreement counts
//! `0..=m`. Samples every filter discards get the lowest weight; samples
//! every filter keeps get the highest.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::LabeledDataset;
use crate::resampling::{
    enn, oss, random_undersample, tomek_links, ResampleError, ResampleResult, ENN_K_DEFAULT,
};

/// Default weight assigned to samples no filter keeps.
pub const ALPHA_MIN_DEFAULT: f64 = 0.1;

#[derive(Debug, Error)]
pub enum WeightFilterError {
    #[error("invalid weight table: {0}")]
    BadTable(String),
    #[error("weight table has {got} entries, need {expected} for this sampler count")]
    TableLength { expected: usize, got: usize },
    #[error("at least one undersampler is required")]
    NoSamplers,
    #[error("keep set references index {index}, but the dataset has {n} rows")]
    IndexRange { index: usize, n: usize },
    #[error("sampler {method} failed: {source}")]
    SamplerFailed { method: String, source: ResampleError },
}

// ── Weight table ──────────────────────────────────────────────────────────

/// Monotone map from agreement count to loss weight, entries in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct WeightTable {
    alphas: Vec<f64>,
}

impl WeightTable {
    pub fn new(alphas: Vec<f64>) -> Result<Self, WeightFilterError> {
        if alphas.len() < 2 {
            return Err(WeightFilterError::BadTable(format!(
                "need at least 2 entries, got {}",
                alphas.len()
            )));
        }
        for &a in &alphas {
            if !(a.is_finite() && (0.0..=1.0).contains(&a)) {
                return Err(WeightFilterError::BadTable(format!("entry {a} outside [0, 1]")));
            }
        }
        if alphas.windows(2).any(|w| w[0] > w[1]) {
            return Err(WeightFilterError::BadTable("entries must be nondecreasing".into()));
        }
        Ok(Self { alphas })
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    /// Number of samplers this table is sized for.
    pub fn n_samplers(&self) -> usize {
        self.alphas.len() - 1
    }
}

impl TryFrom<Vec<f64>> for WeightTable {
    type Error = WeightFilterError;
    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<WeightTable> for Vec<f64> {
    fn from(t: WeightTable) -> Self {
        t.alphas
    }
}

/// Linear ramp from `alpha_min` (kept by nobody) to 1 (kept by everybody):
/// `alpha_j = alpha_min + (1 - alpha_min) * j / n_samplers`.
pub fn default_weight_table(
    n_samplers: usize,
    alpha_min: f64,
) -> Result<WeightTable, WeightFilterError> {
    if n_samplers == 0 {
        return Err(WeightFilterError::NoSamplers);
    }
    if !(alpha_min.is_finite() && (0.0..=1.0).contains(&alpha_min)) {
        return Err(WeightFilterError::BadTable(format!("alpha_min {alpha_min} outside [0, 1]")));
    }
    let alphas = (0..=n_samplers)
        .map(|j| {
            let a = alpha_min + (1.0 - alpha_min) * j as f64 / n_samplers as f64;
            a.min(1.0)
        })
        .collect();
    WeightTable::new(alphas)
}

// ── Weight vector ─────────────────────────────────────────────────────────

/// One loss weight per dataset row, in row order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    values: Vec<f64>,
}

impl WeightVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }
}

// ── Sampler specs ─────────────────────────────────────────────────────────

/// Undersamplers that can vote in the filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMethod {
    Rus,
    Tomek,
    Enn,
    Oss,
}

impl FilterMethod {
    pub fn name(self) -> &'static str {
        match self {
            FilterMethod::Rus => "rus",
            FilterMethod::Tomek => "tomek",
            FilterMethod::Enn => "enn",
            FilterMethod::Oss => "oss",
        }
    }

    pub fn parse(token: &str) -> Option<Self> {
        match token {
            "rus" => Some(FilterMethod::Rus),
            "tomek" => Some(FilterMethod::Tomek),
            "enn" => Some(FilterMethod::Enn),
            "oss" => Some(FilterMethod::Oss),
            _ => None,
        }
    }
}

impl std::fmt::Display for FilterMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One voting undersampler: method, optional neighbor count (methods that
/// need one fall back to their default), and a seed for the seeded methods.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct UndersamplerSpec {
    pub method: FilterMethod,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl UndersamplerSpec {
    pub fn new(method: FilterMethod, seed: u64) -> Self {
        Self { method, k: None, seed }
    }

    pub fn run(&self, ds: &LabeledDataset) -> Result<ResampleResult, WeightFilterError> {
        let run = match self.method {
            FilterMethod::Rus => random_undersample(ds, self.seed),
            FilterMethod::Tomek => tomek_links(ds),
            FilterMethod::Enn => enn(ds, self.k.unwrap_or(ENN_K_DEFAULT)),
            FilterMethod::Oss => oss(ds, self.seed),
        };
        run.map_err(|source| WeightFilterError::SamplerFailed {
            method: self.method.name().into(),
            source,
        })
    }
}

// ── Counting and assignment ───────────────────────────────────────────────

/// Per-row agreement counts: how many keep sets contain each row.
pub fn counts_from_keep_sets(
    n: usize,
    keep_sets: &[Vec<usize>],
) -> Result<Vec<usize>, WeightFilterError> {
    let mut counts = vec![0usize; n];
    for set in keep_sets {
        for &i in set {
            if i >= n {
                return Err(WeightFilterError::IndexRange { index: i, n });
            }
            counts[i] += 1;
        }
    }
    Ok(counts)
}

/// Maps agreement counts through the table. The table must have exactly
/// one entry per possible count (`keep_sets.len() + 1`).
pub fn weights_from_keep_sets(
    n: usize,
    keep_sets: &[Vec<usize>],
    table: &WeightTable,
) -> Result<WeightVector, WeightFilterError> {
    if keep_sets.is_empty() {
        return Err(WeightFilterError::NoSamplers);
    }
    if table.alphas.len() != keep_sets.len() + 1 {
        return Err(WeightFilterError::TableLength {
            expected: keep_sets.len() + 1,
            got: table.alphas.len(),
        });
    }
    let counts = counts_from_keep_sets(n, keep_sets)?;
    let values = counts.iter().map(|&c| table.alphas[c]).collect();
    Ok(WeightVector { values })
}

/// Everything the filter learned about one dataset.
#[derive(Debug, Clone)]
pub struct FilterOutcome {
    pub weights: WeightVector,
    /// Agreement count per row.
    pub agreement_counts: Vec<usize>,
    /// (method name, kept rows) per sampler, in spec order.
    pub sampler_keeps: Vec<(String, usize)>,
}

/// Runs every sampler on the dataset and maps the agreement counts through
/// the table.
pub fn filter_weights(
    ds: &LabeledDataset,
    samplers: &[UndersamplerSpec],
    table: &WeightTable,
) -> Result<FilterOutcome, WeightFilterError> {
    if samplers.is_empty() {
        return Err(WeightFilterError::NoSamplers);
    }
    if table.alphas.len() != samplers.len() + 1 {
        return Err(WeightFilterError::TableLength {
            expected: samplers.len() + 1,
            got: table.alphas.len(),
        });
    }
    let mut keep_sets = Vec::with_capacity(samplers.len());
    let mut sampler_keeps = Vec::with_capacity(samplers.len());
    for spec in samplers {
        let run = spec.run(ds)?;
        sampler_keeps.push((run.method.clone(), run.keep_indices.len()));
        keep_sets.push(run.keep_indices);
    }
    let agreement_counts = counts_from_keep_sets(ds.n(), &keep_sets)?;
    let values = agreement_counts.iter().map(|&c| table.alphas[c]).collect();
    Ok(FilterOutcome { weights: WeightVector { values }, agreement_counts, sampler_keeps })
}

/// [`filter_weights`] without the diagnostics.
pub fn assign_weights(
    ds: &LabeledDataset,
    samplers: &[UndersamplerSpec],
    table: &WeightTable,
) -> Result<WeightVector, WeightFilterError> {
    filter_weights(ds, samplers, table).map(|o| o.weights)
}

/// One histogram bar: how many rows landed on each agreement level.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightBand {
    pub agreement: usize,
    pub alpha: f64,
    pub count: usize,
}

/// Histogram of agreement levels against the table.
pub fn weight_bands(agreement_counts: &[usize], table: &WeightTable) -> Vec<WeightBand> {
    let mut bands: Vec<WeightBand> = table
        .alphas
        .iter()
        .enumerate()
        .map(|(j, &alpha)| WeightBand { agreement: j, alpha, count: 0 })
        .collect();
    for &c in agreement_counts {
        if let Some(band) = bands.get_mut(c) {
            band.count += 1;
        }
    }
    bands
}
