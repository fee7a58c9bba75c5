//! Labeled tabular datasets: construction, CSV interchange, synthetic
//! generation around Gaussian class clusters, stratified splitting, and
//! z-score normalization.
//!
//! All feature values are finite `f64`; labels are dense class ids in
//! `[0, n_classes)` with class ids assigned by first appearance so that
//! loading the same file twice always yields the same ids.

use std::collections::HashMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Divisor floor used when normalizing features with (near-)zero variance.
pub const STD_FLOOR: f64 = 1e-12;

/// Seed of the centroid stream used when no shared centroids are supplied.
/// Fixed (independent of `SyntheticSpec::seed`) so that source/target
/// generation pairs agree on class signal even when generated separately.
const CENTROID_SEED: u64 = 0x636c_7573;

/// Scale applied to the standard-normal centroid draws.
const CENTROID_SCALE: f64 = 4.0;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset has no rows")]
    Empty,
    #[error("dataset has no feature columns")]
    NoFeatures,
    #[error("row count {rows} does not match label count {labels}")]
    RowLabelMismatch { rows: usize, labels: usize },
    #[error("non-finite feature at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("label {label} at row {row} is outside [0, {n_classes})")]
    LabelRange { row: usize, label: usize, n_classes: usize },
    #[error("invalid class name {name:?} (must be non-empty, unique, and comma-free)")]
    BadClassName { name: String },
    #[error("file {path} is empty")]
    EmptyFile { path: String },
    #[error("malformed header {found:?} (expected f0,...,f{{d-1}},label)")]
    BadHeader { found: String },
    #[error("line {line}: expected {expected} fields, found {found}")]
    RaggedRow { line: usize, expected: usize, found: usize },
    #[error("line {line}, field {field}: cannot parse {token:?} as a feature value")]
    BadFeature { line: usize, field: usize, token: String },
    #[error("line {line}: empty label field")]
    EmptyLabel { line: usize },
    #[error("invalid synthetic spec: {0}")]
    BadSpec(String),
    #[error("centroid matrix is {rows}x{cols}, expected {expected_rows}x{expected_cols}")]
    CentroidShape { rows: usize, cols: usize, expected_rows: usize, expected_cols: usize },
    #[error("class {class} has {count} samples; stratified split needs at least 2")]
    ClassTooSmall { class: usize, count: usize },
    #[error("test fraction {frac} is outside (0, 1)")]
    BadFraction { frac: f64 },
    #[error("feature dimension {found} does not match normalizer dimension {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error("index {index} is out of bounds for {n} rows")]
    IndexRange { index: usize, n: usize },
    #[error("class names {found:?} are not a permutation of {expected:?}")]
    NamePermutation { expected: Vec<String>, found: Vec<String> },
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

// ── Core container ────────────────────────────────────────────────────────

/// Immutable feature matrix with dense integer labels and class names.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    class_names: Vec<String>,
}

impl LabeledDataset {
    /// Builds a dataset, validating finiteness, label range, and class names.
    pub fn new(
        features: Array2<f64>,
        labels: Vec<usize>,
        class_names: Vec<String>,
    ) -> Result<Self, DatasetError> {
        let n = features.nrows();
        if n == 0 {
            return Err(DatasetError::Empty);
        }
        if features.ncols() == 0 {
            return Err(DatasetError::NoFeatures);
        }
        if labels.len() != n {
            return Err(DatasetError::RowLabelMismatch { rows: n, labels: labels.len() });
        }
        for ((row, col), v) in features.indexed_iter() {
            if !v.is_finite() {
                return Err(DatasetError::NonFinite { row, col });
            }
        }
        for (i, name) in class_names.iter().enumerate() {
            let dup = class_names[..i].contains(name);
            if name.is_empty() || name.contains(',') || dup {
                return Err(DatasetError::BadClassName { name: name.clone() });
            }
        }
        for (row, &label) in labels.iter().enumerate() {
            if label >= class_names.len() {
                return Err(DatasetError::LabelRange { row, label, n_classes: class_names.len() });
            }
        }
        Ok(Self { features, labels, class_names })
    }

    /// Builds a dataset with class names `"0"`, `"1"`, ... derived from the
    /// largest label present.
    pub fn from_parts(features: Array2<f64>, labels: Vec<usize>) -> Result<Self, DatasetError> {
        let n_classes = labels.iter().max().map_or(0, |m| m + 1);
        let names = (0..n_classes).map(|c| c.to_string()).collect();
        Self::new(features, labels, names)
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    /// Id of the class with the given name, if present.
    pub fn class_id(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|n| n == name)
    }

    /// Per-class sample counts, indexed by class id.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Row indices of one class, ascending.
    pub fn class_members(&self, class: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect()
    }

    /// New dataset holding the given rows (in the given order). Class names
    /// are preserved, so classes may end up empty.
    pub fn subset(&self, indices: &[usize]) -> Result<Self, DatasetError> {
        if indices.is_empty() {
            return Err(DatasetError::Empty);
        }
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.n() {
                return Err(DatasetError::IndexRange { index: i, n: self.n() });
            }
            data.extend(self.features.row(i).iter());
            labels.push(self.labels[i]);
        }
        let features = Array2::from_shape_vec((indices.len(), d), data).expect("shape");
        Ok(Self { features, labels, class_names: self.class_names.clone() })
    }

    /// New dataset with extra rows appended after the existing ones.
    pub fn augment(
        &self,
        extra_features: &Array2<f64>,
        extra_labels: &[usize],
    ) -> Result<Self, DatasetError> {
        if extra_features.nrows() == 0 {
            return Ok(self.clone());
        }
        if extra_features.ncols() != self.dim() {
            return Err(DatasetError::DimMismatch {
                expected: self.dim(),
                found: extra_features.ncols(),
            });
        }
        let mut data: Vec<f64> = self.features.iter().copied().collect();
        data.extend(extra_features.iter().copied());
        let mut labels = self.labels.clone();
        labels.extend_from_slice(extra_labels);
        let features =
            Array2::from_shape_vec((self.n() + extra_features.nrows(), self.dim()), data)
                .expect("shape");
        Self::new(features, labels, self.class_names.clone())
    }

    /// Renumbers class ids so they follow the given name order. CSV loading
    /// assigns ids by first appearance, so two files over the same classes
    /// can disagree on numbering; aligning both to one name list restores a
    /// shared id space. The names must be a permutation of this dataset's.
    pub fn align_classes(&self, names: &[String]) -> Result<Self, DatasetError> {
        let mismatch = || DatasetError::NamePermutation {
            expected: names.to_vec(),
            found: self.class_names.clone(),
        };
        if names.len() != self.class_names.len() {
            return Err(mismatch());
        }
        let mut old_to_new = vec![usize::MAX; self.class_names.len()];
        for (old, name) in self.class_names.iter().enumerate() {
            let new = names.iter().position(|n| n == name).ok_or_else(mismatch)?;
            old_to_new[old] = new;
        }
        let labels = self.labels.iter().map(|&l| old_to_new[l]).collect();
        Self::new(self.features.clone(), labels, names.to_vec())
    }
}

// ── Synthetic generation ──────────────────────────────────────────────────

/// Recipe for a Gaussian-cluster dataset: one centroid per class, isotropic
/// cluster spread, an additive noise floor, and optional label flips.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub class_counts: Vec<usize>,
    pub dim: usize,
    #[serde(default = "default_spread")]
    pub cluster_spread: f64,
    #[serde(default)]
    pub noise_floor: f64,
    #[serde(default)]
    pub label_noise_frac: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_spread() -> f64 {
    1.0
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.n_classes == 0 {
            return Err(DatasetError::BadSpec("n_classes must be >= 1".into()));
        }
        if self.class_counts.len() != self.n_classes {
            return Err(DatasetError::BadSpec(format!(
                "class_counts has {} entries for {} classes",
                self.class_counts.len(),
                self.n_classes
            )));
        }
        if self.class_counts.iter().any(|&c| c == 0) {
            return Err(DatasetError::BadSpec("every class count must be >= 1".into()));
        }
        if self.dim == 0 {
            return Err(DatasetError::BadSpec("dim must be >= 1".into()));
        }
        if !(self.cluster_spread >= 0.0 && self.cluster_spread.is_finite()) {
            return Err(DatasetError::BadSpec("cluster_spread must be finite and >= 0".into()));
        }
        if !(self.noise_floor >= 0.0 && self.noise_floor.is_finite()) {
            return Err(DatasetError::BadSpec("noise_floor must be finite and >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.label_noise_frac) {
            return Err(DatasetError::BadSpec("label_noise_frac must be in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.class_counts.iter().sum()
    }
}

/// Centroids used when a generation call does not supply shared ones:
/// standard-normal draws scaled by 4, from a fixed stream independent of
/// the generation seed, so separately generated datasets share class signal.
pub fn default_centroids(n_classes: usize, dim: usize) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(CENTROID_SEED);
    let mut data = Vec::with_capacity(n_classes * dim);
    for _ in 0..n_classes * dim {
        let z: f64 = rng.sample(StandardNormal);
        data.push(z * CENTROID_SCALE);
    }
    Array2::from_shape_vec((n_classes, dim), data).expect("shape")
}

/// Draws a dataset from a `SyntheticSpec`. Rows are grouped by class in class-id
/// order; each row is `centroid + spread * N(0, I) + floor * N(0, I)` with
/// the two noise draws interleaved per coordinate. Afterwards
/// `round(label_noise_frac * n)` distinct rows get their label resampled
/// uniformly from the other classes. Fully determined by `spec.seed`.
pub fn synth_generate(
    spec: &SyntheticSpec,
    shared_centroids: Option<&Array2<f64>>,
) -> Result<LabeledDataset, DatasetError> {
    spec.validate()?;
    let owned;
    let centroids = match shared_centroids {
        Some(c) => {
            if c.nrows() != spec.n_classes || c.ncols() != spec.dim {
                return Err(DatasetError::CentroidShape {
                    rows: c.nrows(),
                    cols: c.ncols(),
                    expected_rows: spec.n_classes,
                    expected_cols: spec.dim,
                });
            }
            c
        }
        None => {
            owned = default_centroids(spec.n_classes, spec.dim);
            &owned
        }
    };

    let n = spec.total();
    let d = spec.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for class in 0..spec.n_classes {
        for _ in 0..spec.class_counts[class] {
            for j in 0..d {
                let cluster: f64 = rng.sample(StandardNormal);
                let floor: f64 = rng.sample(StandardNormal);
                data.push(
                    centroids[(class, j)]
                        + spec.cluster_spread * cluster
                        + spec.noise_floor * floor,
                );
            }
            labels.push(class);
        }
    }

    let n_flips = (spec.label_noise_frac * n as f64).round() as usize;
    if n_flips > 0 && spec.n_classes > 1 {
        let chosen = rand::seq::index::sample(&mut rng, n, n_flips);
        for i in chosen.iter() {
            let old = labels[i];
            let mut fresh = rng.random_range(0..spec.n_classes - 1);
            if fresh >= old {
                fresh += 1;
            }
            labels[i] = fresh;
        }
    }

    let features = Array2::from_shape_vec((n, d), data).expect("shape");
    let names = (0..spec.n_classes).map(|c| c.to_string()).collect();
    LabeledDataset::new(features, labels, names)
}

// ── CSV interchange ───────────────────────────────────────────────────────

/// Writes `f0,...,f{d-1},label` with features at 9 significant digits and
/// the class name in the label column. Unix newlines.
pub fn save_csv(ds: &LabeledDataset, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let io_err = |source| DatasetError::Io { path: path.display().to_string(), source };
    let mut out = String::new();
    for j in 0..ds.dim() {
        out.push('f');
        out.push_str(&j.to_string());
        out.push(',');
    }
    out.push_str("label\n");
    for i in 0..ds.n() {
        for v in ds.features.row(i) {
            out.push_str(&format!("{:.8e}", v));
            out.push(',');
        }
        out.push_str(&ds.class_names[ds.labels[i]]);
        out.push('\n');
    }
    let mut f = fs::File::create(path).map_err(io_err)?;
    f.write_all(out.as_bytes()).map_err(io_err)
}

/// Reads a CSV written by [`save_csv`] (or anything matching its header).
/// Label tokens are mapped to class ids in order of first appearance.
pub fn load_csv(path: impl AsRef<Path>) -> Result<LabeledDataset, DatasetError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|source| DatasetError::Io { path: path.display().to_string(), source })?;
    if text.trim().is_empty() {
        return Err(DatasetError::EmptyFile { path: path.display().to_string() });
    }

    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(DatasetError::EmptyFile {
        path: path.display().to_string(),
    })?;
    let cols: Vec<&str> = header.trim_end_matches('\r').split(',').collect();
    let d = cols.len().saturating_sub(1);
    let header_ok = d >= 1
        && cols[d] == "label"
        && cols[..d].iter().enumerate().all(|(j, c)| *c == format!("f{j}"));
    if !header_ok {
        return Err(DatasetError::BadHeader { found: header.to_string() });
    }

    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut names: Vec<String> = Vec::new();
    let mut name_ids: HashMap<String, usize> = HashMap::new();
    for (idx, raw) in lines {
        let line = idx + 1; // 1-based for messages
        let row = raw.trim_end_matches('\r');
        if row.is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != d + 1 {
            return Err(DatasetError::RaggedRow { line, expected: d + 1, found: fields.len() });
        }
        for (j, token) in fields[..d].iter().enumerate() {
            let v: f64 = token.trim().parse().map_err(|_| DatasetError::BadFeature {
                line,
                field: j,
                token: token.to_string(),
            })?;
            if !v.is_finite() {
                return Err(DatasetError::BadFeature {
                    line,
                    field: j,
                    token: token.to_string(),
                });
            }
            data.push(v);
        }
        let token = fields[d].trim();
        if token.is_empty() {
            return Err(DatasetError::EmptyLabel { line });
        }
        let id = match name_ids.get(token) {
            Some(&id) => id,
            None => {
                let id = names.len();
                names.push(token.to_string());
                name_ids.insert(token.to_string(), id);
                id
            }
        };
        labels.push(id);
    }
    if labels.is_empty() {
        return Err(DatasetError::EmptyFile { path: path.display().to_string() });
    }
    let features = Array2::from_shape_vec((labels.len(), d), data).expect("shape");
    LabeledDataset::new(features, labels, names)
}

// ── Stratified split ──────────────────────────────────────────────────────

/// Splits per class: each class sends `round(test_frac * count)` rows to the
/// test side, clamped to `[1, count - 1]` so both sides keep every class.
/// Selection is a seeded shuffle per class (classes visited in id order);
/// both outputs preserve original row order.
pub fn stratified_split(
    ds: &LabeledDataset,
    test_frac: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset), DatasetError> {
    if !(test_frac > 0.0 && test_frac < 1.0) {
        return Err(DatasetError::BadFraction { frac: test_frac });
    }
    let counts = ds.class_counts();
    for (class, &count) in counts.iter().enumerate() {
        if count < 2 {
            return Err(DatasetError::ClassTooSmall { class, count });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test_idx = Vec::new();
    let mut train_idx = Vec::new();
    for class in 0..ds.n_classes() {
        let mut members = ds.class_members(class);
        let count = members.len();
        let want = (test_frac * count as f64).round() as usize;
        let take = want.clamp(1, count - 1);
        members.shuffle(&mut rng);
        test_idx.extend(members[..take].iter().copied());
        train_idx.extend(members[take..].iter().copied());
    }
    test_idx.sort_unstable();
    train_idx.sort_unstable();
    Ok((ds.subset(&train_idx)?, ds.subset(&test_idx)?))
}

// ── Normalization ─────────────────────────────────────────────────────────

/// Per-feature z-score parameters fitted on one dataset and applied to
/// others (population mean/std; divisor floored at [`STD_FLOOR`]).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn fit(ds: &LabeledDataset) -> Self {
        let n = ds.n() as f64;
        let d = ds.dim();
        let mut mean = vec![0.0; d];
        for row in ds.features.rows() {
            for (j, v) in row.iter().enumerate() {
                mean[j] += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; d];
        for row in ds.features.rows() {
            for (j, v) in row.iter().enumerate() {
                let delta = v - mean[j];
                var[j] += delta * delta;
            }
        }
        let std = var.iter().map(|v| (v / n).sqrt()).collect();
        Self { mean, std }
    }

    pub fn apply(&self, ds: &LabeledDataset) -> Result<LabeledDataset, DatasetError> {
        if ds.dim() != self.mean.len() {
            return Err(DatasetError::DimMismatch { expected: self.mean.len(), found: ds.dim() });
        }
        let mut features = ds.features.clone();
        for mut row in features.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.std[j].max(STD_FLOOR);
            }
        }
        Ok(LabeledDataset {
            features,
            labels: ds.labels.clone(),
            class_names: ds.class_names.clone(),
        })
    }
}

// ── Class distribution ────────────────────────────────────────────────────

/// One row of a class-distribution table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassShare {
    pub name: String,
    pub count: usize,
    pub proportion: f64,
}

/// Counts and proportions per class, ordered by class id.
pub fn class_distribution(ds: &LabeledDataset) -> Vec<ClassShare> {
    let counts = ds.class_counts();
    let n = ds.n() as f64;
    counts
        .iter()
        .enumerate()
        .map(|(c, &count)| ClassShare {
            name: ds.class_names[c].clone(),
            count,
            proportion: count as f64 / n,
        })
        .collect()
}

/// Largest class count over smallest. Infinite when a class is empty.
pub fn imbalance_ratio(ds: &LabeledDataset) -> f64 {
    let counts = ds.class_counts();
    let max = counts.iter().copied().max().unwrap_or(0) as f64;
    let min = counts.iter().copied().min().unwrap_or(0) as f64;
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}
