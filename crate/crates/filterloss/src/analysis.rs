//! Within-label similarity diagnostics: mean pairwise Euclidean distance
//! and cosine similarity per class, with an optional vs-centroid variant
//! and a cross-dataset comparison keyed by class name.
//!
//! Large classes are subsampled to a pair budget with a seeded uniform
//! draw, so reports are reproducible. A pair involving a zero-norm vector
//! contributes cosine 0 and is counted in `zero_norm_pairs`.

use ndarray::ArrayView1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::LabeledDataset;

/// Default budget of sampled comparisons per class.
pub const DEFAULT_MAX_PAIRS_PER_CLASS: usize = 5000;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("class {name:?} is missing from dataset {side}")]
    UnknownClass { name: String, side: char },
    #[error("datasets have different feature dimensions ({a} vs {b})")]
    DimMismatch { a: usize, b: usize },
}

/// What a "pair" means in a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityMode {
    /// Distinct unordered sample pairs within a class.
    Pairwise,
    /// Each sample against its class centroid.
    VsCentroid,
}

/// Similarity summary for one class. `mean_euclid` / `mean_cosine` are
/// `None` for classes with fewer than two samples.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassPairStats {
    pub class: String,
    pub n: usize,
    pub pairs: usize,
    pub mean_euclid: Option<f64>,
    pub mean_cosine: Option<f64>,
    pub zero_norm_pairs: usize,
}

/// Per-class similarity stats for one dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub mode: SimilarityMode,
    pub max_pairs_per_class: usize,
    pub seed: u64,
    pub per_class: Vec<ClassPairStats>,
}

/// Side-by-side stats for one class name across two datasets.
/// Deltas are `b - a` where both sides are defined.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassDelta {
    pub class: String,
    pub a: ClassPairStats,
    pub b: ClassPairStats,
    pub delta_euclid: Option<f64>,
    pub delta_cosine: Option<f64>,
}

fn euclid(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Cosine similarity with the zero-norm convention: any zero-norm operand
/// makes the result 0. Returns (value, hit_zero_norm).
fn cosine(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> (f64, bool) {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return (0.0, true);
    }
    let dot: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
    (dot / (na * nb), false)
}

/// Decodes the `t`-th pair (lexicographic `i < j`) over `m` items.
fn pair_at(m: usize, mut t: usize) -> (usize, usize) {
    let mut i = 0;
    loop {
        let row = m - 1 - i;
        if t < row {
            return (i, i + 1 + t);
        }
        t -= row;
        i += 1;
    }
}

fn stats_for_members(
    ds: &LabeledDataset,
    name: &str,
    members: &[usize],
    mode: SimilarityMode,
    max_pairs: usize,
    rng: &mut ChaCha8Rng,
) -> ClassPairStats {
    let m = members.len();
    if m < 2 {
        return ClassPairStats {
            class: name.to_string(),
            n: m,
            pairs: 0,
            mean_euclid: None,
            mean_cosine: None,
            zero_norm_pairs: 0,
        };
    }

    // Collect the comparisons for this mode, subsampling uniformly without
    // replacement when they exceed the budget.
    let centroid = match mode {
        SimilarityMode::Pairwise => None,
        SimilarityMode::VsCentroid => {
            let mut c = vec![0.0; ds.dim()];
            for &i in members {
                for (j, v) in ds.row(i).iter().enumerate() {
                    c[j] += v;
                }
            }
            for v in &mut c {
                *v /= m as f64;
            }
            Some(ndarray::Array1::from_vec(c))
        }
    };
    let total = match mode {
        SimilarityMode::Pairwise => m * (m - 1) / 2,
        SimilarityMode::VsCentroid => m,
    };
    let chosen: Vec<usize> = if total <= max_pairs {
        (0..total).collect()
    } else {
        let mut picks: Vec<usize> =
            rand::seq::index::sample(rng, total, max_pairs).into_iter().collect();
        picks.sort_unstable();
        picks
    };

    let mut sum_d = 0.0;
    let mut sum_c = 0.0;
    let mut zero_norm = 0;
    for &t in &chosen {
        let (dist, cos) = match (&centroid, mode) {
            (_, SimilarityMode::Pairwise) => {
                let (i, j) = pair_at(m, t);
                let a = ds.row(members[i]);
                let b = ds.row(members[j]);
                (euclid(a, b), cosine(a, b))
            }
            (Some(c), SimilarityMode::VsCentroid) => {
                let a = ds.row(members[t]);
                (euclid(a, c.view()), cosine(a, c.view()))
            }
            (None, SimilarityMode::VsCentroid) => unreachable!(),
        };
        sum_d += dist;
        sum_c += cos.0;
        zero_norm += usize::from(cos.1);
    }
    let pairs = chosen.len();
    ClassPairStats {
        class: name.to_string(),
        n: m,
        pairs,
        mean_euclid: Some(sum_d / pairs as f64),
        mean_cosine: Some(sum_c / pairs as f64),
        zero_norm_pairs: zero_norm,
    }
}

fn report(
    ds: &LabeledDataset,
    mode: SimilarityMode,
    max_pairs_per_class: usize,
    seed: u64,
) -> SimilarityReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_class = (0..ds.n_classes())
        .map(|c| {
            let members = ds.class_members(c);
            stats_for_members(
                ds,
                &ds.class_names()[c],
                &members,
                mode,
                max_pairs_per_class,
                &mut rng,
            )
        })
        .collect();
    SimilarityReport { mode, max_pairs_per_class, seed, per_class }
}

/// Mean pairwise distance and cosine similarity per class. Classes are
/// visited in id order against a single stream seeded with `seed`.
pub fn pairwise_stats(
    ds: &LabeledDataset,
    max_pairs_per_class: usize,
    seed: u64,
) -> SimilarityReport {
    report(ds, SimilarityMode::Pairwise, max_pairs_per_class, seed)
}

/// Variant comparing each sample to its class centroid instead of to the
/// other samples.
pub fn centroid_stats(
    ds: &LabeledDataset,
    max_pairs_per_class: usize,
    seed: u64,
) -> SimilarityReport {
    report(ds, SimilarityMode::VsCentroid, max_pairs_per_class, seed)
}

/// Compares the named classes across two datasets. Classes are matched by
/// name (ids may differ); a name missing on either side is an error.
pub fn cross_dataset_report(
    ds_a: &LabeledDataset,
    ds_b: &LabeledDataset,
    shared_class_names: &[String],
    max_pairs_per_class: usize,
    seed: u64,
) -> Result<Vec<ClassDelta>, AnalysisError> {
    if ds_a.dim() != ds_b.dim() {
        return Err(AnalysisError::DimMismatch { a: ds_a.dim(), b: ds_b.dim() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(shared_class_names.len());
    for name in shared_class_names {
        let ia = ds_a
            .class_id(name)
            .ok_or_else(|| AnalysisError::UnknownClass { name: name.clone(), side: 'a' })?;
        let ib = ds_b
            .class_id(name)
            .ok_or_else(|| AnalysisError::UnknownClass { name: name.clone(), side: 'b' })?;
        let a = stats_for_members(
            ds_a,
            name,
            &ds_a.class_members(ia),
            SimilarityMode::Pairwise,
            max_pairs_per_class,
            &mut rng,
        );
        let b = stats_for_members(
            ds_b,
            name,
            &ds_b.class_members(ib),
            SimilarityMode::Pairwise,
            max_pairs_per_class,
            &mut rng,
        );
        let delta_euclid = match (a.mean_euclid, b.mean_euclid) {
            (Some(x), Some(y)) => Some(y - x),
            _ => None,
        };
        let delta_cosine = match (a.mean_cosine, b.mean_cosine) {
            (Some(x), Some(y)) => Some(y - x),
            _ => None,
        };
        out.push(ClassDelta { class: name.clone(), a, b, delta_euclid, delta_cosine });
    }
    Ok(out)
}
