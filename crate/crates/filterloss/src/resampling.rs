//! Class-rebalancing resamplers: random under/over sampling, SMOTE,
//! ADASYN, Tomek-link removal, edited nearest neighbours (ENN), and
//! one-sided selection (OSS).
//!
//! Every sampler returns a [`ResampleResult`] describing the kept rows and
//! any synthesized ones instead of mutating the dataset, so callers can
//! inspect or apply the outcome. All seeded samplers draw from a single
//! ChaCha stream and visit classes in ascending id order; the exact draw
//! order is documented per function because downstream oracle tests replay
//! it. A guard shared by all undersamplers restores the lowest-index row
//! of any class a method would have emptied, and notes that in `params`.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataset::{DatasetError, LabeledDataset};
use crate::neighbors::{NeighborIndex, NeighborsError};

pub const SMOTE_K_DEFAULT: usize = 5;
pub const ADASYN_K_DEFAULT: usize = 5;
pub const ADASYN_BETA_DEFAULT: f64 = 1.0;
pub const ENN_K_DEFAULT: usize = 3;

#[derive(Debug, Error)]
pub enum ResampleError {
    #[error("class {class} has no samples")]
    EmptyClass { class: usize },
    #[error("need at least {need} samples, have {have}")]
    TooFewSamples { need: usize, have: usize },
    #[error("class {class} has {count} samples; synthesis needs at least 2")]
    MinorityTooSmall { class: usize, count: usize },
    #[error("dataset has a single class; nothing to select between")]
    SingleClass,
    #[error("neighbor count k must be >= 1")]
    ZeroK,
    #[error("invalid parameter: {0}")]
    BadParam(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Neighbors(#[from] NeighborsError),
}

/// Synthesized rows plus their labels.
#[derive(Debug, Clone)]
pub struct Synthetic {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
}

/// Outcome of one resampling run.
#[derive(Debug, Clone)]
pub struct ResampleResult {
    /// Sampler name, e.g. `"enn"`.
    pub method: String,
    /// Method parameters and notes (seed, k, guard restorations, ...).
    pub params: BTreeMap<String, String>,
    /// Retained original rows, ascending and duplicate-free.
    pub keep_indices: Vec<usize>,
    /// Synthesized rows, when the method generates any.
    pub synthetic: Option<Synthetic>,
}

impl ResampleResult {
    /// Materializes the result: kept rows first, synthetic rows appended.
    pub fn apply(&self, ds: &LabeledDataset) -> Result<LabeledDataset, ResampleError> {
        let kept = ds.subset(&self.keep_indices)?;
        match &self.synthetic {
            Some(s) => Ok(kept.augment(&s.features, &s.labels)?),
            None => Ok(kept),
        }
    }

    /// Rows of the resampled dataset (kept plus synthetic).
    pub fn output_rows(&self) -> usize {
        self.keep_indices.len() + self.synthetic.as_ref().map_or(0, |s| s.labels.len())
    }
}

// ── Shared plumbing ───────────────────────────────────────────────────────

fn class_members_checked(ds: &LabeledDataset) -> Result<Vec<Vec<usize>>, ResampleError> {
    let members: Vec<Vec<usize>> = (0..ds.n_classes()).map(|c| ds.class_members(c)).collect();
    match members.iter().position(|m| m.is_empty()) {
        Some(class) => Err(ResampleError::EmptyClass { class }),
        None => Ok(members),
    }
}

/// Restores the lowest-index member of every class the keep set misses.
fn restore_missing_classes(
    members: &[Vec<usize>],
    keep: &mut BTreeSet<usize>,
    params: &mut BTreeMap<String, String>,
) {
    let mut restored = Vec::new();
    for member in members {
        if !member.iter().any(|i| keep.contains(i)) {
            keep.insert(member[0]);
            restored.push(member[0].to_string());
        }
    }
    if !restored.is_empty() {
        params.insert("guard_restored".into(), restored.join(","));
    }
}

fn squared_distance(ds: &LabeledDataset, a: usize, b: usize) -> f64 {
    ds.row(a)
        .iter()
        .zip(ds.row(b).iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

fn class_matrix(ds: &LabeledDataset, members: &[usize]) -> Array2<f64> {
    let d = ds.dim();
    let mut data = Vec::with_capacity(members.len() * d);
    for &i in members {
        data.extend(ds.row(i).iter());
    }
    Array2::from_shape_vec((members.len(), d), data).expect("shape")
}

fn result(
    method: &str,
    params: BTreeMap<String, String>,
    keep: BTreeSet<usize>,
    synthetic: Option<Synthetic>,
) -> ResampleResult {
    ResampleResult {
        method: method.to_string(),
        params,
        keep_indices: keep.into_iter().collect(),
        synthetic,
    }
}

// ── Random under/over sampling ────────────────────────────────────────────

/// Downsamples every class to the minority count. Draws: classes ascending,
/// each class's ascending member list shuffled once, first `min` kept.
pub fn random_undersample(ds: &LabeledDataset, seed: u64) -> Result<ResampleResult, ResampleError> {
    let members = class_members_checked(ds)?;
    let min = members.iter().map(Vec::len).min().expect("classes exist");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = BTreeSet::new();
    for member in &members {
        let mut pool = member.clone();
        pool.shuffle(&mut rng);
        keep.extend(pool[..min].iter().copied());
    }
    let mut params = BTreeMap::new();
    params.insert("seed".into(), seed.to_string());
    params.insert("per_class".into(), min.to_string());
    Ok(result("rus", params, keep, None))
}

/// Duplicates minority rows (uniform with replacement) until every class
/// matches the majority count. Draws: classes ascending, one
/// `random_range(0..count)` per duplicate.
pub fn random_oversample(ds: &LabeledDataset, seed: u64) -> Result<ResampleResult, ResampleError> {
    let members = class_members_checked(ds)?;
    let max = members.iter().map(Vec::len).max().expect("classes exist");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = ds.dim();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (class, member) in members.iter().enumerate() {
        for _ in 0..max - member.len() {
            let pick = member[rng.random_range(0..member.len())];
            data.extend(ds.row(pick).iter());
            labels.push(class);
        }
    }
    let synthetic = (!labels.is_empty()).then(|| Synthetic {
        features: Array2::from_shape_vec((labels.len(), d), data).expect("shape"),
        labels,
    });
    let mut params = BTreeMap::new();
    params.insert("seed".into(), seed.to_string());
    params.insert("target_per_class".into(), max.to_string());
    Ok(result("ros", params, (0..ds.n()).collect(), synthetic))
}

// ── SMOTE ─────────────────────────────────────────────────────────────────

/// SMOTE with an injectable generator (see [`smote`] for the seeded entry
/// point). Per synthetic row the draws are: parent `random_range(0..m)`,
/// neighbor slot `random_range(0..k_eff)`, then interpolation coefficient
/// `random::<f64>()` in `[0, 1)`.
pub fn smote_with_rng<R: RngCore>(
    ds: &LabeledDataset,
    k: usize,
    rng: &mut R,
) -> Result<ResampleResult, ResampleError> {
    if k == 0 {
        return Err(ResampleError::ZeroK);
    }
    let members = class_members_checked(ds)?;
    let max = members.iter().map(Vec::len).max().expect("classes exist");
    let d = ds.dim();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (class, member) in members.iter().enumerate() {
        let m = member.len();
        if m == max {
            continue;
        }
        if m < 2 {
            return Err(ResampleError::MinorityTooSmall { class, count: m });
        }
        let k_eff = k.min(m - 1);
        let index = NeighborIndex::new(class_matrix(ds, member))?;
        for _ in 0..max - m {
            let parent = rng.random_range(0..m);
            let neighbors = index.knn_of_row(parent, k_eff, true)?;
            let nb = neighbors[rng.random_range(0..k_eff)];
            let lambda: f64 = rng.random();
            let xp = ds.row(member[parent]);
            let xn = ds.row(member[nb]);
            data.extend(xp.iter().zip(xn.iter()).map(|(p, n)| p + lambda * (n - p)));
            labels.push(class);
        }
    }
    let synthetic = (!labels.is_empty()).then(|| Synthetic {
        features: Array2::from_shape_vec((labels.len(), d), data).expect("shape"),
        labels,
    });
    let mut params = BTreeMap::new();
    params.insert("k".into(), k.to_string());
    Ok(result("smote", params, (0..ds.n()).collect(), synthetic))
}

/// Synthesizes minority rows by interpolating between a random minority
/// sample and one of its `k` nearest same-class neighbors, until every
/// class matches the majority count.
pub fn smote(ds: &LabeledDataset, k: usize, seed: u64) -> Result<ResampleResult, ResampleError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut res = smote_with_rng(ds, k, &mut rng)?;
    res.params.insert("seed".into(), seed.to_string());
    Ok(res)
}

// ── ADASYN ────────────────────────────────────────────────────────────────

/// Closed-form ADASYN allocation: normalize the impurity scores (uniform
/// when they sum to zero) and round each share of the budget to the
/// nearest integer, half away from zero.
pub fn adasyn_allocations(impurity: &[f64], budget: f64) -> Vec<usize> {
    let sum: f64 = impurity.iter().sum();
    let m = impurity.len() as f64;
    impurity
        .iter()
        .map(|&delta| {
            let share = if sum > 0.0 { delta / sum } else { 1.0 / m };
            (share * budget).round() as usize
        })
        .collect()
}

/// ADASYN: like SMOTE, but the synthesis budget `beta * (majority - count)`
/// is split across minority samples in proportion to how many of their `k`
/// nearest neighbors (searched over all classes) carry a different label.
/// Draws per synthetic row: neighbor slot, then interpolation coefficient;
/// parents are visited in ascending member order, classes ascending.
pub fn adasyn(
    ds: &LabeledDataset,
    k: usize,
    beta: f64,
    seed: u64,
) -> Result<ResampleResult, ResampleError> {
    if k == 0 {
        return Err(ResampleError::ZeroK);
    }
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(ResampleError::BadParam(format!("beta must be finite and >= 0, got {beta}")));
    }
    let members = class_members_checked(ds)?;
    let max = members.iter().map(Vec::len).max().expect("classes exist");
    let global = NeighborIndex::new(ds.features().clone())?;
    let k_all = k.min(ds.n() - 1);
    let labels_ref = ds.labels();
    let d = ds.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (class, member) in members.iter().enumerate() {
        let m = member.len();
        if m == max {
            continue;
        }
        let mut impurity = Vec::with_capacity(m);
        for &i in member {
            let nn = global.knn_of_row(i, k_all, true)?;
            let differing = nn.iter().filter(|&&j| labels_ref[j] != class).count();
            impurity.push(differing as f64 / k_all as f64);
        }
        let allocations = adasyn_allocations(&impurity, beta * (max - m) as f64);
        if allocations.iter().sum::<usize>() == 0 {
            continue;
        }
        if m < 2 {
            return Err(ResampleError::MinorityTooSmall { class, count: m });
        }
        let k_class = k.min(m - 1);
        let index = NeighborIndex::new(class_matrix(ds, member))?;
        for (local, &quota) in allocations.iter().enumerate() {
            for _ in 0..quota {
                let neighbors = index.knn_of_row(local, k_class, true)?;
                let nb = neighbors[rng.random_range(0..k_class)];
                let lambda: f64 = rng.random();
                let xp = ds.row(member[local]);
                let xn = ds.row(member[nb]);
                data.extend(xp.iter().zip(xn.iter()).map(|(p, n)| p + lambda * (n - p)));
                labels.push(class);
            }
        }
    }
    let synthetic = (!labels.is_empty()).then(|| Synthetic {
        features: Array2::from_shape_vec((labels.len(), d), data).expect("shape"),
        labels,
    });
    let mut params = BTreeMap::new();
    params.insert("k".into(), k.to_string());
    params.insert("beta".into(), beta.to_string());
    params.insert("seed".into(), seed.to_string());
    Ok(result("adasyn", params, (0..ds.n()).collect(), synthetic))
}

// ── Tomek links ───────────────────────────────────────────────────────────

/// Removes the majority member of every Tomek link (a cross-class pair of
/// mutual 1-nearest neighbors). Majority is decided by the original global
/// class counts; when the two classes tie, both members go.
pub fn tomek_links(ds: &LabeledDataset) -> Result<ResampleResult, ResampleError> {
    if ds.n() < 2 {
        return Err(ResampleError::TooFewSamples { need: 2, have: ds.n() });
    }
    let members = class_members_checked(ds)?;
    let index = NeighborIndex::new(ds.features().clone())?;
    let mut nn = Vec::with_capacity(ds.n());
    for i in 0..ds.n() {
        nn.push(index.knn_of_row(i, 1, true)?[0]);
    }
    let counts = ds.class_counts();
    let labels = ds.labels();
    let mut links = 0usize;
    let mut removed = BTreeSet::new();
    for a in 0..ds.n() {
        let b = nn[a];
        if b > a && nn[b] == a && labels[a] != labels[b] {
            links += 1;
            let (ca, cb) = (counts[labels[a]], counts[labels[b]]);
            if ca >= cb {
                removed.insert(a);
            }
            if cb >= ca {
                removed.insert(b);
            }
        }
    }
    let mut keep: BTreeSet<usize> = (0..ds.n()).filter(|i| !removed.contains(i)).collect();
    let mut params = BTreeMap::new();
    params.insert("links".into(), links.to_string());
    params.insert("removed".into(), removed.len().to_string());
    restore_missing_classes(&members, &mut keep, &mut params);
    Ok(result("tomek", params, keep, None))
}

// ── Edited nearest neighbours ─────────────────────────────────────────────

/// Drops every sample whose label differs from the strict majority label of
/// its `k` nearest neighbors (no strict majority means the sample stays).
/// All verdicts are computed against the original dataset, then applied in
/// one pass.
pub fn enn(ds: &LabeledDataset, k: usize) -> Result<ResampleResult, ResampleError> {
    if k == 0 {
        return Err(ResampleError::ZeroK);
    }
    if ds.n() <= k {
        return Err(ResampleError::TooFewSamples { need: k + 1, have: ds.n() });
    }
    let members = class_members_checked(ds)?;
    let index = NeighborIndex::new(ds.features().clone())?;
    let labels = ds.labels();
    let mut keep = BTreeSet::new();
    for i in 0..ds.n() {
        let neighbors = index.knn_of_row(i, k, true)?;
        let mut votes = vec![0usize; ds.n_classes()];
        for &j in &neighbors {
            votes[labels[j]] += 1;
        }
        let top = *votes.iter().max().expect("classes exist");
        let winners: Vec<usize> = (0..votes.len()).filter(|&c| votes[c] == top).collect();
        let evicted = winners.len() == 1 && winners[0] != labels[i];
        if !evicted {
            keep.insert(i);
        }
    }
    let mut params = BTreeMap::new();
    params.insert("k".into(), k.to_string());
    params.insert("removed".into(), (ds.n() - keep.len()).to_string());
    restore_missing_classes(&members, &mut keep, &mut params);
    Ok(result("enn", params, keep, None))
}

// ── One-sided selection ───────────────────────────────────────────────────

/// One binary OSS pass: keep all of `minority`, condense the rest with a
/// seeded 1-NN scan, then strip majority members of Tomek links among the
/// retained rows. Draws: one `random_range` for the majority seed point,
/// then one shuffle of the remaining majority rows.
fn oss_binary(
    ds: &LabeledDataset,
    minority: usize,
    rng: &mut ChaCha8Rng,
) -> Result<BTreeSet<usize>, ResampleError> {
    let labels = ds.labels();
    let minority_rows: Vec<usize> = (0..ds.n()).filter(|&i| labels[i] == minority).collect();
    let majority_rows: Vec<usize> = (0..ds.n()).filter(|&i| labels[i] != minority).collect();
    let mut retained: BTreeSet<usize> = minority_rows.iter().copied().collect();
    let seed_pick = majority_rows[rng.random_range(0..majority_rows.len())];
    retained.insert(seed_pick);

    let mut rest: Vec<usize> = majority_rows.iter().copied().filter(|&i| i != seed_pick).collect();
    rest.shuffle(rng);

    let nearest_retained = |cand: usize, retained: &BTreeSet<usize>| -> usize {
        let mut best = (f64::INFINITY, usize::MAX);
        for &r in retained.iter() {
            if r == cand {
                continue;
            }
            let d2 = squared_distance(ds, cand, r);
            if d2 < best.0 {
                best = (d2, r);
            }
        }
        best.1
    };

    for cand in rest {
        let nn = nearest_retained(cand, &retained);
        if labels[nn] == minority {
            retained.insert(cand);
        }
    }

    // Tomek cleanup among the retained rows, minority vs rest.
    let snapshot: Vec<usize> = retained.iter().copied().collect();
    let nn_of: BTreeMap<usize, usize> =
        snapshot.iter().map(|&i| (i, nearest_retained(i, &retained))).collect();
    for &i in &snapshot {
        let j = nn_of[&i];
        if j > i && nn_of[&j] == i && (labels[i] == minority) != (labels[j] == minority) {
            let majority_member = if labels[i] == minority { j } else { i };
            retained.remove(&majority_member);
        }
    }
    Ok(retained)
}

/// One-sided selection. Binary datasets run a single pass with the true
/// minority class (ties to the lower class id); with more classes every
/// class takes a turn as the minority and the per-run keep sets are
/// intersected. Runs share one seeded stream in ascending class order.
pub fn oss(ds: &LabeledDataset, seed: u64) -> Result<ResampleResult, ResampleError> {
    if ds.n_classes() < 2 {
        return Err(ResampleError::SingleClass);
    }
    let members = class_members_checked(ds)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = if ds.n_classes() == 2 {
        let minority = if members[1].len() < members[0].len() { 1 } else { 0 };
        oss_binary(ds, minority, &mut rng)?
    } else {
        let mut intersection: Option<BTreeSet<usize>> = None;
        for class in 0..ds.n_classes() {
            let run = oss_binary(ds, class, &mut rng)?;
            intersection = Some(match intersection {
                None => run,
                Some(acc) => acc.intersection(&run).copied().collect(),
            });
        }
        intersection.expect("at least one class")
    };
    let mut params = BTreeMap::new();
    params.insert("seed".into(), seed.to_string());
    restore_missing_classes(&members, &mut keep, &mut params);
    params.insert("removed".into(), (ds.n() - keep.len()).to_string());
    Ok(result("oss", params, keep, None))
}
