//! Minibatch SGD over a weighted dataset, evaluation metrics, and the
//! strategy layer that turns an imbalance-handling choice (resample the
//! data, or keep it and weight the loss) into a concrete training setup.
//!
//! Shuffling is plan-driven: [`shuffle_plan`] draws every epoch's
//! permutation up front from one seeded stream, so two runs with the same
//! seed visit samples in the same order regardless of what happens in
//! between. Each batch reduces its loss over the batch (weights scale
//! samples inside it), and the reported epoch loss is the sample-count
//! weighted mean of batch losses.

use std::collections::BTreeMap;

use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetError, LabeledDataset};
use crate::losses::{
    per_sample, reduce_weighted, reduce_weighted_normalized, LossError, LossSpec,
};
use crate::model::{Mlp, ModelError};
use crate::resampling::{
    adasyn, enn, oss, random_oversample, random_undersample, smote, tomek_links, ResampleError,
    ADASYN_BETA_DEFAULT, ADASYN_K_DEFAULT, ENN_K_DEFAULT, SMOTE_K_DEFAULT,
};
use crate::weight_filter::{
    default_weight_table, filter_weights, FilterMethod, UndersamplerSpec, WeightFilterError,
    WeightTable, ALPHA_MIN_DEFAULT,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Resample(#[from] ResampleError),
    #[error(transparent)]
    Filter(#[from] WeightFilterError),
    #[error("loss at epoch {epoch}, batch {batch}: {source}")]
    Batch {
        epoch: usize,
        batch: usize,
        #[source]
        source: LossError,
    },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("weight vector has {got} entries, dataset has {expected} rows")]
    WeightLength { expected: usize, got: usize },
    #[error("model emits {model} classes, dataset has {dataset}")]
    ClassMismatch { model: usize, dataset: usize },
    #[error("prediction {pred} out of range for {classes} classes")]
    PredRange { pred: usize, classes: usize },
    #[error("labels and predictions differ in length")]
    PredLength,
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("unknown strategy {0:?}")]
    UnknownStrategy(String),
}

// ── Shuffle plan ──────────────────────────────────────────────────────────

/// One visit order per epoch, all drawn up front from a single seeded
/// stream (epoch 0 first).
pub fn shuffle_plan(n: usize, epochs: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..epochs)
        .map(|_| {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            perm
        })
        .collect()
}

// ── Training ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    pub loss: LossSpec,
    /// Divide each batch by its weight mass instead of its size.
    #[serde(default)]
    pub normalize_by_weight_sum: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_epochs() -> usize {
    10
}

fn default_batch_size() -> usize {
    32
}

fn default_lr() -> f64 {
    0.01
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::BadConfig("batch_size must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(TrainError::BadConfig(format!("lr {} must be finite and > 0", self.lr)));
        }
        self.loss.validate().map_err(|e| TrainError::BadConfig(e.to_string()))
    }
}

/// What one epoch did: mean training loss and, when an evaluation set was
/// supplied, metrics on it after the epoch's updates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub eval: Option<EvalReport>,
}

/// Runs SGD over the dataset with one loss weight per row.
pub fn train(
    model: &mut Mlp,
    ds: &LabeledDataset,
    weights: &[f64],
    cfg: &TrainConfig,
    eval_ds: Option<&LabeledDataset>,
) -> Result<Vec<EpochRecord>, TrainError> {
    cfg.validate()?;
    let n = ds.n();
    if weights.len() != n {
        return Err(TrainError::WeightLength { expected: n, got: weights.len() });
    }

    let plan = shuffle_plan(n, cfg.epochs, cfg.seed);
    let mut records = Vec::with_capacity(cfg.epochs);
    for (epoch, perm) in plan.iter().enumerate() {
        let mut total = 0.0;
        for (batch_idx, batch) in perm.chunks(cfg.batch_size).enumerate() {
            let x = ds.features().select(Axis(0), batch);
            let labels: Vec<usize> = batch.iter().map(|&i| ds.labels()[i]).collect();
            let w: Vec<f64> = batch.iter().map(|&i| weights[i]).collect();

            let (logits, cache) = model.forward_cached(x.view())?;
            let batched = |source| TrainError::Batch { epoch, batch: batch_idx, source };
            let per = per_sample(&cfg.loss, logits.view(), &labels).map_err(batched)?;
            let red = if cfg.normalize_by_weight_sum {
                reduce_weighted_normalized(&per, &w).map_err(batched)?
            } else {
                reduce_weighted(&per, &w).map_err(batched)?
            };
            if !red.loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch: batch_idx });
            }
            let grads = model.backward(&cache, red.grad_logits.view())?;
            model.sgd_step(&grads, cfg.lr)?;
            total += red.loss * batch.len() as f64;
        }
        let eval = match eval_ds {
            Some(ed) => Some(evaluate(model, ed)?),
            None => None,
        };
        records.push(EpochRecord { epoch, train_loss: total / n as f64, eval });
    }
    Ok(records)
}

// ── Evaluation ────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassEval {
    pub name: String,
    pub support: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub accuracy: f64,
    /// Unweighted mean F1 over every class, absent ones included at zero.
    pub macro_f1: f64,
    /// Support-weighted mean F1.
    pub weighted_f1: f64,
    pub per_class: Vec<ClassEval>,
    /// `confusion[true][pred]`.
    pub confusion: Vec<Vec<usize>>,
    /// Classes with zero support in the evaluation labels.
    pub absent_classes: Vec<String>,
}

fn argmax_lowest(row: ndarray::ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Class predictions for every row, ties resolved to the lowest class id.
pub fn predict(model: &Mlp, ds: &LabeledDataset) -> Result<Vec<usize>, TrainError> {
    if model.n_classes() != ds.n_classes() {
        return Err(TrainError::ClassMismatch {
            model: model.n_classes(),
            dataset: ds.n_classes(),
        });
    }
    let logits = model.forward(ds.features().view())?;
    Ok(logits.rows().into_iter().map(argmax_lowest).collect())
}

/// Metrics from already-computed predictions. Per-class precision,
/// recall, and F1 treat an empty denominator as zero.
pub fn evaluate_predictions(
    true_labels: &[usize],
    preds: &[usize],
    class_names: &[String],
) -> Result<EvalReport, TrainError> {
    if true_labels.len() != preds.len() {
        return Err(TrainError::PredLength);
    }
    let classes = class_names.len();
    let n = true_labels.len();
    let mut confusion = vec![vec![0usize; classes]; classes];
    for (&t, &p) in true_labels.iter().zip(preds) {
        if t >= classes {
            return Err(TrainError::PredRange { pred: t, classes });
        }
        if p >= classes {
            return Err(TrainError::PredRange { pred: p, classes });
        }
        confusion[t][p] += 1;
    }

    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let mut per_class = Vec::with_capacity(classes);
    let mut absent = Vec::new();
    let mut correct = 0usize;
    for c in 0..classes {
        let tp = confusion[c][c];
        correct += tp;
        let support: usize = confusion[c].iter().sum();
        let predicted: usize = confusion.iter().map(|row| row[c]).sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        if support == 0 {
            absent.push(class_names[c].clone());
        }
        per_class.push(ClassEval { name: class_names[c].clone(), support, precision, recall, f1 });
    }
    let macro_f1 = per_class.iter().map(|c| c.f1).sum::<f64>() / classes as f64;
    let weighted_f1 = per_class.iter().map(|c| c.support as f64 * c.f1).sum::<f64>() / n as f64;
    Ok(EvalReport {
        n,
        accuracy: ratio(correct, n),
        macro_f1,
        weighted_f1,
        per_class,
        confusion,
        absent_classes: absent,
    })
}

/// Runs the model over the dataset and scores the predictions.
pub fn evaluate(model: &Mlp, ds: &LabeledDataset) -> Result<EvalReport, TrainError> {
    let preds = predict(model, ds)?;
    evaluate_predictions(ds.labels(), &preds, ds.class_names())
}

// ── Strategies ────────────────────────────────────────────────────────────

/// Resampling methods available as whole-dataset strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleKind {
    Ros,
    Smote,
    Adasyn,
    Rus,
    Tomek,
    Enn,
    Oss,
}

impl ResampleKind {
    pub fn name(self) -> &'static str {
        match self {
            ResampleKind::Ros => "ros",
            ResampleKind::Smote => "smote",
            ResampleKind::Adasyn => "adasyn",
            ResampleKind::Rus => "rus",
            ResampleKind::Tomek => "tomek",
            ResampleKind::Enn => "enn",
            ResampleKind::Oss => "oss",
        }
    }

    pub fn parse(token: &str) -> Option<Self> {
        match token {
            "ros" => Some(ResampleKind::Ros),
            "smote" => Some(ResampleKind::Smote),
            "adasyn" => Some(ResampleKind::Adasyn),
            "rus" => Some(ResampleKind::Rus),
            "tomek" => Some(ResampleKind::Tomek),
            "enn" => Some(ResampleKind::Enn),
            "oss" => Some(ResampleKind::Oss),
            _ => None,
        }
    }
}

/// How to handle imbalance before training: leave the data alone, rewrite
/// it with a resampler, or keep it and downweight filtered samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Strategy {
    None,
    Resample(ResampleKind),
    /// `filterloss:<m1>,<m2>,...` in the string form.
    FilterLoss(Vec<FilterMethod>),
}

impl Strategy {
    pub fn parse(s: &str) -> Result<Self, TrainError> {
        if s == "none" {
            return Ok(Strategy::None);
        }
        if let Some(rest) = s.strip_prefix("filterloss:") {
            let mut methods = Vec::new();
            for token in rest.split(',') {
                let m = FilterMethod::parse(token)
                    .ok_or_else(|| TrainError::UnknownStrategy(s.into()))?;
                methods.push(m);
            }
            if methods.is_empty() {
                return Err(TrainError::UnknownStrategy(s.into()));
            }
            return Ok(Strategy::FilterLoss(methods));
        }
        ResampleKind::parse(s)
            .map(Strategy::Resample)
            .ok_or_else(|| TrainError::UnknownStrategy(s.into()))
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Strategy::None => f.write_str("none"),
            Strategy::Resample(k) => f.write_str(k.name()),
            Strategy::FilterLoss(methods) => {
                f.write_str("filterloss:")?;
                for (i, m) in methods.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    f.write_str(m.name())?;
                }
                Ok(())
            }
        }
    }
}

/// Tuning knobs shared by the strategies.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrategyOptions {
    #[serde(default = "default_smote_k")]
    pub smote_k: usize,
    #[serde(default = "default_adasyn_k")]
    pub adasyn_k: usize,
    #[serde(default = "default_adasyn_beta")]
    pub adasyn_beta: f64,
    #[serde(default = "default_enn_k")]
    pub enn_k: usize,
    /// Weight given to samples every filter rejects.
    #[serde(default = "default_alpha_min")]
    pub alpha_min: f64,
    /// Explicit weight table; overrides the `alpha_min` ramp when set.
    #[serde(default)]
    pub weight_table: Option<Vec<f64>>,
}

fn default_smote_k() -> usize {
    SMOTE_K_DEFAULT
}

fn default_adasyn_k() -> usize {
    ADASYN_K_DEFAULT
}

fn default_adasyn_beta() -> f64 {
    ADASYN_BETA_DEFAULT
}

fn default_enn_k() -> usize {
    ENN_K_DEFAULT
}

fn default_alpha_min() -> f64 {
    ALPHA_MIN_DEFAULT
}

impl Default for StrategyOptions {
    fn default() -> Self {
        Self {
            smote_k: SMOTE_K_DEFAULT,
            adasyn_k: ADASYN_K_DEFAULT,
            adasyn_beta: ADASYN_BETA_DEFAULT,
            enn_k: ENN_K_DEFAULT,
            alpha_min: ALPHA_MIN_DEFAULT,
            weight_table: None,
        }
    }
}

/// A dataset ready to train on, with one loss weight per row and notes
/// about how it was produced.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dataset: LabeledDataset,
    pub weights: Vec<f64>,
    pub notes: BTreeMap<String, String>,
}

/// Applies a strategy to a training set. Resampling strategies rewrite
/// the rows and weight everything 1; the filter strategy keeps the rows
/// and derives weights. Filter sampler `j` is seeded with `seed + j`.
pub fn prepare(
    ds: &LabeledDataset,
    strategy: &Strategy,
    opts: &StrategyOptions,
    seed: u64,
) -> Result<Prepared, TrainError> {
    let mut notes = BTreeMap::new();
    notes.insert("strategy".into(), strategy.to_string());
    match strategy {
        Strategy::None => Ok(Prepared { dataset: ds.clone(), weights: vec![1.0; ds.n()], notes }),
        Strategy::Resample(kind) => {
            let result = match kind {
                ResampleKind::Ros => random_oversample(ds, seed)?,
                ResampleKind::Smote => smote(ds, opts.smote_k, seed)?,
                ResampleKind::Adasyn => adasyn(ds, opts.adasyn_k, opts.adasyn_beta, seed)?,
                ResampleKind::Rus => random_undersample(ds, seed)?,
                ResampleKind::Tomek => tomek_links(ds)?,
                ResampleKind::Enn => enn(ds, opts.enn_k)?,
                ResampleKind::Oss => oss(ds, seed)?,
            };
            for (k, v) in &result.params {
                notes.insert(format!("resample.{k}"), v.clone());
            }
            notes.insert("resample.rows".into(), result.output_rows().to_string());
            let dataset = result.apply(ds)?;
            let weights = vec![1.0; dataset.n()];
            Ok(Prepared { dataset, weights, notes })
        }
        Strategy::FilterLoss(methods) => {
            let samplers: Vec<UndersamplerSpec> = methods
                .iter()
                .enumerate()
                .map(|(j, &method)| UndersamplerSpec {
                    method,
                    k: match method {
                        FilterMethod::Enn => Some(opts.enn_k),
                        _ => None,
                    },
                    seed: seed + j as u64,
                })
                .collect();
            let table = match &opts.weight_table {
                Some(alphas) => WeightTable::new(alphas.clone())?,
                None => default_weight_table(samplers.len(), opts.alpha_min)?,
            };
            let outcome = filter_weights(ds, &samplers, &table)?;
            for (name, kept) in &outcome.sampler_keeps {
                notes.insert(format!("filter.{name}.kept"), kept.to_string());
            }
            let mass: f64 = outcome.weights.as_slice().iter().sum();
            notes.insert("filter.weight_mass".into(), format!("{mass:.6}"));
            Ok(Prepared { dataset: ds.clone(), weights: outcome.weights.into_vec(), notes })
        }
    }
}

/// Restricts training to the deepest feature block plus the head, and
/// optionally redraws the head before fine-tuning starts.
pub fn apply_finetune_freeze(
    model: &mut Mlp,
    reinit_head: bool,
    head_seed: u64,
) -> Result<(), TrainError> {
    let names = model.group_names();
    let mut keep: Vec<&str> = Vec::new();
    if names.len() >= 2 {
        keep.push(&names[names.len() - 2]);
    }
    keep.push("output");
    model.set_trainable_only(&keep)?;
    if reinit_head {
        model.reinit_group("output", head_seed)?;
    }
    Ok(())
}
