//! Transfer benchmark: pretrain on a balanced source set, fine-tune on an
//! imbalanced, label-noisy target under a grid of imbalance strategies and
//! losses, and score everything on a held-out target split.
//!
//! Every random decision is seeded by hashing the base seed with string
//! tags (phase, strategy, loss, replicate), so a report is reproducible
//! from its config alone: rerunning yields byte-identical results and the
//! same results hash, while `meta` carries the non-reproducible parts
//! (timestamps, thread count).
//!
//! Within a replicate, the generated datasets and the pretrained model are
//! shared by every cell; cells only differ in how they prepare the target
//! training set and which loss drives fine-tuning. A failing cell records
//! its error and leaves the rest of the grid alone.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::time::{Instant, SystemTime, UNIX_EPOCH};
use thiserror::Error;

use crate::dataset::{stratified_split, synth_generate, DatasetError, LabeledDataset, SyntheticSpec};
use crate::losses::{LossFamily, LossSpec};
use crate::model::{Mlp, ModelError, ModelSpec};
use crate::trainer::{
    apply_finetune_freeze, prepare, train, Strategy, StrategyOptions, TrainConfig, TrainError,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("thread pool: {0}")]
    Pool(String),
}

// ── Config ────────────────────────────────────────────────────────────────

/// Epochs, batch size, and learning rate for one training phase.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseConfig {
    #[serde(default = "default_phase_epochs")]
    pub epochs: usize,
    #[serde(default = "default_phase_batch")]
    pub batch_size: usize,
    #[serde(default = "default_phase_lr")]
    pub lr: f64,
}

fn default_phase_epochs() -> usize {
    10
}

fn default_phase_batch() -> usize {
    32
}

fn default_phase_lr() -> f64 {
    0.01
}

impl Default for PhaseConfig {
    fn default() -> Self {
        Self { epochs: 10, batch_size: 32, lr: 0.01 }
    }
}

pub fn default_strategies() -> Vec<String> {
    [
        "none", "ros", "smote", "adasyn", "rus", "tomek", "enn", "oss", "filterloss:oss",
        "filterloss:enn", "filterloss:enn,oss",
    ]
    .map(String::from)
    .to_vec()
}

pub fn default_losses() -> Vec<String> {
    ["label_smooth", "focal", "focal_logits", "ls_focal"].map(String::from).to_vec()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    /// Balanced pretraining distribution. Its `seed` field is replaced by
    /// a derived per-replicate seed.
    pub source: SyntheticSpec,
    /// Imbalanced fine-tuning distribution, same classes and feature
    /// space; `seed` replaced per replicate.
    pub target: SyntheticSpec,
    #[serde(default = "default_test_frac")]
    pub test_frac: f64,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub pretrain: PhaseConfig,
    #[serde(default)]
    pub finetune: PhaseConfig,
    #[serde(default = "default_reinit")]
    pub reinit_head: bool,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<String>,
    #[serde(default = "default_losses")]
    pub losses: Vec<String>,
    #[serde(default = "default_cfg_gamma")]
    pub gamma: f64,
    #[serde(default = "default_cfg_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub strategy_opts: StrategyOptions,
    #[serde(default)]
    pub normalize_by_weight_sum: bool,
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}

fn default_name() -> String {
    "transfer_imbalance".into()
}

fn default_replicates() -> usize {
    5
}

fn default_test_frac() -> f64 {
    0.3
}

fn default_reinit() -> bool {
    true
}

fn default_cfg_gamma() -> f64 {
    crate::losses::GAMMA_DEFAULT
}

fn default_cfg_epsilon() -> f64 {
    crate::losses::EPSILON_DEFAULT
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            name: default_name(),
            seed: 0,
            replicates: 5,
            source: SyntheticSpec {
                n_classes: 6,
                class_counts: vec![500; 6],
                dim: 32,
                cluster_spread: 3.0,
                noise_floor: 0.3,
                label_noise_frac: 0.0,
                seed: 0,
            },
            target: SyntheticSpec {
                n_classes: 6,
                class_counts: vec![500, 400, 300, 60, 25, 15],
                dim: 32,
                cluster_spread: 3.0,
                noise_floor: 1.2,
                label_noise_frac: 0.10,
                seed: 0,
            },
            test_frac: 0.3,
            model: ModelSpec::default(),
            pretrain: PhaseConfig::default(),
            finetune: PhaseConfig::default(),
            reinit_head: true,
            strategies: default_strategies(),
            losses: default_losses(),
            gamma: crate::losses::GAMMA_DEFAULT,
            epsilon: crate::losses::EPSILON_DEFAULT,
            strategy_opts: StrategyOptions::default(),
            normalize_by_weight_sum: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |msg: String| Err(ExperimentError::Config(msg));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} unsupported, this build reads {SCHEMA_VERSION}",
                self.schema_version
            ));
        }
        if self.replicates == 0 {
            return bad("replicates must be positive".into());
        }
        self.source.validate().map_err(ExperimentError::Dataset)?;
        self.target.validate().map_err(ExperimentError::Dataset)?;
        if self.source.dim != self.target.dim {
            return bad(format!(
                "source dim {} != target dim {}",
                self.source.dim, self.target.dim
            ));
        }
        if self.source.n_classes != self.target.n_classes {
            return bad(format!(
                "source has {} classes, target {}",
                self.source.n_classes, self.target.n_classes
            ));
        }
        if !(self.test_frac > 0.0 && self.test_frac < 1.0) {
            return bad(format!("test_frac {} must be in (0, 1)", self.test_frac));
        }
        for phase in [&self.pretrain, &self.finetune] {
            if phase.epochs == 0 || phase.batch_size == 0 {
                return bad("phase epochs and batch_size must be positive".into());
            }
            if !(phase.lr.is_finite() && phase.lr > 0.0) {
                return bad(format!("phase lr {} must be finite and > 0", phase.lr));
            }
        }
        if self.strategies.is_empty() || self.losses.is_empty() {
            return bad("strategies and losses must be non-empty".into());
        }
        for s in &self.strategies {
            Strategy::parse(s).map_err(|e| ExperimentError::Config(e.to_string()))?;
        }
        for l in &self.losses {
            let mut spec = LossSpec::from_name(l)
                .ok_or_else(|| ExperimentError::Config(format!("unknown loss {l:?}")))?;
            spec.gamma = self.gamma;
            spec.epsilon = self.epsilon;
            spec.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
        }
        Ok(())
    }

    fn loss_spec(&self, name: &str) -> LossSpec {
        let mut spec = LossSpec::from_name(name).expect("validated");
        spec.gamma = self.gamma;
        spec.epsilon = self.epsilon;
        spec
    }
}

// ── Seeds ─────────────────────────────────────────────────────────────────

/// Hashes the base seed with string tags into a derived seed. Used for
/// every phase so changing one tag reshuffles only that phase.
pub fn derive_seed(base: u64, tags: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    for t in tags {
        h.update([0u8]);
        h.update(t.as_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 is long enough"))
}

// ── Results ───────────────────────────────────────────────────────────────

/// One (strategy, loss, replicate) outcome. On failure `error` is set and
/// the metric fields stay at their zero defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellResult {
    pub strategy: String,
    pub loss: String,
    pub replicate: usize,
    pub error: Option<String>,
    pub train_rows: usize,
    pub weight_mass: f64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub epoch_train_loss: Vec<f64>,
    pub epoch_eval_accuracy: Vec<f64>,
    pub epoch_eval_macro_f1: Vec<f64>,
}

/// Replicate-averaged view of one (strategy, loss) pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: String,
    pub loss: String,
    pub replicates: usize,
    pub failed: usize,
    pub mean_macro_f1: f64,
    pub std_macro_f1: f64,
    pub mean_accuracy: f64,
    /// Mean over replicates of the within-run standard deviation of eval
    /// accuracy, first epoch excluded. Lower is steadier fine-tuning.
    pub mean_eval_accuracy_std: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchMeta {
    pub created_unix: u64,
    pub duration_secs: f64,
    pub jobs: usize,
    pub results_hash: String,
}

/// Everything derived from the config and seeds alone; hashed for
/// reproducibility checks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchResults {
    pub config: ExperimentConfig,
    pub cells: Vec<CellResult>,
    pub summaries: Vec<StrategySummary>,
}

impl BenchResults {
    pub fn summary_for(&self, strategy: &str, loss: &str) -> Option<&StrategySummary> {
        self.summaries.iter().find(|s| s.strategy == strategy && s.loss == loss)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub meta: BenchMeta,
    pub results: BenchResults,
}

pub fn results_hash(results: &BenchResults) -> String {
    let bytes = serde_json::to_vec(results).expect("results serialize");
    let digest = Sha256::digest(&bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn population_std(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Spread of eval accuracy across epochs, skipping the first epoch so the
/// initial adjustment step does not dominate.
pub fn eval_stability_std(epoch_accuracy: &[f64]) -> f64 {
    if epoch_accuracy.len() < 2 {
        return 0.0;
    }
    population_std(&epoch_accuracy[1..])
}

// ── Running ───────────────────────────────────────────────────────────────

/// The datasets one replicate works with.
pub struct ReplicateData {
    pub source: LabeledDataset,
    pub target: LabeledDataset,
    pub target_train: LabeledDataset,
    pub target_test: LabeledDataset,
}

/// Generates replicate `r`'s datasets from derived seeds.
pub fn build_replicate(
    config: &ExperimentConfig,
    r: usize,
) -> Result<ReplicateData, ExperimentError> {
    let rep = r.to_string();
    let mut source_spec = config.source.clone();
    source_spec.seed = derive_seed(config.seed, &["source", &rep]);
    let mut target_spec = config.target.clone();
    target_spec.seed = derive_seed(config.seed, &["target", &rep]);

    // same class count and dim means both draws share centroids, which is
    // the point of transferring
    let source = synth_generate(&source_spec, None)?;
    let target = synth_generate(&target_spec, None)?;
    let split_seed = derive_seed(config.seed, &["split", &rep]);
    let (target_train, target_test) = stratified_split(&target, config.test_frac, split_seed)?;
    Ok(ReplicateData { source, target, target_train, target_test })
}

fn pretrain_model(
    config: &ExperimentConfig,
    r: usize,
    source: &LabeledDataset,
) -> Result<Mlp, ExperimentError> {
    let rep = r.to_string();
    let mut model = Mlp::init(
        &config.model,
        source.dim(),
        source.n_classes(),
        derive_seed(config.seed, &["model", &rep]),
    )?;
    let cfg = TrainConfig {
        epochs: config.pretrain.epochs,
        batch_size: config.pretrain.batch_size,
        lr: config.pretrain.lr,
        loss: LossSpec::new(LossFamily::Ce),
        normalize_by_weight_sum: false,
        seed: derive_seed(config.seed, &["pretrain", &rep]),
    };
    train(&mut model, source, &vec![1.0; source.n()], &cfg, None)?;
    Ok(model)
}

fn run_cell(
    config: &ExperimentConfig,
    r: usize,
    pretrained: &Mlp,
    data: &ReplicateData,
    strategy_str: &str,
    loss_str: &str,
) -> CellResult {
    let mut cell = CellResult {
        strategy: strategy_str.to_string(),
        loss: loss_str.to_string(),
        replicate: r,
        error: None,
        train_rows: 0,
        weight_mass: 0.0,
        accuracy: 0.0,
        macro_f1: 0.0,
        weighted_f1: 0.0,
        epoch_train_loss: Vec::new(),
        epoch_eval_accuracy: Vec::new(),
        epoch_eval_macro_f1: Vec::new(),
    };

    let rep = r.to_string();
    let outcome: Result<(), TrainError> = (|| {
        let strategy = Strategy::parse(strategy_str)?;
        let prepared = prepare(
            &data.target_train,
            &strategy,
            &config.strategy_opts,
            derive_seed(config.seed, &["resample", strategy_str, loss_str, &rep]),
        )?;
        cell.train_rows = prepared.dataset.n();
        cell.weight_mass = prepared.weights.iter().sum();

        let mut model = pretrained.clone();
        apply_finetune_freeze(
            &mut model,
            config.reinit_head,
            derive_seed(config.seed, &["head", strategy_str, loss_str, &rep]),
        )?;
        let cfg = TrainConfig {
            epochs: config.finetune.epochs,
            batch_size: config.finetune.batch_size,
            lr: config.finetune.lr,
            loss: config.loss_spec(loss_str),
            normalize_by_weight_sum: config.normalize_by_weight_sum,
            seed: derive_seed(config.seed, &["finetune", strategy_str, loss_str, &rep]),
        };
        let records =
            train(&mut model, &prepared.dataset, &prepared.weights, &cfg, Some(&data.target_test))?;
        for rec in &records {
            cell.epoch_train_loss.push(rec.train_loss);
            let eval = rec.eval.as_ref().expect("eval set was supplied");
            cell.epoch_eval_accuracy.push(eval.accuracy);
            cell.epoch_eval_macro_f1.push(eval.macro_f1);
        }
        let last = records.last().expect("at least one epoch").eval.as_ref().unwrap();
        cell.accuracy = last.accuracy;
        cell.macro_f1 = last.macro_f1;
        cell.weighted_f1 = last.weighted_f1;
        Ok(())
    })();

    if let Err(e) = outcome {
        cell.error = Some(e.to_string());
        cell.train_rows = 0;
        cell.weight_mass = 0.0;
        cell.epoch_train_loss.clear();
        cell.epoch_eval_accuracy.clear();
        cell.epoch_eval_macro_f1.clear();
    }
    cell
}

fn summarize(config: &ExperimentConfig, cells: &[CellResult]) -> Vec<StrategySummary> {
    let mut out = Vec::new();
    for s in &config.strategies {
        for l in &config.losses {
            let mine: Vec<&CellResult> =
                cells.iter().filter(|c| &c.strategy == s && &c.loss == l).collect();
            let ok: Vec<&&CellResult> = mine.iter().filter(|c| c.error.is_none()).collect();
            let macro_f1s: Vec<f64> = ok.iter().map(|c| c.macro_f1).collect();
            let accs: Vec<f64> = ok.iter().map(|c| c.accuracy).collect();
            let stabilities: Vec<f64> =
                ok.iter().map(|c| eval_stability_std(&c.epoch_eval_accuracy)).collect();
            let mean = |xs: &[f64]| {
                if xs.is_empty() {
                    0.0
                } else {
                    xs.iter().sum::<f64>() / xs.len() as f64
                }
            };
            out.push(StrategySummary {
                strategy: s.clone(),
                loss: l.clone(),
                replicates: mine.len(),
                failed: mine.len() - ok.len(),
                mean_macro_f1: mean(&macro_f1s),
                std_macro_f1: population_std(&macro_f1s),
                mean_accuracy: mean(&accs),
                mean_eval_accuracy_std: mean(&stabilities),
            });
        }
    }
    out
}

/// Runs the whole grid. `jobs` caps the worker threads, 0 meaning one per
/// core. Scheduling never affects results, only wall time.
pub fn run_grid(config: &ExperimentConfig, jobs: usize) -> Result<BenchReport, ExperimentError> {
    config.validate()?;
    let started = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| ExperimentError::Pool(e.to_string()))?;

    let tasks: Vec<(String, String)> = config
        .strategies
        .iter()
        .flat_map(|s| config.losses.iter().map(move |l| (s.clone(), l.clone())))
        .collect();

    let mut cells = Vec::with_capacity(config.replicates * tasks.len());
    for r in 0..config.replicates {
        let data = build_replicate(config, r)?;
        let pretrained = pretrain_model(config, r, &data.source)?;
        let mut rep_cells: Vec<CellResult> = pool.install(|| {
            tasks
                .par_iter()
                .map(|(s, l)| run_cell(config, r, &pretrained, &data, s, l))
                .collect()
        });
        cells.append(&mut rep_cells);
    }

    let summaries = summarize(config, &cells);
    let results = BenchResults { config: config.clone(), cells, summaries };
    let hash = results_hash(&results);
    let created_unix =
        SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    Ok(BenchReport {
        meta: BenchMeta {
            created_unix,
            duration_secs: started.elapsed().as_secs_f64(),
            jobs,
            results_hash: hash,
        },
        results,
    })
}
