//! Command line front end. Every command reads an optional JSON config
//! (defaults apply when omitted), writes machine-readable JSON reports
//! shaped as `{ meta, results }`, and exits with 0 on success, 1 on bad
//! command line usage, 2 on invalid config or input, 3 on runtime failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use filterloss::analysis::{
    centroid_stats, cross_dataset_report, pairwise_stats, ClassDelta, SimilarityReport,
    DEFAULT_MAX_PAIRS_PER_CLASS,
};
use filterloss::dataset::{
    class_distribution, imbalance_ratio, load_csv, save_csv, ClassShare, LabeledDataset,
};
use filterloss::experiment::{
    build_replicate, derive_seed, run_grid, ExperimentConfig,
};
use filterloss::losses::{LossFamily, LossSpec};
use filterloss::model::Mlp;
use filterloss::trainer::{
    apply_finetune_freeze, prepare, train, EpochRecord, EvalReport, Strategy, TrainConfig,
};
use filterloss::weight_filter::{
    default_weight_table, filter_weights, weight_bands, FilterMethod, UndersamplerSpec,
    WeightBand, WeightTable,
};

#[derive(Parser)]
#[command(
    name = "filterloss",
    version,
    about = "Ensemble-filter sample weighting and resampling tools for imbalanced tabular training"
)]
struct Cli {
    /// JSON experiment config; built-in defaults apply when omitted
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Where the command writes its main output
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Overrides the config's base seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for bench, 0 meaning one per core
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write the source/target datasets of replicate 0 as CSV files
    Gen,
    /// Class-similarity statistics for one dataset, or deltas between two
    Analyze {
        /// First dataset (CSV)
        #[arg(long)]
        a: PathBuf,
        /// Second dataset (CSV); adds per-class deltas b minus a
        #[arg(long)]
        b: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ModeArg::Pairwise)]
        mode: ModeArg,
        /// Sampled pairs per class before subsampling kicks in
        #[arg(long)]
        max_pairs: Option<usize>,
    },
    /// Rewrite a dataset with one resampling method
    Resample {
        /// Method: ros, smote, adasyn, rus, tomek, enn, or oss
        #[arg(long)]
        method: String,
        /// Input dataset (CSV)
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Ensemble filter weights for every row of a dataset
    Weights {
        /// Input dataset (CSV)
        #[arg(long = "in")]
        input: PathBuf,
        /// Comma-separated voting undersamplers, e.g. enn,oss
        #[arg(long, default_value = "enn,oss")]
        samplers: String,
        /// Weight for rows no sampler keeps
        #[arg(long)]
        alpha_min: Option<f64>,
        /// Explicit weight table, e.g. 0.1,0.55,1.0
        #[arg(long)]
        table: Option<String>,
    },
    /// Train a fresh model on a dataset with plain cross entropy
    Pretrain {
        /// Training dataset (CSV)
        #[arg(long)]
        data: PathBuf,
        /// Where to write the epoch report instead of stdout
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Adapt a pretrained model to a dataset under a strategy and loss
    Finetune {
        /// Pretrained model checkpoint
        #[arg(long)]
        model: PathBuf,
        /// Fine-tuning dataset (CSV)
        #[arg(long)]
        train: PathBuf,
        /// Held-out dataset (CSV) evaluated after every epoch
        #[arg(long)]
        eval: Option<PathBuf>,
        /// Strategy: none, a resampler name, or filterloss:<samplers>
        #[arg(long, default_value = "none")]
        strategy: String,
        /// Loss: ce, label_smooth, focal, focal_logits, or ls_focal
        #[arg(long, default_value = "ce")]
        loss: String,
        /// Where to write the epoch report instead of stdout
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run the full strategy-by-loss benchmark grid
    Bench,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Pairwise,
    VsCentroid,
}

// ── Failure plumbing ──────────────────────────────────────────────────────

struct Failure {
    code: i32,
    message: String,
}

fn invalid(msg: impl ToString) -> Failure {
    Failure { code: 2, message: msg.to_string() }
}

fn runtime(msg: impl ToString) -> Failure {
    Failure { code: 3, message: msg.to_string() }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(f) = run(cli) {
        eprintln!("error: {}", f.message);
        std::process::exit(f.code);
    }
}

// ── Report shape ──────────────────────────────────────────────────────────

#[derive(Serialize)]
struct CliMeta {
    command: String,
    created_unix: u64,
    duration_secs: f64,
    seed: u64,
}

#[derive(Serialize)]
struct CliReport<T: Serialize> {
    meta: CliMeta,
    results: T,
}

fn emit<T: Serialize>(out: Option<&Path>, report: &T) -> Result<(), Failure> {
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| runtime(format!("serialize report: {e}")))?;
    match out {
        Some(path) => fs::write(path, json + "\n")
            .map_err(|e| runtime(format!("write {}: {e}", path.display()))),
        None => {
            println!("{json}");
            Ok(())
        }
    }
}

fn finish<T: Serialize>(
    command: &str,
    seed: u64,
    started: Instant,
    out: Option<&Path>,
    results: T,
) -> Result<(), Failure> {
    let meta = CliMeta {
        command: command.into(),
        created_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        duration_secs: started.elapsed().as_secs_f64(),
        seed,
    };
    emit(out, &CliReport { meta, results })
}

// ── Shared loading ────────────────────────────────────────────────────────

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| invalid(format!("read config {}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| invalid(format!("parse config {}: {e}", p.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(|e| invalid(e))?;
    Ok(cfg)
}

fn load_dataset(path: &Path) -> Result<LabeledDataset, Failure> {
    load_csv(path).map_err(|e| invalid(format!("load {}: {e}", path.display())))
}

// ── Commands ──────────────────────────────────────────────────────────────

fn run(cli: Cli) -> Result<(), Failure> {
    let started = Instant::now();
    let cfg = load_config(cli.config.as_deref(), cli.seed)?;
    let out = cli.out.as_deref();
    match cli.cmd {
        Cmd::Gen => cmd_gen(&cfg, out, started),
        Cmd::Analyze { a, b, mode, max_pairs } => {
            cmd_analyze(&cfg, out, started, &a, b.as_deref(), mode, max_pairs)
        }
        Cmd::Resample { method, input } => cmd_resample(&cfg, out, started, &method, &input),
        Cmd::Weights { input, samplers, alpha_min, table } => {
            cmd_weights(&cfg, out, started, &input, &samplers, alpha_min, table.as_deref())
        }
        Cmd::Pretrain { data, report } => {
            cmd_pretrain(&cfg, out, started, &data, report.as_deref())
        }
        Cmd::Finetune { model, train, eval, strategy, loss, report } => cmd_finetune(
            &cfg,
            out,
            started,
            &model,
            &train,
            eval.as_deref(),
            &strategy,
            &loss,
            report.as_deref(),
        ),
        Cmd::Bench => cmd_bench(&cfg, out, started, cli.jobs),
    }
}

#[derive(Serialize)]
struct FileSummary {
    file: String,
    rows: usize,
    classes: Vec<ClassShare>,
    imbalance_ratio: f64,
}

#[derive(Serialize)]
struct GenResults {
    dir: String,
    files: Vec<FileSummary>,
}

fn cmd_gen(cfg: &ExperimentConfig, out: Option<&Path>, started: Instant) -> Result<(), Failure> {
    let dir = out.ok_or_else(|| invalid("gen needs --out <directory>"))?;
    fs::create_dir_all(dir).map_err(|e| runtime(format!("create {}: {e}", dir.display())))?;
    let data = build_replicate(cfg, 0).map_err(runtime)?;

    let sets: [(&str, &LabeledDataset); 4] = [
        ("source.csv", &data.source),
        ("target.csv", &data.target),
        ("target_train.csv", &data.target_train),
        ("target_test.csv", &data.target_test),
    ];
    let mut files = Vec::new();
    for (name, ds) in sets {
        let path = dir.join(name);
        save_csv(ds, &path).map_err(runtime)?;
        files.push(FileSummary {
            file: name.into(),
            rows: ds.n(),
            classes: class_distribution(ds),
            imbalance_ratio: imbalance_ratio(ds),
        });
    }
    let results = GenResults { dir: dir.display().to_string(), files };
    finish("gen", cfg.seed, started, Some(&dir.join("gen_report.json")), results)
}

#[derive(Serialize)]
struct AnalyzeResults {
    a: SimilarityReport,
    b: Option<SimilarityReport>,
    /// Per-class change from a to b, matched by class name.
    deltas: Option<Vec<ClassDelta>>,
}

fn cmd_analyze(
    cfg: &ExperimentConfig,
    out: Option<&Path>,
    started: Instant,
    a_path: &Path,
    b_path: Option<&Path>,
    mode: ModeArg,
    max_pairs: Option<usize>,
) -> Result<(), Failure> {
    let a = load_dataset(a_path)?;
    let max_pairs = max_pairs.unwrap_or(DEFAULT_MAX_PAIRS_PER_CLASS);
    let stats = |ds: &LabeledDataset, seed: u64| match mode {
        ModeArg::Pairwise => pairwise_stats(ds, max_pairs, seed),
        ModeArg::VsCentroid => centroid_stats(ds, max_pairs, seed),
    };
    let mut results = AnalyzeResults { a: stats(&a, cfg.seed), b: None, deltas: None };
    if let Some(bp) = b_path {
        let b = load_dataset(bp)?;
        let shared: Vec<String> = a
            .class_names()
            .iter()
            .filter(|n| b.class_names().contains(n))
            .cloned()
            .collect();
        if shared.is_empty() {
            return Err(invalid("the two datasets share no class names"));
        }
        let deltas =
            cross_dataset_report(&a, &b, &shared, max_pairs, cfg.seed).map_err(invalid)?;
        results.b = Some(stats(&b, cfg.seed));
        results.deltas = Some(deltas);
    }
    finish("analyze", cfg.seed, started, out, results)
}

#[derive(Serialize)]
struct ResampleResults {
    method: String,
    input_rows: usize,
    output_rows: usize,
    input_classes: Vec<ClassShare>,
    output_classes: Vec<ClassShare>,
    notes: std::collections::BTreeMap<String, String>,
    output_file: String,
}

fn cmd_resample(
    cfg: &ExperimentConfig,
    out: Option<&Path>,
    started: Instant,
    method: &str,
    input: &Path,
) -> Result<(), Failure> {
    let out_path = out.ok_or_else(|| invalid("resample needs --out <csv>"))?;
    let strategy = match Strategy::parse(method) {
        Ok(s @ Strategy::Resample(_)) => s,
        _ => return Err(invalid(format!("unknown resampling method {method:?}"))),
    };
    let ds = load_dataset(input)?;
    let prep = prepare(&ds, &strategy, &cfg.strategy_opts, cfg.seed).map_err(runtime)?;
    save_csv(&prep.dataset, out_path).map_err(runtime)?;
    let results = ResampleResults {
        method: method.into(),
        input_rows: ds.n(),
        output_rows: prep.dataset.n(),
        input_classes: class_distribution(&ds),
        output_classes: class_distribution(&prep.dataset),
        notes: prep.notes,
        output_file: out_path.display().to_string(),
    };
    finish("resample", cfg.seed, started, None, results)
}

#[derive(Serialize)]
struct WeightsResults {
    samplers: Vec<String>,
    table: Vec<f64>,
    weights: Vec<f64>,
    bands: Vec<WeightBand>,
    sampler_keeps: Vec<(String, usize)>,
    weight_mass: f64,
}

fn cmd_weights(
    cfg: &ExperimentConfig,
    out: Option<&Path>,
    started: Instant,
    input: &Path,
    samplers: &str,
    alpha_min: Option<f64>,
    table: Option<&str>,
) -> Result<(), Failure> {
    let ds = load_dataset(input)?;
    let mut specs = Vec::new();
    for (j, token) in samplers.split(',').enumerate() {
        let method = FilterMethod::parse(token)
            .ok_or_else(|| invalid(format!("unknown sampler {token:?}")))?;
        specs.push(UndersamplerSpec {
            method,
            k: match method {
                FilterMethod::Enn => Some(cfg.strategy_opts.enn_k),
                _ => None,
            },
            seed: cfg.seed + j as u64,
        });
    }
    if specs.is_empty() {
        return Err(invalid("no samplers given"));
    }
    let table = match table {
        Some(text) => {
            let alphas: Result<Vec<f64>, _> =
                text.split(',').map(|t| t.trim().parse::<f64>()).collect();
            let alphas = alphas.map_err(|e| invalid(format!("parse table: {e}")))?;
            WeightTable::new(alphas).map_err(invalid)?
        }
        None => {
            let am = alpha_min.unwrap_or(cfg.strategy_opts.alpha_min);
            default_weight_table(specs.len(), am).map_err(invalid)?
        }
    };
    let outcome = filter_weights(&ds, &specs, &table).map_err(runtime)?;
    let results = WeightsResults {
        samplers: specs.iter().map(|s| s.method.name().to_string()).collect(),
        table: table.alphas().to_vec(),
        weights: outcome.weights.as_slice().to_vec(),
        bands: weight_bands(&outcome.agreement_counts, &table),
        sampler_keeps: outcome.sampler_keeps,
        weight_mass: outcome.weights.as_slice().iter().sum(),
    };
    finish("weights", cfg.seed, started, out, results)
}

#[derive(Serialize)]
struct PretrainResults {
    model_file: String,
    rows: usize,
    classes: Vec<String>,
    epochs: Vec<EpochRecord>,
}

fn cmd_pretrain(
    cfg: &ExperimentConfig,
    out: Option<&Path>,
    started: Instant,
    data: &Path,
    report: Option<&Path>,
) -> Result<(), Failure> {
    let out_path = out.ok_or_else(|| invalid("pretrain needs --out <model file>"))?;
    let ds = load_dataset(data)?;
    let mut model = Mlp::init(
        &cfg.model,
        ds.dim(),
        ds.n_classes(),
        derive_seed(cfg.seed, &["model", "0"]),
    )
    .map_err(invalid)?;
    let train_cfg = TrainConfig {
        epochs: cfg.pretrain.epochs,
        batch_size: cfg.pretrain.batch_size,
        lr: cfg.pretrain.lr,
        loss: LossSpec::new(LossFamily::Ce),
        normalize_by_weight_sum: false,
        seed: derive_seed(cfg.seed, &["pretrain", "0"]),
    };
    let epochs =
        train(&mut model, &ds, &vec![1.0; ds.n()], &train_cfg, None).map_err(runtime)?;
    model.set_class_names(ds.class_names().to_vec()).map_err(runtime)?;
    model.save(out_path).map_err(runtime)?;
    let results = PretrainResults {
        model_file: out_path.display().to_string(),
        rows: ds.n(),
        classes: ds.class_names().to_vec(),
        epochs,
    };
    finish("pretrain", cfg.seed, started, report, results)
}

#[derive(Serialize)]
struct FinetuneResults {
    strategy: String,
    loss: String,
    train_rows: usize,
    weight_mass: f64,
    notes: std::collections::BTreeMap<String, String>,
    epochs: Vec<EpochRecord>,
    final_eval: Option<EvalReport>,
    model_file: Option<String>,
}

#[allow(clippy::too_many_arguments)]
fn cmd_finetune(
    cfg: &ExperimentConfig,
    out: Option<&Path>,
    started: Instant,
    model_path: &Path,
    train_path: &Path,
    eval_path: Option<&Path>,
    strategy_str: &str,
    loss_str: &str,
    report: Option<&Path>,
) -> Result<(), Failure> {
    let mut model = Mlp::load(model_path)
        .map_err(|e| invalid(format!("load model {}: {e}", model_path.display())))?;
    let align = |ds: LabeledDataset, what: &str| -> Result<LabeledDataset, Failure> {
        match model.class_names() {
            Some(names) => ds
                .align_classes(names)
                .map_err(|e| invalid(format!("{what} classes do not match the model: {e}"))),
            None => Ok(ds),
        }
    };
    let train_ds = align(load_dataset(train_path)?, "training")?;
    let eval_ds = match eval_path {
        Some(p) => Some(align(load_dataset(p)?, "evaluation")?),
        None => None,
    };

    let strategy = Strategy::parse(strategy_str).map_err(invalid)?;
    let mut loss = LossSpec::from_name(loss_str)
        .ok_or_else(|| invalid(format!("unknown loss {loss_str:?}")))?;
    loss.gamma = cfg.gamma;
    loss.epsilon = cfg.epsilon;
    loss.validate().map_err(invalid)?;

    let prep = prepare(
        &train_ds,
        &strategy,
        &cfg.strategy_opts,
        derive_seed(cfg.seed, &["resample", strategy_str, loss_str, "0"]),
    )
    .map_err(runtime)?;
    apply_finetune_freeze(
        &mut model,
        cfg.reinit_head,
        derive_seed(cfg.seed, &["head", strategy_str, loss_str, "0"]),
    )
    .map_err(runtime)?;
    let train_cfg = TrainConfig {
        epochs: cfg.finetune.epochs,
        batch_size: cfg.finetune.batch_size,
        lr: cfg.finetune.lr,
        loss,
        normalize_by_weight_sum: cfg.normalize_by_weight_sum,
        seed: derive_seed(cfg.seed, &["finetune", strategy_str, loss_str, "0"]),
    };
    let epochs = train(&mut model, &prep.dataset, &prep.weights, &train_cfg, eval_ds.as_ref())
        .map_err(runtime)?;
    let final_eval = epochs.last().and_then(|r| r.eval.clone());
    if let Some(p) = out {
        model.save(p).map_err(runtime)?;
    }
    let results = FinetuneResults {
        strategy: strategy_str.into(),
        loss: loss_str.into(),
        train_rows: prep.dataset.n(),
        weight_mass: prep.weights.iter().sum(),
        notes: prep.notes,
        epochs,
        final_eval,
        model_file: out.map(|p| p.display().to_string()),
    };
    finish("finetune", cfg.seed, started, report, results)
}

fn cmd_bench(
    cfg: &ExperimentConfig,
    out: Option<&Path>,
    started: Instant,
    jobs: usize,
) -> Result<(), Failure> {
    let report = run_grid(cfg, jobs).map_err(runtime)?;
    eprintln!(
        "bench finished in {:.1}s, results hash {}",
        started.elapsed().as_secs_f64(),
        report.meta.results_hash
    );
    emit(out, &report)
}
