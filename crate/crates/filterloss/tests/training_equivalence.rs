//! Training with 0/1 row weights through the public `prepare` + `train`
//! path is the same computation as training on the physically reduced
//! dataset, once the learning rate absorbs the kept fraction.

use filterloss::dataset::{synth_generate, SyntheticSpec};
use filterloss::losses::{LossFamily, LossSpec};
use filterloss::model::{Mlp, ModelSpec};
use filterloss::trainer::{
    prepare, train, ResampleKind, Strategy, StrategyOptions, TrainConfig,
};
use filterloss::weight_filter::FilterMethod;
use ndarray::Array2;

fn max_gap(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let denom = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0f64, f64::max) / denom
}

#[test]
fn binary_weights_track_subset_training_epoch_by_epoch() {
    let spec = SyntheticSpec {
        n_classes: 3,
        class_counts: vec![40, 25, 12],
        dim: 5,
        cluster_spread: 1.4,
        noise_floor: 0.9,
        label_noise_frac: 0.12,
        seed: 2024,
    };
    let ds = synth_generate(&spec, None).expect("dataset");

    let opts = StrategyOptions { weight_table: Some(vec![0.0, 1.0]), ..Default::default() };
    let filtered = prepare(&ds, &Strategy::FilterLoss(vec![FilterMethod::Enn]), &opts, 7)
        .expect("filter strategy");
    let reduced =
        prepare(&ds, &Strategy::Resample(ResampleKind::Enn), &opts, 7).expect("enn strategy");

    let kept = reduced.dataset.n();
    assert!(kept > 0 && kept < ds.n(), "editing removed nothing; the comparison is vacuous");
    let mass: f64 = filtered.weights.iter().sum();
    assert_eq!(mass as usize, kept, "both strategies must agree on the kept rows");
    let frac = kept as f64 / ds.n() as f64;

    let arch = ModelSpec { hidden: vec![10, 10], ..ModelSpec::default() };
    let start = Mlp::init(&arch, ds.dim(), ds.n_classes(), 3).expect("model");
    let eta = 0.08;

    let mut weighted_model = start.clone();
    let weighted_cfg = TrainConfig {
        epochs: 5,
        batch_size: ds.n(),
        lr: eta,
        loss: LossSpec::new(LossFamily::Ce),
        normalize_by_weight_sum: false,
        seed: 11,
    };
    let weighted_log =
        train(&mut weighted_model, &filtered.dataset, &filtered.weights, &weighted_cfg, None)
            .expect("weighted run");

    let mut subset_model = start;
    let subset_cfg = TrainConfig {
        epochs: 5,
        batch_size: kept,
        lr: eta * frac,
        loss: LossSpec::new(LossFamily::Ce),
        normalize_by_weight_sum: false,
        seed: 11,
    };
    let ones = vec![1.0; kept];
    let subset_log =
        train(&mut subset_model, &reduced.dataset, &ones, &subset_cfg, None).expect("subset run");

    for (w, s) in weighted_log.iter().zip(subset_log.iter()) {
        let scaled = frac * s.train_loss;
        let rel = (w.train_loss - scaled).abs() / scaled.abs().max(1e-30);
        assert!(
            rel <= 1e-10,
            "epoch {}: weighted loss {:e} vs scaled subset loss {scaled:e}",
            w.epoch,
            w.train_loss
        );
    }

    let probe_w = weighted_model.forward(ds.features().view()).expect("probe");
    let probe_s = subset_model.forward(ds.features().view()).expect("probe");
    let gap = max_gap(&probe_w, &probe_s);
    assert!(gap <= 1e-10, "final models disagree on the full dataset by {gap:e}");
}

#[test]
fn normalized_reduction_removes_the_rate_rescaling() {
    let spec = SyntheticSpec {
        n_classes: 2,
        class_counts: vec![30, 18],
        dim: 4,
        cluster_spread: 1.2,
        noise_floor: 1.0,
        label_noise_frac: 0.15,
        seed: 515,
    };
    let ds = synth_generate(&spec, None).expect("dataset");

    let opts = StrategyOptions { weight_table: Some(vec![0.0, 1.0]), ..Default::default() };
    let filtered = prepare(&ds, &Strategy::FilterLoss(vec![FilterMethod::Enn]), &opts, 3)
        .expect("filter strategy");
    let reduced =
        prepare(&ds, &Strategy::Resample(ResampleKind::Enn), &opts, 3).expect("enn strategy");
    let kept = reduced.dataset.n();
    assert!(kept > 0 && kept < ds.n());

    // dividing by the weight mass instead of the batch size makes the two
    // runs agree at the same learning rate
    let arch = ModelSpec { hidden: vec![8], ..ModelSpec::default() };
    let start = Mlp::init(&arch, ds.dim(), ds.n_classes(), 9).expect("model");
    let cfg = |n: usize| TrainConfig {
        epochs: 4,
        batch_size: n,
        lr: 0.1,
        loss: LossSpec::new(LossFamily::Ce),
        normalize_by_weight_sum: true,
        seed: 21,
    };

    let mut weighted_model = start.clone();
    train(&mut weighted_model, &filtered.dataset, &filtered.weights, &cfg(ds.n()), None)
        .expect("weighted run");
    let mut subset_model = start;
    let ones = vec![1.0; kept];
    train(&mut subset_model, &reduced.dataset, &ones, &cfg(kept), None).expect("subset run");

    let probe_w = weighted_model.forward(ds.features().view()).expect("probe");
    let probe_s = subset_model.forward(ds.features().view()).expect("probe");
    let gap = max_gap(&probe_w, &probe_s);
    assert!(gap <= 1e-10, "final models disagree on the full dataset by {gap:e}");
}
