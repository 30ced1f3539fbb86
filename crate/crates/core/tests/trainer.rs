use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rscn::config::ExperimentConfig;
use rscn::data::Dataset;
use rscn::metrics::clustering_accuracy;
use rscn::model::Model;
use rscn::spectral::make_pseudo_labels;
use rscn::train::{pretrain_autoencoder, pretrain_dscnet, train_full, train_pipeline, Stage, TrainLog};
use rscn::Error;

fn synth_config() -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/synth.toml");
    ExperimentConfig::load(&path, &[]).unwrap()
}

fn setup(cfg: &ExperimentConfig) -> (Dataset<f64>, Model<f64>) {
    let data = cfg.data.load::<f64>(cfg.seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = Model::new(&cfg.architecture, &data.samples.shape()[1..], data.k, &mut rng).unwrap();
    (data, model)
}

fn totals(log: &TrainLog) -> Vec<u64> {
    log.records().iter().map(|r| r.total.to_bits()).collect()
}

#[test]
fn autoencoder_loss_halves_within_fifty_epochs() {
    let mut cfg = synth_config();
    cfg.schedule.ae_epochs = 50;
    let (data, mut model) = setup(&cfg);
    let mut log = TrainLog::new();
    pretrain_autoencoder(&mut model, data.unlabeled(), &cfg, &mut log).unwrap();
    let rec: Vec<f64> = log.stage(Stage::Autoencoder).map(|r| r.reconstruction).collect();
    assert_eq!(rec.len(), 50);
    assert!(rec[49] / rec[0] < 0.5, "{} -> {}", rec[0], rec[49]);
}

#[test]
fn zero_epochs_leave_weights_unchanged() {
    let mut cfg = synth_config();
    cfg.schedule.ae_epochs = 0;
    cfg.schedule.dsc_epochs = 0;
    let (data, mut model) = setup(&cfg);
    let before = model.clone();
    let mut log = TrainLog::new();
    pretrain_autoencoder(&mut model, data.unlabeled(), &cfg, &mut log).unwrap();
    pretrain_dscnet(&mut model, data.unlabeled(), &cfg, &mut log).unwrap();
    assert!(log.records().is_empty());
    assert_eq!(model.params(), before.params());
    assert!(model.c.as_ref().unwrap().matrix().iter().all(|&v| v == 0.0));
}

#[test]
fn training_is_deterministic() {
    let mut cfg = synth_config();
    cfg.schedule.ae_epochs = 60;
    cfg.schedule.dsc_epochs = 30;
    cfg.schedule.t_max = 30;
    cfg.schedule.warmup = 10;
    cfg.schedule.t0 = 10;
    let run = || {
        let (data, mut model) = setup(&cfg);
        let mut log = TrainLog::new();
        let state = train_pipeline(&mut model, data.unlabeled(), &cfg, &mut log).unwrap();
        (model, state.labels, totals(&log))
    };
    assert_eq!(run(), run());
}

#[test]
fn dscnet_without_self_expression_matches_autoencoder() {
    let mut cfg = synth_config();
    cfg.schedule.ae_epochs = 25;
    cfg.schedule.dsc_epochs = 25;
    cfg.loss.lambda2 = 0.0;
    cfg.loss.gamma = 0.0;
    let (data, start) = setup(&cfg);

    let mut ae = start.clone();
    let mut ae_log = TrainLog::new();
    pretrain_autoencoder(&mut ae, data.unlabeled(), &cfg, &mut ae_log).unwrap();
    let mut dsc = start;
    let mut dsc_log = TrainLog::new();
    pretrain_dscnet(&mut dsc, data.unlabeled(), &cfg, &mut dsc_log).unwrap();

    for (a, b) in ae.params().iter().zip(dsc.params()) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= 1e-12, "{x} vs {y}");
        }
    }
    let rec = |log: &TrainLog, s| log.stage(s).map(|r| r.reconstruction).collect::<Vec<_>>();
    assert_eq!(rec(&ae_log, Stage::Autoencoder), rec(&dsc_log, Stage::Dscnet));
}

#[test]
fn warmup_covering_the_budget_never_refines() {
    let mut cfg = synth_config();
    cfg.schedule.ae_epochs = 30;
    cfg.schedule.dsc_epochs = 30;
    cfg.schedule.t_max = 40;
    cfg.schedule.warmup = 40;
    cfg.schedule.t0 = 5;
    cfg.schedule.early_stop_patience = 0;
    let (data, mut model) = setup(&cfg);
    let mut log = TrainLog::new();
    train_pipeline(&mut model, data.unlabeled(), &cfg, &mut log).unwrap();
    assert_eq!(log.epochs_run(Stage::Full), 40);
    assert!(log.refinement_epochs().is_empty());
}

#[test]
fn full_training_keeps_pseudo_label_accuracy() {
    let cfg = synth_config();
    let (data, mut model) = setup(&cfg);
    let mut log = TrainLog::new();
    pretrain_autoencoder(&mut model, data.unlabeled(), &cfg, &mut log).unwrap();
    pretrain_dscnet(&mut model, data.unlabeled(), &cfg, &mut log).unwrap();
    let initial = make_pseudo_labels(model.c.as_ref().unwrap().matrix(), data.k, &cfg.postprocess, cfg.seed).unwrap();
    let before = clustering_accuracy(&initial.labels, &data.labels, data.k).unwrap();
    let state = train_full(&mut model, data.unlabeled(), &cfg, &mut log).unwrap();
    let after = clustering_accuracy(&state.labels, &data.labels, data.k).unwrap();
    assert!(after >= before, "{before} -> {after}");
    assert!(!log.refinement_epochs().is_empty());
}

#[test]
fn divergence_restores_a_finite_model() {
    let mut cfg = synth_config();
    cfg.schedule.ae_epochs = 50;
    cfg.schedule.lr_start = 1e300;
    let (data, mut model) = setup(&cfg);
    let mut log = TrainLog::new();
    let err = pretrain_autoencoder(&mut model, data.unlabeled(), &cfg, &mut log).unwrap_err();
    assert!(matches!(err, Error::Diverged { .. }), "{err}");
    assert!(model.params().iter().all(|p| p.is_finite()));
    assert!(log.stop_rule(Stage::Autoencoder).unwrap().starts_with("diverged"));
}
