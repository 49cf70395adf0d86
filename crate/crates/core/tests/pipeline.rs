//! Cross-module pipeline: generate recall data, train a small model,
//! checkpoint it, reload, and keep training from the restored state.

use focus_core::checkpoint::{load_checkpoint, save_checkpoint};
use focus_core::data::{gen_recall, split_recall};
use focus_core::layer::FocusConfig;
use focus_core::model::init_model;
use focus_core::optim::AdamW;
use focus_core::train::{eval_recall, train_recall, TrainConfig};

fn small_setup() -> (FocusConfig, TrainConfig) {
    let mut cfg = FocusConfig::new(8, 8);
    cfg.o = 1;
    cfg.hidden = 4;
    cfg.vocab = 12;
    cfg.n_layers = 1;
    cfg.validate().expect("small config is valid");
    let tc = TrainConfig {
        lr: 1e-3,
        batch: 16,
        warmup_epochs: 1,
        max_epochs: 4,
        ..TrainConfig::default()
    };
    (cfg, tc)
}

#[test]
fn pipeline_trains_checkpoints_and_resumes() {
    let (cfg, tc) = small_setup();
    let samples = gen_recall(cfg.vocab, cfg.l, 120, 5).expect("generate");
    let (train, test) = split_recall(samples, 0.25).expect("split");
    assert!(!train.is_empty() && !test.is_empty(), "both splits must be populated");

    let mut store = init_model(&cfg, 1).expect("init");
    let mut opt = AdamW::new(tc.adam(), &store);
    let report = train_recall(&mut store, &mut opt, &cfg, &tc, &train, &test).expect("train");
    assert_eq!(report.rows.len(), report.epochs_run, "one log row per epoch");
    assert!(
        report.rows.last().unwrap().loss < report.rows.first().unwrap().loss,
        "loss must drop over {} epochs: {} -> {}",
        report.epochs_run,
        report.rows.first().unwrap().loss,
        report.rows.last().unwrap().loss
    );

    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("model.bin");
    save_checkpoint(&path, &cfg, &store, &opt).expect("save");
    let ck = load_checkpoint(&path).expect("load");
    assert_eq!(ck.cfg, cfg, "config survives the roundtrip");

    let restored_acc = eval_recall(&ck.store, &cfg, &test).expect("eval restored");
    assert_eq!(
        restored_acc, report.final_metric,
        "the restored model must score exactly what training reported"
    );

    let mut store2 = ck.store;
    let mut opt2 =
        AdamW::restore(tc.adam(), &store2, ck.m, ck.v, ck.step).expect("restore optimizer");
    let more = TrainConfig { max_epochs: 1, warmup_epochs: 0, ..tc };
    train_recall(&mut store2, &mut opt2, &cfg, &more, &train, &test)
        .expect("training resumes from the checkpoint");
}
