//! End-to-end library flow: synthesize data, train both heads, anchor,
//! explain, checkpoint, and reload.

use dnc_core::explain::{build_rule, evaluate_rule, exhaustive_rivals, similarity_report};
use dnc_core::io::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use dnc_core::io::dataset::{gen_synthetic, SyntheticSpec};
use dnc_core::trainer::{
    evaluate, knn_induction_eval, ClassifierKind, ClassifierState, KSpec, TrainConfig, Trainer,
};

fn dataset() -> dnc_core::LabeledDataset {
    gen_synthetic(&SyntheticSpec {
        classes: 3,
        subclusters: 3,
        dim: 10,
        per_cluster: 30,
        sigma: 0.06,
        seed: 11,
        class_spread: SyntheticSpec::DEFAULT_CLASS_SPREAD,
    })
    .unwrap()
}

fn config() -> TrainConfig {
    TrainConfig {
        epochs: 12,
        batch_size: 32,
        classifier: ClassifierKind::Dnc,
        k: KSpec::Global(3),
        temperature: 10.0,
        learning_rate: 0.1,
        memory_batches: 6,
        output_dim: 10,
        hidden_dims: vec![],
        anchor_after_epoch: Some(9),
        ..TrainConfig::default()
    }
}

#[test]
fn train_anchor_explain_checkpoint_cycle() {
    let data = dataset();
    let (train, test) = data.split(0.25, 5).unwrap();

    let mut trainer = Trainer::new(config(), &train).unwrap();
    let report = trainer.run().unwrap();
    assert_eq!(report.loss_curve.len(), 12);

    let metrics = evaluate(&trainer.state.encoder, &trainer.state.classifier, &test).unwrap();
    assert!(metrics.top1 > 0.8, "top1 {}", metrics.top1);

    let fine = knn_induction_eval(&trainer.state.encoder, &train, &test).unwrap();
    assert!(fine > 0.5, "fine induction {fine}");

    // Anchored bank supports rules and reports.
    let (train_features, _) = trainer.state.encoder.forward(train.inputs()).unwrap();
    let bank = match &trainer.state.classifier {
        ClassifierState::Dnc { bank, .. } => bank.clone(),
        _ => unreachable!(),
    };
    assert!(bank.is_anchored());
    let rule = build_rule(&bank, 1, &exhaustive_rivals(&bank, 1)).unwrap();
    assert_eq!(rule.disjuncts.len(), 3);
    assert!(rule.disjuncts.iter().all(|d| d.len() == 6));

    // A training sample of class 1 whose embedding anchors the bank fires
    // the rule and gets the right report.
    let anchor = bank.anchor_ids().unwrap()[1][0];
    let query = train_features.row(anchor);
    assert!(evaluate_rule(&rule, query, &train_features).unwrap());
    let report = similarity_report(anchor, query, &bank, 3).unwrap();
    assert_eq!(report.predicted_class, 1);
    let total: f64 = report.entries.iter().map(|e| e.normalized_similarity).sum();
    assert!((total - 1.0).abs() < 1e-9);

    // Checkpoint cycle preserves behavior exactly.
    let dir = std::env::temp_dir().join("dnc_pipeline_test");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("model.ckpt");
    save_checkpoint(&path, &Checkpoint::from_state(&trainer.state)).unwrap();
    let restored = load_checkpoint(&path).unwrap().into_state().unwrap();
    let metrics_restored = evaluate(&restored.encoder, &restored.classifier, &test).unwrap();
    assert_eq!(metrics.top1, metrics_restored.top1);
    assert_eq!(metrics.top5, metrics_restored.top5);
}

#[test]
fn two_identical_runs_share_every_bit() {
    let data = dataset();
    let (train, _) = data.split(0.25, 5).unwrap();
    let mut a = Trainer::new(config(), &train).unwrap();
    let mut b = Trainer::new(config(), &train).unwrap();
    a.run().unwrap();
    b.run().unwrap();
    assert_eq!(a.state, b.state);
}
