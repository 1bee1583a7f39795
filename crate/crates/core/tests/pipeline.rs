//! Crate-level integration: full variants through `run_variant`, checkpoint
//! round trips against recorded metrics, and the unlabelled-pool path.

use std::collections::BTreeMap;

use triphase_core::config::{DataSection, ExperimentConfig, ExperimentSection, ModelSection, TrainingConfig};
use triphase_core::corpus::{
    build_vocab_and_tokenize, parse_jsonl, split_dataset, tokenize_with_vocab,
};
use triphase_core::metrics::evaluate;
use triphase_core::model::ClassifierHead;
use triphase_core::synth::{gen_synthetic, SyntheticSpec};
use triphase_core::train::{predict_dataset, run_variant, Variant};
use triphase_core::util::derive_seed;

fn tiny_experiment(sizes: &[usize], signal: f64) -> ExperimentConfig {
    ExperimentConfig {
        experiment: ExperimentSection::default(),
        data: DataSection {
            path: None,
            synthetic: Some(SyntheticSpec {
                n_classes: sizes.len(),
                sizes: sizes.to_vec(),
                vocab_size: 150,
                signal_strength: signal,
                levels: 1,
                indicators_per_class: 4,
                min_len: 6,
                max_len: 12,
            }),
            synthetic_seed: 1,
            val_frac: 0.2,
            test_frac: 0.2,
            max_vocab: 300,
            stopword_file: None,
        },
        model: ModelSection {
            hidden_dim: 16,
            n_blocks: 1,
            n_heads: 2,
            max_positions: 24,
            ffn_mult: 2,
            decoder_blocks: 1,
        },
        training: TrainingConfig {
            epochs_dae: 2,
            epochs_cl: 2,
            max_epochs_ft: 5,
            patience_ft: 2,
            batch_size_dae: 8,
            batch_size_cl: 8,
            batch_size_ft: 8,
            ..TrainingConfig::default()
        },
    }
}

#[test]
fn joint_variant_runs_both_phases() {
    let cfg = tiny_experiment(&[20, 20], 0.9);
    let ds = gen_synthetic(cfg.data.synthetic.as_ref().unwrap(), 1).unwrap();
    let manifest = run_variant(Variant::Joint, &cfg, &ds, 3, None).unwrap();
    let names: Vec<&str> = manifest.phases.iter().map(|p| p.phase.as_str()).collect();
    assert_eq!(names, vec!["joint", "ft"]);
    assert_eq!(manifest.status, "complete");
    assert!(manifest.balance.is_some(), "joint builds balanced pairs too");
}

#[test]
fn every_variant_produces_a_complete_manifest() {
    let cfg = tiny_experiment(&[14, 10], 0.9);
    let ds = gen_synthetic(cfg.data.synthetic.as_ref().unwrap(), 2).unwrap();
    for variant in Variant::TABLE_ORDER {
        let manifest = run_variant(variant, &cfg, &ds, 1, None)
            .unwrap_or_else(|e| panic!("{variant} failed: {e}"));
        assert_eq!(manifest.status, "complete", "{variant}");
        assert_eq!(
            manifest.phases.len(),
            variant.phases().len(),
            "{variant} phase count"
        );
        assert_eq!(manifest.test_reads_before_eval, 0, "{variant} guard");
        assert!(manifest.test_metrics.is_some(), "{variant} metrics");
    }
}

#[test]
fn classifier_checkpoint_reproduces_recorded_test_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_experiment(&[20, 16], 0.9);
    let ds = gen_synthetic(cfg.data.synthetic.as_ref().unwrap(), 3).unwrap();
    let seed = 11u64;
    let manifest = run_variant(Variant::ThreePhase, &cfg, &ds, seed, Some(dir.path())).unwrap();
    let recorded = manifest.test_metrics.as_ref().unwrap();

    // rebuild the identical split and vocabulary, then evaluate the saved
    // classifier; accuracies must agree to double precision
    let (mut train, _, mut test) = split_dataset(
        &ds,
        cfg.data.val_frac,
        cfg.data.test_frac,
        derive_seed(seed, "split", 0),
    )
    .unwrap();
    build_vocab_and_tokenize(&mut train, cfg.data.max_vocab).unwrap();
    tokenize_with_vocab(&mut test, train.vocab.as_ref().unwrap());

    let (bundle, head) = ClassifierHead::load(dir.path().join("phase_ft.ckpt")).unwrap();
    let class_paths = ds.class_paths();
    let class_map: BTreeMap<Vec<String>, usize> = class_paths
        .iter()
        .enumerate()
        .map(|(i, p)| (p.clone(), i))
        .collect();
    let targets: Vec<usize> = test
        .examples
        .iter()
        .map(|e| class_map[&e.label_path])
        .collect();
    let preds = predict_dataset(&bundle, &head, &test, manifest.truncation_length).unwrap();
    let replayed = evaluate(&preds, &targets, class_paths.len()).unwrap();
    assert!((replayed.accuracy - recorded.accuracy).abs() < 1e-9);
    assert!((replayed.macro_f1 - recorded.macro_f1).abs() < 1e-9);
    assert_eq!(replayed.confusion, recorded.confusion);
}

#[test]
fn unlabelled_records_feed_the_denoising_phase() {
    // labelled corpus plus unlabelled lines; dae_ft must complete and the
    // unlabelled pool must stay out of the classifier splits
    let mut lines = Vec::new();
    for i in 0..24 {
        let class = i % 2;
        lines.push(format!(
            "{{\"text\": \"tok{} tok{} sig{class} sig{class} filler word\", \"labels\": [\"c{class}\"]}}",
            i % 5,
            i % 3
        ));
    }
    for i in 0..10 {
        lines.push(format!(
            "{{\"text\": \"plain unlabelled line {} with words\", \"labels\": []}}",
            i
        ));
    }
    let ds = parse_jsonl(&lines.join("\n")).unwrap();
    assert_eq!(ds.unlabelled.len(), 10);

    let mut cfg = tiny_experiment(&[12, 12], 0.9);
    cfg.data.synthetic = None;
    cfg.data.path = Some("unused".into());
    let manifest = run_variant(Variant::DaeFt, &cfg, &ds, 1, None).unwrap();
    assert_eq!(manifest.status, "complete");
    // the classifier evaluation only ever sees labelled examples:
    // 24 labelled, stratified 0.2 test per 12-example class = 4
    assert_eq!(manifest.test_metrics.unwrap().total, 4);
}

#[test]
fn aborted_runs_carry_a_note() {
    let mut cfg = tiny_experiment(&[12, 12], 0.9);
    cfg.training.learning_rate_dae = 1e300; // overflow the weights into NaN
    let ds = gen_synthetic(cfg.data.synthetic.as_ref().unwrap(), 4).unwrap();
    let manifest = run_variant(Variant::DaeFt, &cfg, &ds, 1, None).unwrap();
    assert_eq!(manifest.status, "aborted");
    assert!(manifest.note.as_deref().unwrap_or("").contains("dae loss"));
    assert!(manifest.test_metrics.is_none());
}
