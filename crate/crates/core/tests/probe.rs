mod common;

use latent_concepts::corpus::SplitAssignment;
use latent_concepts::embedstore::EmbeddingMatrix;
use latent_concepts::probe::{
    accuracy, build_probe_dataset, control_task_labels, cross_entropy, cross_entropy_gradient, evaluate_probe, forward,
    predict, selectivity, train_probe, ProbeDataset, ProbeModel, TrainConfig,
};
use latent_concepts::synthetic::{concept_from_ids, separable_task, typed_dataset};
use latent_concepts::{seed, Error};
use proptest::prelude::*;
use rand::Rng;

use common::{numeric_gradient, rel_err};

/// Random rows, labels and model weights of a small probe instance.
fn random_instance(seed_value: u64) -> (ProbeModel, ProbeDataset) {
    let mut rng = seed::rng(seed_value);
    let d = rng.random_range(1..8);
    let n = rng.random_range(2..20);
    let values: Vec<f32> = (0..n * d).map(|_| rng.random_range(-3.0f32..3.0)).collect();
    let labels: Vec<u8> = (0..n).map(|i| if i < 2 { i as u8 } else { rng.random_range(0..2) }).collect();
    let mut model = ProbeModel::zeros(0, "c0", d);
    for w in &mut model.weights {
        *w = rng.random_range(-2.0..2.0);
    }
    model.bias = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
    let data = ProbeDataset {
        concept_tag: "c0".into(),
        features: EmbeddingMatrix::new(0, n, d, values).unwrap(),
        labels,
        row_ids: (0..n).collect(),
        split: SplitAssignment { train: (0..n).collect(), dev: vec![], test: vec![], ratios: [1.0, 0.0, 0.0] },
        negative_source: "test".into(),
    };
    (model, data)
}

#[test]
fn gradient_matches_central_differences() {
    for case in 0..50 {
        let (model, data) = random_instance(case);
        let rows: Vec<usize> = (0..data.len()).collect();
        let analytic = cross_entropy_gradient(&model, &data, &rows);
        let numeric = numeric_gradient(&model, &data, &rows, 1e-5);
        for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
            assert!(rel_err(*a, *n) < 1e-5, "case {case} param {i}: {a} vs {n}");
        }
    }
}

#[test]
fn forward_is_a_distribution() {
    let (model, data) = random_instance(3);
    let p = forward(&model, data.features.row(0)).unwrap();
    assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
    assert!(matches!(forward(&model, &[0.0; 9]), Err(Error::DimensionMismatch { .. })));
}

#[test]
fn zero_model_predicts_class_zero() {
    let model = ProbeModel::zeros(0, "c", 2);
    assert_eq!(predict(&model, &[1.0, -1.0]), 0);
    assert_eq!(forward(&model, &[1.0, -1.0]).unwrap(), [0.5, 0.5]);
}

#[test]
fn cross_entropy_of_uniform_model_is_ln2() {
    let (_, data) = random_instance(4);
    let rows: Vec<usize> = (0..data.len()).collect();
    let loss = cross_entropy(&ProbeModel::zeros(0, "c0", data.features.d()), &data, &rows);
    assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn separable_task_is_learned() {
    for s in 0..3 {
        let task = separable_task(100, 20, 64, 1.0, 0.1, s);
        let data = build_probe_dataset(&task.concept, &task.dataset, &task.embeddings, 1.0, s).unwrap();
        let r = evaluate_probe(&data, &task.dataset, &TrainConfig { seed: s, ..Default::default() }).unwrap();
        assert!(r.accuracy_test >= 0.95, "seed {s}: {r:?}");
        assert!(r.selectivity_test >= 0.3, "seed {s}: {r:?}");
        assert!((r.control_accuracy_test - 0.5).abs() < 0.15, "seed {s}: {r:?}");
    }
}

#[test]
fn training_is_deterministic() {
    let task = separable_task(20, 10, 8, 1.0, 0.1, 9);
    let data = build_probe_dataset(&task.concept, &task.dataset, &task.embeddings, 1.0, 9).unwrap();
    let cfg = TrainConfig { seed: 5, ..Default::default() };
    assert_eq!(train_probe(&data, &cfg).unwrap(), train_probe(&data, &cfg).unwrap());
}

#[test]
fn probe_dataset_is_stratified() {
    let ds = typed_dataset(50, 10);
    let concept = concept_from_ids("c0", &ds, (0..220).collect());
    let values = (0..1000).map(|v| v as f32).collect();
    let emb = EmbeddingMatrix::new(0, 500, 2, values).unwrap();
    let data = build_probe_dataset(&concept, &ds, &emb, 1.0, 1).unwrap();
    assert_eq!(data.labels.iter().filter(|&&l| l == 1).count(), 220);
    assert_eq!(data.len(), 440);
    assert_eq!(data.split.sizes(), (264, 88, 88));
    let positives = |rows: &[usize]| rows.iter().filter(|&&r| data.labels[r] == 1).count();
    assert_eq!(positives(&data.split.train), 132);
    assert_eq!(positives(&data.split.dev), 44);
    for (row, &id) in data.row_ids.iter().enumerate() {
        assert_eq!(data.features.row(row), emb.row(id));
        assert_eq!(data.labels[row] == 1, id < 220);
    }
}

#[test]
fn probe_dataset_errors() {
    let ds = typed_dataset(4, 2);
    let emb = EmbeddingMatrix::new(0, 8, 1, vec![0.0; 8]).unwrap();
    let everything = concept_from_ids("c0", &ds, (0..8).collect());
    assert!(matches!(build_probe_dataset(&everything, &ds, &emb, 1.0, 0), Err(Error::Degenerate(_))));
    let tiny = concept_from_ids("c1", &ds, vec![0]);
    assert!(build_probe_dataset(&tiny, &ds, &emb, 1.0, 0).is_err());
    let short = EmbeddingMatrix::new(0, 7, 1, vec![0.0; 7]).unwrap();
    assert!(build_probe_dataset(&tiny, &ds, &short, 1.0, 0).is_err());
}

#[test]
fn control_labels_are_constant_per_type() {
    let task = separable_task(30, 8, 4, 1.0, 0.1, 2);
    let data = build_probe_dataset(&task.concept, &task.dataset, &task.embeddings, 1.0, 2).unwrap();
    let control = control_task_labels(&data, &task.dataset, 77);
    let mut by_type = std::collections::BTreeMap::new();
    for (row, &id) in control.row_ids.iter().enumerate() {
        let prev = by_type.insert(task.dataset.word(id).to_owned(), control.labels[row]);
        assert!(prev.is_none() || prev == Some(control.labels[row]));
    }
    assert!(by_type.values().any(|&l| l == 0) && by_type.values().any(|&l| l == 1));
    assert_eq!(control.features, data.features);
}

#[test]
fn selectivity_values() {
    assert!((selectivity(1.0, 0.82).unwrap() - 0.18).abs() < 1e-12);
    assert!(selectivity(1.1, 0.5).is_err());
}

#[test]
fn bad_train_config_is_rejected() {
    let (_, data) = random_instance(1);
    for cfg in [
        TrainConfig { batch_size: 0, ..Default::default() },
        TrainConfig { learning_rate: -1.0, ..Default::default() },
        TrainConfig { epochs: 0, ..Default::default() },
    ] {
        assert!(matches!(train_probe(&data, &cfg), Err(Error::Config(_))));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn accuracy_in_unit_interval(s in any::<u64>()) {
        let (model, data) = random_instance(s);
        let rows: Vec<usize> = (0..data.len()).collect();
        let a = accuracy(&model, &data, &rows);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(cross_entropy(&model, &data, &rows) >= 0.0);
    }
}
