//! Binary linear probes over concept representations.
//!
//! A probe scores class `c` as `theta[., c] . z + b_c` and normalizes the two
//! scores with a softmax. Training minimizes the mean cross-entropy over
//! shuffled minibatches with Adam. The same trainer, with an L1/L2 penalty
//! on `theta`, backs the elastic-net neuron ranking.

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::cluster::Concept;
use crate::corpus::{split_items, SplitAssignment, TokenDataset, PAPER_SPLIT};
use crate::embedstore::{gather_rows, EmbeddingMatrix};
use crate::{seed, Error, Result};

pub const CLASSES: usize = 2;
/// Class index of rows belonging to the concept.
pub const CONCEPT_CLASS: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    pub layer: u32,
    pub concept_tag: String,
    pub d: usize,
    /// Row-major `d x 2`: `weights[n * 2 + c]` is neuron `n`'s weight for class `c`.
    pub weights: Vec<f64>,
    pub bias: [f64; CLASSES],
}

impl ProbeModel {
    pub fn zeros(layer: u32, concept_tag: &str, d: usize) -> Self {
        ProbeModel {
            layer,
            concept_tag: concept_tag.to_owned(),
            d,
            weights: vec![0.0; d * CLASSES],
            bias: [0.0; CLASSES],
        }
    }

    pub fn weight(&self, neuron: usize, class: usize) -> f64 {
        self.weights[neuron * CLASSES + class]
    }

    fn logits(&self, z: &[f32]) -> [f64; CLASSES] {
        let mut s = self.bias;
        for (n, &x) in z.iter().enumerate() {
            let x = f64::from(x);
            s[0] += self.weights[n * CLASSES] * x;
            s[1] += self.weights[n * CLASSES + 1] * x;
        }
        s
    }
}

fn softmax(s: [f64; CLASSES]) -> [f64; CLASSES] {
    let max = s[0].max(s[1]);
    let e = [(s[0] - max).exp(), (s[1] - max).exp()];
    let total = e[0] + e[1];
    [e[0] / total, e[1] / total]
}

/// Class distribution for one representation.
pub fn forward(model: &ProbeModel, z: &[f32]) -> Result<[f64; CLASSES]> {
    if z.len() != model.d {
        return Err(Error::DimensionMismatch { expected: model.d, got: z.len() });
    }
    Ok(softmax(model.logits(z)))
}

/// Predicted class; an exact tie goes to class 0.
pub fn predict(model: &ProbeModel, z: &[f32]) -> usize {
    let s = model.logits(z);
    usize::from(s[1] > s[0])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 512,
            epochs: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeDataset {
    pub concept_tag: String,
    pub features: EmbeddingMatrix,
    /// 1 for concept members, 0 otherwise.
    pub labels: Vec<u8>,
    /// Occurrence id behind each row.
    pub row_ids: Vec<usize>,
    /// Row indices per split.
    pub split: SplitAssignment,
    pub negative_source: String,
}

// EmbeddingMatrix has no serde impls of its own; probe datasets travel as
// rows of floats when serialized.
mod matrix_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Repr {
        layer: u32,
        n: usize,
        d: usize,
        values: Vec<f32>,
    }

    impl Serialize for EmbeddingMatrix {
        fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
            Repr { layer: self.layer, n: self.n(), d: self.d(), values: self.values().to_vec() }.serialize(s)
        }
    }

    impl<'de> Deserialize<'de> for EmbeddingMatrix {
        fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
            let r = Repr::deserialize(d)?;
            EmbeddingMatrix::new(r.layer, r.n, r.d, r.values).map_err(serde::de::Error::custom)
        }
    }
}

impl ProbeDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn has_both_classes(&self, rows: &[usize]) -> bool {
        let positives = rows.iter().filter(|&&r| self.labels[r] == 1).count();
        positives > 0 && positives < rows.len()
    }
}

/// Concept members as positives plus a uniform sample of non-members as
/// negatives (`round(neg_ratio * positives)` of them), split 60/20/20 per
/// class.
pub fn build_probe_dataset(
    concept: &Concept,
    dataset: &TokenDataset,
    embeddings: &EmbeddingMatrix,
    neg_ratio: f64,
    seed: u64,
) -> Result<ProbeDataset> {
    let n = dataset.len();
    if embeddings.n() != n {
        return Err(Error::Validation(format!(
            "embedding matrix has {} rows, dataset has {n} occurrences",
            embeddings.n()
        )));
    }
    if !(neg_ratio >= 0.0) {
        return Err(Error::Config(format!("negative ratio {neg_ratio} must be >= 0")));
    }
    let mut positives = concept.member_ids.clone();
    positives.sort_unstable();
    positives.dedup();
    if let Some(&bad) = positives.iter().find(|&&id| id >= n) {
        return Err(Error::OutOfRange(format!("concept member {bad} outside the dataset")));
    }
    let wanted = (neg_ratio * positives.len() as f64).round() as usize;
    if wanted == 0 || positives.is_empty() {
        return Err(Error::Degenerate(format!(
            "probe for {} needs both classes ({} positives, {wanted} negatives)",
            concept.tag,
            positives.len()
        )));
    }

    let mut is_member = vec![false; n];
    for &id in &positives {
        is_member[id] = true;
    }
    let others: Vec<usize> = (0..n).filter(|&i| !is_member[i]).collect();
    if wanted > others.len() {
        return Err(Error::Degenerate(format!(
            "concept {} wants {wanted} negatives but only {} non-members exist",
            concept.tag,
            others.len()
        )));
    }
    let mut rng = seed::rng(seed);
    let mut negatives: Vec<usize> = index::sample(&mut rng, others.len(), wanted)
        .into_iter()
        .map(|i| others[i])
        .collect();
    negatives.sort_unstable();

    let row_ids: Vec<usize> = positives.iter().chain(&negatives).copied().collect();
    let labels: Vec<u8> = std::iter::repeat_n(1u8, positives.len())
        .chain(std::iter::repeat_n(0u8, negatives.len()))
        .collect();
    let features = gather_rows(embeddings, &row_ids)?;

    let pos_split = split_items((0..positives.len()).collect(), PAPER_SPLIT, &mut rng);
    let neg_split = split_items((positives.len()..row_ids.len()).collect(), PAPER_SPLIT, &mut rng);
    let join = |a: &[usize], b: &[usize]| {
        let mut v: Vec<usize> = a.iter().chain(b).copied().collect();
        v.sort_unstable();
        v
    };
    let split = SplitAssignment {
        train: join(&pos_split.train, &neg_split.train),
        dev: join(&pos_split.dev, &neg_split.dev),
        test: join(&pos_split.test, &neg_split.test),
        ratios: PAPER_SPLIT,
    };

    let data = ProbeDataset {
        concept_tag: concept.tag.clone(),
        features,
        labels,
        row_ids,
        split,
        negative_source: format!("uniform non-members, ratio {neg_ratio}, seed {seed}"),
    };
    if !data.has_both_classes(&data.split.train) {
        return Err(Error::Degenerate(format!(
            "concept {} is too small for a train split with both classes",
            concept.tag
        )));
    }
    Ok(data)
}

/// Mean cross-entropy over `rows`.
pub fn cross_entropy(model: &ProbeModel, data: &ProbeDataset, rows: &[usize]) -> f64 {
    let total: f64 = rows
        .iter()
        .map(|&r| {
            let s = model.logits(data.features.row(r));
            let y = usize::from(data.labels[r]);
            let max = s[0].max(s[1]);
            let log_norm = max + ((s[0] - max).exp() + (s[1] - max).exp()).ln();
            log_norm - s[y]
        })
        .sum();
    total / rows.len().max(1) as f64
}

/// Gradient of [`cross_entropy`] with respect to the weights (`d x 2`, same
/// layout as the model) followed by the two biases.
pub fn cross_entropy_gradient(model: &ProbeModel, data: &ProbeDataset, rows: &[usize]) -> Vec<f64> {
    let d = model.d;
    let mut grad = vec![0.0; d * CLASSES + CLASSES];
    for &r in rows {
        let z = data.features.row(r);
        let p = softmax(model.logits(z));
        let y = usize::from(data.labels[r]);
        let delta = [p[0] - f64::from(u8::from(y == 0)), p[1] - f64::from(u8::from(y == 1))];
        for (n, &x) in z.iter().enumerate() {
            let x = f64::from(x);
            grad[n * CLASSES] += delta[0] * x;
            grad[n * CLASSES + 1] += delta[1] * x;
        }
        grad[d * CLASSES] += delta[0];
        grad[d * CLASSES + 1] += delta[1];
    }
    let scale = 1.0 / rows.len().max(1) as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    grad
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(len: usize) -> Self {
        Adam { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    /// One bias-corrected Adam update of `params` in place.
    fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
}

/// L1/L2 penalty on the weights (never the biases).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Penalty {
    pub l1: f64,
    pub l2: f64,
}

/// Shared trainer. The L2 term enters the gradient; the L1 term is applied
/// as a proximal soft-threshold of `learning_rate * l1` after each step,
/// which produces exact zeros.
pub(crate) fn fit(
    data: &ProbeDataset,
    config: &TrainConfig,
    penalty: Penalty,
    require_both_classes: bool,
) -> Result<ProbeModel> {
    config.validate()?;
    if penalty.l1 < 0.0 || penalty.l2 < 0.0 {
        return Err(Error::Config("elastic-net coefficients must be >= 0".into()));
    }
    let train = &data.split.train;
    if train.is_empty() {
        return Err(Error::Degenerate("empty train split".into()));
    }
    if require_both_classes && !data.has_both_classes(train) {
        return Err(Error::Degenerate(format!(
            "train split of {} holds a single class",
            data.concept_tag
        )));
    }

    let d = data.features.d();
    let mut model = ProbeModel::zeros(data.features.layer, &data.concept_tag, d);
    let mut params = vec![0.0; d * CLASSES + CLASSES];
    let mut adam = Adam::new(params.len());
    let mut rng = seed::rng(config.seed);
    let mut order = train.clone();
    let threshold = config.learning_rate * penalty.l1;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            unflatten(&params, &mut model);
            let loss = cross_entropy(&model, data, batch);
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "{}: loss {loss} at epoch {epoch}, batch {b} (max |param| {:.3e})",
                    data.concept_tag,
                    params.iter().fold(0.0f64, |m, p| m.max(p.abs()))
                )));
            }
            let mut grad = cross_entropy_gradient(&model, data, batch);
            if penalty.l2 > 0.0 {
                for (g, w) in grad.iter_mut().zip(&params).take(d * CLASSES) {
                    *g += 2.0 * penalty.l2 * w;
                }
            }
            adam.step(&mut params, &grad, config);
            if threshold > 0.0 {
                for w in params.iter_mut().take(d * CLASSES) {
                    *w = w.signum() * (w.abs() - threshold).max(0.0);
                }
            }
        }
    }
    unflatten(&params, &mut model);
    Ok(model)
}

fn unflatten(params: &[f64], model: &mut ProbeModel) {
    let wlen = model.weights.len();
    model.weights.copy_from_slice(&params[..wlen]);
    model.bias = [params[wlen], params[wlen + 1]];
}

/// Train a probe on the train split.
pub fn train_probe(data: &ProbeDataset, config: &TrainConfig) -> Result<ProbeModel> {
    fit(data, config, Penalty::default(), true)
}

/// Argmax accuracy over `rows`.
pub fn accuracy(model: &ProbeModel, data: &ProbeDataset, rows: &[usize]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let hits = rows
        .iter()
        .filter(|&&r| predict(model, data.features.row(r)) == usize::from(data.labels[r]))
        .count();
    hits as f64 / rows.len() as f64
}

/// Relabel rows by word type: every type gets an independent, seeded coin
/// flip and all of its occurrences share it.
pub fn control_task_labels(data: &ProbeDataset, dataset: &TokenDataset, seed: u64) -> ProbeDataset {
    let mut control = data.clone();
    control.labels = data
        .row_ids
        .iter()
        .map(|&id| (seed::derive(seed, dataset.word(id)) & 1) as u8)
        .collect();
    control.negative_source = format!("control task: per-type random labels, seed {seed}");
    control
}

pub fn selectivity(accuracy: f64, control_accuracy: f64) -> Result<f64> {
    for (name, v) in [("accuracy", accuracy), ("control accuracy", control_accuracy)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Validation(format!("{name} {v} outside [0, 1]")));
        }
    }
    Ok(accuracy - control_accuracy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub concept_tag: String,
    pub accuracy_dev: f64,
    pub accuracy_test: f64,
    pub control_accuracy_dev: f64,
    pub control_accuracy_test: f64,
    pub selectivity_dev: f64,
    pub selectivity_test: f64,
}

/// Train the concept probe and its control-task twin and report accuracies
/// and selectivity on dev and test.
pub fn evaluate_probe(data: &ProbeDataset, dataset: &TokenDataset, config: &TrainConfig) -> Result<ProbeResult> {
    let model = train_probe(data, config)?;
    let control = control_task_labels(data, dataset, seed::derive(config.seed, "control"));
    // A control relabeling can leave one class in train; the probe then
    // learns the majority class, which is the right baseline.
    let control_model = fit(&control, config, Penalty::default(), false)?;

    let acc_dev = accuracy(&model, data, &data.split.dev);
    let acc_test = accuracy(&model, data, &data.split.test);
    let c_dev = accuracy(&control_model, &control, &control.split.dev);
    let c_test = accuracy(&control_model, &control, &control.split.test);
    Ok(ProbeResult {
        concept_tag: data.concept_tag.clone(),
        accuracy_dev: acc_dev,
        accuracy_test: acc_test,
        control_accuracy_dev: c_dev,
        control_accuracy_test: c_test,
        selectivity_dev: selectivity(acc_dev, c_dev)?,
        selectivity_test: selectivity(acc_test, c_test)?,
    })
}
