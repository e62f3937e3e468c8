//! Seeded synthetic data: stand-in embeddings for runs without a model, and
//! generators with known structure for testing probes and neuron rankings.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::cluster::Concept;
use crate::corpus::{FilterConfig, TokenDataset, TokenOccurrence};
use crate::embedstore::EmbeddingMatrix;
use crate::{seed, Result};

fn gaussian(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticEmbeddingConfig {
    pub d: usize,
    /// Word types are hashed into this many groups that share a center.
    pub groups: usize,
    pub group_scale: f64,
    pub type_scale: f64,
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for SyntheticEmbeddingConfig {
    fn default() -> Self {
        SyntheticEmbeddingConfig {
            d: 32,
            groups: 12,
            group_scale: 3.0,
            type_scale: 1.0,
            noise_scale: 0.5,
            seed: 0,
        }
    }
}

/// Stand-in layer embeddings: `group center + type offset + occurrence
/// noise`, where a word's group comes from a seeded hash of the word. Deeper
/// layers spread groups further apart.
pub fn synthetic_embeddings(dataset: &TokenDataset, layer: u32, config: &SyntheticEmbeddingConfig) -> Result<EmbeddingMatrix> {
    let d = config.d;
    let layer_seed = seed::derive(config.seed, &format!("layer{layer}"));
    let spread = 1.0 + 0.25 * f64::from(layer);

    let centers: Vec<Vec<f64>> = (0..config.groups.max(1))
        .map(|g| {
            let mut rng = seed::rng(seed::derive(config.seed, &format!("group{g}")));
            (0..d).map(|_| config.group_scale * spread * gaussian(&mut rng)).collect()
        })
        .collect();

    let mut type_vectors: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for word in dataset.type_index.keys() {
        let group = (seed::derive(config.seed, word) % centers.len() as u64) as usize;
        let mut rng = seed::rng(seed::derive(layer_seed, word));
        let v = centers[group]
            .iter()
            .map(|c| c + config.type_scale * gaussian(&mut rng))
            .collect();
        type_vectors.insert(word, v);
    }

    let mut rng = seed::rng(seed::derive(layer_seed, "occurrences"));
    let mut values = Vec::with_capacity(dataset.len() * d);
    for occ in &dataset.occurrences {
        let base = &type_vectors[occ.word.as_str()];
        values.extend(base.iter().map(|b| (b + config.noise_scale * gaussian(&mut rng)) as f32));
    }
    EmbeddingMatrix::new(layer, dataset.len(), d, values)
}

/// `n_types` word types `w0, w1, ...` with `per_type` occurrences each, one
/// occurrence per single-word sentence.
pub fn typed_dataset(n_types: usize, per_type: usize) -> TokenDataset {
    let mut sentences = Vec::new();
    let mut occurrences = Vec::new();
    let mut type_index: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for _ in 0..per_type {
        for t in 0..n_types {
            let id = occurrences.len();
            let word = format!("w{t}");
            sentences.push(vec![word.clone()]);
            type_index.entry(word.clone()).or_default().push(id);
            occurrences.push(TokenOccurrence {
                occurrence_id: id,
                word,
                sentence_id: id,
                token_position: 0,
            });
        }
    }
    TokenDataset {
        config: FilterConfig::default(),
        sentences,
        occurrences,
        type_index,
    }
}

/// A concept whose members are the given occurrence ids.
pub fn concept_from_ids(tag: &str, dataset: &TokenDataset, ids: Vec<usize>) -> Concept {
    let mut type_counts = BTreeMap::new();
    for &id in &ids {
        *type_counts.entry(dataset.word(id).to_owned()).or_insert(0) += 1;
    }
    Concept {
        tag: tag.to_owned(),
        layer: 0,
        member_ids: ids,
        type_counts,
    }
}

/// A linearly separable concept task with a known hyperplane.
pub struct SeparableTask {
    pub dataset: TokenDataset,
    pub embeddings: EmbeddingMatrix,
    pub concept: Concept,
    /// Unit normal of the separating hyperplane (through the origin).
    pub normal: Vec<f64>,
}

/// Half of the word types belong to the concept. Along the unit normal
/// `w = (+-1, ..., +-1) / sqrt(d)` each occurrence sits at
/// `+-(margin * sigma / 2 + |N(0, sigma^2)|)`, so the classes are separated
/// by a gap of `margin * sigma`; the orthogonal part is
/// `type offset (type_scale * sigma) + N(0, sigma^2)` noise.
pub fn separable_task(
    n_types: usize,
    per_type: usize,
    d: usize,
    margin: f64,
    type_scale: f64,
    seed_value: u64,
) -> SeparableTask {
    let sigma = 1.0;
    let mut rng = seed::rng(seed_value);
    let inv = 1.0 / (d as f64).sqrt();
    let normal: Vec<f64> = (0..d).map(|_| if rng.random::<bool>() { inv } else { -inv }).collect();

    let dataset = typed_dataset(n_types, per_type);
    let offsets: Vec<Vec<f64>> = (0..n_types)
        .map(|_| (0..d).map(|_| type_scale * sigma * gaussian(&mut rng)).collect())
        .collect();

    let mut values = Vec::with_capacity(dataset.len() * d);
    let mut members = Vec::new();
    for occ in &dataset.occurrences {
        let t: usize = occ.word[1..].parse().unwrap();
        let positive = t % 2 == 0;
        if positive {
            members.push(occ.occurrence_id);
        }
        let mut z: Vec<f64> = offsets[t].iter().map(|o| o + sigma * gaussian(&mut rng)).collect();
        let along: f64 = z.iter().zip(&normal).map(|(a, b)| a * b).sum();
        let target = (margin * sigma / 2.0 + (sigma * gaussian(&mut rng)).abs()) * if positive { 1.0 } else { -1.0 };
        for (zi, ni) in z.iter_mut().zip(&normal) {
            *zi += (target - along) * ni;
        }
        values.extend(z.into_iter().map(|v| v as f32));
    }
    let n = dataset.len();
    let concept = concept_from_ids("c0", &dataset, members);
    SeparableTask {
        dataset,
        embeddings: EmbeddingMatrix::new(0, n, d, values).expect("shape is consistent"),
        concept,
        normal,
    }
}

/// `n x d` standard-normal activations where the first `concept_size` rows
/// (the concept) have `delta` added to neuron `planted`.
pub fn planted_neuron(n: usize, d: usize, concept_size: usize, planted: usize, delta: f64, seed_value: u64) -> (EmbeddingMatrix, Vec<usize>) {
    let mut rng = seed::rng(seed_value);
    let mut values = Vec::with_capacity(n * d);
    for row in 0..n {
        for j in 0..d {
            let mut v = gaussian(&mut rng);
            if row < concept_size && j == planted {
                v += delta;
            }
            values.push(v as f32);
        }
    }
    let matrix = EmbeddingMatrix::new(0, n, d, values).expect("shape is consistent");
    (matrix, (0..concept_size).collect())
}
