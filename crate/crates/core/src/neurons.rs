//! Neuron rankings for concepts and super-concept alignment.

use std::collections::BTreeSet;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::annotate::{ConceptLabel, LabelStatus};
use crate::cluster::Concept;
use crate::embedstore::EmbeddingMatrix;
use crate::probe::{fit, Penalty, ProbeDataset, TrainConfig, CONCEPT_CLASS};
use crate::{seed, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ElasticNetConfig {
    pub l1: f64,
    pub l2: f64,
    pub train: TrainConfig,
}

impl Default for ElasticNetConfig {
    fn default() -> Self {
        ElasticNetConfig {
            l1: 1e-5,
            l2: 1e-5,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronRanking {
    pub concept_tag: String,
    pub scores: Vec<f64>,
    /// Neuron ids by descending score; equal scores keep ascending id order.
    pub order: Vec<usize>,
}

impl NeuronRanking {
    pub fn from_scores(concept_tag: &str, scores: Vec<f64>) -> Self {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        NeuronRanking {
            concept_tag: concept_tag.to_owned(),
            scores,
            order,
        }
    }

    pub fn d(&self) -> usize {
        self.scores.len()
    }
}

/// Uniform sample of `size` non-member rows (fewer if not enough exist).
pub fn random_concept_set(members: &[usize], n: usize, size: usize, seed: u64) -> Vec<usize> {
    let member_set: BTreeSet<usize> = members.iter().copied().collect();
    let others: Vec<usize> = (0..n).filter(|i| !member_set.contains(i)).collect();
    let take = size.min(others.len());
    let mut picked: Vec<usize> = index::sample(&mut seed::rng(seed), others.len(), take)
        .into_iter()
        .map(|i| others[i])
        .collect();
    picked.sort_unstable();
    picked
}

fn column_means(activations: &EmbeddingMatrix, rows: &[usize]) -> Vec<f64> {
    let mut sums = vec![0.0f64; activations.d()];
    for &r in rows {
        for (s, &x) in sums.iter_mut().zip(activations.row(r)) {
            *s += f64::from(x);
        }
    }
    let count = rows.len() as f64;
    sums.into_iter().map(|s| s / count).collect()
}

/// Probeless score per neuron: mean activation over the concept rows minus
/// mean activation over the random rows.
pub fn probeless_ranking(
    activations: &EmbeddingMatrix,
    concept_ids: &[usize],
    random_ids: &[usize],
    concept_tag: &str,
) -> Result<NeuronRanking> {
    if concept_ids.is_empty() || random_ids.is_empty() {
        return Err(Error::Validation("probeless ranking needs non-empty concept and random sets".into()));
    }
    let concept_set: BTreeSet<usize> = concept_ids.iter().copied().collect();
    if random_ids.iter().any(|r| concept_set.contains(r)) {
        return Err(Error::Validation("concept and random sets overlap".into()));
    }
    if let Some(&bad) = concept_ids.iter().chain(random_ids).find(|&&r| r >= activations.n()) {
        return Err(Error::OutOfRange(format!("row {bad} of {}", activations.n())));
    }
    let mu_c = column_means(activations, concept_ids);
    let mu_r = column_means(activations, random_ids);
    let scores = mu_c.iter().zip(&mu_r).map(|(c, r)| c - r).collect();
    Ok(NeuronRanking::from_scores(concept_tag, scores))
}

/// Rank neurons by the magnitude of the between-class weight difference of
/// an elastic-net regularized probe.
pub fn elasticnet_ranking(data: &ProbeDataset, config: &ElasticNetConfig) -> Result<NeuronRanking> {
    let model = fit(data, &config.train, Penalty { l1: config.l1, l2: config.l2 }, true)?;
    let other = 1 - CONCEPT_CLASS;
    let scores = (0..model.d)
        .map(|n| (model.weight(n, CONCEPT_CLASS) - model.weight(n, other)).abs())
        .collect();
    Ok(NeuronRanking::from_scores(&data.concept_tag, scores))
}

pub fn top_k(ranking: &NeuronRanking, k: usize) -> Result<BTreeSet<usize>> {
    if k == 0 || k > ranking.d() {
        return Err(Error::OutOfRange(format!("k={k} for {} neurons", ranking.d())));
    }
    Ok(ranking.order[..k].iter().copied().collect())
}

/// Fraction of the top-`k` neurons the two rankings share.
pub fn alignment_score(a: &NeuronRanking, b: &NeuronRanking, k: usize) -> Result<f64> {
    if a.d() != b.d() {
        return Err(Error::DimensionMismatch { expected: a.d(), got: b.d() });
    }
    let (ta, tb) = (top_k(a, k)?, top_k(b, k)?);
    Ok(ta.intersection(&tb).count() as f64 / k as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperConcept {
    pub name: String,
    pub member_concepts: Vec<String>,
    pub union_members: Vec<usize>,
}

/// Group every concept whose label contains `predicate` (case-insensitive).
/// Only successfully labeled concepts take part.
pub fn build_super_concept(concepts: &[Concept], labels: &[ConceptLabel], predicate: &str) -> Result<SuperConcept> {
    let needle = predicate.to_lowercase();
    let matching: BTreeSet<&str> = labels
        .iter()
        .filter(|l| l.status == LabelStatus::Labeled && l.label_text.to_lowercase().contains(&needle))
        .map(|l| l.concept_tag.as_str())
        .collect();
    let subs: Vec<&Concept> = concepts.iter().filter(|c| matching.contains(c.tag.as_str())).collect();
    if subs.is_empty() {
        return Err(Error::Validation(format!("no labeled concept matches `{predicate}`")));
    }
    let mut union: Vec<usize> = subs.iter().flat_map(|c| c.member_ids.iter().copied()).collect();
    union.sort_unstable();
    union.dedup();
    Ok(SuperConcept {
        name: predicate.to_owned(),
        member_concepts: subs.iter().map(|c| c.tag.clone()).collect(),
        union_members: union,
    })
}

impl SuperConcept {
    pub fn as_concept(&self, layer: u32) -> Concept {
        Concept {
            tag: format!("super:{}", self.name),
            layer,
            member_ids: self.union_members.clone(),
            type_counts: Default::default(),
        }
    }
}

/// Alignment of one sub-concept with its super concept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRow {
    pub super_concept: String,
    pub sub_concept: String,
    pub sub_label: String,
    pub alignment: f64,
}

/// Per-super-concept summary: sub-concept count and mean alignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentSummary {
    pub super_concept: String,
    pub sub_concepts: usize,
    pub mean_alignment: f64,
}

pub fn summarize_alignment(rows: &[AlignmentRow]) -> Vec<AlignmentSummary> {
    let mut seen = BTreeSet::new();
    rows.iter()
        .map(|r| r.super_concept.as_str())
        .filter(|n| seen.insert(*n))
        .map(|name| {
            let group: Vec<f64> = rows.iter().filter(|r| r.super_concept == name).map(|r| r.alignment).collect();
            AlignmentSummary {
                super_concept: name.to_owned(),
                sub_concepts: group.len(),
                mean_alignment: group.iter().sum::<f64>() / group.len() as f64,
            }
        })
        .collect()
}
