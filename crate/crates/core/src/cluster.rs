//! Ward agglomerative clustering over occurrence vectors.
//!
//! Clusters are kept as (centroid, size) pairs and merged with the
//! nearest-neighbor-chain algorithm, which is exact for Ward because the
//! linkage is reducible. Time is O(n^2 d) and memory O(n d); no pairwise
//! distance matrix is ever materialized.
//!
//! Merge costs are the Ward distance
//! `|A||B| / (|A|+|B|) * ||c_A - c_B||^2`, i.e. the increase in total
//! within-cluster sum of squares caused by the merge, in squared-Euclidean
//! units. All arithmetic is `f64` regardless of the storage type.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::TokenDataset;
use crate::embedstore::EmbeddingMatrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Among equal-cost candidates take the pair with the smallest
    /// (min id, max id); on a chain, an equal-cost predecessor wins so the
    /// chain always terminates.
    #[default]
    SmallestPair,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub k: usize,
    pub tie_break: TieBreak,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            k: 600,
            tie_break: TieBreak::SmallestPair,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeStep {
    pub step: usize,
    /// Smaller of the two merged cluster ids. Ids `0..n` are the input rows;
    /// the cluster formed at step `s` gets id `n + s`.
    pub left: usize,
    pub right: usize,
    pub new_id: usize,
    pub cost: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub layer: u32,
    pub n: usize,
    pub k: usize,
    /// The first `n - k` merges of the cost-ordered dendrogram.
    pub merge_history: Vec<MergeStep>,
    /// `tags[c]` names concept `c`.
    pub tags: Vec<String>,
    /// Concept index per occurrence.
    pub assignments: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Concept {
    pub tag: String,
    pub layer: u32,
    pub member_ids: Vec<usize>,
    pub type_counts: BTreeMap<String, usize>,
}

impl Concept {
    pub fn len(&self) -> usize {
        self.member_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.member_ids.is_empty()
    }

    /// Types ordered by descending count, then alphabetically.
    pub fn types_by_frequency(&self) -> Vec<(&str, usize)> {
        let mut types: Vec<(&str, usize)> =
            self.type_counts.iter().map(|(w, c)| (w.as_str(), *c)).collect();
        types.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        types
    }
}

pub fn tag_name(index: usize) -> String {
    format!("c{index}")
}

/// Ward merge cost of two clusters given their centroids and sizes.
pub fn ward_distance(centroid_a: &[f64], size_a: usize, centroid_b: &[f64], size_b: usize) -> Result<f64> {
    if centroid_a.len() != centroid_b.len() {
        return Err(Error::DimensionMismatch {
            expected: centroid_a.len(),
            got: centroid_b.len(),
        });
    }
    if size_a == 0 || size_b == 0 {
        return Err(Error::Validation("cluster sizes must be >= 1".into()));
    }
    Ok(ward_weight(size_a, size_b) * squared_distance(centroid_a, centroid_b))
}

#[inline]
fn ward_weight(size_a: usize, size_b: usize) -> f64 {
    let (a, b) = (size_a as f64, size_b as f64);
    a * b / (a + b)
}

#[inline]
fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    // Four independent accumulators let the loop vectorize.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for lane in 0..4 {
            let t = a[4 * i + lane] - b[4 * i + lane];
            acc[lane] += t * t;
        }
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        let t = a[i] - b[i];
        tail += t * t;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// A merge as found by the chain: the two slot representatives and the cost.
#[derive(Debug, Clone, Copy)]
struct RawMerge {
    a: usize,
    b: usize,
    cost: f64,
}

/// Full nearest-neighbor-chain run down to a single cluster. `points` is
/// row-major `n x d` and becomes the centroid store.
fn nn_chain(mut centroids: Vec<f64>, n: usize, d: usize) -> Vec<RawMerge> {
    let mut sizes = vec![1usize; n];
    let mut active: Vec<usize> = (0..n).collect();
    let mut position: Vec<usize> = (0..n).collect();
    let mut chain: Vec<usize> = Vec::with_capacity(n);
    let mut merges = Vec::with_capacity(n.saturating_sub(1));

    while active.len() > 1 {
        if chain.is_empty() {
            // Restart from the smallest live slot for determinism.
            chain.push(*active.iter().min().unwrap());
        }
        loop {
            let tip = *chain.last().unwrap();
            let prev = (chain.len() >= 2).then(|| chain[chain.len() - 2]);
            let tip_c = &centroids[tip * d..(tip + 1) * d];
            let tip_n = sizes[tip];

            let mut best = usize::MAX;
            let mut best_cost = f64::INFINITY;
            for &x in &active {
                if x == tip {
                    continue;
                }
                let cost =
                    ward_weight(tip_n, sizes[x]) * squared_distance(tip_c, &centroids[x * d..(x + 1) * d]);
                if cost < best_cost || (cost == best_cost && x < best) {
                    best_cost = cost;
                    best = x;
                }
            }
            if let Some(p) = prev {
                let cost_prev =
                    ward_weight(tip_n, sizes[p]) * squared_distance(tip_c, &centroids[p * d..(p + 1) * d]);
                if cost_prev <= best_cost {
                    best = p;
                    best_cost = cost_prev;
                }
            }

            if Some(best) == prev {
                chain.pop();
                chain.pop();
                let (keep, gone) = if tip < best { (tip, best) } else { (best, tip) };
                merges.push(RawMerge { a: keep, b: gone, cost: best_cost });

                let (nk, ng) = (sizes[keep] as f64, sizes[gone] as f64);
                let total = nk + ng;
                for j in 0..d {
                    let merged = (nk * centroids[keep * d + j] + ng * centroids[gone * d + j]) / total;
                    centroids[keep * d + j] = merged;
                }
                sizes[keep] += sizes[gone];

                let pos = position[gone];
                active.swap_remove(pos);
                if pos < active.len() {
                    position[active[pos]] = pos;
                }
                break;
            }
            chain.push(best);
        }
    }
    merges
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> usize {
        let (ra, rb) = (self.find(a), self.find(b));
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[hi] = lo;
        lo
    }
}

/// Order chain merges by cost (stable, so equal costs keep chain order and a
/// cluster is always formed before it is merged again) and assign
/// dendrogram ids.
fn build_dendrogram(mut raw: Vec<RawMerge>, n: usize) -> Vec<MergeStep> {
    raw.sort_by(|x, y| x.cost.total_cmp(&y.cost));
    let mut uf = UnionFind::new(n);
    // Current dendrogram id and size of each union-find root.
    let mut cluster_id: Vec<usize> = (0..n).collect();
    let mut size = vec![1usize; n];
    raw.into_iter()
        .enumerate()
        .map(|(step, m)| {
            let (ra, rb) = (uf.find(m.a), uf.find(m.b));
            let (ia, ib) = (cluster_id[ra], cluster_id[rb]);
            let merged_size = size[ra] + size[rb];
            let root = uf.union(ra, rb);
            cluster_id[root] = n + step;
            size[root] = merged_size;
            MergeStep {
                step,
                left: ia.min(ib),
                right: ia.max(ib),
                new_id: n + step,
                cost: m.cost,
                size: merged_size,
            }
        })
        .collect()
}

/// Cluster `n x d` row-major points (already `f64`).
pub fn ward_cluster_points(points: &[f64], d: usize, layer: u32, config: &ClusterConfig) -> Result<Clustering> {
    if d == 0 {
        return Err(Error::Validation("zero-dimensional points".into()));
    }
    if points.len() % d != 0 {
        return Err(Error::Validation(format!("{} values is not a multiple of d={d}", points.len())));
    }
    let n = points.len() / d;
    if config.k == 0 || config.k > n {
        return Err(Error::Config(format!("K={} must lie in [1, n={n}]", config.k)));
    }
    if let Some(pos) = points.iter().position(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("non-finite value in row {}", pos / d)));
    }
    let raw = nn_chain(points.to_vec(), n, d);
    let mut history = build_dendrogram(raw, n);
    history.truncate(n - config.k);
    let (tags, assignments) = partition(&history, n, config.k)?;
    Ok(Clustering {
        layer,
        n,
        k: config.k,
        merge_history: history,
        tags,
        assignments,
    })
}

/// Cluster the rows of one layer's embedding matrix into `config.k` concepts.
pub fn ward_cluster(matrix: &EmbeddingMatrix, config: &ClusterConfig) -> Result<Clustering> {
    matrix.validate_finite()?;
    let points: Vec<f64> = matrix.values().iter().map(|&v| f64::from(v)).collect();
    ward_cluster_points(&points, matrix.d().max(1), matrix.layer, config)
}

/// Replay merges until `k` clusters remain; returns tags and per-row concept
/// indices. Concepts are numbered by size (descending), then by smallest
/// member id.
fn partition(history: &[MergeStep], n: usize, k: usize) -> Result<(Vec<String>, Vec<usize>)> {
    let min_k = n - history.len();
    if k < min_k.max(1) || k > n {
        return Err(Error::OutOfRange(format!(
            "cut at K'={k} needs {min_k} <= K' <= {n}"
        )));
    }
    let mut uf = UnionFind::new(n);
    let mut leaf_of = (0..n).collect::<Vec<_>>();
    leaf_of.reserve(history.len());
    for m in &history[..n - k] {
        let (a, b) = (leaf_of[m.left], leaf_of[m.right]);
        uf.union(a, b);
        leaf_of.push(a);
    }

    // Root -> (size, smallest member), smallest member is the root itself
    // because union keeps the smaller index.
    let mut sizes: BTreeMap<usize, usize> = BTreeMap::new();
    let roots: Vec<usize> = (0..n).map(|i| uf.find(i)).collect();
    for &r in &roots {
        *sizes.entry(r).or_default() += 1;
    }
    let mut order: Vec<(usize, usize)> = sizes.into_iter().collect();
    order.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut index_of = vec![usize::MAX; n];
    for (idx, (root, _)) in order.iter().enumerate() {
        index_of[*root] = idx;
    }
    let tags = (0..order.len()).map(tag_name).collect();
    Ok((tags, roots.into_iter().map(|r| index_of[r]).collect()))
}

/// Concept index per row after replaying merges until `k` clusters remain.
pub fn cut_dendrogram(merge_history: &[MergeStep], n: usize, k: usize) -> Result<Vec<usize>> {
    partition(merge_history, n, k).map(|(_, assignments)| assignments)
}

impl Clustering {
    pub fn cut(&self, k: usize) -> Result<Vec<usize>> {
        cut_dendrogram(&self.merge_history, self.n, k)
    }

    pub fn tag_index(&self, tag: &str) -> Option<usize> {
        tag.strip_prefix('c')
            .and_then(|i| i.parse::<usize>().ok())
            .filter(|&i| i < self.tags.len() && self.tags[i] == tag)
    }

    /// Member occurrence ids of every concept, indexed like `tags`.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.tags.len()];
        for (id, &c) in self.assignments.iter().enumerate() {
            out[c].push(id);
        }
        out
    }

    pub fn concepts(&self, dataset: &TokenDataset) -> Vec<Concept> {
        self.members()
            .into_iter()
            .zip(&self.tags)
            .map(|(member_ids, tag)| make_concept(tag, self.layer, member_ids, dataset))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = serde_json::to_vec(self)?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    /// One line per occurrence: `word|||sentence_id|||position|||occurrence_id|||tag`,
    /// grouped by concept.
    pub fn cluster_map(&self, dataset: &TokenDataset) -> String {
        let mut out = String::new();
        for (members, tag) in self.members().iter().zip(&self.tags) {
            for &id in members {
                let occ = &dataset.occurrences[id];
                let _ = writeln!(
                    out,
                    "{}|||{}|||{}|||{}|||{}",
                    occ.word, occ.sentence_id, occ.token_position, id, tag
                );
            }
        }
        out
    }
}

fn make_concept(tag: &str, layer: u32, member_ids: Vec<usize>, dataset: &TokenDataset) -> Concept {
    let mut type_counts = BTreeMap::new();
    for &id in &member_ids {
        *type_counts.entry(dataset.word(id).to_owned()).or_insert(0) += 1;
    }
    Concept {
        tag: tag.to_owned(),
        layer,
        member_ids,
        type_counts,
    }
}

pub fn concept_members(clustering: &Clustering, dataset: &TokenDataset, tag: &str) -> Result<Concept> {
    let idx = clustering
        .tag_index(tag)
        .ok_or_else(|| Error::UnknownTag(tag.to_owned()))?;
    let members = clustering
        .assignments
        .iter()
        .enumerate()
        .filter(|(_, &c)| c == idx)
        .map(|(id, _)| id)
        .collect();
    Ok(make_concept(tag, clustering.layer, members, dataset))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{FilterConfig, TokenOccurrence};

    fn four_points() -> Vec<f64> {
        vec![0.0, 0.1, 10.0, 10.1]
    }

    fn cfg(k: usize) -> ClusterConfig {
        ClusterConfig { k, ..Default::default() }
    }

    #[test]
    fn ward_distance_examples() {
        assert_eq!(ward_distance(&[1.0, 2.0], 3, &[1.0, 2.0], 5).unwrap(), 0.0);
        assert!((ward_distance(&[0.0, 0.0], 1, &[2.0, 0.0], 1).unwrap() - 2.0).abs() < 1e-15);
        assert!((ward_distance(&[0.0], 1, &[1.0], 2).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(matches!(
            ward_distance(&[0.0], 1, &[0.0, 1.0], 1),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn k_equal_n_is_all_singletons() {
        let c = ward_cluster_points(&four_points(), 1, 0, &cfg(4)).unwrap();
        assert!(c.merge_history.is_empty());
        let mut a = c.assignments.clone();
        a.sort();
        assert_eq!(a, vec![0, 1, 2, 3]);
    }

    #[test]
    fn four_points_two_concepts() {
        let c = ward_cluster_points(&four_points(), 1, 0, &cfg(2)).unwrap();
        assert_eq!(c.merge_history.len(), 2);
        assert_eq!(c.assignments[0], c.assignments[1]);
        assert_eq!(c.assignments[2], c.assignments[3]);
        assert_ne!(c.assignments[0], c.assignments[2]);
        // Equal sizes: the concept holding row 0 comes first.
        assert_eq!(c.assignments[0], 0);
    }

    #[test]
    fn cut_replays_fewer_merges() {
        let c = ward_cluster_points(&four_points(), 1, 0, &cfg(1)).unwrap();
        let singletons = c.cut(4).unwrap();
        let mut s = singletons.clone();
        s.sort();
        assert_eq!(s, vec![0, 1, 2, 3]);

        // In f64, 10.1 - 10.0 is just under 0.1, so {10, 10.1} is the
        // strictly closest pair and is the only merge at K'=3.
        let three = c.cut(3).unwrap();
        assert_eq!(three[2], three[3]);
        assert_ne!(three[0], three[1]);
        assert_eq!(c.merge_history[0].left, 2);
        assert_eq!(c.merge_history[0].right, 3);

        let c2 = ward_cluster_points(&four_points(), 1, 0, &cfg(2)).unwrap();
        assert_eq!(c.cut(2).unwrap(), c2.assignments);
        assert!(matches!(c2.cut(1), Err(Error::OutOfRange(_))));
        assert!(matches!(c2.cut(5), Err(Error::OutOfRange(_))));
    }

    #[test]
    fn rejects_bad_k_and_non_finite() {
        assert!(matches!(ward_cluster_points(&four_points(), 1, 0, &cfg(5)), Err(Error::Config(_))));
        assert!(matches!(ward_cluster_points(&four_points(), 1, 0, &cfg(0)), Err(Error::Config(_))));
        assert!(matches!(
            ward_cluster_points(&[0.0, f64::NAN], 1, 0, &cfg(1)),
            Err(Error::Validation(_))
        ));
    }

    fn dataset_for(words: &[&str]) -> TokenDataset {
        let sentence: Vec<String> = words.iter().map(|w| w.to_string()).collect();
        let occurrences = words
            .iter()
            .enumerate()
            .map(|(i, w)| TokenOccurrence {
                occurrence_id: i,
                word: w.to_string(),
                sentence_id: 0,
                token_position: i,
            })
            .collect();
        let mut type_index: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, w) in words.iter().enumerate() {
            type_index.entry(w.to_string()).or_default().push(i);
        }
        TokenDataset {
            config: FilterConfig::default(),
            sentences: vec![sentence],
            occurrences,
            type_index,
        }
    }

    #[test]
    fn concept_member_lookup() {
        let ds = dataset_for(&["a", "b", "x", "x"]);
        let c = ward_cluster_points(&four_points(), 1, 0, &cfg(2)).unwrap();
        let far = concept_members(&c, &ds, &tag_name(c.assignments[2])).unwrap();
        assert_eq!(far.member_ids, vec![2, 3]);
        assert_eq!(far.type_counts["x"], 2);
        assert!(matches!(concept_members(&c, &ds, "c9"), Err(Error::UnknownTag(_))));

        let one = ward_cluster_points(&four_points(), 1, 0, &cfg(1)).unwrap();
        assert_eq!(concept_members(&one, &ds, "c0").unwrap().len(), 4);
    }

    #[test]
    fn cluster_map_lists_every_occurrence() {
        let ds = dataset_for(&["a", "b", "x", "x"]);
        let c = ward_cluster_points(&four_points(), 1, 0, &cfg(2)).unwrap();
        let map = c.cluster_map(&ds);
        assert_eq!(map.lines().count(), 4);
        assert!(map.contains("x|||0|||3|||3|||"));
    }
}
