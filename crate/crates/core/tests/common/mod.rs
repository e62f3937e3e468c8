//! Reference implementations used as test oracles. They favour the plainest
//! possible formulation over speed.
#![allow(dead_code)]

use std::collections::BTreeSet;

use latent_concepts::probe::{cross_entropy, ProbeDataset, ProbeModel};

/// One merge of the reference clustering: the two member sets and the SSE
/// increase.
pub struct OracleMerge {
    pub a: BTreeSet<usize>,
    pub b: BTreeSet<usize>,
    pub cost: f64,
}

/// Greedy agglomerative clustering from the definition: at every step every
/// pair of current clusters is scored by the increase in within-cluster sum
/// of squares, and the cheapest pair is merged, down to one cluster.
///
/// Pairs are scored from per-cluster sums recomputed from the raw points
/// (`SSE = sum |x|^2 - |sum x|^2 / n`); the reported cost of the chosen pair
/// is recomputed from centred sums of squares.
pub fn ward_merge_sequence(points: &[Vec<f64>]) -> Vec<OracleMerge> {
    let d = points[0].len();
    let mut clusters: Vec<Vec<usize>> = (0..points.len()).map(|i| vec![i]).collect();
    let mut merges = Vec::new();
    while clusters.len() > 1 {
        let stats: Vec<(Vec<f64>, f64)> = clusters
            .iter()
            .map(|members| {
                let mut sum = vec![0.0; d];
                for &m in members {
                    for j in 0..d {
                        sum[j] += points[m][j];
                    }
                }
                (sum, members.len() as f64)
            })
            .collect();
        let explained = |sum: &[f64], n: f64| sum.iter().map(|s| s * s).sum::<f64>() / n;
        let mut best = (f64::INFINITY, 0, 0);
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let joint: Vec<f64> = stats[a].0.iter().zip(&stats[b].0).map(|(x, y)| x + y).collect();
                let increase = explained(&stats[a].0, stats[a].1) + explained(&stats[b].0, stats[b].1)
                    - explained(&joint, stats[a].1 + stats[b].1);
                if increase < best.0 {
                    best = (increase, a, b);
                }
            }
        }
        let (_, a, b) = best;
        let merged = union(&clusters[a], &clusters[b]);
        let cost = sse(points, &merged) - sse(points, &clusters[a]) - sse(points, &clusters[b]);
        merges.push(OracleMerge {
            a: clusters[a].iter().copied().collect(),
            b: clusters[b].iter().copied().collect(),
            cost,
        });
        clusters.remove(b);
        clusters[a] = merged;
    }
    merges
}

/// Partition left after applying the first `n - k` oracle merges.
pub fn oracle_partition(n: usize, merges: &[OracleMerge], k: usize) -> BTreeSet<BTreeSet<usize>> {
    let mut groups: BTreeSet<BTreeSet<usize>> = (0..n).map(|i| BTreeSet::from([i])).collect();
    for m in &merges[..n - k] {
        groups.remove(&m.a);
        groups.remove(&m.b);
        groups.insert(m.a.union(&m.b).copied().collect());
    }
    groups
}

pub fn naive_ward(points: &[Vec<f64>], k: usize) -> BTreeSet<BTreeSet<usize>> {
    oracle_partition(points.len(), &ward_merge_sequence(points), k)
}

fn union(a: &[usize], b: &[usize]) -> Vec<usize> {
    a.iter().chain(b).copied().collect()
}

/// Sum of squared distances of the members to their centroid.
pub fn sse(points: &[Vec<f64>], members: &[usize]) -> f64 {
    let d = points[members[0]].len();
    let mut centroid = vec![0.0; d];
    for &m in members {
        for j in 0..d {
            centroid[j] += points[m][j];
        }
    }
    for c in &mut centroid {
        *c /= members.len() as f64;
    }
    members
        .iter()
        .map(|&m| (0..d).map(|j| (points[m][j] - centroid[j]).powi(2)).sum::<f64>())
        .sum()
}

pub fn partition_of(assignments: &[usize]) -> BTreeSet<BTreeSet<usize>> {
    let k = assignments.iter().max().map_or(0, |m| m + 1);
    let mut groups = vec![BTreeSet::new(); k];
    for (i, &c) in assignments.iter().enumerate() {
        groups[c].insert(i);
    }
    groups.into_iter().filter(|g| !g.is_empty()).collect()
}

/// Fleiss' kappa from individual ratings: observed agreement is the share of
/// agreeing ordered rater pairs per item, chance agreement the probability
/// that two ratings drawn from the pooled marginals coincide.
pub fn kappa_from_ratings(ratings: &[Vec<usize>], n_categories: usize) -> f64 {
    let items = ratings.len() as f64;
    let mut observed = 0.0;
    let mut marginal = vec![0.0; n_categories];
    let mut total = 0.0;
    for item in ratings {
        let n = item.len();
        let mut agreeing = 0usize;
        for i in 0..n {
            for j in 0..n {
                if i != j && item[i] == item[j] {
                    agreeing += 1;
                }
            }
            marginal[item[i]] += 1.0;
            total += 1.0;
        }
        observed += agreeing as f64 / (n * (n - 1)) as f64;
    }
    observed /= items;
    let chance: f64 = marginal.iter().map(|m| (m / total) * (m / total)).sum();
    (observed - chance) / (1.0 - chance)
}

pub fn counts_from_ratings(ratings: &[Vec<usize>], n_categories: usize) -> Vec<Vec<usize>> {
    ratings
        .iter()
        .map(|item| {
            let mut row = vec![0; n_categories];
            for &r in item {
                row[r] += 1;
            }
            row
        })
        .collect()
}

/// Central finite differences of the mean cross-entropy over `rows`, in the
/// gradient layout (weights, then biases).
pub fn numeric_gradient(model: &ProbeModel, data: &ProbeDataset, rows: &[usize], h: f64) -> Vec<f64> {
    let wlen = model.weights.len();
    let mut out = Vec::with_capacity(wlen + 2);
    for i in 0..wlen + 2 {
        let eval = |delta: f64| {
            let mut m = model.clone();
            if i < wlen {
                m.weights[i] += delta;
            } else {
                m.bias[i - wlen] += delta;
            }
            cross_entropy(&m, data, rows)
        };
        out.push((eval(h) - eval(-h)) / (2.0 * h));
    }
    out
}

/// Relative error with an absolute floor.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

pub fn toy_corpus() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data/toy_corpus.txt")
}

/// A config for the bundled toy corpus with all outputs under `dir`.
pub fn write_toy_config(dir: &std::path::Path) -> std::path::PathBuf {
    let text = format!(
        r#"corpus = "{}"
embedding_dir = "embeddings"
output_dir = "out"
layers = [0, 6]
model_name = "synthetic"
seed = 7

[cluster]
k = 20

[train]
epochs = 20
batch_size = 64

[annotate]
max_words = 20

[neurons]
top_k = 5
super_concepts = ["the", "in"]

[synthetic]
enabled = true
d = 16
groups = 8
"#,
        toy_corpus().display()
    );
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path
}

/// SHA-256 of every file under `root` except the LLM audit log, keyed by
/// relative path.
pub fn tree_digest(root: &std::path::Path) -> std::collections::BTreeMap<String, String> {
    use sha2::{Digest, Sha256};
    let mut out = std::collections::BTreeMap::new();
    let mut stack = vec![root.to_owned()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
            if rel.starts_with("logs") {
                continue;
            }
            let digest = Sha256::digest(std::fs::read(&path).unwrap());
            out.insert(rel, digest.iter().map(|b| format!("{b:02x}")).collect());
        }
    }
    out
}
