//! Corpus ingestion: frequency filtering, per-type down-sampling and data
//! splits.
//!
//! Input is pre-tokenized text, one sentence per line with space-separated
//! tokens. Word types are case-sensitive surface forms.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{seed, Error, Result};

/// One word occurrence, anchored to its sentence and position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenOccurrence {
    pub occurrence_id: usize,
    pub word: String,
    pub sentence_id: usize,
    pub token_position: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    /// Types seen fewer times than this in the raw corpus are dropped.
    pub min_type_frequency: usize,
    /// Types seen more often are down-sampled to this many occurrences.
    pub max_occurrences_per_type: usize,
    pub seed: u64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            min_type_frequency: 10,
            max_occurrences_per_type: 10,
            seed: 0,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_type_frequency == 0 {
            return Err(Error::Config("min_type_frequency must be >= 1".into()));
        }
        if self.max_occurrences_per_type == 0 {
            return Err(Error::Config("max_occurrences_per_type must be >= 1".into()));
        }
        Ok(())
    }
}

/// The retained occurrences together with the sentences they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenDataset {
    pub config: FilterConfig,
    pub sentences: Vec<Vec<String>>,
    pub occurrences: Vec<TokenOccurrence>,
    /// word -> occurrence ids, ascending.
    pub type_index: BTreeMap<String, Vec<usize>>,
}

impl TokenDataset {
    pub fn len(&self) -> usize {
        self.occurrences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occurrences.is_empty()
    }

    pub fn type_count(&self) -> usize {
        self.type_index.len()
    }

    pub fn word(&self, occurrence_id: usize) -> &str {
        &self.occurrences[occurrence_id].word
    }

    /// The sentence an occurrence appears in, re-joined with spaces.
    pub fn sentence_text(&self, occurrence_id: usize) -> String {
        self.sentences[self.occurrences[occurrence_id].sentence_id].join(" ")
    }

    /// Canonical JSON serialization. Field and map ordering are fixed, so
    /// identical inputs give identical bytes.
    pub fn to_json_bytes(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(self)?)
    }

    /// Hex SHA-256 of the canonical serialization; embedding sidecars carry it
    /// to tie embedding rows to this exact occurrence table.
    pub fn checksum(&self) -> Result<String> {
        Ok(sha256_hex(&self.to_json_bytes()?))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_json_bytes()?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let dataset: TokenDataset = serde_json::from_slice(&bytes)?;
        dataset.check()?;
        Ok(dataset)
    }

    fn check(&self) -> Result<()> {
        for (i, occ) in self.occurrences.iter().enumerate() {
            if occ.occurrence_id != i {
                return Err(Error::Format(format!(
                    "occurrence ids are not dense: position {i} holds id {}",
                    occ.occurrence_id
                )));
            }
            let len = self
                .sentences
                .get(occ.sentence_id)
                .map(Vec::len)
                .ok_or_else(|| Error::Format(format!("occurrence {i}: unknown sentence")))?;
            if occ.token_position >= len {
                return Err(Error::Format(format!(
                    "occurrence {i}: token position {} past sentence end",
                    occ.token_position
                )));
            }
        }
        Ok(())
    }
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Read a pre-tokenized corpus file. Blank lines are skipped and do not
/// consume a sentence id.
pub fn read_corpus(path: &Path) -> Result<Vec<Vec<String>>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut sentences = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let tokens: Vec<String> = line.split_whitespace().map(str::to_owned).collect();
        if !tokens.is_empty() {
            sentences.push(tokens);
        }
    }
    Ok(sentences)
}

/// Build the occurrence dataset from tokenized sentences.
///
/// Types with fewer than `min_type_frequency` raw occurrences are dropped;
/// types above `max_occurrences_per_type` are down-sampled uniformly without
/// replacement. Occurrence ids follow (sentence, position) order.
pub fn ingest_corpus<I>(sentences: I, config: FilterConfig) -> Result<TokenDataset>
where
    I: IntoIterator<Item = Vec<String>>,
{
    config.validate()?;
    let sentences: Vec<Vec<String>> = sentences.into_iter().collect();

    let mut positions: BTreeMap<&str, Vec<(usize, usize)>> = BTreeMap::new();
    for (sid, sentence) in sentences.iter().enumerate() {
        for (pos, word) in sentence.iter().enumerate() {
            positions.entry(word.as_str()).or_default().push((sid, pos));
        }
    }

    let mut rng = seed::rng(config.seed);
    let mut retained: Vec<(usize, usize)> = Vec::new();
    for slots in positions.values() {
        if slots.len() < config.min_type_frequency {
            continue;
        }
        if slots.len() <= config.max_occurrences_per_type {
            retained.extend_from_slice(slots);
        } else {
            let mut picked =
                index::sample(&mut rng, slots.len(), config.max_occurrences_per_type).into_vec();
            picked.sort_unstable();
            retained.extend(picked.into_iter().map(|i| slots[i]));
        }
    }
    retained.sort_unstable();

    let mut occurrences = Vec::with_capacity(retained.len());
    let mut type_index: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (id, (sid, pos)) in retained.into_iter().enumerate() {
        let word = sentences[sid][pos].clone();
        type_index.entry(word.clone()).or_default().push(id);
        occurrences.push(TokenOccurrence {
            occurrence_id: id,
            word,
            sentence_id: sid,
            token_position: pos,
        });
    }

    Ok(TokenDataset {
        config,
        sentences,
        occurrences,
        type_index,
    })
}

/// Train/dev/test partition of item indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: Vec<usize>,
    pub dev: Vec<usize>,
    pub test: Vec<usize>,
    pub ratios: [f64; 3],
}

impl SplitAssignment {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.dev.len(), self.test.len())
    }
}

pub const PAPER_SPLIT: [f64; 3] = [0.6, 0.2, 0.2];

pub(crate) fn validate_ratios(ratios: [f64; 3]) -> Result<()> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(Error::Config(format!("split ratios must be non-negative: {ratios:?}")));
    }
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios sum to {total}, expected 1")));
    }
    Ok(())
}

/// Train and dev sizes are floored, the remainder goes to test.
pub(crate) fn split_sizes(n: usize, ratios: [f64; 3]) -> (usize, usize, usize) {
    // The small epsilon keeps exact products like 0.2 * 10 from flooring to 1.
    let floor = |r: f64| ((r * n as f64) + 1e-9).floor() as usize;
    let train = floor(ratios[0]).min(n);
    let dev = floor(ratios[1]).min(n - train);
    (train, dev, n - train - dev)
}

/// Shuffle `items` with a seeded Fisher-Yates pass and cut it by `ratios`.
pub(crate) fn split_items(
    mut items: Vec<usize>,
    ratios: [f64; 3],
    rng: &mut impl rand::Rng,
) -> SplitAssignment {
    items.shuffle(rng);
    let (train, dev, _) = split_sizes(items.len(), ratios);
    let test = items.split_off(train + dev);
    let dev_items = items.split_off(train);
    SplitAssignment {
        train: items,
        dev: dev_items,
        test,
        ratios,
    }
}

/// Split `n_items` indices into train/dev/test with a deterministic shuffle.
pub fn split_dataset(n_items: usize, ratios: [f64; 3], seed: u64) -> Result<SplitAssignment> {
    validate_ratios(ratios)?;
    if n_items < 3 {
        return Err(Error::Config(format!("cannot split {n_items} items three ways")));
    }
    Ok(split_items((0..n_items).collect(), ratios, &mut seed::rng(seed)))
}
