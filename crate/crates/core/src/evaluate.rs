//! Human evaluation of labels: majority decisions, Fleiss' kappa and
//! concept-type distributions.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{seed, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Question {
    /// Is the label acceptable?
    Q1,
    /// Is an acceptable label accurate or imprecise?
    Q2,
    /// Is the LLM label or the human (BCN) label better?
    Q3,
}

impl Question {
    pub const ALL: [Question; 3] = [Question::Q1, Question::Q2, Question::Q3];

    pub fn categories(self) -> &'static [&'static str] {
        match self {
            Question::Q1 => &["Acceptable", "Unacceptable"],
            Question::Q2 => &["Accurate", "Imprecise"],
            Question::Q3 => &["GPTBetter", "Equal", "BCNBetter"],
        }
    }

    fn category_index(self, category: &str) -> Option<usize> {
        self.categories().iter().position(|c| *c == category)
    }
}

impl std::str::FromStr for Question {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "Q1" | "q1" => Ok(Question::Q1),
            "Q2" | "q2" => Ok(Question::Q2),
            "Q3" | "q3" => Ok(Question::Q3),
            other => Err(Error::Validation(format!("unknown question `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgmentRecord {
    pub item_id: String,
    pub rater_id: String,
    pub question: Question,
    pub category: String,
}

impl JudgmentRecord {
    pub fn validate(&self) -> Result<()> {
        if self.question.category_index(&self.category).is_none() {
            return Err(Error::Validation(format!(
                "{:?} does not allow category `{}` (expected one of {:?})",
                self.question,
                self.category,
                self.question.categories()
            )));
        }
        Ok(())
    }
}

pub fn read_judgments(path: &Path) -> Result<Vec<JudgmentRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::Validation(format!("cannot read judgments {}: {e}", path.display())),
        _ => Error::Csv(e),
    })?;
    let mut out = Vec::new();
    for row in reader.deserialize() {
        let record: JudgmentRecord = row?;
        record.validate()?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_judgments(path: &Path, records: &[JudgmentRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for r in records {
        writer.serialize(r)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Fleiss' kappa for an items x categories count matrix with `n_raters`
/// ratings per item.
pub fn fleiss_kappa(counts: &[Vec<usize>], n_raters: usize) -> Result<f64> {
    if counts.is_empty() {
        return Err(Error::Validation("no items".into()));
    }
    if n_raters < 2 {
        return Err(Error::Validation("Fleiss' kappa needs at least two raters".into()));
    }
    let k = counts[0].len();
    if k < 2 {
        return Err(Error::Validation("Fleiss' kappa needs at least two categories".into()));
    }
    for (i, row) in counts.iter().enumerate() {
        if row.len() != k {
            return Err(Error::DimensionMismatch { expected: k, got: row.len() });
        }
        let total: usize = row.iter().sum();
        if total != n_raters {
            return Err(Error::Validation(format!("item {i} has {total} ratings, expected {n_raters}")));
        }
    }

    let items = counts.len() as f64;
    let n = n_raters as f64;
    let p_bar = counts
        .iter()
        .map(|row| {
            let sq: f64 = row.iter().map(|&c| (c * c) as f64).sum();
            (sq - n) / (n * (n - 1.0))
        })
        .sum::<f64>()
        / items;
    let p_e: f64 = (0..k)
        .map(|j| {
            let pj = counts.iter().map(|row| row[j] as f64).sum::<f64>() / (items * n);
            pj * pj
        })
        .sum();
    if (1.0 - p_e).abs() < 1e-15 {
        return Err(Error::Degenerate("all ratings fall in one category; kappa is undefined".into()));
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Decision {
    Category(String),
    NoMajority,
}

/// Strict-majority category per item.
pub fn majority_vote(records: &[JudgmentRecord]) -> Result<BTreeMap<String, Decision>> {
    let grouped = group_by_item(records);
    let mut rater_count = None;
    let mut out = BTreeMap::new();
    for (item, votes) in grouped {
        match rater_count {
            None => rater_count = Some(votes.len()),
            Some(n) if n != votes.len() => {
                return Err(Error::Validation(format!(
                    "item {item} has {} ratings, others have {n}",
                    votes.len()
                )))
            }
            _ => {}
        }
        let mut tally: BTreeMap<&str, usize> = BTreeMap::new();
        for v in &votes {
            *tally.entry(v.category.as_str()).or_default() += 1;
        }
        let decision = tally
            .into_iter()
            .find(|(_, c)| 2 * c > votes.len())
            .map(|(cat, _)| Decision::Category(cat.to_owned()))
            .unwrap_or(Decision::NoMajority);
        out.insert(item.to_owned(), decision);
    }
    Ok(out)
}

fn group_by_item(records: &[JudgmentRecord]) -> BTreeMap<&str, Vec<&JudgmentRecord>> {
    let mut grouped: BTreeMap<&str, Vec<&JudgmentRecord>> = BTreeMap::new();
    for r in records {
        grouped.entry(r.item_id.as_str()).or_default().push(r);
    }
    grouped
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub question: Question,
    pub categories: Vec<String>,
    pub n_items: usize,
    pub n_raters: usize,
    pub category_counts: Vec<Vec<usize>>,
    /// `None` when every rating falls in one category.
    pub kappa: Option<f64>,
    pub majority_counts: BTreeMap<String, usize>,
    pub no_majority_count: usize,
    /// Items with fewer ratings than `n_raters`; left out of all statistics.
    pub incomplete_items: Vec<String>,
}

/// Agreement statistics for one question. The rater count is the largest
/// number of ratings any item received; items with fewer are set aside.
pub fn agreement_report(records: &[JudgmentRecord], question: Question) -> Result<AgreementReport> {
    let relevant: Vec<JudgmentRecord> = records.iter().filter(|r| r.question == question).cloned().collect();
    for r in &relevant {
        r.validate()?;
    }
    let grouped = group_by_item(&relevant);
    let n_raters = grouped.values().map(Vec::len).max().unwrap_or(0);
    let categories = question.categories();

    let mut counts = Vec::new();
    let mut complete = Vec::new();
    let mut incomplete_items = Vec::new();
    for (item, votes) in &grouped {
        if votes.len() < n_raters {
            incomplete_items.push(item.to_string());
            continue;
        }
        let mut row = vec![0usize; categories.len()];
        for v in votes {
            row[question.category_index(&v.category).expect("validated")] += 1;
        }
        counts.push(row);
        complete.extend(votes.iter().map(|v| (*v).clone()));
    }

    let decisions = majority_vote(&complete)?;
    let mut majority_counts: BTreeMap<String, usize> = categories.iter().map(|c| (c.to_string(), 0)).collect();
    let mut no_majority_count = 0;
    for d in decisions.values() {
        match d {
            Decision::Category(c) => *majority_counts.get_mut(c).expect("validated") += 1,
            Decision::NoMajority => no_majority_count += 1,
        }
    }

    let kappa = if counts.is_empty() {
        None
    } else {
        match fleiss_kappa(&counts, n_raters) {
            Ok(k) => Some(k),
            Err(Error::Degenerate(_)) => None,
            Err(e) => return Err(e),
        }
    };
    Ok(AgreementReport {
        question,
        categories: categories.iter().map(|c| c.to_string()).collect(),
        n_items: counts.len(),
        n_raters,
        category_counts: counts,
        kappa,
        majority_counts,
        no_majority_count,
        incomplete_items,
    })
}

/// Conventional reading of a kappa value.
pub fn kappa_interpretation(kappa: f64) -> &'static str {
    match kappa {
        k if k < 0.0 => "Poor agreement",
        k if k <= 0.20 => "Slight agreement",
        k if k <= 0.40 => "Fair agreement",
        k if k <= 0.60 => "Moderate agreement",
        k if k <= 0.80 => "Substantial agreement",
        _ => "Almost perfect agreement",
    }
}

pub fn agreement_markdown(reports: &[AgreementReport]) -> String {
    let mut out = String::from("| Question | Items | Raters | Majority | No Majority | Fleiss Kappa |\n|---|---|---|---|---|---|\n");
    for r in reports {
        let majority: Vec<String> = r.majority_counts.iter().map(|(c, n)| format!("{c}: {n}")).collect();
        let kappa = match r.kappa {
            Some(k) => format!("{k:.2} (\"{}\")", kappa_interpretation(k)),
            None => "undefined".to_owned(),
        };
        let _ = writeln!(
            out,
            "| {:?} | {} | {} | {} | {} | {} |",
            r.question,
            r.n_items,
            r.n_raters,
            majority.join(", "),
            r.no_majority_count,
            kappa
        );
    }
    out
}

/// Closed set of concept types.
pub const CONCEPT_TYPES: [&str; 5] = ["Semantic", "Lexical", "Morphological", "Syntactic", "Uninterpretable"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionTable {
    /// (category, percentage of all items), in declared category order.
    pub percentages: Vec<(String, f64)>,
    /// Percentage of items whose category is outside the declared set.
    pub uncategorized: f64,
    pub total_items: usize,
}

pub fn distribution_table(categorized_labels: &BTreeMap<String, String>, categories: &[&str]) -> DistributionTable {
    let total = categorized_labels.len();
    let pct = |count: usize| if total == 0 { 0.0 } else { 100.0 * count as f64 / total as f64 };
    let percentages = categories
        .iter()
        .map(|cat| {
            let count = categorized_labels.values().filter(|c| c.as_str() == *cat).count();
            (cat.to_string(), pct(count))
        })
        .collect();
    let other = categorized_labels
        .values()
        .filter(|c| !categories.contains(&c.as_str()))
        .count();
    DistributionTable {
        percentages,
        uncategorized: pct(other),
        total_items: total,
    }
}

/// Seeded stand-in ratings: each rater agrees with a per-item latent answer
/// with probability `agreement`, otherwise answers uniformly at random.
pub fn simulate_judgments(items: &[String], n_raters: usize, agreement: f64, seed_value: u64) -> Vec<JudgmentRecord> {
    let mut rng = seed::rng(seed_value);
    let mut out = Vec::new();
    for question in Question::ALL {
        let cats = question.categories();
        for item in items {
            let latent = rng.random_range(0..cats.len());
            for rater in 0..n_raters {
                let pick = if rng.random::<f64>() < agreement {
                    latent
                } else {
                    rng.random_range(0..cats.len())
                };
                out.push(JudgmentRecord {
                    item_id: item.clone(),
                    rater_id: format!("rater{}", rater + 1),
                    question,
                    category: cats[pick].to_owned(),
                });
            }
        }
    }
    out
}
