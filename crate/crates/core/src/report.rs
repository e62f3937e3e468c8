//! Dataset export and static artifacts (word clouds, result tables).

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::annotate::{ConceptLabel, LabelStatus};
use crate::cluster::Concept;
use crate::corpus::TokenDataset;
use crate::neurons::AlignmentSummary;
use crate::probe::ProbeResult;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordCount {
    pub word: String,
    pub count: usize,
}

/// One annotated concept in the released dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptNetRecord {
    pub model_name: String,
    pub layer: u32,
    pub concept_tag: String,
    pub label_text: String,
    pub label_status: LabelStatus,
    pub words: Vec<WordCount>,
    pub sample_sentence_ids: Vec<usize>,
}

pub const SAMPLE_SENTENCES: usize = 10;

/// Numeric part of a `cN` tag, for natural ordering (`c2` before `c10`).
fn tag_key(tag: &str) -> (usize, &str) {
    let num = tag
        .strip_prefix('c')
        .and_then(|n| n.parse().ok())
        .unwrap_or(usize::MAX);
    (num, tag)
}

pub fn compare_tags(a: &str, b: &str) -> Ordering {
    tag_key(a).cmp(&tag_key(b))
}

/// Pair each concept of one layer with its label record.
pub fn build_records(
    model_name: &str,
    concepts: &[Concept],
    labels: &[ConceptLabel],
    dataset: &TokenDataset,
) -> Result<Vec<ConceptNetRecord>> {
    concepts
        .iter()
        .map(|concept| {
            let label = labels
                .iter()
                .find(|l| l.concept_tag == concept.tag)
                .ok_or_else(|| Error::Validation(format!("concept {} has no label record", concept.tag)))?;
            let mut sentence_ids: Vec<usize> = Vec::new();
            for &id in &concept.member_ids {
                let sid = dataset.occurrences[id].sentence_id;
                if !sentence_ids.contains(&sid) {
                    sentence_ids.push(sid);
                    if sentence_ids.len() == SAMPLE_SENTENCES {
                        break;
                    }
                }
            }
            Ok(ConceptNetRecord {
                model_name: model_name.to_owned(),
                layer: concept.layer,
                concept_tag: concept.tag.clone(),
                label_text: label.label_text.clone(),
                label_status: label.status,
                words: concept
                    .types_by_frequency()
                    .into_iter()
                    .map(|(w, c)| WordCount { word: w.to_owned(), count: c })
                    .collect(),
                sample_sentence_ids: sentence_ids,
            })
        })
        .collect()
}

/// Write records as JSONL ordered by (model, layer, tag).
pub fn write_concept_net(path: &Path, records: &[ConceptNetRecord]) -> Result<()> {
    let mut sorted: Vec<&ConceptNetRecord> = records.iter().collect();
    sorted.sort_by(|a, b| {
        a.model_name
            .cmp(&b.model_name)
            .then(a.layer.cmp(&b.layer))
            .then(compare_tags(&a.concept_tag, &b.concept_tag))
    });
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for r in sorted {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn export_concept_net(
    path: &Path,
    model_name: &str,
    concepts: &[Concept],
    labels: &[ConceptLabel],
    dataset: &TokenDataset,
) -> Result<Vec<ConceptNetRecord>> {
    let records = build_records(model_name, concepts, labels, dataset)?;
    write_concept_net(path, &records)?;
    Ok(records)
}

pub fn load_concept_net(path: &Path) -> Result<Vec<ConceptNetRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

pub const MIN_FONT: f64 = 12.0;
pub const MAX_FONT: f64 = 48.0;

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
        .replace('\'', "&apos;")
}

/// Font size per word, linear in frequency between [`MIN_FONT`] and
/// [`MAX_FONT`]; when every word has the same count all get the maximum.
pub fn font_sizes(counts: &[(&str, usize)]) -> Vec<f64> {
    let lo = counts.iter().map(|c| c.1).min().unwrap_or(0);
    let hi = counts.iter().map(|c| c.1).max().unwrap_or(0);
    counts
        .iter()
        .map(|&(_, c)| {
            if hi == lo {
                MAX_FONT
            } else {
                MIN_FONT + (MAX_FONT - MIN_FONT) * (c - lo) as f64 / (hi - lo) as f64
            }
        })
        .collect()
}

/// SVG 1.1 word cloud: the label as title, words on an Archimedean spiral
/// in frequency order.
pub fn word_cloud(concept: &Concept, label: &str) -> String {
    const WIDTH: f64 = 800.0;
    const HEIGHT: f64 = 600.0;
    let words = concept.types_by_frequency();
    let sizes = font_sizes(&words);

    let mut placed: Vec<(f64, f64, f64, f64)> = Vec::new();
    let mut body = String::new();
    for ((word, count), size) in words.iter().zip(&sizes) {
        let w = 0.6 * size * word.chars().count() as f64;
        let h = size;
        let mut t = 0.0f64;
        let (x, y) = loop {
            let (x, y) = (WIDTH / 2.0 + 4.0 * t * t.cos(), HEIGHT / 2.0 + 3.0 * t * t.sin());
            let rect = (x - w / 2.0, y - h / 2.0, w, *h);
            let clash = placed.iter().any(|p| {
                rect.0 < p.0 + p.2 && p.0 < rect.0 + rect.2 && rect.1 < p.1 + p.3 && p.1 < rect.1 + rect.3
            });
            if !clash || t > 400.0 {
                placed.push(rect);
                break (x, y);
            }
            t += 0.1;
        };
        let _ = writeln!(
            body,
            "  <text x=\"{x:.1}\" y=\"{y:.1}\" font-size=\"{size:.1}\" text-anchor=\"middle\" dominant-baseline=\"middle\" data-count=\"{count}\">{}</text>",
            xml_escape(word)
        );
    }

    let mut svg = String::new();
    let _ = writeln!(svg, "<?xml version=\"1.0\" encoding=\"UTF-8\"?>");
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(svg, "  <title>{}</title>", xml_escape(label));
    let _ = writeln!(
        svg,
        "  <text x=\"{}\" y=\"30\" font-size=\"20\" text-anchor=\"middle\" font-weight=\"bold\">{}: {}</text>",
        WIDTH / 2.0,
        xml_escape(&concept.tag),
        xml_escape(label)
    );
    svg.push_str(&body);
    svg.push_str("</svg>\n");
    svg
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn to_csv(&self) -> Result<String> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(&self.header)?;
        for row in &self.rows {
            writer.write_record(row)?;
        }
        let bytes = writer.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn to_markdown(&self) -> String {
        let cell = |s: &str| s.replace('|', "\\|");
        let mut out = format!("| {} |\n", self.header.iter().map(|h| cell(h)).collect::<Vec<_>>().join(" | "));
        out.push_str(&format!("|{}\n", "---|".repeat(self.header.len())));
        for row in &self.rows {
            let _ = writeln!(out, "| {} |", row.iter().map(|c| cell(c)).collect::<Vec<_>>().join(" | "));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeTableRow {
    pub tag: String,
    pub label: String,
    pub accuracy: f64,
    pub selectivity: f64,
}

impl ProbeTableRow {
    /// Test-set accuracy and selectivity of a probe result.
    pub fn from_result(result: &ProbeResult, label: &str) -> Self {
        ProbeTableRow {
            tag: result.concept_tag.clone(),
            label: label.to_owned(),
            accuracy: result.accuracy_test,
            selectivity: result.selectivity_test,
        }
    }
}

/// Probe results as (tag, label, acc, selectivity), sorted by tag.
pub fn probe_table(rows: &[ProbeTableRow]) -> Table {
    let mut sorted: Vec<&ProbeTableRow> = rows.iter().collect();
    sorted.sort_by(|a, b| compare_tags(&a.tag, &b.tag));
    Table {
        header: ["tag", "label", "acc", "selectivity"].map(String::from).to_vec(),
        rows: sorted
            .into_iter()
            .map(|r| vec![r.tag.clone(), r.label.clone(), format!("{:.2}", r.accuracy), format!("{:.2}", r.selectivity)])
            .collect(),
    }
}

/// Super-concept alignment as (super, #sub, alignment), sorted by name.
pub fn alignment_table(rows: &[AlignmentSummary]) -> Table {
    let mut sorted: Vec<&AlignmentSummary> = rows.iter().collect();
    sorted.sort_by(|a, b| a.super_concept.cmp(&b.super_concept));
    Table {
        header: ["super", "#sub", "alignment"].map(String::from).to_vec(),
        rows: sorted
            .into_iter()
            .map(|r| vec![r.super_concept.clone(), r.sub_concepts.to_string(), format!("{:.2}", r.mean_alignment)])
            .collect(),
    }
}
